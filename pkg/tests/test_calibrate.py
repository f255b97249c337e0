import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairpost.calibrate import (
    SearchConfig,
    binary_candidates,
    breakpoints,
    constraint_values,
    dedup_sorted,
    enforce_general_position,
    fit_binary,
    fit_multiclass,
)
from fairpost.core import DataError, Dataset, FairnessSpec, InfeasibleCalibrationError
from fairpost.unfairness import epsilon_alpha, notion_spec, signed_components

from conftest import random_dataset
from oracles import arrangement_points, binary_grid_oracle, same_piece, signed_binary


def fixed(notion, alpha, scenario="aware", eps=0.0):
    return FairnessSpec(notion, scenario, alpha, epsilon_mode="fixed", epsilon_value=eps)


def const(v):
    v = np.asarray(v, dtype=float)
    return lambda X, a: v


def toy(eta=(0.9, 0.8, 0.2, 0.1)):
    data = Dataset(np.zeros((4, 1)), [1, 1, 2, 2], [1, 1, 1, 1])
    return data, const(eta), const([1.0, 1.0, -1.0, -1.0])


# dyadic scores keep 2 eta - 1 exact, so the two middle breakpoints coincide
DYADIC = (0.875, 0.75, 0.25, 0.125)


def test_toy_example():
    data, eta, phi = toy(DYADIC)
    clf, rep = fit_binary(data, eta, phi, fixed("eoo", 0.5))
    assert rep.s_hat == 1
    assert rep.plugin_unfairness == 1.0
    assert rep.lambda_hat == 0.5
    assert rep.signed_value == 0.5
    assert rep.feasible
    assert clf.predict(data.X, data.a).tolist() == [1, 0, 0, 0]


def test_toy_decimal_scores():
    # 2 * 0.8 - 1 and 1 - 2 * 0.2 differ in the last bit; the multiplier
    # lands on the tie up to rounding and the fit stays feasible
    data, eta, phi = toy()
    _, rep = fit_binary(data, eta, phi, fixed("eoo", 0.5))
    assert rep.lambda_hat == pytest.approx(0.6, abs=1e-12)
    assert rep.feasible and rep.signed_value <= 0.5


def test_toy_breakpoints():
    data, eta, phi = toy(DYADIC)
    u = 2 * eta(None, None) - 1
    bps = breakpoints(u, phi(None, None))
    assert sorted(b.r for b in bps) == [0.5, 0.5, 0.75, 0.75]
    assert binary_candidates(u, phi(None, None)).tolist() == [0, 0.25, 0.5, 0.625, 0.75, 1.75]


@pytest.mark.parametrize("scores", [DYADIC, (0.9, 0.8, 0.2, 0.1)])
def test_toy_matches_fine_grid(scores):
    data, eta, phi = toy(scores)
    u, p = 2 * eta(None, None) - 1, phi(None, None)
    _, rep = fit_binary(data, eta, phi, fixed("eoo", 0.5))
    grid = np.linspace(0, 2, 200001)
    vals = signed_binary("eoo", u[None, :] > grid[:, None] * p[None, :], data.a, data.y)
    assert grid[np.argmax(vals <= 0.5)] == pytest.approx(rep.lambda_hat, abs=1e-5)


def test_plugin_already_feasible():
    data, eta, phi = toy()
    _, rep = fit_binary(data, eta, phi, fixed("eoo", 1.0))
    assert rep.lambda_hat == 0.0


def test_zero_phi_feasible_and_infeasible():
    data, eta, _ = toy()
    zero = const(np.zeros(4))
    _, rep = fit_binary(data, eta, zero, fixed("eoo", 1.0))
    assert rep.lambda_hat == 0.0
    assert rep.candidates_examined == 1
    with pytest.raises(InfeasibleCalibrationError) as exc:
        fit_binary(data, eta, zero, fixed("eoo", 0.5))
    assert exc.value.best_value == 1.0
    assert not exc.value.report.feasible


def test_infeasible_reports_best():
    data, eta, phi = toy()
    with pytest.raises(InfeasibleCalibrationError) as exc:
        fit_binary(data, eta, phi, fixed("eoo", 0.2, eps=1.5))
    assert exc.value.best_value == -1.0


def test_general_position_examples():
    eta_t, phi_t = enforce_general_position(const([0.5, 0.7]), const([0.0, 0.3]), 0.001, 0.01)
    assert phi_t(None, None).tolist() == [0.01, 0.3]
    assert eta_t(None, None).tolist() == pytest.approx([0.501, 0.7])
    with pytest.raises(ValueError):
        enforce_general_position(eta_t, phi_t, -1, 0)


def test_dedup():
    assert dedup_sorted(np.array([0.3, 0.1, 0.1 + 1e-13, 0.2])).tolist() == [0.1, 0.2, 0.3]


def test_shape_mismatch():
    data, eta, _ = toy()
    with pytest.raises(DataError):
        fit_binary(data, eta, const([1.0, 1.0]), fixed("eoo", 0.5))


def test_eo_rejected_on_binary_path():
    data, eta, phi = toy()
    with pytest.raises(ValueError):
        fit_binary(data, eta, phi, fixed("eo", 0.5))


def random_instance(rng, n, tie=False, zeros=False):
    data = random_dataset(rng, n=n, K=2, d=1)
    u = rng.uniform(-1, 1, n)
    phi = rng.choice([-1, 1], n) * rng.uniform(0.3, 3, n)
    if tie:
        idx = rng.integers(0, max(2, n // 4), n)
        u, phi = u[idx], phi[idx]
    if zeros:
        phi[rng.uniform(size=n) < 0.2] = 0
    return data, u, phi


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["dp", "eoo", "pe", "oae"]), st.booleans(), st.booleans())
def test_exactness_against_grid(seed, notion, tie, zeros):
    rng = np.random.default_rng(seed)
    data, u, phi = random_instance(rng, int(rng.integers(4, 120)), tie, zeros)
    bound = float(rng.uniform(0.0, 0.5))
    s, lam, r = binary_grid_oracle(notion, u, phi, data.a, data.y, bound)
    try:
        _, rep = fit_binary(data, const((u + 1) / 2), const(phi), fixed(notion, bound))
    except InfeasibleCalibrationError:
        assert lam is None
        return
    assert lam is not None and rep.s_hat == s
    assert same_piece(abs(rep.lambda_hat), lam, r)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["dp", "eoo", "pe", "oae"]))
def test_certificate(seed, notion):
    rng = np.random.default_rng(seed)
    data, u, phi = random_instance(rng, int(rng.integers(8, 150)))
    spec = FairnessSpec(notion, "aware", float(rng.uniform(0.2, 0.6)))
    try:
        clf, rep = fit_binary(data, const((u + 1) / 2), const(phi), spec)
    except InfeasibleCalibrationError:
        return
    pred = clf.predict(data.X, data.a)
    assert np.array_equal(pred, u > rep.lambda_hat * phi)
    signed = rep.s_hat * signed_binary(notion, pred, data.a, data.y)
    assert signed <= spec.alpha - rep.epsilon_alpha + 1e-12
    assert rep.lambda_hat * rep.s_hat >= 0


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["dp", "eoo", "pe"]))
def test_monotone_under_alignment(seed, notion):
    """Signs of phi aligned with kappa within each cell make the constraint non-increasing."""
    rng = np.random.default_rng(seed)
    data, u, _ = random_instance(rng, int(rng.integers(8, 150)))
    sign = np.where(data.a == 1, 1.0, -1.0)
    if notion == "eoo":
        sign = np.where(data.y == 1, sign, rng.choice([-1, 1], data.n))
    if notion == "pe":
        sign = np.where(data.y == 0, sign, rng.choice([-1, 1], data.n))
    phi = sign * rng.uniform(0.1, 2, data.n)
    cm = notion_spec(notion)
    cand = binary_candidates(u, phi)
    vals = constraint_values(cm, data, u, phi, cand)
    assert np.all(np.diff(vals) <= 1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["dp", "eoo", "pe"]))
def test_plugin_recovery(seed, notion):
    rng = np.random.default_rng(seed)
    data, u, phi = random_instance(rng, int(rng.integers(8, 150)))
    eps = epsilon_alpha(notion_spec(notion), data, 0.05, "practical").value
    spec = FairnessSpec(notion, "aware", 1.0 + eps)
    _, rep = fit_binary(data, const((u + 1) / 2), const(phi), spec)
    assert rep.lambda_hat == 0.0


def test_theoretical_margin_is_reported():
    rng = np.random.default_rng(0)
    data, u, phi = random_instance(rng, 200)
    spec = FairnessSpec("eoo", "aware", 0.1, epsilon_mode="theoretical")
    with pytest.raises(InfeasibleCalibrationError) as exc:
        fit_binary(data, const((u + 1) / 2), const(phi), spec)
    assert exc.value.report.epsilon_alpha > 1


# --------------------------------------------------------------- multi-class


def multi_instance(rng, n, K=2):
    data = random_dataset(rng, n=n, K=K, d=1)
    return data, rng.uniform(-1, 1, n), rng.normal(size=(n, K))


def exhaustive_best(cm, data, u, Phi, bound):
    pts = arrangement_points(u, Phi)
    P = u[None, :] > pts @ Phi.T
    U = np.max(np.abs(signed_components(cm, P, data)), axis=1)
    err = np.sum(P != data.y.astype(bool), axis=1)
    feas = U <= bound
    return int(err[feas].min()) if feas.any() else None


def test_multiclass_against_exhaustive():
    rng = np.random.default_rng(99)
    cm = notion_spec("eoo", 2, multiclass=True)
    hits = 0
    for _ in range(40):
        n = int(rng.integers(6, 11))
        data, u, Phi = multi_instance(rng, n)
        alpha = float(rng.uniform(0.05, 0.6))
        best = exhaustive_best(cm, data, u, Phi, alpha)
        try:
            _, rep = fit_multiclass(data, const((u + 1) / 2), const(Phi), fixed("eoo", alpha), cm=cm)
            got = rep.errors
        except InfeasibleCalibrationError:
            got = None
        if got is not None and best is not None:
            assert got >= best
        hits += got == best
    assert hits >= 36


def test_multiclass_certificate_and_shape():
    rng = np.random.default_rng(3)
    data, u, Phi = multi_instance(rng, 300, K=3)
    spec = FairnessSpec("dp", "aware", 0.15)
    clf, rep = fit_multiclass(data, const((u + 1) / 2), const(Phi), spec)
    assert clf.lambda_hat.shape == (3,)
    pred = clf.predict(data.X, data.a)
    cm = notion_spec("dp", 3)
    U = np.max(np.abs(signed_components(cm, pred[None, :], data)))
    assert U <= spec.alpha - rep.epsilon_alpha
    assert U == pytest.approx(rep.signed_value)
    assert rep.errors == int(np.sum(pred != data.y))


def test_multiclass_vacuous_constraint():
    rng = np.random.default_rng(4)
    data, u, _ = multi_instance(rng, 200, K=3)
    Phi = rng.normal(size=(200, 6))
    plug_err = int(np.sum((u > 0) != data.y.astype(bool)))
    _, rep = fit_multiclass(data, const((u + 1) / 2), const(Phi), fixed("eo", 4.0))
    assert rep.feasible and rep.errors <= plug_err


def test_multiclass_deterministic():
    rng = np.random.default_rng(5)
    data, u, Phi = multi_instance(rng, 150, K=3)
    runs = [fit_multiclass(data, const((u + 1) / 2), const(Phi), fixed("pe", 0.2),
                           SearchConfig(seed=11))[1] for _ in range(2)]
    assert runs[0] == runs[1]


def test_multiclass_wrong_shape():
    rng = np.random.default_rng(6)
    data, u, Phi = multi_instance(rng, 50, K=3)
    with pytest.raises(DataError, match="shape"):
        fit_multiclass(data, const((u + 1) / 2), const(Phi[:, :2]), fixed("dp", 0.2))


def test_multiclass_infeasible_reports_best():
    rng = np.random.default_rng(7)
    data, u, Phi = multi_instance(rng, 60, K=3)
    with pytest.raises(InfeasibleCalibrationError) as exc:
        fit_multiclass(data, const((u + 1) / 2), const(np.zeros_like(Phi)), fixed("dp", 0.01, eps=0.5))
    assert exc.value.best_value >= 0
