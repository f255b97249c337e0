import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairpost.core import DataError
from fairpost.estimators import PlugIn
from fairpost.oracle import (
    FIXTURE_SEED,
    STUDY_CELL_PROBS,
    DiscreteModel,
    OracleModel,
    _hinge_on_grid,
    _project_l1,
    bayes_lambda,
    bayes_risk,
    boundary_allocation,
    hinge_objective,
    lambda_curve,
    lemma_lambda,
    make_study_model,
    minimize_hinge_objective,
)

from conftest import definitional_unfairness


def problem(model, notion, scenario, multiclass=False):
    X, a, w = model.support(scenario)
    plug = PlugIn(model, notion, scenario, multiclass)
    return X, a, w, 2 * plug.eta(X, a) - 1, plug.phi(X, a)


def unfairness(model, notion, scenario, f, multiclass=False):
    return definitional_unfairness(notion, model.conditional_means(f, scenario), model.p_ya, multiclass)


def risk(w, u, f):
    # P(Y != f) = P(Y=1) + E[f (1 - 2 eta)]
    return float(np.sum(w * (1 - u) / 2) + np.sum(w * f * -u))


NOTIONS = ["dp", "eoo", "pe", "oae"]


def test_study_cell_probs_normalized():
    assert np.sum(STUDY_CELL_PROBS) == pytest.approx(1.0, abs=1e-15)
    assert np.array(STUDY_CELL_PROBS)[0, 0] == pytest.approx(0.30 / 1.09)


@pytest.mark.parametrize("name", ["m1", "m2", "m3"])
def test_shipped_fixture_matches_generator(name):
    shipped = OracleModel.load(name)
    fresh = make_study_model(name)
    assert shipped.seed == FIXTURE_SEED
    assert np.array_equal(shipped.means, fresh.means)
    assert shipped.noise == fresh.noise


def test_study_means_layout():
    m = make_study_model("m2")
    assert m.means.shape == (2, 2, 5)
    assert np.all((m.means[1, 0] >= 0.5) & (m.means[1, 0] <= 1.5))
    others = np.delete(m.means.reshape(4, 5), 2, axis=0)
    assert np.all((others >= 0) & (others <= 1))


def test_sample_reproducible_and_chunked():
    m = make_study_model("m1")
    a = m.sample(70_000, 3)
    b = m.sample(70_000, 3)
    assert np.array_equal(a.X, b.X) and np.array_equal(a.y, b.y)
    assert not np.array_equal(m.sample(500, 4).X, m.sample(500, 5).X)
    freq = np.array([[np.mean((a.y == y) & (a.a == g)) for g in (1, 2)] for y in (0, 1)])
    assert np.allclose(freq, m.p_ya, atol=0.01)


def test_posterior_is_probability_and_calibrated():
    m = make_study_model("m3")
    data = m.sample(40_000, 1)
    P = m.posterior.cell_probs(data.X)
    assert np.allclose(P.sum(axis=(1, 2)), 1)
    # posterior of the drawn cell averages to the prior-weighted self-probability
    eta = P[:, 1].sum(axis=1)
    bins = np.digitize(eta, [0.2, 0.4, 0.6, 0.8])
    for b in range(5):
        sel = bins == b
        if sel.sum() > 500:
            assert data.y[sel].mean() == pytest.approx(eta[sel].mean(), abs=0.03)


def test_model_roundtrip(tmp_path):
    m = make_study_model("m3")
    m.save(tmp_path / "m.json")
    back = OracleModel.load(tmp_path / "m.json")
    X = m.sample(10, 0).X
    assert np.array_equal(back.cell_probs_fn(X), m.cell_probs_fn(X))


def test_model_validation(tmp_path):
    with pytest.raises(DataError):
        OracleModel(2, [[0.5, 0.5], [0.1, 0.1]], np.zeros((2, 2, 2)), {"family": "gaussian"})
    with pytest.raises(DataError):
        OracleModel(2, [[0.25, 0.25], [0.25, 0.25]], np.zeros((2, 2, 3)), {"family": "gaussian"})
    with pytest.raises(DataError):
        OracleModel(2, [[0.25, 0.25], [0.25, 0.25]], np.zeros((2, 2, 2)), {"family": "cauchy"})
    (tmp_path / "bad.json").write_text(json.dumps({"d": 2}))
    with pytest.raises(DataError, match="cell_probs"):
        OracleModel.load(tmp_path / "bad.json")
    with pytest.raises(DataError):
        OracleModel.load(tmp_path / "missing.json")


def test_hinge_grid_matches_direct():
    rng = np.random.default_rng(0)
    u, phi = rng.uniform(-1, 1, 300), rng.normal(size=300)
    phi[:10] = 0
    w = rng.dirichlet(np.ones(300))
    lam = np.linspace(-3, 3, 101)
    assert np.allclose(_hinge_on_grid(lam, u, phi, w, 0.1), hinge_objective(lam, u, phi, w, 0.1), atol=1e-13)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 0.5))
def test_objective_convex(seed, alpha):
    rng = np.random.default_rng(seed)
    n = 50
    u, phi, w = rng.uniform(-1, 1, n), rng.normal(size=n), rng.dirichlet(np.ones(n))
    x, z = rng.normal(size=2) * 3
    t = rng.uniform()
    J = lambda v: hinge_objective(v, u, phi, w, alpha)[0]
    assert J(t * x + (1 - t) * z) <= t * J(x) + (1 - t) * J(z) + 1e-12


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 0.5))
def test_minimizer_beats_dense_grid(seed, alpha):
    rng = np.random.default_rng(seed)
    n = 40
    u, phi, w = rng.uniform(-1, 1, n), rng.normal(size=n), rng.dirichlet(np.ones(n))
    lam, J = minimize_hinge_objective(u, phi, alpha, w)
    grid = np.linspace(-1 / alpha, 1 / alpha, 4001)
    assert J <= hinge_objective(grid, u, phi, w, alpha).min() + 1e-12
    assert abs(lam) <= 1 / alpha + 1e-12


def test_large_problem_uses_cumsum_path():
    rng = np.random.default_rng(1)
    u, phi = rng.uniform(-1, 1, 6000), rng.normal(size=6000)
    w = np.full(6000, 1 / 6000)
    lam, J = minimize_hinge_objective(u, phi, 0.05, w)
    lam2, J2 = minimize_hinge_objective(u, phi, 0.05, w, exact_limit=10**6)
    assert lam == lam2 and J == pytest.approx(J2, abs=1e-12)


def toy_models(seed, count, K=2):
    rng = np.random.default_rng(seed)
    return [DiscreteModel.random(rng, m=int(rng.integers(2, 9)), K=K) for _ in range(count)]


@pytest.mark.parametrize("notion", NOTIONS)
@pytest.mark.parametrize("scenario", ["aware", "blind"])
def test_lemma_matches_objective_minimizer(notion, scenario):
    rng = np.random.default_rng(0)
    for model in toy_models(hash((notion, scenario)) % 2**32, 25):
        _, _, w, u, phi = problem(model, notion, scenario)
        alpha = float(rng.uniform(0.01, 0.3))
        lam, _ = minimize_hinge_objective(u, phi, alpha, w)
        s, lam_plus = lemma_lambda(u, phi, alpha, w)
        assert lam == pytest.approx(s * lam_plus, abs=1e-12)


@pytest.mark.parametrize("notion", NOTIONS)
@pytest.mark.parametrize("scenario", ["aware", "blind"])
def test_slackness_and_dominance(notion, scenario):
    """The randomized Bayes rule is alpha-fair, meets slackness, and no random fair rule beats it."""
    rng = np.random.default_rng(1)
    for model in toy_models(hash((scenario, notion)) % 2**32, 10):
        _, _, w, u, phi = problem(model, notion, scenario)
        alpha = float(rng.uniform(0.01, 0.3))
        lam, _ = minimize_hinge_objective(u, phi, alpha, w)
        g = u - lam * phi
        on = np.isclose(g, 0.0, atol=1e-12)
        b = boundary_allocation(u, phi, w, lam, alpha) if lam != 0 else 0.0
        assert -1e-9 <= b <= 1 + 1e-9
        f_star = np.where(on, b, (g > 0).astype(float))
        if lam != 0:
            assert lam * np.sum(w * phi * f_star) == pytest.approx(abs(lam) * alpha, abs=1e-9)
        assert unfairness(model, notion, scenario, f_star) <= alpha + 1e-9
        best = risk(w, u, f_star)
        for _ in range(50):
            f = rng.uniform(size=w.size) if rng.uniform() < 0.5 else (rng.uniform(size=w.size) < 0.5).astype(float)
            U = unfairness(model, notion, scenario, f)
            if U > alpha:
                # shrink toward a constant rule, which is exactly fair
                t = alpha / U
                f = t * f + (1 - t) * rng.uniform()
            assert unfairness(model, notion, scenario, f) <= alpha + 1e-9
            assert risk(w, u, f) >= best - 1e-9


def test_unconstrained_limit():
    model = toy_models(5, 1)[0]
    sol = bayes_lambda(model, "eoo", "aware", 10.0)
    assert sol.lambda_star == 0.0
    r = bayes_risk(model, "eoo", "aware", 10.0)
    _, _, w, u, _ = problem(model, "eoo", "aware")
    assert r.bayes_risk == pytest.approx(float(np.sum(w * np.minimum((1 + u) / 2, (1 - u) / 2))))


def test_project_l1():
    v = np.array([3.0, -1.0, 0.5])
    p = _project_l1(v, 2.0)
    assert np.sum(np.abs(p)) == pytest.approx(2.0)
    assert np.allclose(p, [2.0, 0.0, 0.0])
    assert np.array_equal(_project_l1(np.array([0.1, 0.2]), 1.0), [0.1, 0.2])


def test_multiclass_bayes_improves_on_zero():
    model = toy_models(8, 1, K=3)[0]
    sol = bayes_lambda(model, "dp", "aware", 0.1, multiclass=True, iters=500)
    _, _, w, u, Phi = problem(model, "dp", "aware", multiclass=True)
    assert sol.objective <= hinge_objective(np.zeros(3), u, Phi, w, 0.1) + 1e-12
    assert np.sum(np.abs(sol.lambda_star)) <= 10 + 1e-9


def test_mc_size_floor():
    with pytest.raises(ValueError):
        bayes_lambda(make_study_model("m1"), "eoo", "blind", 0.1, mc_size=10)


def test_lambda_curve_shape():
    rows = lambda_curve(make_study_model("m1"), "eoo", [0.08, 0.2], mc_size=20_000, seed=1)
    assert [r["alpha"] for r in rows] == [0.08, 0.2]
    for r in rows:
        assert 0 <= r["lambda_aware"] <= 1 / r["alpha"]
        assert 0 <= r["lambda_blind"] <= 1 / r["alpha"]
    assert rows[0]["lambda_aware"] >= rows[1]["lambda_aware"]
