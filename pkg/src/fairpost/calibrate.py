"""Choosing the multiplier on the calibration split.

The binary path scans the breakpoints of a piecewise-constant constraint and
returns the smallest feasible multiplier in the direction of the plug-in's
signed unfairness. The multi-class path minimizes the empirical 0-1 error
under the sup-norm constraint with a multi-start coordinate search.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .core import (
    DataError,
    Dataset,
    FairnessSpec,
    FittedFairClassifier,
    InfeasibleCalibrationError,
    Notion,
)
from .unfairness import (
    ConditionalMeanSpec,
    epsilon_alpha,
    membership,
    notion_spec,
    signed_components,
)

DEDUP_TOL = 1e-12
CHUNK_CELLS = 4_000_000


class Breakpoint(NamedTuple):
    r: float
    side: int


@dataclass(frozen=True)
class CalibrationReport:
    s_hat: int
    lambda_hat: float | tuple
    signed_value: float
    epsilon_alpha: float
    feasible: bool
    candidates_examined: int
    alpha: float
    plugin_unfairness: float
    errors: int | None = None

    @property
    def bound(self) -> float:
        return self.alpha - self.epsilon_alpha

    @property
    def D0(self) -> float:
        """Plug-in empirical unfairness minus alpha."""
        return self.plugin_unfairness - self.alpha

    def to_dict(self) -> dict:
        lam = list(self.lambda_hat) if isinstance(self.lambda_hat, tuple) else self.lambda_hat
        return {
            "s_hat": self.s_hat,
            "lambda_hat": lam,
            "signed_value": self.signed_value,
            "epsilon_alpha": self.epsilon_alpha,
            "feasible": self.feasible,
            "candidates_examined": self.candidates_examined,
            "alpha": self.alpha,
            "plugin_unfairness": self.plugin_unfairness,
            "D0": self.D0,
            "errors": self.errors,
        }


def enforce_general_position(eta_hat: Callable, phi_hat: Callable, eps_eta: float, eps_phi: float):
    """Nudge exact ties: ``phi + eps_phi 1(phi = 0)`` and ``eta + eps_eta 1(2 eta = 1)``."""
    if eps_eta < 0 or eps_phi < 0:
        raise ValueError("perturbation sizes must be nonnegative")

    def eta_t(X, a):
        e = np.asarray(eta_hat(X, a), dtype=float)
        return e + eps_eta * (2.0 * e == 1.0)

    def phi_t(X, a):
        p = np.asarray(phi_hat(X, a), dtype=float)
        return p + eps_phi * (p == 0.0)

    return eta_t, phi_t


def breakpoints(u: np.ndarray, psi: np.ndarray) -> list:
    nz = psi != 0
    return [Breakpoint(float(r), int(s)) for r, s in zip(u[nz] / psi[nz], np.sign(psi[nz]))]


def dedup_sorted(r: np.ndarray, tol: float = DEDUP_TOL) -> np.ndarray:
    r = np.sort(r)
    if r.size == 0:
        return r
    keep = np.concatenate([[True], np.diff(r) > tol])
    return r[keep]


def binary_candidates(u: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """``0``, positive breakpoints, midpoints between consecutive ones (starting from 0), ``r_max + 1``.

    Breakpoints closer than ``DEDUP_TOL`` form one cluster: no midpoint is
    placed inside it, but each distinct member stays a candidate, since
    rounding (``2 * 0.8 - 1 != 0.6``) can split what is one tie in exact
    arithmetic.
    """
    nz = psi != 0
    r = u[nz] / psi[nz]
    pos = np.unique(r[r > 0])
    if pos.size == 0:
        return np.zeros(1)
    grid = np.concatenate([[0.0], pos])
    gap = np.diff(grid) > DEDUP_TOL
    mids = 0.5 * (grid[1:] + grid[:-1])[gap]
    cand = np.concatenate([[0.0], pos, mids, [pos[-1] + 1.0]])
    return np.sort(cand)


def _chunks(C: int, n: int):
    step = max(1, CHUNK_CELLS // max(n, 1))
    for lo in range(0, C, step):
        yield lo, min(C, lo + step)


def constraint_values(cm, data, u, psi, cand, cache=None) -> np.ndarray:
    """First signed component of ``1(u > c psi)`` for every candidate ``c``."""
    cache = cache or membership(cm, data)
    out = np.empty(cand.size)
    for lo, hi in _chunks(cand.size, data.n):
        P = u[None, :] > cand[lo:hi, None] * psi[None, :]
        out[lo:hi] = signed_components(cm, P, data, cache)[:, 0]
    return out


def _binary_cm(spec: FairnessSpec, data: Dataset) -> ConditionalMeanSpec:
    if data.K != 2:
        raise DataError(f"binary calibration needs K = 2, data has K = {data.K}")
    if spec.notion is Notion.EO:
        raise ValueError("equalized odds requires the multi-class path")
    return notion_spec(spec.notion, 2, multiclass=False)


def _epsilon(spec: FairnessSpec, cm, data) -> float:
    return epsilon_alpha(cm, data, spec.delta_post, spec.epsilon_mode, spec.epsilon_value,
                         spec.practical_reference).value


def fit_binary(data: Dataset, eta_hat, phi_hat, spec: FairnessSpec, estimator: dict | None = None):
    """Smallest feasible multiplier along the plug-in's sign; returns ``(classifier, report)``.

    Raises ``InfeasibleCalibrationError`` when no candidate meets
    ``alpha - epsilon``; the error carries the smallest value reached.
    """
    cm = _binary_cm(spec, data)
    cache = membership(cm, data)
    eps = _epsilon(spec, cm, data)
    bound = spec.alpha - eps
    u = 2.0 * np.asarray(eta_hat(data.X, data.a), dtype=float) - 1.0
    phi = np.asarray(phi_hat(data.X, data.a), dtype=float)
    if u.shape != (data.n,) or phi.shape != (data.n,):
        raise DataError("eta_hat and phi_hat must return one value per calibration row")

    plug_val = signed_components(cm, (u > 0)[None, :], data, cache)[0, 0]
    s_hat = 1 if plug_val >= 0 else -1
    psi = s_hat * phi
    cand = binary_candidates(u, psi)

    examined = 0
    best = np.inf
    chosen = None
    for lo, hi in _chunks(cand.size, data.n):
        vals = s_hat * constraint_values(cm, data, u, psi, cand[lo:hi], cache)
        examined += hi - lo
        best = min(best, float(vals.min()))
        ok = np.nonzero(vals <= bound)[0]
        if ok.size:
            chosen = lo + int(ok[0])
            value = float(vals[ok[0]])
            break

    if chosen is None:
        report = CalibrationReport(s_hat, float("nan"), best, eps, False, examined, spec.alpha, abs(plug_val))
        raise InfeasibleCalibrationError(
            f"no multiplier reaches signed unfairness <= alpha - eps = {bound:.6g}; "
            f"smallest value {best:.6g}",
            best,
            report,
        )
    lam_plus = float(cand[chosen])
    lam = s_hat * lam_plus
    clf = FittedFairClassifier(spec.scenario, spec.notion, spec.alpha, s_hat, lam, eta_hat, phi_hat,
                               K=2, d=data.d, delta_post=spec.delta_post, epsilon_alpha=eps,
                               estimator=estimator)
    report = CalibrationReport(s_hat, lam, value, eps, True, examined, spec.alpha, abs(plug_val))
    return clf, report


# ---------------------------------------------------------------------------
# multi-class


@dataclass(frozen=True)
class SearchConfig:
    starts: int = 8
    sweeps: int = 10
    seed: int = 0
    directions: int = 4


class _Evaluator:
    """Scores a batch of multiplier vectors: feasibility, 0-1 errors, sup-norm unfairness."""

    def __init__(self, cm, data, u, Phi, bound):
        self.cm, self.data, self.u, self.Phi, self.bound = cm, data, u, Phi, bound
        self.cache = membership(cm, data)
        self.y = data.y.astype(bool)
        self.count = 0
        self.best_key = None
        self.best_lam = None
        self.best_stats = None

    def shifts(self, P):
        vals = signed_components(self.cm, P, self.data, self.cache)
        U = np.max(np.abs(vals), axis=1)
        err = np.sum(P != self.y[None, :], axis=1)
        return U, err

    def keys(self, U, err, l1):
        feas = U <= self.bound
        # feasible points rank by error; infeasible ones by unfairness; ties by ||lambda||_1
        k0 = np.where(feas, 0, 1)
        k1 = np.where(feas, err.astype(float), U)
        return k0, k1, l1

    def line(self, lam: np.ndarray, direction):
        """Best point on ``lam + t * direction``; an int picks a coordinate axis."""
        if isinstance(direction, (int, np.integer)):
            d = np.zeros_like(lam)
            d[direction] = 1.0
        else:
            d = np.asarray(direction, dtype=float)
        v = self.u - self.Phi @ lam
        col = self.Phi @ d
        nz = col != 0
        r = np.unique(v[nz] / col[nz])
        if r.size:
            mids = 0.5 * (r[1:] + r[:-1])[np.diff(r) > DEDUP_TOL]
            cand = np.concatenate([r, mids, [r[0] - 1.0, r[-1] + 1.0, 0.0]])
        else:
            cand = np.array([0.0])
        if isinstance(direction, (int, np.integer)):
            # setting the coordinate to zero shortens lambda without crossing a breakpoint
            cand = np.append(cand, -lam[direction])
        best = None
        for lo, hi in _chunks(cand.size, self.data.n):
            c = cand[lo:hi]
            P = v[None, :] > c[:, None] * col[None, :]
            U, err = self.shifts(P)
            l1 = np.sum(np.abs(lam[None, :] + c[:, None] * d[None, :]), axis=1)
            k0, k1, l1 = self.keys(U, err, l1)
            self.count += hi - lo
            order = np.lexsort((l1, k1, k0))
            i = order[0]
            key = (int(k0[i]), float(k1[i]), float(l1[i]))
            if best is None or key < best[0]:
                best = (key, float(c[i]), float(U[i]), int(err[i]))
        key, t, U, err = best
        new = lam + t * d
        self._offer(key, new, U, err)
        return key, new

    def point(self, lam: np.ndarray):
        P = (self.u > self.Phi @ lam)[None, :]
        U, err = self.shifts(P)
        k0, k1, l1 = self.keys(U, err, np.array([np.sum(np.abs(lam))]))
        key = (int(k0[0]), float(k1[0]), float(l1[0]))
        self.count += 1
        self._offer(key, lam.copy(), float(U[0]), int(err[0]))
        return key

    def _offer(self, key, lam, U, err):
        if self.best_key is None or key < self.best_key:
            self.best_key, self.best_lam, self.best_stats = key, lam, (U, err)


def fit_multiclass(
    data: Dataset,
    eta_hat,
    Phi_hat,
    spec: FairnessSpec,
    search_config: SearchConfig | None = None,
    cm: ConditionalMeanSpec | None = None,
    estimator: dict | None = None,
):
    """Empirical-error minimization subject to ``max_k |signed_k| <= alpha - eps``.

    Coordinate search with exact line search over breakpoints and midpoints,
    from several starting points. Each sweep also searches along
    ``search_config.directions`` seeded random directions, which reaches
    thin feasible cells that axis moves step over. The returned multiplier
    is the best point evaluated anywhere in the search.
    """
    cfg = search_config or SearchConfig()
    cm = cm or notion_spec(spec.notion, data.K, multiclass=True)
    eps = _epsilon(spec, cm, data)
    bound = spec.alpha - eps
    u = 2.0 * np.asarray(eta_hat(data.X, data.a), dtype=float) - 1.0
    Phi = np.asarray(Phi_hat(data.X, data.a), dtype=float)
    if Phi.ndim == 1:
        Phi = Phi[:, None]
    kt = cm.n_components
    if Phi.shape != (data.n, kt):
        raise DataError(f"Phi_hat must return shape (n, {kt}), got {Phi.shape}")

    ev = _Evaluator(cm, data, u, Phi, bound)
    zero = np.zeros(kt)
    ev.point(zero)
    plug_U = ev.best_stats[0]

    nz = Phi != 0
    r_all = np.abs((u[:, None] / np.where(nz, Phi, 1.0))[nz])
    scale = float(np.median(r_all)) if r_all.size else 1.0
    scale = scale if scale > 0 else 1.0
    starts = [zero]
    for k in range(kt):
        for sgn in (1.0, -1.0):
            e = np.zeros(kt)
            e[k] = sgn * scale
            starts.append(e)
    rng = np.random.default_rng(cfg.seed)
    while len(starts) < cfg.starts:
        starts.append(rng.normal(size=kt) * scale)
    starts = starts[: max(1, cfg.starts)]

    for lam0 in starts:
        lam = lam0.astype(float).copy()
        key = ev.point(lam)
        for _ in range(cfg.sweeps):
            improved = False
            dirs = list(range(kt))
            if kt > 1 and cfg.directions:
                g = rng.normal(size=(cfg.directions, kt))
                dirs += list(g / np.linalg.norm(g, axis=1, keepdims=True))
            for d in dirs:
                new_key, new_lam = ev.line(lam, d)
                if new_key < key:
                    key, lam, improved = new_key, new_lam, True
            if not improved:
                break

    lam = ev.best_lam
    U, err = ev.best_stats
    feasible = ev.best_key[0] == 0
    report = CalibrationReport(1, tuple(float(v) for v in lam), U, eps, feasible, ev.count,
                               spec.alpha, plug_U, errors=err)
    if not feasible:
        raise InfeasibleCalibrationError(
            f"search found no multiplier with unfairness <= alpha - eps = {bound:.6g}; best {U:.6g}",
            U,
            report,
        )
    clf = FittedFairClassifier(spec.scenario, spec.notion, spec.alpha, 1, lam, eta_hat,
                               lambda X, a: np.asarray(Phi_hat(X, a), dtype=float).reshape(len(X), -1),
                               K=data.K, d=data.d, delta_post=spec.delta_post, epsilon_alpha=eps,
                               estimator=estimator)
    return clf, report
