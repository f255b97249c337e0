"""Ground-truth models and solvers for the Bayes-optimal fair classifier.

Two kinds of model share one interface (``cell_probs``, ``p_ya``,
``support``): Gaussian / Student-t location mixtures, whose expectations are
Monte-Carlo averages, and finite-support toys, whose expectations are exact.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from .core import DataError, Dataset, FairpostError, Notion, Scenario
from .estimators import PlugIn, eta_from_cells

MC_CHUNK = 65_536

# published cell weights of the simulation study, indexed [y][a-1]; they sum
# to 1.09 and are normalized proportionally
STUDY_CELL_WEIGHTS = [[0.30, 0.18], [0.49, 0.12]]
STUDY_CELL_PROBS = (np.array(STUDY_CELL_WEIGHTS) / np.sum(STUDY_CELL_WEIGHTS)).tolist()
STUDY_MODELS = {
    "m1": dict(d=5, b=1.0, noise={"family": "gaussian"}, n=1000),
    "m2": dict(d=5, b=0.5, noise={"family": "gaussian"}, n=500),
    "m3": dict(d=10, b=1.0, noise={"family": "student_t", "dof": 3}, n=1000),
}
FIXTURE_SEED = 20240501


@dataclass(frozen=True, eq=False)
class OracleModel:
    """``(Y, A)`` drawn from ``cell_probs``; ``X = mu_{Y,A} + noise``."""

    d: int
    cell_probs: np.ndarray
    means: np.ndarray
    noise: dict
    seed: int | None = None
    name: str = ""

    def __post_init__(self):
        p = np.asarray(self.cell_probs, dtype=float)
        mu = np.asarray(self.means, dtype=float)
        if p.ndim != 2 or p.shape[0] != 2:
            raise DataError("cell_probs must have shape (2, K)")
        if np.any(p <= 0) or abs(p.sum() - 1) > 1e-12:
            raise DataError("cell_probs must be positive and sum to 1")
        if mu.shape != (2, p.shape[1], self.d) or not np.all(np.isfinite(mu)):
            raise DataError(f"means must be finite with shape (2, {p.shape[1]}, {self.d})")
        fam = self.noise.get("family")
        if fam not in ("gaussian", "student_t"):
            raise DataError(f"unknown noise family {fam!r}")
        object.__setattr__(self, "cell_probs", p)
        object.__setattr__(self, "means", mu)

    @property
    def K(self) -> int:
        return self.cell_probs.shape[1]

    @property
    def p_ya(self) -> np.ndarray:
        return self.cell_probs

    def _noise(self, rng, size):
        if self.noise["family"] == "gaussian":
            return rng.standard_normal(size)
        return rng.standard_t(self.noise.get("dof", 3), size)

    def _log_noise(self, Z: np.ndarray) -> np.ndarray:
        if self.noise["family"] == "gaussian":
            return -0.5 * np.sum(Z**2, axis=-1)
        return np.sum(stats.t.logpdf(Z, self.noise.get("dof", 3)), axis=-1)

    def _draw(self, n: int, rng) -> Dataset:
        c = rng.choice(2 * self.K, size=n, p=self.cell_probs.ravel())
        y, a = c // self.K, c % self.K + 1
        X = self.means[y, a - 1] + self._noise(rng, (n, self.d))
        return Dataset(X, a, y, K=self.K)

    def sample(self, n: int, seed) -> Dataset:
        """Draw ``n`` points; chunked with per-chunk seeds so large draws are reproducible piecewise."""
        if n < 1:
            raise ValueError("n must be >= 1")
        if n <= MC_CHUNK:
            return self._draw(n, np.random.default_rng(seed))
        ss = np.random.SeedSequence(seed)
        parts = []
        left = n
        for child in ss.spawn(math.ceil(n / MC_CHUNK)):
            m = min(MC_CHUNK, left)
            parts.append(self._draw(m, np.random.default_rng(child)))
            left -= m
        return Dataset(np.vstack([p.X for p in parts]), np.concatenate([p.a for p in parts]),
                       np.concatenate([p.y for p in parts]), K=self.K)

    def cell_probs_fn(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        Z = X[:, None, None, :] - self.means[None, :, :, :]
        L = self._log_noise(Z) + np.log(self.cell_probs)[None]
        L = L.reshape(X.shape[0], -1)
        return np.exp(L - logsumexp(L, axis=1, keepdims=True)).reshape(-1, 2, self.K)

    # PlugIn calls ``model.cell_probs(X)``; the attribute name is taken by the
    # prior table, so expose the posterior through a small adapter.
    @property
    def posterior(self) -> "_Posterior":
        return _Posterior(self)

    def support(self, scenario, mc_size: int, seed):
        """Monte-Carlo support: points, groups and equal weights."""
        data = self.sample(mc_size, seed)
        return data.X, data.a, np.full(data.n, 1.0 / data.n)

    def to_dict(self) -> dict:
        return {
            "type": "oracle",
            "name": self.name,
            "d": self.d,
            "cell_probs": self.cell_probs.tolist(),
            "means": self.means.tolist(),
            "noise": self.noise,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "OracleModel":
        try:
            return cls(int(doc["d"]), doc["cell_probs"], doc["means"], dict(doc["noise"]),
                       doc.get("seed"), doc.get("name", ""))
        except KeyError as exc:
            raise DataError(f"fixture is missing field {exc.args[0]!r}") from None

    @classmethod
    def load(cls, path_or_name) -> "OracleModel":
        """Load a fixture file, or a shipped fixture by name (``m1``, ``m2``, ``m3``)."""
        key = str(path_or_name).lower()
        if key in STUDY_MODELS:
            text = resources.files("fairpost.fixtures").joinpath(f"{key}.json").read_text()
        else:
            try:
                text = Path(path_or_name).read_text()
            except OSError as exc:
                raise DataError(f"cannot read fixture {path_or_name}: {exc}") from exc
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


class _Posterior:
    def __init__(self, model: OracleModel):
        self.model = model
        self.p_ya = model.cell_probs

    def cell_probs(self, X):
        return self.model.cell_probs_fn(X)

    def to_dict(self):
        return self.model.to_dict()


def make_study_model(name: str, seed: int = FIXTURE_SEED) -> OracleModel:
    """Simulation-study mixture with means ``U(0,1)^d``, except ``mu_{1,1} ~ U(b, b+1)^d``."""
    cfg = STUDY_MODELS[name.lower()]
    d, b = cfg["d"], cfg["b"]
    rng = np.random.default_rng(seed)
    means = rng.uniform(0.0, 1.0, size=(2, 2, d))
    means[1, 0] = rng.uniform(b, b + 1.0, size=d)
    return OracleModel(d, STUDY_CELL_PROBS, means, dict(cfg["noise"]), seed, name.upper())


@dataclass(frozen=True, eq=False)
class DiscreteModel:
    """Finite-support toy: atom ``j`` has mass ``weights[j]`` and posteriors ``cells[j]`` (shape ``(2, K)``).

    Features are the atom index stored as a one-column matrix.
    """

    weights: np.ndarray
    cells: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        c = np.asarray(self.cells, dtype=float)
        if w.ndim != 1 or c.shape[0] != w.size or c.shape[1] != 2:
            raise DataError("cells must have shape (m, 2, K)")
        if np.any(w < 0) or abs(w.sum() - 1) > 1e-12:
            raise DataError("atom weights must be a probability vector")
        if np.any(c < 0) or np.max(np.abs(c.sum(axis=(1, 2)) - 1)) > 1e-12:
            raise DataError("atom posteriors must be probability tables")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "cells", c)

    @property
    def K(self) -> int:
        return self.cells.shape[2]

    @property
    def p_ya(self) -> np.ndarray:
        return np.einsum("j,jya->ya", self.weights, self.cells)

    def cell_probs(self, X) -> np.ndarray:
        idx = np.asarray(X).reshape(-1).astype(np.int64)
        return self.cells[idx]

    def support(self, scenario, mc_size=None, seed=None):
        """Exact support: blind uses atoms; aware uses (atom, group) pairs."""
        m = self.weights.size
        if Scenario.parse(scenario) is Scenario.BLIND:
            return np.arange(m, dtype=float)[:, None], np.ones(m, dtype=np.int64), self.weights.copy()
        ra = self.cells.sum(axis=1)
        X = np.repeat(np.arange(m, dtype=float), self.K)[:, None]
        a = np.tile(np.arange(1, self.K + 1), m)
        return X, a, (self.weights[:, None] * ra).ravel()

    def conditional_means(self, f_values: np.ndarray, scenario) -> np.ndarray:
        """``E[f | Y=y, A=a]`` as a ``(2, K)`` table; ``f_values`` follows ``support`` order."""
        X, a, w = self.support(scenario)
        P = self.cell_probs(X)
        rows = np.arange(X.shape[0])
        out = np.zeros((2, self.K))
        for y in (0, 1):
            for g in range(1, self.K + 1):
                if Scenario.parse(scenario) is Scenario.BLIND:
                    mass = w * P[:, y, g - 1]
                else:
                    ra = P[rows, :, a - 1].sum(axis=1)
                    mass = w * (a == g) * P[rows, y, a - 1] / np.where(ra > 0, ra, 1.0)
                out[y, g - 1] = np.sum(mass * f_values) / np.sum(mass)
        return out

    @classmethod
    def random(cls, rng, m: int = 6, K: int = 2, min_mass: float = 0.02) -> "DiscreteModel":
        w = rng.dirichlet(np.ones(m))
        w = (w + min_mass) / (1 + m * min_mass)
        c = rng.dirichlet(np.ones(2 * K), size=m).reshape(m, 2, K)
        return cls(w, c)


def score_model(model):
    """Object exposing ``cell_probs(X)`` posteriors and ``p_ya`` for plug-in use."""
    return model.posterior if isinstance(model, OracleModel) else model


def true_eta_phi(model, notion, scenario, X, a=None, multiclass: bool = False):
    """Exact ``eta`` and ``phi`` from the model's posteriors and cell probabilities."""
    plug = PlugIn(score_model(model), notion, scenario, multiclass)
    if a is None:
        a = np.ones(np.asarray(X).shape[0], dtype=np.int64)
    return plug.eta(X, a), plug.phi(X, a)


# ---------------------------------------------------------------------------
# Bayes-optimal multiplier


def hinge_objective(lam, u, phi, w, alpha):
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    if phi.ndim == 1:
        vals = np.maximum(u[None, :] - lam[:, None] * phi[None, :], 0.0) @ w
        return vals + alpha * np.abs(lam)
    shift = phi @ lam
    return float(np.maximum(u - shift, 0.0) @ w + alpha * np.sum(np.abs(lam)))


def minimize_hinge_objective(u: np.ndarray, phi: np.ndarray, alpha: float, w: np.ndarray | None = None,
                             exact_limit: int = 4096):
    """Exact minimizer of ``sum_i w_i (u_i - lam phi_i)_+ + alpha |lam|`` with smallest ``|lam|``.

    The objective is convex piecewise linear with kinks at ``u_i / phi_i`` and
    0, so a minimizer sits on a kink. Values at kinks come from sorted
    cumulative sums; small problems are re-evaluated directly.
    """
    u = np.asarray(u, dtype=float)
    phi = np.asarray(phi, dtype=float)
    w = np.full(u.size, 1.0 / u.size) if w is None else np.asarray(w, dtype=float)
    nz = phi != 0
    kinks = np.unique(np.concatenate([[0.0], u[nz] / phi[nz]]))
    if kinks.size <= exact_limit and u.size <= exact_limit:
        J = np.concatenate([hinge_objective(kinks[i:i + 256], u, phi, w, alpha)
                            for i in range(0, kinks.size, 256)])
    else:
        J = _hinge_on_grid(kinks, u, phi, w, alpha)
    if not np.all(np.isfinite(J)):
        raise FairpostError("non-finite objective")
    jmin = J.min()
    near = np.nonzero(J <= jmin + 1e-12 * max(1.0, abs(jmin)))[0]
    i = near[np.argmin(np.abs(kinks[near]))]
    return float(kinks[i]), float(J[i])


def _hinge_on_grid(lam, u, phi, w, alpha):
    const = np.sum(w[phi == 0] * np.maximum(u[phi == 0], 0.0))
    out = np.full(lam.size, const) + alpha * np.abs(lam)
    for side in (1, -1):
        m = side * phi > 0
        r = u[m] / phi[m]
        order = np.argsort(r)
        r, wu, wp = r[order], (w[m] * u[m])[order], (w[m] * phi[m])[order]
        cu = np.concatenate([[0.0], np.cumsum(wu)])
        cp = np.concatenate([[0.0], np.cumsum(wp)])
        if side == 1:
            # active when lam < r
            k = np.searchsorted(r, lam, side="right")
            su, sp = cu[-1] - cu[k], cp[-1] - cp[k]
        else:
            # active when lam > r
            k = np.searchsorted(r, lam, side="left")
            su, sp = cu[k], cp[k]
        out += su - lam * sp
    return out


def lemma_lambda(u: np.ndarray, phi: np.ndarray, alpha: float, w: np.ndarray):
    """Infimum of ``lam_+ >= 0`` with ``s E[phi 1(u > s lam_+ phi)] <= alpha``; returns ``(s, lam_+)``.

    ``s`` is the sign of ``E[phi 1(u > 0)]`` with ``sgn(0) = +1``. The
    constraint is non-increasing in ``lam_+``; at a kink it may only be
    met by the right limit, in which case the kink is the infimum.
    """
    s = 1 if float(np.sum(w * phi * (u > 0))) >= 0 else -1
    psi = s * phi
    nz = psi != 0
    r = u[nz] / psi[nz]
    pos = np.unique(r[r > 0])
    grid = np.concatenate([[0.0], pos])
    right = np.concatenate([0.5 * (grid[1:] + grid[:-1]), [grid[-1] + 1.0]])

    def C(lam):
        return s * float(np.sum(w * phi * (u > lam * psi)))

    for g, rr in zip(grid, right):
        if C(g) <= alpha or C(rr) <= alpha:
            return s, float(g)
    raise FairpostError("constraint never satisfied")


def boundary_allocation(u, phi, w, lam, alpha):
    """Mass ``b`` on the boundary ``g = 0`` making ``lam E[phi f] = |lam| alpha``."""
    g = u - lam * phi
    on = np.isclose(g, 0.0, atol=1e-12)
    s = np.sign(lam)
    inside = float(np.sum(w * phi * (g > 0) * ~on))
    edge = float(np.sum(w * phi * on))
    if edge == 0:
        return 0.0
    return (s * alpha - inside) / edge


@dataclass(frozen=True)
class BayesSolution:
    lambda_star: float | np.ndarray
    alpha: float
    mc_size: int
    objective: float
    bayes_risk: float | None = None
    risk_se: float | None = None


def _setup(model, notion, scenario, mc_size, seed, multiclass=False):
    X, a, w = model.support(scenario, mc_size, seed)
    plug = PlugIn(score_model(model), notion, scenario, multiclass)
    u = 2.0 * plug.eta(X, a) - 1.0
    phi = plug.phi(X, a)
    return X, a, w, u, phi


def _subgradient(u, Phi, w, alpha, iters=2000, scale=None):
    """Projected subgradient on the l1 ball of radius 1/alpha with Polyak averaging."""
    kt = Phi.shape[1]
    radius = 1.0 / alpha
    step0 = scale if scale is not None else radius / 10.0
    lam = np.zeros(kt)
    avg = np.zeros(kt)
    for t in range(1, iters + 1):
        active = (u - Phi @ lam) > 0
        g = -(w * active) @ Phi + alpha * np.sign(lam)
        lam = _project_l1(lam - step0 / math.sqrt(t) * g, radius)
        avg += (lam - avg) / t
    return avg


def _project_l1(v, radius):
    if np.sum(np.abs(v)) <= radius:
        return v
    a = np.sort(np.abs(v))[::-1]
    cs = np.cumsum(a)
    k = np.nonzero(a * np.arange(1, a.size + 1) > cs - radius)[0][-1]
    theta = (cs[k] - radius) / (k + 1)
    return np.sign(v) * np.maximum(np.abs(v) - theta, 0.0)


def bayes_lambda(model, notion, scenario, alpha: float, mc_size: int = 200_000, seed=0,
                 multiclass: bool = False, iters: int = 2000) -> BayesSolution:
    """Minimizer of ``E(2 eta - 1 - lam phi)_+ + alpha |lam|`` with the smallest magnitude."""
    if isinstance(model, OracleModel) and mc_size < 1000:
        raise ValueError("mc_size must be at least 1000")
    _, _, w, u, phi = _setup(model, notion, scenario, mc_size, seed, multiclass)
    if phi.ndim == 1:
        lam, J = minimize_hinge_objective(u, phi, alpha, w)
        return BayesSolution(lam, alpha, int(u.size), J)
    lam = _subgradient(u, phi, w, alpha, iters)
    J = hinge_objective(lam, u, phi, w, alpha)
    J0 = hinge_objective(np.zeros_like(lam), u, phi, w, alpha)
    if J0 <= J + 1e-12:
        lam, J = np.zeros_like(lam), J0
    return BayesSolution(lam, alpha, int(u.size), J)


def risk_terms(model, notion, scenario, lam, mc_size, seed, multiclass=False):
    """Per-point ``(1 - 2 eta) 1(g > 0)`` and weights on the model's support."""
    _, _, w, u, phi = _setup(model, notion, scenario, mc_size, seed, multiclass)
    shift = phi @ np.asarray(lam) if phi.ndim > 1 else lam * phi
    return -u * ((u - shift) > 0), w


def bayes_risk(model, notion, scenario, alpha: float, mc_size: int = 200_000, seed=0,
               solution: BayesSolution | None = None, multiclass: bool = False) -> BayesSolution:
    """``p_Y + E[(1 - 2 eta) 1(g* > 0)]`` with its Monte-Carlo standard error."""
    sol = solution or bayes_lambda(model, notion, scenario, alpha, mc_size, seed, multiclass)
    v, w = risk_terms(model, notion, scenario, sol.lambda_star, mc_size, seed, multiclass)
    p_Y = float(model.p_ya[1].sum())
    risk = p_Y + float(np.sum(w * v))
    se = float(math.sqrt(np.sum(w * (v - np.sum(w * v)) ** 2) / v.size)) if isinstance(model, OracleModel) else 0.0
    return BayesSolution(sol.lambda_star, alpha, sol.mc_size, sol.objective, risk, se)


def lambda_curve(model, notion, alpha_grid, mc_size: int = 200_000, seed=0) -> list:
    """Rows ``(alpha, |lam*_aware|, |lam*_blind|)`` computed on common random numbers."""
    rows = []
    for alpha in alpha_grid:
        la = bayes_lambda(model, notion, "aware", alpha, mc_size, seed).lambda_star
        lb = bayes_lambda(model, notion, "blind", alpha, mc_size, seed).lambda_star
        rows.append({"alpha": float(alpha), "lambda_aware": abs(float(la)), "lambda_blind": abs(float(lb))})
    return rows


def write_curve_csv(rows: list, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["alpha", "lambda_aware", "lambda_blind"])
        w.writeheader()
        for r in rows:
            w.writerow(r)


def eta_true(model, scenario, X, a=None):
    P = score_model(model).cell_probs(X)
    return eta_from_cells(P, scenario, a)
