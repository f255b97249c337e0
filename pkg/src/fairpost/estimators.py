"""Initial estimators: joint (Y, A) posterior models, plug-in eta/phi, local polynomial regression.

Cell posteriors are arrays ``P`` of shape ``(n, 2, K)`` with
``P[i, y, a-1] = P(Y=y, A=a | X=x_i)``. Marginals ``p_ya`` have shape ``(2, K)``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

from .core import DataError, Dataset, FairpostError, Notion, Scenario
from .unfairness import ConditionalMeanSpec, Event, notion_spec

PROB_FLOOR = 1e-12


def _check_marginals(p_ya: np.ndarray):
    p_ya = np.asarray(p_ya, dtype=float)
    if np.any(p_ya <= 0):
        bad = [(y, a + 1) for y, a in zip(*np.nonzero(p_ya <= 0))]
        raise DataError(f"zero marginal probability for cells (y, a) = {bad}")
    return p_ya


def eta_from_cells(P: np.ndarray, scenario, a=None) -> np.ndarray:
    """Aware: ``P(1,a|x) / (P(0,a|x) + P(1,a|x))``. Blind: ``sum_a P(1,a|x)``."""
    scenario = Scenario.parse(scenario)
    if scenario is Scenario.BLIND:
        return P[:, 1, :].sum(axis=1)
    idx = np.asarray(a, dtype=np.int64) - 1
    rows = np.arange(P.shape[0])
    num = P[rows, 1, idx]
    den = P[rows, 0, idx] + num
    if np.any(den <= 0):
        raise DataError("zero denominator in group-aware eta")
    return num / den


def rho_given_y(P: np.ndarray, a: int, y: int) -> np.ndarray:
    """``P(A=a | Y=y, X=x)`` for the blind scenario."""
    den = P[:, y, :].sum(axis=1)
    return P[:, y, a - 1] / np.maximum(den, PROB_FLOOR)


def rho_a(P: np.ndarray, a: int) -> np.ndarray:
    return P[:, :, a - 1].sum(axis=1)


def _event_prob(ev: Event, p_ya: np.ndarray) -> float:
    if ev.a is None and ev.y is None:
        return 1.0
    if ev.a is None:
        return float(p_ya[ev.y].sum())
    if ev.y is None:
        return float(p_ya[:, ev.a - 1].sum())
    return float(p_ya[ev.y, ev.a - 1])


def event_weight(ev: Event, P: np.ndarray, scenario, a=None) -> np.ndarray:
    """``w`` with ``E[1(E) f] = E[w f]`` for classifiers admissible in the scenario."""
    scenario = Scenario.parse(scenario)
    n = P.shape[0]
    if scenario is Scenario.BLIND:
        if ev.a is None and ev.y is None:
            return np.ones(n)
        if ev.a is None:
            return P[:, ev.y, :].sum(axis=1)
        if ev.y is None:
            return rho_a(P, ev.a)
        return P[:, ev.y, ev.a - 1]
    a = np.asarray(a, dtype=np.int64)
    w = np.ones(n) if ev.a is None else (a == ev.a).astype(float)
    if ev.y is not None:
        eta = eta_from_cells(P, Scenario.AWARE, a)
        w = w * (eta if ev.y == 1 else 1.0 - eta)
    return w


def phi_generic(spec: ConditionalMeanSpec, P: np.ndarray, p_ya: np.ndarray, scenario, a=None) -> np.ndarray:
    """``phi_k = sum_j kappa_kj w_j / p_j``; shape ``(n,)`` for binary specs, ``(n, K~)`` otherwise."""
    p_ya = _check_marginals(p_ya)
    cache = {}
    out = np.zeros((P.shape[0], spec.n_components))
    for k, comp in enumerate(spec.components):
        for t in comp:
            if t.event not in cache:
                cache[t.event] = event_weight(t.event, P, scenario, a) / _event_prob(t.event, p_ya)
            out[:, k] += t.kappa * cache[t.event]
    return out if spec.multiclass else out[:, 0]


def phi_binary(notion, scenario, P: np.ndarray, p_ya: np.ndarray, a=None) -> np.ndarray:
    """Closed-form weighting functions for a binary sensitive attribute."""
    notion = Notion.parse(notion)
    scenario = Scenario.parse(scenario)
    p = _check_marginals(p_ya)
    if p.shape != (2, 2):
        raise ValueError("binary phi needs K = 2")
    p01, p02, p11, p12 = p[0, 0], p[0, 1], p[1, 0], p[1, 1]
    if scenario is Scenario.AWARE:
        a = np.asarray(a, dtype=np.int64)
        sgn = 3.0 - 2.0 * a
        g = a - 1
        eta = eta_from_cells(P, scenario, a)
        if notion is Notion.EOO:
            return sgn * eta / p[1, g]
        if notion is Notion.DP:
            return sgn / p[:, g].sum(axis=0)
        if notion is Notion.PE:
            return sgn * (1.0 - eta) / p[0, g]
        if notion is Notion.OAE:
            pa = p[:, g].sum(axis=0)
            return sgn * (pa * eta - p[1, g]) / (p[1, g] * p[0, g])
    else:
        eta = eta_from_cells(P, scenario)
        if notion is Notion.EOO:
            return (rho_given_y(P, 1, 1) / p11 - rho_given_y(P, 2, 1) / p12) * eta
        if notion is Notion.DP:
            return rho_a(P, 1) / (p01 + p11) - rho_a(P, 2) / (p02 + p12)
        if notion is Notion.PE:
            return (rho_given_y(P, 1, 0) / p01 - rho_given_y(P, 2, 0) / p02) * (1.0 - eta)
        if notion is Notion.OAE:
            return (
                P[:, 1, 0] / p11 - P[:, 0, 0] / p01 - P[:, 1, 1] / p12 + P[:, 0, 1] / p02
            )
    raise ValueError(f"{notion.value} has no binary weighting function")


# ---------------------------------------------------------------------------
# multinomial logit over the 2K cells


def _design(X: np.ndarray) -> np.ndarray:
    return np.hstack([np.ones((X.shape[0], 1)), X])


def _cell_index(data: Dataset) -> np.ndarray:
    return data.y * data.K + (data.a - 1)


def logit_loss_grad(W: np.ndarray, Z: np.ndarray, c: np.ndarray, reg: float):
    """Mean negative log-likelihood plus ``reg/2 * ||slopes||^2`` and its gradient."""
    S = Z @ W.T
    lse = logsumexp(S, axis=1)
    n = Z.shape[0]
    loss = float(np.mean(lse - S[np.arange(n), c]))
    R = np.exp(S - lse[:, None])
    R[np.arange(n), c] -= 1.0
    G = R.T @ Z / n
    slopes = W[:, 1:]
    loss += 0.5 * reg * float(np.sum(slopes**2))
    G[:, 1:] += reg * slopes
    return loss, G


@dataclass(frozen=True, eq=False)
class JointClassModel:
    """Linear softmax scores over cells ordered (0,1),(0,2),...,(0,K),(1,1),...,(1,K)."""

    W: np.ndarray
    K: int
    p_ya: np.ndarray
    converged: bool = True
    n_iter: int = 0
    grad_norm: float = 0.0

    @property
    def d(self) -> int:
        return self.W.shape[1] - 1

    def cell_probs(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.d:
            raise DataError(f"dimension mismatch: model has d={self.d}, input has {X.shape[1]}")
        S = _design(X) @ self.W.T
        P = np.exp(S - logsumexp(S, axis=1, keepdims=True))
        P = np.maximum(P, PROB_FLOOR)
        P /= P.sum(axis=1, keepdims=True)
        return P.reshape(-1, 2, self.K)

    def to_dict(self) -> dict:
        cells = [f"({y},{a})" for y in (0, 1) for a in range(1, self.K + 1)]
        return {
            "type": "multinomial_logit",
            "K": self.K,
            "cell_order": cells,
            "weights": self.W.tolist(),
            "p_ya": self.p_ya.tolist(),
            "converged": self.converged,
            "n_iter": self.n_iter,
            "grad_norm": self.grad_norm,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "JointClassModel":
        if doc.get("type") != "multinomial_logit":
            raise DataError(f"not a multinomial logit model: type={doc.get('type')!r}")
        W = np.asarray(doc["weights"], dtype=float)
        K = int(doc["K"])
        if W.shape[0] != 2 * K:
            raise DataError(f"weight matrix has {W.shape[0]} rows, expected {2 * K}")
        return cls(W, K, np.asarray(doc["p_ya"], dtype=float), bool(doc.get("converged", True)),
                   int(doc.get("n_iter", 0)), float(doc.get("grad_norm", 0.0)))


@dataclass(frozen=True)
class LogitConfig:
    reg: float = 1e-4
    gtol: float = 1e-6
    max_iter: int = 2000


def fit_multinomial_logit(train: Dataset, reg: float = 1e-4, config: LogitConfig | None = None) -> JointClassModel:
    """Penalized maximum likelihood for ``P(Y, A | X)``.

    Marginals are the cell frequencies of ``train``.
    """
    config = config or LogitConfig(reg=reg)
    if reg < 0:
        raise ValueError("ridge penalty must be nonnegative")
    c = _cell_index(train)
    if np.unique(c).size < 2:
        raise DataError("training data occupy a single (y, a) cell")
    Z = _design(train.X)
    shape = (2 * train.K, Z.shape[1])

    def fun(w):
        loss, G = logit_loss_grad(w.reshape(shape), Z, c, reg)
        return loss, G.ravel()

    res = minimize(fun, np.zeros(shape[0] * shape[1]), jac=True, method="L-BFGS-B",
                   options={"maxiter": config.max_iter, "gtol": config.gtol, "ftol": 0.0, "maxcor": 20})
    if not np.isfinite(res.fun) or not np.all(np.isfinite(res.x)):
        raise FairpostError("logit fit diverged (non-finite loss)")
    W = res.x.reshape(shape)
    gnorm = float(np.max(np.abs(fun(res.x)[1])))
    p_ya = train.n_ya / train.n
    return JointClassModel(W, train.K, p_ya, gnorm <= config.gtol, int(res.nit), gnorm)


# ---------------------------------------------------------------------------
# plug-in wrappers


@dataclass(frozen=True, eq=False)
class PlugIn:
    """``eta`` and ``phi`` for one notion and scenario, computed from a cell-posterior model.

    ``model`` needs ``cell_probs(X) -> (n, 2, K)``; ``p_ya`` defaults to the
    model's own marginals.
    """

    model: object
    notion: Notion
    scenario: Scenario
    multiclass: bool = False
    p_ya: np.ndarray | None = None
    eps_eta: float = 0.0
    eps_phi: float = 0.0
    spec: ConditionalMeanSpec = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "notion", Notion.parse(self.notion))
        object.__setattr__(self, "scenario", Scenario.parse(self.scenario))
        p = self.model.p_ya if self.p_ya is None else self.p_ya
        object.__setattr__(self, "p_ya", _check_marginals(p))
        K = self.p_ya.shape[1]
        object.__setattr__(self, "spec", notion_spec(self.notion, K, self.multiclass or None))

    def eta(self, X, a) -> np.ndarray:
        e = eta_from_cells(self.model.cell_probs(X), self.scenario, a)
        return e + self.eps_eta * (2.0 * e == 1.0) if self.eps_eta else e

    def phi(self, X, a) -> np.ndarray:
        P = self.model.cell_probs(X)
        if self.spec.multiclass:
            p = phi_generic(self.spec, P, self.p_ya, self.scenario, a)
        else:
            p = phi_binary(self.notion, self.scenario, P, self.p_ya, a)
        return p + self.eps_phi * (p == 0.0) if self.eps_phi else p

    def descriptor(self) -> dict:
        if not hasattr(self.model, "to_dict"):
            raise FairpostError("score model is not serializable")
        return {
            "type": "plugin",
            "notion": self.notion.value,
            "scenario": self.scenario.value,
            "multiclass": self.spec.multiclass,
            "p_ya": self.p_ya.tolist(),
            "eps_eta": self.eps_eta,
            "eps_phi": self.eps_phi,
            "model": self.model.to_dict(),
        }


def model_from_dict(doc: dict):
    kind = doc.get("type")
    if kind == "multinomial_logit":
        return JointClassModel.from_dict(doc)
    if kind == "oracle":
        from .oracle import OracleModel

        return OracleModel.from_dict(doc).posterior
    raise DataError(f"unknown score model type {kind!r}")


def plugin_from_descriptor(desc: dict) -> PlugIn:
    if desc.get("type") != "plugin":
        raise DataError(f"unknown estimator descriptor type {desc.get('type')!r}")
    return PlugIn(model_from_dict(desc["model"]), desc["notion"], desc["scenario"],
                  bool(desc.get("multiclass", False)), np.asarray(desc["p_ya"], dtype=float),
                  float(desc.get("eps_eta", 0.0)), float(desc.get("eps_phi", 0.0)))


# ---------------------------------------------------------------------------
# local polynomial regression


def triangular_kernel(z: np.ndarray) -> np.ndarray:
    """``(1 - ||z||)_+``: at least 1/2 on the ball of radius 1/2, at most 1 on the unit ball."""
    return np.maximum(1.0 - np.linalg.norm(z, axis=-1), 0.0)


@dataclass(frozen=True)
class LocalPolyConfig:
    degree: int = 1
    bandwidth: float = 0.5
    kernel: Callable[[np.ndarray], np.ndarray] = triangular_kernel
    k_l: float = 0.5
    k_u: float = 1.0
    ridge: float = 1e-10

    def __post_init__(self):
        if self.degree < 0 or int(self.degree) != self.degree:
            raise ValueError("degree must be a nonnegative integer")
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")


def monomial_exponents(d: int, degree: int) -> list:
    out = []
    for deg in range(degree + 1):
        for combo in itertools.combinations_with_replacement(range(d), deg):
            e = [0] * d
            for j in combo:
                e[j] += 1
            out.append(tuple(e))
    return out


def lemma_bandwidth(n: int, beta: float, d: int, scale: float = 1.0) -> float:
    """Rate-optimal bandwidth ``scale * (log n / n)^(1 / (2 beta + d))``."""
    return scale * (math.log(n) / n) ** (1.0 / (2.0 * beta + d))


class LocalPolynomialRegressor:
    """Kernel-weighted least squares in monomials of ``(x' - x) / h``; returns the intercept."""

    def __init__(self, X, t, config: LocalPolyConfig | None = None):
        self.X = np.asarray(X, dtype=float)
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        self.t = np.asarray(t, dtype=float)
        self.config = config or LocalPolyConfig()
        self.exps = np.array(monomial_exponents(self.X.shape[1], self.config.degree))

    def _one(self, x: np.ndarray) -> float:
        h = self.config.bandwidth
        Z = (self.X - x) / h
        w = self.config.kernel(Z)
        act = w > 0
        if not act.any():
            raise DataError(f"no kernel-active samples at query point {x.tolist()}")
        Z, w, t = Z[act], w[act], self.t[act]
        V = np.prod(Z[:, None, :] ** self.exps[None, :, :], axis=2)
        sw = np.sqrt(w)
        A = V * sw[:, None]
        b = t * sw
        G = A.T @ A
        if np.linalg.cond(G) > 1e12:
            theta = np.linalg.solve(G + self.config.ridge * np.trace(G) * np.eye(G.shape[0]), A.T @ b)
        else:
            theta = np.linalg.lstsq(A, b, rcond=None)[0]
        return float(np.clip(theta[0], 0.0, 1.0))

    def predict(self, Xq) -> np.ndarray:
        Xq = np.asarray(Xq, dtype=float)
        if Xq.ndim == 1:
            Xq = Xq[None, :] if self.X.shape[1] > 1 else Xq[:, None]
        return np.array([self._one(x) for x in Xq])


def fit_local_polynomial(train: Dataset, target: str, config: LocalPolyConfig, x, group: int | None = None):
    """Local polynomial estimate at ``x``.

    ``target="Y"`` regresses the label (on group ``group`` only when given);
    ``target="A|Y=1"`` regresses ``1(A=1)`` on the positives, giving ``rho_{1|1}``.
    """
    if target == "Y":
        m = np.ones(train.n, dtype=bool) if group is None else train.a == group
        X, t = train.X[m], train.y[m]
    elif target == "A|Y=1":
        m = train.y == 1
        X, t = train.X[m], (train.a[m] == 1).astype(float)
    else:
        raise ValueError(f"unknown target {target!r}")
    reg = LocalPolynomialRegressor(X, t, config)
    x = np.asarray(x, dtype=float)
    out = reg.predict(x if x.ndim > 1 else x[None, :])
    return float(out[0]) if x.ndim == 1 else out
