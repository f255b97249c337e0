"""Fairness notions as signed sums of conditional means, and the finite-sample margin."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .core import DataError, Dataset, EmptyCellError, Notion

LOG_4E2 = math.log(4.0 * math.e**2)


class Event(NamedTuple):
    """Conditioning event ``{A=a, Y=y}``; ``None`` leaves that coordinate free."""

    a: int | None
    y: int | None

    def mask(self, a: np.ndarray, y: np.ndarray) -> np.ndarray:
        m = np.ones(a.shape[0], dtype=bool)
        if self.a is not None:
            m &= a == self.a
        if self.y is not None:
            m &= y == self.y
        return m

    def count(self, data: Dataset) -> int:
        if self.a is None and self.y is None:
            return data.n
        if self.a is None:
            return int(data.n_ya[self.y].sum())
        if self.y is None:
            return int(data.n_a[self.a - 1])
        return int(data.n_ya[self.y, self.a - 1])

    def label(self) -> str:
        parts = []
        if self.a is not None:
            parts.append(f"A={self.a}")
        if self.y is not None:
            parts.append(f"Y={self.y}")
        return "{" + ",".join(parts) + "}" if parts else "{all}"


class Term(NamedTuple):
    kappa: float
    event: Event


@dataclass(frozen=True)
class ConditionalMeanSpec:
    """Unfairness ``max_k |sum_j kappa_kj E[f | event_kj]|``.

    The binary path has a single component. Events may leave ``a`` or ``y``
    free, which the multi-class notions need for their pooled means.
    """

    components: tuple
    multiclass: bool = False
    notion: Notion | None = None
    K: int = 2

    def __post_init__(self):
        comps = tuple(tuple(Term(float(k), Event(*e)) for k, e in c) for c in self.components)
        if not comps or any(len(c) == 0 for c in comps):
            raise ValueError("every component needs at least one term")
        for c in comps:
            for t in c:
                if not math.isfinite(t.kappa) or t.kappa == 0:
                    raise ValueError("coefficients must be finite and nonzero")
        if not self.multiclass and len(comps) != 1:
            raise ValueError("binary specs have exactly one component")
        object.__setattr__(self, "components", comps)

    @property
    def terms(self) -> tuple:
        if self.multiclass:
            raise ValueError("multi-class spec has several components; use .components")
        return self.components[0]

    @property
    def n_components(self) -> int:
        return len(self.components)

    @property
    def events(self) -> list:
        seen = []
        for c in self.components:
            for t in c:
                if t.event not in seen:
                    seen.append(t.event)
        return seen

    @property
    def kappa_l1(self) -> float:
        return max(sum(abs(t.kappa) for t in c) for c in self.components)


def notion_spec(notion, K: int = 2, multiclass: bool | None = None) -> ConditionalMeanSpec:
    """Signed-conditional-mean form of a fairness notion.

    With ``K=2`` and ``multiclass`` unset, the group-vs-group binary forms are
    returned; otherwise each group is compared with the pooled mean.
    """
    notion = Notion.parse(notion)
    if multiclass is None:
        multiclass = K > 2
    if K < 2:
        raise ValueError("need at least two groups")
    if not multiclass:
        if K != 2:
            raise ValueError("binary path requires K = 2")
        if notion is Notion.EO:
            raise ValueError("equalized odds is only available on the multi-class path")
        table = {
            Notion.DP: [(1, (1, None)), (-1, (2, None))],
            Notion.EOO: [(1, (1, 1)), (-1, (2, 1))],
            Notion.PE: [(1, (1, 0)), (-1, (2, 0))],
            Notion.OAE: [(1, (1, 1)), (-1, (1, 0)), (-1, (2, 1)), (1, (2, 0))],
        }
        return ConditionalMeanSpec((tuple(table[notion]),), False, notion, K)

    def family(y):
        return [((1, (a, y)), (-1, (None, y))) for a in range(1, K + 1)]

    if notion is Notion.DP:
        comps = family(None)
    elif notion is Notion.EOO:
        comps = family(1)
    elif notion is Notion.PE:
        comps = family(0)
    elif notion is Notion.EO:
        comps = family(1) + family(0)
    else:
        comps = [
            ((1, (a, 1)), (-1, (a, 0)), (-1, (None, 1)), (1, (None, 0)))
            for a in range(1, K + 1)
        ]
    return ConditionalMeanSpec(tuple(comps), True, notion, K)


def _event_counts(spec: ConditionalMeanSpec, data: Dataset, context: str = "") -> dict:
    counts = {}
    for ev in spec.events:
        c = ev.count(data)
        if c == 0:
            raise EmptyCellError(ev.label(), context)
        counts[ev] = c
    return counts


def membership(spec: ConditionalMeanSpec, data: Dataset):
    """Event list, 0/1 membership matrix ``(n, J)`` and event counts."""
    counts = _event_counts(spec, data)
    events = spec.events
    M = np.column_stack([ev.mask(data.a, data.y) for ev in events]).astype(float)
    return events, M, np.array([counts[ev] for ev in events], dtype=float)


def signed_components(spec: ConditionalMeanSpec, P: np.ndarray, data: Dataset, cache=None) -> np.ndarray:
    """Signed sums for a batch of prediction vectors.

    ``P`` has shape ``(C, n)``; the result has shape ``(C, K~)``. Cell sums of
    0/1 predictions are exact integers, so the value does not depend on the
    summation order used by the matrix product.
    """
    events, M, cnt = cache if cache is not None else membership(spec, data)
    P = np.atleast_2d(np.asarray(P, dtype=float))
    if P.shape[1] != data.n:
        raise DataError(f"predictions have length {P.shape[1]}, dataset has {data.n} rows")
    means = (P @ M) / cnt
    idx = {ev: j for j, ev in enumerate(events)}
    out = np.zeros((P.shape[0], spec.n_components))
    for k, comp in enumerate(spec.components):
        acc = np.zeros(P.shape[0])
        for t in comp:
            acc = acc + t.kappa * means[:, idx[t.event]]
        out[:, k] = acc
    return out


def signed_empirical_mean(spec: ConditionalMeanSpec, predictions, data: Dataset):
    """``sum_j kappa_j Ehat_j f``: a float for binary specs, a vector otherwise."""
    vals = signed_components(spec, np.asarray(predictions)[None, :], data)[0]
    return vals if spec.multiclass else float(vals[0])


def empirical_unfairness(spec: ConditionalMeanSpec, predictions, data: Dataset) -> float:
    vals = signed_components(spec, np.asarray(predictions)[None, :], data)[0]
    return float(np.max(np.abs(vals)))


@dataclass(frozen=True)
class EpsilonAlpha:
    value: float
    mode: str
    counts: tuple

    def __float__(self) -> float:
        return self.value


def practical_reference_count(spec: ConditionalMeanSpec, data: Dataset, reference: str = "pooled") -> int:
    """Count used by the practical margin.

    ``pooled`` is the size of the union of all conditioning cells (the number
    of positives for equal opportunity); ``min_cell`` is the smallest cell.
    """
    counts = _event_counts(spec, data)
    if reference == "min_cell":
        return int(min(counts.values()))
    if reference != "pooled":
        raise ValueError(f"unknown practical reference {reference!r}")
    union = np.zeros(data.n, dtype=bool)
    for ev in spec.events:
        union |= ev.mask(data.a, data.y)
    return int(union.sum())


def epsilon_alpha(
    spec: ConditionalMeanSpec,
    data: Dataset,
    delta_post: float,
    mode: str = "theoretical",
    value: float | None = None,
    practical_reference: str = "pooled",
) -> EpsilonAlpha:
    """Margin subtracted from alpha so that empirical control implies population control."""
    if not (0 < delta_post < 1):
        raise ValueError(f"delta_post must lie in (0, 1), got {delta_post}")
    mode = mode.lower()
    if mode == "fixed":
        if value is None or not value >= 0:
            raise ValueError("fixed mode needs a nonnegative value")
        return EpsilonAlpha(float(value), mode, ())
    counts = _event_counts(spec, data)
    if mode == "practical":
        n_ref = practical_reference_count(spec, data, practical_reference)
        return EpsilonAlpha(math.sqrt(math.log(1.0 / delta_post) / n_ref), mode, (n_ref,))
    if mode != "theoretical":
        raise ValueError(f"unknown epsilon mode {mode!r}")
    if spec.multiclass:
        kt = spec.n_components
        vc = kt + 1
    else:
        kt = 1
        vc = 2
    best = 0.0
    for comp in spec.components:
        m = len(comp)
        tot = 0.0
        for t in comp:
            nj = counts[t.event]
            tot += abs(t.kappa) * (
                72.0 * math.sqrt(vc * LOG_4E2 / nj) + math.sqrt(math.log(2 * kt * m / delta_post) / (2 * nj))
            )
        best = max(best, tot)
    return EpsilonAlpha(best, mode, tuple(counts[ev] for ev in spec.events))


@dataclass(frozen=True)
class DeviationStats:
    sup_deviation: np.ndarray
    epsilon: np.ndarray
    n: int

    @property
    def exceed_fraction(self) -> float:
        return float(np.mean(self.sup_deviation > self.epsilon))

    @property
    def median(self) -> float:
        return float(np.median(self.sup_deviation))


class _CellCurve:
    """``lambda -> mean over the cell of 1(u > lambda * phi)`` from sorted breakpoints."""

    def __init__(self, u: np.ndarray, phi: np.ndarray):
        pos, neg = phi > 0, phi < 0
        self.n = u.shape[0]
        self.r_pos = np.sort(u[pos] / phi[pos])
        self.r_neg = np.sort(u[neg] / phi[neg])
        self.const = int(np.sum(u[~(pos | neg)] > 0))

    def breakpoints(self) -> np.ndarray:
        return np.concatenate([self.r_pos, self.r_neg])

    def __call__(self, lam: np.ndarray) -> np.ndarray:
        above = self.r_pos.size - np.searchsorted(self.r_pos, lam, side="right")
        below = np.searchsorted(self.r_neg, lam, side="left")
        return (above + below + self.const) / self.n


def _curves(spec, eta_hat, phi_hat, data):
    u = 2.0 * np.asarray(eta_hat(data.X, data.a), dtype=float) - 1.0
    phi = np.asarray(phi_hat(data.X, data.a), dtype=float)
    out = []
    for t in spec.terms:
        m = t.event.mask(data.a, data.y)
        if not m.any():
            raise EmptyCellError(t.event.label(), "deviation check")
        out.append((t.kappa, _CellCurve(u[m], phi[m])))
    return out


def _signed_curve(curves, lam):
    acc = np.zeros(lam.shape[0])
    for kappa, c in curves:
        acc = acc + kappa * c(lam)
    return acc


def deviation_check(
    spec: ConditionalMeanSpec,
    eta_hat: Callable,
    phi_hat: Callable,
    data_generator: Callable[[int, int], Dataset],
    trials: int,
    n: int,
    epsilon: float | str = "theoretical",
    delta_post: float = 0.05,
    holdout_size: int = 200_000,
    seed: int = 0,
) -> DeviationStats:
    """Sup over lambda of |empirical - population| signed means along the threshold family.

    ``data_generator(size, seed)`` returns a fresh dataset. Population means
    come from one large held-out draw. The signed mean is piecewise constant
    between the pooled breakpoints, so it is evaluated at every midpoint and
    beyond both ends.
    """
    if int(trials) < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    if spec.multiclass:
        raise ValueError("deviation check covers the one-parameter binary family")
    ss = np.random.SeedSequence(seed)
    hold_seed, *trial_seeds = ss.generate_state(int(trials) + 1)
    pop = _curves(spec, eta_hat, phi_hat, data_generator(holdout_size, int(hold_seed)))
    pop_bp = np.unique(np.concatenate([c.breakpoints() for _, c in pop]))
    sups = np.empty(int(trials))
    eps = np.full(int(trials), np.nan if isinstance(epsilon, str) else float(epsilon))
    for t, s in enumerate(trial_seeds):
        data = data_generator(n, int(s))
        if isinstance(epsilon, str):
            eps[t] = epsilon_alpha(spec, data, delta_post, epsilon).value
        emp = _curves(spec, eta_hat, phi_hat, data)
        bp = np.union1d(pop_bp, np.concatenate([c.breakpoints() for _, c in emp]))
        if bp.size:
            lam = np.concatenate([[bp[0] - 1.0], 0.5 * (bp[1:] + bp[:-1]), [bp[-1] + 1.0]])
        else:
            lam = np.zeros(1)
        sups[t] = np.max(np.abs(_signed_curve(emp, lam) - _signed_curve(pop, lam)))
    return DeviationStats(sups, eps, int(n))
