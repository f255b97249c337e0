"""Shared data model: samples, datasets, scenarios, notions and fitted classifiers."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterator, NamedTuple

import numpy as np


class FairpostError(Exception):
    """Base class for library errors."""


class DataError(FairpostError, ValueError):
    """Malformed input data (bad shapes, labels, group indices, columns)."""


class EmptyCellError(DataError):
    """A conditioning cell of the (A, Y) table holds no samples."""

    def __init__(self, cell: str, context: str = ""):
        self.cell = cell
        msg = f"empty conditioning cell {cell}"
        super().__init__(f"{msg} ({context})" if context else msg)


class InfeasibleCalibrationError(FairpostError):
    """No candidate multiplier satisfies the empirical fairness constraint."""

    def __init__(self, message: str, best_value: float, report=None):
        super().__init__(message)
        self.best_value = float(best_value)
        self.report = report


class Scenario(str, Enum):
    AWARE = "aware"
    BLIND = "blind"

    @classmethod
    def parse(cls, value) -> "Scenario":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown scenario {value!r}; expected aware or blind") from None


class Notion(str, Enum):
    DP = "dp"
    EOO = "eoo"
    OAE = "oae"
    PE = "pe"
    EO = "eo"

    @classmethod
    def parse(cls, value) -> "Notion":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            names = ", ".join(m.value for m in cls)
            raise ValueError(f"unknown notion {value!r}; expected one of {names}") from None


class Sample(NamedTuple):
    x: np.ndarray
    a: int
    y: int


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Dataset:
    """Labeled observations stored column-wise.

    ``a`` is 1-based in ``{1, ..., K}`` and ``y`` is in ``{0, 1}``.
    Counts are computed once at construction.
    """

    X: np.ndarray
    a: np.ndarray
    y: np.ndarray
    K: int = 2
    n_ya: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[1] < 1:
            raise DataError(f"features must be a 2-d array with d >= 1, got shape {X.shape}")
        a = np.asarray(self.a)
        y = np.asarray(self.y)
        if a.shape != (X.shape[0],) or y.shape != (X.shape[0],):
            raise DataError("X, a and y must have the same number of rows")
        if not np.all(np.isfinite(X)):
            raise DataError("features contain non-finite values")
        K = int(self.K)
        if K < 2:
            raise DataError(f"K must be >= 2, got {K}")
        if a.size and (not np.all(a == np.round(a)) or a.min() < 1 or a.max() > K):
            raise DataError(f"group index outside 1..{K}")
        if y.size and not np.all((y == 0) | (y == 1)):
            raise DataError("labels must be 0 or 1")
        a = a.astype(np.int64)
        y = y.astype(np.int64)
        n_ya = np.zeros((2, K), dtype=np.int64)
        np.add.at(n_ya, (y, a - 1), 1)
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "a", _frozen(a))
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "n_ya", _frozen(n_ya))

    @property
    def n(self) -> int:
        return int(self.X.shape[0])

    @property
    def d(self) -> int:
        return int(self.X.shape[1])

    @property
    def n_a(self) -> np.ndarray:
        return self.n_ya.sum(axis=0)

    @property
    def n_Y(self) -> int:
        return int(self.n_ya[1].sum())

    def __len__(self) -> int:
        return self.n

    def __iter__(self) -> Iterator[Sample]:
        for i in range(self.n):
            yield Sample(self.X[i], int(self.a[i]), int(self.y[i]))

    @classmethod
    def from_samples(cls, samples, K: int | None = None) -> "Dataset":
        samples = list(samples)
        if not samples:
            raise DataError("no samples")
        X = np.array([np.atleast_1d(np.asarray(s.x, dtype=float)) for s in samples])
        a = np.array([s.a for s in samples])
        y = np.array([s.y for s in samples])
        return cls(X, a, y, K=K if K is not None else max(2, int(a.max())))

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.a[idx], self.y[idx], K=self.K)

    def with_groups(self, a) -> "Dataset":
        return Dataset(self.X, a, self.y, K=self.K)

    def to_csv(self, path) -> None:
        path = Path(path)
        header = [f"x{j + 1}" for j in range(self.d)] + ["a", "y"]
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for i in range(self.n):
                w.writerow([repr(float(v)) for v in self.X[i]] + [int(self.a[i]), int(self.y[i])])

    @classmethod
    def read_csv(cls, path, K: int | None = None) -> "Dataset":
        path = Path(path)
        try:
            with path.open(newline="", encoding="utf-8") as fh:
                rows = list(csv.reader(fh))
        except OSError as exc:
            raise DataError(f"cannot read {path}: {exc}") from exc
        if not rows:
            raise DataError(f"{path}: empty file")
        header = [h.strip() for h in rows[0]]
        for col in ("a", "y"):
            if col not in header:
                raise DataError(f"{path}: missing column {col!r}")
        xcols = [h for h in header if h not in ("a", "y")]
        expected = [f"x{j + 1}" for j in range(len(xcols))]
        if xcols != expected:
            raise DataError(f"{path}: feature columns must be x1..xd, got {xcols}")
        body = [r for r in rows[1:] if r]
        if not body:
            raise DataError(f"{path}: no data rows")
        try:
            table = np.array([[float(v) for v in r] for r in body])
        except ValueError as exc:
            raise DataError(f"{path}: non-numeric entry ({exc})") from exc
        if table.shape[1] != len(header):
            raise DataError(f"{path}: ragged rows")
        ia, iy = header.index("a"), header.index("y")
        ix = [header.index(c) for c in xcols]
        a = table[:, ia]
        if K is None:
            K = max(2, int(a.max()))
        return cls(table[:, ix], a, table[:, iy], K=K)


@dataclass(frozen=True)
class FairnessSpec:
    """Everything that defines a calibration problem.

    ``epsilon_mode`` is ``"theoretical"``, ``"practical"`` or ``"fixed"``;
    the fixed mode reads ``epsilon_value``. ``practical_reference`` picks the
    count used by the practical margin (``"pooled"`` or ``"min_cell"``).
    """

    notion: Notion
    scenario: Scenario
    alpha: float
    delta_post: float = 0.05
    epsilon_mode: str = "practical"
    epsilon_value: float | None = None
    practical_reference: str = "pooled"

    def __post_init__(self):
        object.__setattr__(self, "notion", Notion.parse(self.notion))
        object.__setattr__(self, "scenario", Scenario.parse(self.scenario))
        mode = str(self.epsilon_mode).lower()
        object.__setattr__(self, "epsilon_mode", mode)
        if not (self.alpha > 0):
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not (0 < self.delta_post < 1):
            raise ValueError(f"delta_post must lie in (0, 1), got {self.delta_post}")
        if mode not in ("theoretical", "practical", "fixed"):
            raise ValueError(f"unknown epsilon mode {self.epsilon_mode!r}")
        if mode == "fixed" and (self.epsilon_value is None or not self.epsilon_value >= 0):
            raise ValueError("fixed epsilon mode needs epsilon_value >= 0")
        if self.practical_reference not in ("pooled", "min_cell"):
            raise ValueError(f"unknown practical reference {self.practical_reference!r}")


ScoreFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class FittedFairClassifier:
    """The rule ``1(2 eta_hat - 1 > lambda_hat . phi_hat)``.

    ``eta_hat`` and ``phi_hat`` take a feature matrix ``(n, d)`` and a group
    vector ``(n,)``. For the multi-class path ``phi_hat`` returns ``(n, K~)``
    and ``lambda_hat`` is a vector.
    """

    scenario: Scenario
    notion: Notion
    alpha: float
    s_hat: int
    lambda_hat: float | np.ndarray
    eta_hat: ScoreFn
    phi_hat: ScoreFn
    K: int = 2
    d: int | None = None
    delta_post: float = 0.05
    epsilon_alpha: float = 0.0
    estimator: dict | None = None

    def __post_init__(self):
        object.__setattr__(self, "scenario", Scenario.parse(self.scenario))
        object.__setattr__(self, "notion", Notion.parse(self.notion))
        if np.ndim(self.lambda_hat) == 0:
            object.__setattr__(self, "lambda_hat", float(self.lambda_hat))
        else:
            object.__setattr__(self, "lambda_hat", _frozen(np.asarray(self.lambda_hat, dtype=float)))

    @property
    def multiclass(self) -> bool:
        return np.ndim(self.lambda_hat) > 0

    def _check(self, X, a):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        a = np.atleast_1d(np.asarray(a))
        if self.d is not None and X.shape[1] != self.d:
            raise DataError(f"dimension mismatch: expected d={self.d}, got {X.shape[1]}")
        if a.shape[0] != X.shape[0]:
            raise DataError("X and a have different lengths")
        if a.size and (a.min() < 1 or a.max() > self.K):
            raise DataError(f"group index outside 1..{self.K}")
        return X, a.astype(np.int64)

    def decision_function(self, X, a) -> np.ndarray:
        X, a = self._check(X, a)
        u = 2.0 * np.asarray(self.eta_hat(X, a), dtype=float) - 1.0
        phi = np.asarray(self.phi_hat(X, a), dtype=float)
        if self.multiclass:
            return u - phi.reshape(X.shape[0], -1) @ self.lambda_hat
        return u - self.lambda_hat * phi

    def predict(self, X, a) -> np.ndarray:
        X, a = self._check(X, a)
        u = 2.0 * np.asarray(self.eta_hat(X, a), dtype=float) - 1.0
        phi = np.asarray(self.phi_hat(X, a), dtype=float)
        if self.multiclass:
            shift = phi.reshape(X.shape[0], -1) @ self.lambda_hat
        else:
            shift = self.lambda_hat * phi
        return (u > shift).astype(np.int64)

    def to_dict(self) -> dict:
        if self.estimator is None:
            raise FairpostError("classifier has no serializable estimator descriptor")
        lam = self.lambda_hat.tolist() if self.multiclass else self.lambda_hat
        return {
            "scenario": self.scenario.value,
            "notion": self.notion.value,
            "alpha": self.alpha,
            "delta_post": self.delta_post,
            "epsilon_alpha": self.epsilon_alpha,
            "s_hat": self.s_hat,
            "lambda_hat": lam,
            "K": self.K,
            "d": self.d,
            "estimator": self.estimator,
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def from_dict(cls, doc: dict) -> "FittedFairClassifier":
        from .estimators import plugin_from_descriptor

        plug = plugin_from_descriptor(doc["estimator"])
        return cls(
            scenario=doc["scenario"],
            notion=doc["notion"],
            alpha=doc["alpha"],
            s_hat=int(doc["s_hat"]),
            lambda_hat=doc["lambda_hat"],
            eta_hat=plug.eta,
            phi_hat=plug.phi,
            K=int(doc.get("K", 2)),
            d=doc.get("d"),
            delta_post=doc.get("delta_post", 0.05),
            epsilon_alpha=doc.get("epsilon_alpha", 0.0),
            estimator=doc["estimator"],
        )

    @classmethod
    def load(cls, path) -> "FittedFairClassifier":
        return cls.from_dict(json.loads(Path(path).read_text()))


def predict(clf: FittedFairClassifier, x, a) -> int:
    """Label of a single point."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DataError("predict expects a single feature vector")
    return int(clf.predict(x[None, :], np.array([a]))[0])
