import numpy as np
import pytest

from fairpost.core import Dataset
from fairpost.oracle import DiscreteModel


def random_dataset(rng, n=40, K=2, d=2, min_per_cell=1):
    """Dataset whose every (y, a) cell holds at least ``min_per_cell`` rows."""
    base = np.repeat(np.arange(2 * K), min_per_cell)
    extra = rng.integers(0, 2 * K, size=max(0, n - base.size))
    c = rng.permutation(np.concatenate([base, extra]))
    y, a = c // K, c % K + 1
    return Dataset(rng.normal(size=(c.size, d)), a, y, K=K)


def definitional_unfairness(notion, table, p_ya, multiclass):
    """Unfairness straight from the group-rate definitions.

    ``table[y, a-1] = E[f | Y=y, A=a]``; pooled rates are mixed with ``p_ya``.
    """
    K = table.shape[1]
    p_y = p_ya.sum(axis=1)
    p_a = p_ya.sum(axis=0)
    rate_y = (p_ya * table).sum(axis=1) / p_y          # P(Y_f=1 | Y=y)
    rate_a = (p_ya * table).sum(axis=0) / p_a          # P(Y_f=1 | A=a)
    rate = float((p_ya * table).sum())                 # P(Y_f=1)
    if not multiclass:
        if notion == "dp":
            return abs(rate_a[0] - rate_a[1])
        if notion == "eoo":
            return abs(table[1, 0] - table[1, 1])
        if notion == "pe":
            return abs(table[0, 0] - table[0, 1])
        if notion == "oae":
            acc1 = table[1, 0] + (1 - table[0, 0])
            acc2 = table[1, 1] + (1 - table[0, 1])
            return abs(acc1 - acc2)
    vals = []
    for a in range(K):
        if notion == "dp":
            vals.append(abs(rate_a[a] - rate))
        elif notion == "eoo":
            vals.append(abs(table[1, a] - rate_y[1]))
        elif notion == "pe":
            vals.append(abs(table[0, a] - rate_y[0]))
        elif notion == "oae":
            vals.append(abs(table[1, a] + (1 - table[0, a]) - rate_y[1] - (1 - rate_y[0])))
        elif notion == "eo":
            vals.append(max(abs(table[1, a] - rate_y[1]), abs((1 - table[0, a]) - (1 - rate_y[0]))))
    return max(vals)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def toy_models():
    r = np.random.default_rng(7)
    return [DiscreteModel.random(r, m=int(r.integers(3, 9))) for _ in range(20)]
