"""Exact posterior marginals and block-MAP by exhaustive enumeration.

Every defective vector on ``n <= 26`` items is visited.  The prior weight of a
vector depends only on its Hamming weight, so consistent vectors are counted
per weight class with integers and the prior enters only at the end, through
an exponent-shifted sum in log space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bp import check_syndrome
from .graph import PoolingGraph
from .model import PrevalenceModel

__all__ = [
    "MAX_ORACLE_ITEMS",
    "InconsistentSyndrome",
    "OracleResult",
    "OracleTooLarge",
    "exact_marginals",
]

MAX_ORACLE_ITEMS = 26
_LOW_BITS = 14


class OracleTooLarge(ValueError):
    pass


class InconsistentSyndrome(ValueError):
    """No defective vector with positive prior reproduces the syndrome."""


@dataclass(frozen=True, eq=False)
class OracleResult:
    marginals: np.ndarray  # (n, 2)
    map_vector: np.ndarray
    consistent_count: int
    weight_counts: np.ndarray  # consistent vectors per Hamming weight


def _bits(count: int, width: int) -> np.ndarray:
    ints = np.arange(count, dtype=np.int64)
    return ((ints[:, None] >> np.arange(width)) & 1).astype(np.int16)


def exact_marginals(
    graph: PoolingGraph, s, model: PrevalenceModel
) -> OracleResult:
    """Exact ``Pr{D_j = b | s}`` for every item under the Bernoulli prior."""
    n = graph.n
    if n > MAX_ORACLE_ITEMS:
        raise OracleTooLarge(f"exhaustive oracle limited to n <= {MAX_ORACLE_ITEMS}, got {n}")
    s = check_syndrome(graph, s)
    a = graph.to_dense_matrix().astype(np.int16)

    # d = (low bits | high bits); enumerate lows once, loop over highs
    nl = min(n, _LOW_BITS)
    nh = n - nl
    low = _bits(1 << nl, nl)
    low_syn = low @ a[:, :nl].T
    low_wt = low.sum(axis=1)
    high_a = a[:, nl:]

    per_weight = np.zeros(n + 1, dtype=np.int64)
    per_item = np.zeros((n + 1, n), dtype=np.int64)
    first_min = first_max = None
    for h in range(1 << nh):
        hbits = ((h >> np.arange(nh)) & 1).astype(np.int16)
        target = s - high_a @ hbits
        if (target < 0).any():
            continue
        rows = np.flatnonzero((low_syn == target).all(axis=1))
        if rows.size == 0:
            continue
        wts = low_wt[rows] + int(hbits.sum())
        np.add.at(per_weight, wts, 1)
        np.add.at(per_item[:, :nl], wts, low[rows])
        if nh:
            np.add.at(per_item[:, nl:], wts, np.broadcast_to(hbits, (rows.size, nh)))
        lo_at, hi_at = int(np.argmin(wts)), int(np.argmax(wts))
        cand_min = (int(wts[lo_at]), h, int(rows[lo_at]))
        cand_max = (int(wts[hi_at]), h, int(rows[hi_at]))
        if first_min is None or cand_min[0] < first_min[0]:
            first_min = cand_min
        if first_max is None or cand_max[0] > first_max[0]:
            first_max = cand_max

    consistent = int(per_weight.sum())
    if consistent == 0:
        raise InconsistentSyndrome("no defective vector reproduces the syndrome")

    logw = _log_weights(model.delta, n)
    support = (per_weight > 0) & np.isfinite(logw)
    if not support.any():
        raise InconsistentSyndrome(
            f"all {consistent} consistent vectors have zero prior at delta={model.delta}"
        )
    shift = logw[support].max()
    w = np.zeros(n + 1)
    w[support] = np.exp(logw[support] - shift)
    z = math.fsum(w * per_weight)
    p1 = np.array([math.fsum(w * per_item[:, j]) for j in range(n)]) / z
    p1 = np.clip(p1, 0.0, 1.0)
    marginals = np.column_stack([1.0 - p1, p1])

    if model.delta <= 0.5:
        _, h, row = first_min
    else:
        _, h, row = first_max
    map_vector = np.concatenate(
        [low[row], ((h >> np.arange(nh)) & 1).astype(np.int16)]
    ).astype(np.int8)
    return OracleResult(marginals, map_vector, consistent, per_weight)


def _log_weights(delta: float, n: int) -> np.ndarray:
    """Log prior of one vector of each Hamming weight ``0..n`` (``-inf`` if zero)."""
    wt = np.arange(n + 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        l1 = np.log(delta) if delta > 0 else -np.inf
        l0 = np.log1p(-delta) if delta < 1 else -np.inf
        out = np.where(wt > 0, wt * l1, 0.0) + np.where(wt < n, (n - wt) * l0, 0.0)
    return out
