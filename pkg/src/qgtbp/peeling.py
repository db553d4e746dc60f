"""Hard-decision peeling decoder (baseline).

A test whose residual count is 0 clears all of its unresolved members; a test
whose residual count equals its number of unresolved members marks all of
them defective.  Both rules are logically forced on noiseless outcomes, so the
items they resolve are always correct.  Items left unresolved at the fixpoint
are reported as non-defective.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .bp import check_syndrome
from .graph import PoolingGraph

__all__ = ["InconsistentSyndromeError", "PeelingState", "peel", "peel_state"]

UNRESOLVED = -1


class InconsistentSyndromeError(RuntimeError):
    """Peeling drove a residual count out of range."""


@dataclass(frozen=True, eq=False)
class PeelingState:
    status: np.ndarray  # -1 unresolved, 0 or 1 resolved
    residual: np.ndarray
    unresolved_count: np.ndarray
    rounds: int

    @property
    def resolved_mask(self) -> np.ndarray:
        return self.status != UNRESOLVED

    @property
    def d_hat(self) -> np.ndarray:
        return (self.status == 1).astype(np.int8)


def peel_state(graph: PoolingGraph, s) -> PeelingState:
    """Run peeling to its fixpoint and return the final state."""
    s = check_syndrome(graph, s)
    status = np.empty(graph.n, dtype=np.int64)
    residual = np.empty(graph.r, dtype=np.int64)
    unresolved = np.empty(graph.r, dtype=np.int64)
    code, rounds = _kernels.peel(
        graph.cn_ptr, graph.edge_item, graph.vn_ptr, graph.vn_edges,
        graph.edge_check, s, status, residual, unresolved,
    )
    if code != _kernels.PEEL_OK:
        raise InconsistentSyndromeError(
            "residual count left its valid range; the syndrome cannot come from "
            "any defective vector on this graph"
        )
    return PeelingState(status, residual, unresolved, int(rounds))


def peel(graph: PoolingGraph, s) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(d_hat, resolved_mask)``."""
    state = peel_state(graph, s)
    return state.d_hat, state.resolved_mask
