"""Bernoulli prevalence prior and noiseless quantitative test outcomes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import PoolingGraph

__all__ = ["PrevalenceModel", "compute_syndrome", "sample_defective", "trial_stream"]


@dataclass(frozen=True)
class PrevalenceModel:
    delta: float

    def __post_init__(self):
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError(f"prevalence must lie in [0, 1], got {self.delta}")

    def prior(self) -> tuple[float, float]:
        """``(Pr{D=0}, Pr{D=1})``."""
        return 1.0 - self.delta, self.delta


def trial_stream(master_seed: int, trial: int) -> np.random.Generator:
    """Independent generator for one trial, derived from ``(master_seed, trial)``.

    Derivation is counter-based, so trial ``t`` sees the same numbers no matter
    which worker runs it or in what order.
    """
    return np.random.default_rng(np.random.SeedSequence([master_seed, trial]))


def sample_defective(
    model: PrevalenceModel, n: int, rng: np.random.Generator
) -> np.ndarray:
    """Draw ``n`` i.i.d. Bernoulli(delta) defect indicators as ``int8``.

    Bits come from thresholding ``n`` uniforms on [0, 1), so for a fixed stream
    the defective set grows monotonically with delta.
    """
    return (rng.random(n) < model.delta).astype(np.int8)


def compute_syndrome(graph: PoolingGraph, d) -> np.ndarray:
    """Number of defective items in every pool, ``s = d A^T``."""
    d = np.asarray(d)
    if d.shape != (graph.n,):
        raise ValueError(f"defective vector has shape {d.shape}, graph has n={graph.n}")
    return np.bincount(
        graph.edge_check, weights=d[graph.edge_item], minlength=graph.r
    ).astype(np.int64)
