"""Soft-decision belief-propagation decoder for quantitative group testing.

Messages are probability pairs ``(p0, p1)`` normalized after every update.
Iterations follow a flooding schedule: all VN updates, all CN updates, then
the a-posteriori computation, hard decision and syndrome check.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from . import _kernels
from .graph import PoolingGraph
from .model import PrevalenceModel

__all__ = [
    "BeliefPair",
    "DecodeResult",
    "DecoderConfig",
    "DecoderInputError",
    "cn_update_convolution",
    "cn_update_enumeration",
    "compute_app",
    "decide",
    "decode",
    "vn_update",
]

DEFAULT_EPS = 1e-300
DEFAULT_FLOOR = 1e-30

BeliefPair = tuple[float, float]


class DecoderInputError(ValueError):
    """Syndrome or configuration incompatible with the graph."""


@dataclass(frozen=True)
class DecoderConfig:
    """Decoder settings.

    ``stop_on_syndrome`` disables the early exit when False so that exactly
    ``max_iterations`` iterations run (used for convergence studies).
    ``skip_cycles`` ends the loop early once the CN messages repeat exactly
    with period 1 or 2; the returned state is the one the full loop reaches.
    """

    max_iterations: int = 100
    eps: float = DEFAULT_EPS
    floor: float = DEFAULT_FLOOR
    cn_kernel: Literal["convolution", "enumeration"] = "convolution"
    tie_break: Literal["nondefective", "defective"] = "nondefective"
    stop_on_syndrome: bool = True
    skip_cycles: bool = True

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if not 0.0 <= self.floor < 0.5:
            raise ValueError("floor must lie in [0, 0.5)")
        if self.cn_kernel not in ("convolution", "enumeration"):
            raise ValueError(f"unknown CN kernel {self.cn_kernel!r}")
        if self.tie_break not in ("nondefective", "defective"):
            raise ValueError(f"unknown tie_break {self.tie_break!r}")

    @property
    def kernel_code(self) -> int:
        if self.cn_kernel == "enumeration":
            return _kernels.KERNEL_ENUMERATION
        return _kernels.KERNEL_CONVOLUTION


@dataclass(frozen=True, eq=False)
class DecodeResult:
    d_hat: np.ndarray
    posteriors: np.ndarray  # shape (n, 2): columns Pr{D=0|s}, Pr{D=1|s}
    iterations_used: int
    syndrome_satisfied: bool


def _pairs(incoming: Sequence[BeliefPair]) -> tuple[np.ndarray, np.ndarray]:
    arr = np.asarray(incoming, dtype=np.float64).reshape(-1, 2)
    if (arr < 0).any() or not np.isfinite(arr).all():
        raise DecoderInputError("messages must be finite and non-negative")
    return np.ascontiguousarray(arr[:, 0]), np.ascontiguousarray(arr[:, 1])


def vn_update(
    prior: PrevalenceModel,
    incoming: Sequence[BeliefPair],
    eps: float = DEFAULT_EPS,
    floor: float = DEFAULT_FLOOR,
) -> BeliefPair:
    """VN-to-CN message from the CN messages on all *other* edges."""
    psi0, psi1 = _pairs(incoming)
    p0, p1 = prior.prior()
    idx = np.arange(psi0.size, dtype=np.int64)
    return _kernels.vn_combine(p0, p1, psi0, psi1, idx, 0, psi0.size, -1, eps, floor)


def compute_app(
    prior: PrevalenceModel,
    all_incoming: Sequence[BeliefPair],
    eps: float = DEFAULT_EPS,
    floor: float = DEFAULT_FLOOR,
) -> BeliefPair:
    """Approximate posterior ``(Pr{D=0|s}, Pr{D=1|s})`` from every neighbor message."""
    if len(all_incoming) == 0:
        raise DecoderInputError("every item must take part in at least one test")
    return vn_update(prior, all_incoming, eps, floor)


def _check_cn_args(s: int, incoming: Sequence[BeliefPair]) -> tuple[np.ndarray, np.ndarray]:
    mu0, mu1 = _pairs(incoming)
    if not 0 <= s <= mu0.size + 1:
        raise DecoderInputError(
            f"test outcome {s} exceeds the pool size {mu0.size + 1}"
        )
    return mu0, mu1


def _cn_target(mu0: np.ndarray, mu1: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # append a placeholder neighbor in the last slot; its outgoing message
    # depends only on the other slots
    return np.append(mu0, 0.5), np.append(mu1, 0.5)


def cn_update_enumeration(
    s: int,
    incoming: Sequence[BeliefPair],
    eps: float = DEFAULT_EPS,
    floor: float = DEFAULT_FLOOR,
) -> BeliefPair:
    """CN-to-VN message by enumerating every assignment of the other neighbors.

    ``incoming`` holds the VN messages from the other ``deg - 1`` pool members.
    Cost grows as ``2**(deg - 1)``.
    """
    mu0, mu1 = _check_cn_args(s, incoming)
    if mu0.size + 1 > _kernels.MAX_ENUMERATION_DEGREE:
        raise DecoderInputError(
            f"enumeration kernel limited to degree {_kernels.MAX_ENUMERATION_DEGREE}"
        )
    m0, m1 = _cn_target(mu0, mu1)
    out0, out1 = np.empty_like(m0), np.empty_like(m1)
    _kernels.cn_enumeration(m0, m1, 0, m0.size, s, out0, out1, eps, floor)
    return float(out0[-1]), float(out1[-1])


def cn_update_convolution(
    s: int,
    incoming: Sequence[BeliefPair],
    eps: float = DEFAULT_EPS,
    floor: float = DEFAULT_FLOOR,
) -> BeliefPair:
    """Same message as :func:`cn_update_enumeration` in ``O(deg**2)`` time."""
    mu0, mu1 = _check_cn_args(s, incoming)
    m0, m1 = _cn_target(mu0, mu1)
    out0, out1 = np.empty_like(m0), np.empty_like(m1)
    w = m0.size + 1
    pre, suf = np.empty((w, w)), np.empty((w, w))
    _kernels.cn_convolution(m0, m1, 0, m0.size, s, out0, out1, pre, suf, eps, floor)
    return float(out0[-1]), float(out1[-1])


def decide(posteriors, tie_break: str = "nondefective") -> np.ndarray:
    """Hard decisions: 1 where ``Pr{D=1|s} > Pr{D=0|s}``; ties follow ``tie_break``."""
    post = np.asarray(posteriors, dtype=np.float64).reshape(-1, 2)
    p0, p1 = post[:, 0], post[:, 1]
    if tie_break == "defective":
        return (p1 >= p0).astype(np.int8)
    return (p1 > p0).astype(np.int8)


def check_syndrome(graph: PoolingGraph, s) -> np.ndarray:
    s = np.asarray(s, dtype=np.int64)
    if s.shape != (graph.r,):
        raise DecoderInputError(f"syndrome has length {s.size}, graph has r={graph.r}")
    bad = np.flatnonzero((s < 0) | (s > graph.cn_degrees))
    if bad.size:
        i = int(bad[0])
        raise DecoderInputError(
            f"test {i} outcome {int(s[i])} outside [0, {int(graph.cn_degrees[i])}]"
        )
    return np.ascontiguousarray(s)


def decode(
    graph: PoolingGraph,
    s,
    model: PrevalenceModel,
    cfg: DecoderConfig | None = None,
) -> DecodeResult:
    """Run BP on ``graph`` for test outcomes ``s``."""
    cfg = cfg or DecoderConfig()
    s = check_syndrome(graph, s)
    maxdeg = int(graph.cn_degrees.max())
    if cfg.cn_kernel == "enumeration" and maxdeg > _kernels.MAX_ENUMERATION_DEGREE:
        raise DecoderInputError(
            f"enumeration kernel limited to degree {_kernels.MAX_ENUMERATION_DEGREE}"
        )
    ne, n, r = graph.num_edges, graph.n, graph.r
    mu0, mu1, psi0, psi1 = (np.empty(ne) for _ in range(4))
    app0, app1 = np.empty(n), np.empty(n)
    dhat = np.empty(n, dtype=np.int64)
    pre = np.empty((maxdeg + 1, maxdeg + 1))
    suf = np.empty((maxdeg + 1, maxdeg + 1))
    syn = np.empty(r, dtype=np.int64)
    iters, ok = _kernels.bp_decode(
        graph.cn_ptr, graph.edge_item, graph.vn_ptr, graph.vn_edges, s,
        float(model.delta), cfg.max_iterations, cfg.eps, cfg.floor, cfg.kernel_code,
        cfg.tie_break == "defective", cfg.stop_on_syndrome, cfg.skip_cycles,
        mu0, mu1, psi0, psi1, app0, app1, dhat, pre, suf, syn,
    )
    return DecodeResult(
        d_hat=dhat.astype(np.int8),
        posteriors=np.column_stack([app0, app1]),
        iterations_used=int(iters),
        syndrome_satisfied=bool(ok),
    )
