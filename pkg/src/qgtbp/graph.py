"""Bipartite pooling graphs (assignment matrices) for quantitative group testing.

A pooling graph connects ``n`` item nodes (VNs) to ``r`` test nodes (CNs).
Pool ``i`` is the set of items adjacent to CN ``i``.  Neighbor lists are kept
sorted ascending and all indices are 0-based in memory; the text file format
uses 1-based item indices.
"""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "GraphConfig",
    "GraphConfigError",
    "GraphConstructionError",
    "GraphValidationError",
    "PoolingGraph",
    "build_regular_graph",
    "format_graph",
    "from_dense_matrix",
    "from_pools",
    "read_dense_csv",
    "read_graph",
    "validate",
    "write_graph",
]

FILE_MAGIC = "qgt-graph v1"
MAX_RESTARTS = 1000
_REPAIR_PASSES = 200


class GraphConfigError(ValueError):
    """Invalid regular-graph parameters."""


class GraphConstructionError(RuntimeError):
    """The configuration-model sampler could not produce a simple graph."""


class GraphValidationError(ValueError):
    """Input adjacency does not describe a valid pooling graph."""


@dataclass(frozen=True)
class GraphConfig:
    n: int
    dv: int
    dc: int
    seed: int = 0

    @property
    def r(self) -> int:
        return self.n * self.dv // self.dc

    def check(self) -> None:
        if self.dv < 1:
            raise GraphConfigError(f"dv must be >= 1, got {self.dv}")
        if self.dc < 2:
            raise GraphConfigError(f"dc must be >= 2, got {self.dc}")
        if self.n <= self.dc:
            raise GraphConfigError(f"n must exceed dc, got n={self.n}, dc={self.dc}")
        if (self.n * self.dv) % self.dc:
            raise GraphConfigError(
                f"n*dv = {self.n * self.dv} is not divisible by dc = {self.dc}"
            )
        if not 0 <= self.seed < 2**64:
            raise GraphConfigError("seed must fit in 64 unsigned bits")


@dataclass(frozen=True, eq=False)
class PoolingGraph:
    """Immutable bipartite adjacency.

    ``cn_neighbors[i]`` lists the items in pool ``i``; ``vn_neighbors[j]``
    lists the pools containing item ``j``.  Both are sorted tuples.  The edge
    index runs CN-major: edge ``cn_ptr[i] + k`` is slot ``k`` of CN ``i``.

    The constructor does not validate; use :func:`from_pools`,
    :func:`from_dense_matrix` or :func:`validate`.
    """

    n: int
    r: int
    cn_neighbors: tuple[tuple[int, ...], ...]
    vn_neighbors: tuple[tuple[int, ...], ...]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PoolingGraph):
            return NotImplemented
        return (
            self.n == other.n
            and self.r == other.r
            and self.cn_neighbors == other.cn_neighbors
            and self.vn_neighbors == other.vn_neighbors
        )

    def __hash__(self) -> int:
        return hash((self.n, self.r, self.cn_neighbors))

    @property
    def rate(self) -> float:
        return self.r / self.n

    @property
    def num_edges(self) -> int:
        return sum(len(p) for p in self.cn_neighbors)

    @property
    def pools(self) -> tuple[tuple[int, ...], ...]:
        return self.cn_neighbors

    @cached_property
    def cn_degrees(self) -> np.ndarray:
        return np.array([len(p) for p in self.cn_neighbors], dtype=np.int64)

    @cached_property
    def vn_degrees(self) -> np.ndarray:
        return np.array([len(p) for p in self.vn_neighbors], dtype=np.int64)

    def regular_degrees(self) -> tuple[int, int] | None:
        """``(dv, dc)`` if every VN and every CN share one degree, else None."""
        vd, cd = set(self.vn_degrees.tolist()), set(self.cn_degrees.tolist())
        if len(vd) == 1 and len(cd) == 1:
            return vd.pop(), cd.pop()
        return None

    # Flat CSR arrays used by the compiled kernels.

    @cached_property
    def cn_ptr(self) -> np.ndarray:
        ptr = np.zeros(self.r + 1, dtype=np.int64)
        np.cumsum(self.cn_degrees, out=ptr[1:])
        return ptr

    @cached_property
    def edge_item(self) -> np.ndarray:
        """Item index of every edge, CN-major."""
        return np.fromiter(
            (j for pool in self.cn_neighbors for j in pool),
            dtype=np.int64,
            count=self.num_edges,
        )

    @cached_property
    def edge_check(self) -> np.ndarray:
        return np.repeat(np.arange(self.r, dtype=np.int64), self.cn_degrees)

    @cached_property
    def vn_ptr(self) -> np.ndarray:
        ptr = np.zeros(self.n + 1, dtype=np.int64)
        np.cumsum(self.vn_degrees, out=ptr[1:])
        return ptr

    @cached_property
    def vn_edges(self) -> np.ndarray:
        """Edge ids grouped by item; slot ``k`` of VN ``j`` is ``vn_ptr[j] + k``.

        A stable sort of the CN-major item column keeps each item's edges in
        ascending CN order, matching the sorted ``vn_neighbors``.
        """
        return np.argsort(self.edge_item, kind="stable").astype(np.int64)

    def edge_id(self, check: int, item: int) -> int:
        k = self.cn_neighbors[check].index(item)
        return int(self.cn_ptr[check]) + k

    def to_dense_matrix(self) -> np.ndarray:
        a = np.zeros((self.r, self.n), dtype=np.int8)
        a[self.edge_check, self.edge_item] = 1
        return a


def validate(graph: PoolingGraph) -> list[str]:
    """Return human-readable invariant violations; empty when the graph is valid."""
    problems: list[str] = []
    if graph.n < 1 or graph.r < 1:
        problems.append(f"bad dimensions n={graph.n} r={graph.r}")
    if len(graph.cn_neighbors) != graph.r:
        problems.append(f"expected {graph.r} CN lists, found {len(graph.cn_neighbors)}")
    if len(graph.vn_neighbors) != graph.n:
        problems.append(f"expected {graph.n} VN lists, found {len(graph.vn_neighbors)}")

    cn_edges: Counter[tuple[int, int]] = Counter()
    for i, pool in enumerate(graph.cn_neighbors):
        for j in pool:
            if not 0 <= j < graph.n:
                problems.append(f"CN {i} lists out-of-range item {j}")
            cn_edges[(i, j)] += 1
        if not pool:
            problems.append(f"CN {i} has no neighbors")
        elif list(pool) != sorted(pool):
            problems.append(f"CN {i} neighbor list is not sorted")
    vn_edges: Counter[tuple[int, int]] = Counter()
    for j, checks in enumerate(graph.vn_neighbors):
        for i in checks:
            if not 0 <= i < graph.r:
                problems.append(f"VN {j} lists out-of-range check {i}")
            vn_edges[(i, j)] += 1
        if not checks:
            problems.append(f"VN {j} has no neighbors")
        elif list(checks) != sorted(checks):
            problems.append(f"VN {j} neighbor list is not sorted")

    for edge in sorted(set(cn_edges) | set(vn_edges)):
        if cn_edges[edge] > 1 or vn_edges[edge] > 1:
            problems.append(f"parallel edge between CN {edge[0]} and VN {edge[1]}")
    for edge in sorted(set(cn_edges) ^ set(vn_edges)):
        side = "CN" if edge in cn_edges else "VN"
        problems.append(
            f"adjacency mismatch: edge (CN {edge[0]}, VN {edge[1]}) only in {side} lists"
        )
    return problems


def from_pools(pools: Sequence[Iterable[int]], n: int | None = None) -> PoolingGraph:
    """Build a graph from 0-based pools, deriving the VN side."""
    cn = tuple(tuple(sorted(int(j) for j in pool)) for pool in pools)
    if n is None:
        n = 1 + max((max(p) for p in cn if p), default=-1)
    vn: list[list[int]] = [[] for _ in range(n)]
    for i, pool in enumerate(cn):
        for j in pool:
            if not 0 <= j < n:
                raise GraphValidationError(f"pool {i} contains out-of-range item {j}")
            vn[j].append(i)
    graph = PoolingGraph(n=n, r=len(cn), cn_neighbors=cn, vn_neighbors=tuple(map(tuple, vn)))
    problems = validate(graph)
    if problems:
        raise GraphValidationError("; ".join(problems))
    return graph


def from_dense_matrix(rows: Sequence[Sequence[int]] | np.ndarray) -> PoolingGraph:
    """Build a graph from an ``r x n`` 0/1 assignment matrix."""
    rows = [list(row) for row in rows]
    if not rows:
        raise GraphValidationError("empty matrix")
    widths = {len(row) for row in rows}
    if len(widths) != 1:
        raise GraphValidationError(f"ragged matrix, row lengths {sorted(widths)}")
    a = np.array(rows)
    if not np.isin(a, (0, 1)).all():
        raise GraphValidationError("matrix entries must be 0 or 1")
    if a.shape[1] == 0:
        raise GraphValidationError("matrix has no columns")
    zero_rows = np.flatnonzero(a.sum(axis=1) == 0)
    zero_cols = np.flatnonzero(a.sum(axis=0) == 0)
    if zero_rows.size:
        raise GraphValidationError(f"all-zero rows: {zero_rows.tolist()}")
    if zero_cols.size:
        raise GraphValidationError(f"all-zero columns: {zero_cols.tolist()}")
    return from_pools([np.flatnonzero(row).tolist() for row in a], n=a.shape[1])


def build_regular_graph(cfg: GraphConfig) -> PoolingGraph:
    """Sample a simple ``(dv, dc)``-regular graph from the configuration model.

    The ``n*dv`` VN sockets are shuffled onto the ``r*dc`` CN sockets.  Sockets
    that create a parallel edge are swapped with uniformly chosen sockets until
    the pairing is simple; if that stalls, the pairing is redrawn from scratch.
    """
    cfg.check()
    rng = np.random.default_rng(cfg.seed)
    r = cfg.r
    sockets = np.repeat(np.arange(cfg.n, dtype=np.int64), cfg.dv)
    for _ in range(MAX_RESTARTS):
        perm = rng.permutation(sockets)
        for _ in range(_REPAIR_PASSES):
            bad = _parallel_sockets(perm.reshape(r, cfg.dc))
            if bad.size == 0:
                return from_pools(perm.reshape(r, cfg.dc).tolist(), n=cfg.n)
            for pos in bad:
                other = rng.integers(perm.size)
                perm[pos], perm[other] = perm[other], perm[pos]
    raise GraphConstructionError(
        f"no simple ({cfg.dv},{cfg.dc}) graph on n={cfg.n} after {MAX_RESTARTS} restarts"
    )


def _parallel_sockets(table: np.ndarray) -> np.ndarray:
    """Flat positions of sockets repeating an item already seen in the same CN."""
    order = np.sort(table, axis=1)
    if not (order[:, 1:] == order[:, :-1]).any():
        return np.empty(0, dtype=np.int64)
    bad = []
    dc = table.shape[1]
    for i in np.flatnonzero((order[:, 1:] == order[:, :-1]).any(axis=1)):
        seen = set()
        for k, j in enumerate(table[i]):
            if j in seen:
                bad.append(i * dc + k)
            seen.add(j)
    return np.array(bad, dtype=np.int64)


def format_graph(graph: PoolingGraph) -> str:
    lines = [f"{FILE_MAGIC} n={graph.n} r={graph.r}"]
    lines += [" ".join(str(j + 1) for j in pool) for pool in graph.cn_neighbors]
    return "\n".join(lines) + "\n"


def write_graph(graph: PoolingGraph, path: str | Path) -> None:
    Path(path).write_text(format_graph(graph))


def read_graph(path: str | Path) -> PoolingGraph:
    text = Path(path).read_text().splitlines()
    if not text:
        raise GraphValidationError(f"{path}: empty graph file")
    header = text[0].split()
    if " ".join(header[:2]) != FILE_MAGIC or len(header) != 4:
        raise GraphValidationError(f"{path}: bad header {text[0]!r}")
    try:
        fields = dict(tok.split("=", 1) for tok in header[2:])
        n, r = int(fields["n"]), int(fields["r"])
    except (KeyError, ValueError) as exc:
        raise GraphValidationError(f"{path}: bad header {text[0]!r}") from exc
    body = text[1:]
    if len(body) != r:
        raise GraphValidationError(f"{path}: header says r={r}, found {len(body)} pools")
    try:
        pools = [[int(tok) - 1 for tok in line.split()] for line in body]
    except ValueError as exc:
        raise GraphValidationError(f"{path}: non-integer item index") from exc
    return from_pools(pools, n=n)


def read_dense_csv(path: str | Path) -> PoolingGraph:
    with open(path, newline="") as fh:
        rows = [[int(x) for x in row] for row in csv.reader(fh) if row]
    return from_dense_matrix(rows)
