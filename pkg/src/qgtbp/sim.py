"""Seeded Monte Carlo estimation of misdetection and false-alarm rates.

Trial ``t`` draws its uniforms from the stream ``(master_seed, t)``; the
defective vector at prevalence ``delta`` is those uniforms thresholded at
``delta``.  All prevalences of a sweep therefore share the same trial draws,
and results do not depend on how trials are split across workers.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import _kernels
from .bp import DecoderConfig, decode
from .graph import GraphConfig, PoolingGraph, build_regular_graph, read_graph
from .model import PrevalenceModel, compute_syndrome, sample_defective, trial_stream
from .oracle import MAX_ORACLE_ITEMS, exact_marginals
from .peeling import peel

log = logging.getLogger(__name__)

__all__ = [
    "CSV_HEADER",
    "DECODERS",
    "ExperimentFailed",
    "ExperimentSpec",
    "MetricsRow",
    "MetricsTable",
    "TrialCounts",
    "TrialError",
    "default_trials",
    "delta_range",
    "load_spec",
    "prevalence_at_target",
    "read_table",
    "run_experiment",
    "run_trial",
    "write_table",
]

DECODERS = ("bp", "peeling", "oracle")
CSV_HEADER = (
    "delta,decoder,n,dv,dc,trials,defectives,misdetections,"
    "nondefectives,false_alarms,pmd,pfa,pmd_ci95"
)
Z95 = 1.959963984540054
CHUNK_TRIALS = 2000


class TrialError(RuntimeError):
    def __init__(self, trial: int, cause: BaseException):
        super().__init__(f"trial {trial}: {cause}")
        self.trial = trial


class ExperimentFailed(RuntimeError):
    """Raised with whatever rows were completed before the failure."""

    def __init__(self, message: str, partial: "MetricsTable"):
        super().__init__(message)
        self.partial = partial


@dataclass(frozen=True)
class TrialCounts:
    defectives: int = 0
    misdetections: int = 0
    nondefectives: int = 0
    false_alarms: int = 0

    @classmethod
    def from_decision(cls, d, d_hat) -> "TrialCounts":
        d = np.asarray(d) == 1
        d_hat = np.asarray(d_hat) == 1
        return cls(
            defectives=int(d.sum()),
            misdetections=int((d & ~d_hat).sum()),
            nondefectives=int((~d).sum()),
            false_alarms=int((~d & d_hat).sum()),
        )


def default_trials(n: int) -> int:
    if n <= 256:
        return 100_000
    if n <= 2048:
        return 10_000
    return 1_000


def delta_range(start: float, stop: float, step: float) -> tuple[float, ...]:
    """Inclusive grid ``start, start+step, ..., stop`` rounded to 12 decimals."""
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    return tuple(round(start + k * step, 12) for k in range(count))


@dataclass(frozen=True)
class ExperimentSpec:
    delta_grid: tuple[float, ...]
    graph: GraphConfig | None = None
    graph_file: str | None = None
    trials: int | None = None
    decoders: tuple[str, ...] = ("bp", "peeling")
    seed: int = 0
    iterations: int = 100
    graph_mode: str = "fixed"

    def __post_init__(self):
        object.__setattr__(self, "delta_grid", tuple(float(x) for x in self.delta_grid))
        object.__setattr__(self, "decoders", tuple(self.decoders))

    def load_graph(self) -> PoolingGraph:
        if self.graph_file is not None:
            return read_graph(self.graph_file)
        return build_regular_graph(self.graph)

    def check(self, n: int) -> None:
        if (self.graph is None) == (self.graph_file is None):
            raise ValueError("give exactly one of a graph config or a graph file")
        if self.trials is not None and self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.delta_grid:
            raise ValueError("empty delta grid")
        if any(not 0.0 <= x <= 1.0 for x in self.delta_grid):
            raise ValueError("delta grid values must lie in [0, 1]")
        unknown = set(self.decoders) - set(DECODERS)
        if unknown or not self.decoders:
            raise ValueError(f"decoders must be a non-empty subset of {DECODERS}")
        if "oracle" in self.decoders and n > MAX_ORACLE_ITEMS:
            raise ValueError(f"oracle decoder needs n <= {MAX_ORACLE_ITEMS}, got n={n}")
        if self.graph_mode not in ("fixed", "resampled"):
            raise ValueError(f"unknown graph_mode {self.graph_mode!r}")
        if self.graph_mode == "resampled" and self.graph is None:
            raise ValueError("resampled mode needs a graph config, not a file")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")

    def trial_count(self, n: int) -> int:
        return self.trials if self.trials is not None else default_trials(n)


@dataclass(frozen=True)
class MetricsRow:
    delta: float
    decoder: str
    n: int
    dv: int | None
    dc: int | None
    trials: int
    defectives: int
    misdetections: int
    nondefectives: int
    false_alarms: int

    @property
    def pmd(self) -> float | None:
        return self.misdetections / self.defectives if self.defectives else None

    @property
    def pfa(self) -> float | None:
        return self.false_alarms / self.nondefectives if self.nondefectives else None

    @property
    def pmd_ci95(self) -> float | None:
        p = self.pmd
        if p is None:
            return None
        return Z95 * math.sqrt(p * (1.0 - p) / self.defectives)

    def csv_fields(self) -> list[str]:
        def fmt(x):
            return "" if x is None else f"{x:.9e}"

        def opt(x):
            return "" if x is None else str(x)

        return [
            f"{self.delta:.6f}", self.decoder, str(self.n), opt(self.dv), opt(self.dc),
            str(self.trials), str(self.defectives), str(self.misdetections),
            str(self.nondefectives), str(self.false_alarms),
            fmt(self.pmd), fmt(self.pfa), fmt(self.pmd_ci95),
        ]


@dataclass
class MetricsTable:
    rows: list[MetricsRow] = field(default_factory=list)

    def get(self, delta: float, decoder: str) -> MetricsRow:
        for row in self.rows:
            if row.decoder == decoder and abs(row.delta - delta) < 1e-9:
                return row
        raise KeyError((delta, decoder))

    def for_decoder(self, decoder: str) -> list[MetricsRow]:
        return [row for row in self.rows if row.decoder == decoder]

    def __eq__(self, other):
        if not isinstance(other, MetricsTable):
            return NotImplemented
        return [r.csv_fields() for r in self.rows] == [r.csv_fields() for r in other.rows]


def prevalence_at_target(rows: Iterable[MetricsRow], target: float = 1e-3) -> float | None:
    """Largest prevalence whose estimated misdetection rate is at most ``target``."""
    ok = [row.delta for row in rows if row.pmd is not None and row.pmd <= target]
    return max(ok) if ok else None


# ---------------------------------------------------------------- trials


def _decode_with(name: str, graph: PoolingGraph, s, delta: float, iterations: int, cache=None):
    if name == "bp":
        cfg = DecoderConfig(max_iterations=iterations)
        return decode(graph, s, PrevalenceModel(delta), cfg).d_hat
    if name == "peeling":
        return peel(graph, s)[0]
    key = (delta, np.asarray(s).tobytes())
    if cache is not None and key in cache:
        return cache[key]
    res = exact_marginals(graph, s, PrevalenceModel(delta))
    d_hat = (res.marginals[:, 1] > res.marginals[:, 0]).astype(np.int8)
    if cache is not None:
        cache[key] = d_hat
    return d_hat


def run_trial(
    graph: PoolingGraph,
    delta: float,
    decoders: Sequence[str],
    rng: np.random.Generator,
    iterations: int = 100,
) -> dict[str, TrialCounts]:
    """One draw of ``d`` and its outcomes, decoded by each decoder in turn."""
    d = sample_defective(PrevalenceModel(delta), graph.n, rng)
    s = compute_syndrome(graph, d)
    return {
        name: TrialCounts.from_decision(d, _decode_with(name, graph, s, delta, iterations))
        for name in decoders
    }


def _trial_graph(spec: ExperimentSpec, trial: int) -> GraphConfig:
    seq = np.random.SeedSequence([spec.seed, trial, 1])
    return replace(spec.graph, seed=int(seq.generate_state(1, np.uint64)[0]))


def _oracle_counts(graph, uniforms, deltas, cache) -> np.ndarray:
    out = np.zeros((len(deltas), 4), dtype=np.int64)
    a = graph.to_dense_matrix().astype(np.int64)
    for k, delta in enumerate(deltas):
        d = (uniforms < delta).astype(np.int8)
        syn = d.astype(np.int64) @ a.T
        uniq, inverse = np.unique(syn, axis=0, return_inverse=True)
        decisions = np.stack([_decode_with("oracle", graph, u, delta, 0, cache) for u in uniq])
        d_hat = decisions[inverse.reshape(-1)] == 1
        dd = d == 1
        out[k] = (dd.sum(), (dd & ~d_hat).sum(), (~dd).sum(), (~dd & d_hat).sum())
    return out


def _simulate_chunk(job) -> np.ndarray:
    spec, graph, start, stop = job
    deltas = np.asarray(spec.delta_grid, dtype=np.float64)
    counts = np.zeros((len(deltas), len(DECODERS), 4), dtype=np.int64)
    native = np.zeros((len(deltas), 2, 4), dtype=np.int64)
    run_bp, run_peel = "bp" in spec.decoders, "peeling" in spec.decoders
    oracle_cache: dict = {}

    def native_batch(g: PoolingGraph, uniforms: np.ndarray, first: int) -> None:
        cfg = DecoderConfig()
        bad = _kernels.run_batch(
            g.cn_ptr, g.edge_item, g.vn_ptr, g.vn_edges, g.edge_check, uniforms,
            deltas, run_bp, run_peel, spec.iterations, cfg.eps, cfg.floor,
            _kernels.KERNEL_CONVOLUTION, cfg.skip_cycles, native,
        )
        if bad:
            raise TrialError(first + bad - 1, RuntimeError("peeling found an inconsistent syndrome"))

    if spec.graph_mode == "fixed":
        uniforms = np.stack(
            [trial_stream(spec.seed, t).random(graph.n) for t in range(start, stop)]
        )
        if run_bp or run_peel:
            native_batch(graph, uniforms, start)
        if "oracle" in spec.decoders:
            try:
                counts[:, 2] += _oracle_counts(graph, uniforms, deltas, oracle_cache)
            except Exception as exc:
                raise TrialError(start, exc) from exc
    else:
        for t in range(start, stop):
            g = build_regular_graph(_trial_graph(spec, t))
            u = trial_stream(spec.seed, t).random(g.n)[None, :]
            if run_bp or run_peel:
                native_batch(g, u, t)
            if "oracle" in spec.decoders:
                try:
                    counts[:, 2] += _oracle_counts(g, u, deltas, {})
                except Exception as exc:
                    raise TrialError(t, exc) from exc
    counts[:, :2] += native
    return counts


def _build_table(spec: ExperimentSpec, graph: PoolingGraph, trials: int, counts) -> MetricsTable:
    degrees = graph.regular_degrees()
    if spec.graph is not None:
        degrees = (spec.graph.dv, spec.graph.dc)
    dv, dc = degrees if degrees else (None, None)
    rows = []
    for k, delta in enumerate(spec.delta_grid):
        for name in spec.decoders:
            c = counts[k, DECODERS.index(name)]
            rows.append(MetricsRow(
                delta=delta, decoder=name, n=graph.n, dv=dv, dc=dc, trials=trials,
                defectives=int(c[0]), misdetections=int(c[1]),
                nondefectives=int(c[2]), false_alarms=int(c[3]),
            ))
    return MetricsTable(rows)


def run_experiment(
    spec: ExperimentSpec, workers: int = 1, chunk_trials: int = CHUNK_TRIALS
) -> MetricsTable:
    """Aggregate ``run_trial`` statistics over the whole sweep.

    Work is split into fixed chunks of trials; chunk counts are integers, so
    the totals (and the CSV) are identical for any number of workers.
    """
    graph = spec.load_graph()
    spec.check(graph.n)
    trials = spec.trial_count(graph.n)
    # bound the uniforms held per chunk to ~32 MB
    chunk_trials = max(1, min(chunk_trials, (1 << 22) // graph.n))
    bounds = [(a, min(a + chunk_trials, trials)) for a in range(0, trials, chunk_trials)]
    jobs = [(spec, graph, a, b) for a, b in bounds]
    total = np.zeros((len(spec.delta_grid), len(DECODERS), 4), dtype=np.int64)
    done = 0
    log.info("n=%d, %d trials, %d prevalences, %d chunks, %d workers",
             graph.n, trials, len(spec.delta_grid), len(jobs), workers)
    try:
        if workers <= 1 or len(jobs) == 1:
            for job in jobs:
                total += _simulate_chunk(job)
                done = job[3]
        else:
            # compile in the parent so forked workers inherit the kernels
            _warm_kernels()
            with ProcessPoolExecutor(max_workers=workers) as pool:
                for job, part in zip(jobs, pool.map(_simulate_chunk, jobs)):
                    total += part
                    done = job[3]
    except Exception as exc:
        partial = _build_table(spec, graph, done, total)
        raise ExperimentFailed(f"experiment stopped after {done} trials: {exc}", partial) from exc
    return _build_table(spec, graph, trials, total)


def _warm_kernels() -> None:
    from .graph import from_pools

    g = from_pools([[0, 1], [1, 2]], n=3)
    u = np.zeros((1, 3))
    _kernels.run_batch(
        g.cn_ptr, g.edge_item, g.vn_ptr, g.vn_edges, g.edge_check, u,
        np.array([0.5]), True, True, 2, 1e-300, 1e-30, 0, True,
        np.zeros((1, 2, 4), dtype=np.int64),
    )


# ---------------------------------------------------------------- files


def write_table(table: MetricsTable, path: str | Path, failure: str | None = None) -> None:
    """Write the results CSV; a failed run appends a ``# incomplete`` marker line."""
    lines = [CSV_HEADER] + [",".join(row.csv_fields()) for row in table.rows]
    if failure is not None:
        lines.append(f"# incomplete: {failure}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_table(path: str | Path) -> MetricsTable:
    with open(path, newline="") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    if ",".join(header) != CSV_HEADER:
        raise ValueError(f"{path}: unexpected header {header}")

    def opt(x):
        return int(x) if x else None

    rows = [
        MetricsRow(
            delta=float(f[0]), decoder=f[1], n=int(f[2]), dv=opt(f[3]), dc=opt(f[4]),
            trials=int(f[5]), defectives=int(f[6]), misdetections=int(f[7]),
            nondefectives=int(f[8]), false_alarms=int(f[9]),
        )
        for f in reader if f
    ]
    return MetricsTable(rows)


def load_spec(path: str | Path | None = None, **overrides) -> ExperimentSpec:
    """Read a JSON experiment spec; keyword overrides that are not None win.

    ``graph`` is either ``{"n", "dv", "dc", "seed"}`` or ``{"file": path}``;
    ``delta_grid`` is a list or ``{"start", "stop", "step"}``.
    """
    raw: dict = json.loads(Path(path).read_text()) if path is not None else {}
    for key, value in overrides.items():
        if value is None:
            continue
        if key in ("n", "dv", "dc", "graph_seed"):
            graph = dict(raw.get("graph") or {})
            graph.pop("file", None)
            graph["seed" if key == "graph_seed" else key] = value
            raw["graph"] = graph
        elif key == "graph_file":
            raw["graph"] = {"file": value}
        else:
            raw[key] = value
    known = {"graph", "delta_grid", "trials", "decoders", "seed", "iterations", "graph_mode"}
    extra = set(raw) - known
    if extra:
        raise ValueError(f"unknown experiment fields: {sorted(extra)}")
    graph = raw.get("graph")
    if not graph:
        raise ValueError("experiment needs a graph")
    grid = raw.get("delta_grid")
    if isinstance(grid, dict):
        grid = delta_range(grid["start"], grid["stop"], grid["step"])
    if grid is None:
        raise ValueError("experiment needs a delta_grid")
    kwargs = {k: raw[k] for k in ("trials", "seed", "iterations", "graph_mode") if k in raw}
    if "decoders" in raw:
        kwargs["decoders"] = tuple(raw["decoders"])
    if "file" in graph:
        return ExperimentSpec(delta_grid=tuple(grid), graph_file=str(graph["file"]), **kwargs)
    cfg = GraphConfig(
        n=int(graph["n"]), dv=int(graph["dv"]), dc=int(graph["dc"]), seed=int(graph.get("seed", 0))
    )
    return ExperimentSpec(delta_grid=tuple(grid), graph=cfg, **kwargs)
