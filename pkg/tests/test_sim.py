import itertools
import json

import numpy as np
import pytest

from qgtbp.graph import GraphConfig, build_regular_graph, from_pools, write_graph
from qgtbp.model import PrevalenceModel, compute_syndrome, trial_stream
from qgtbp.oracle import exact_marginals
from qgtbp.sim import (
    CSV_HEADER,
    ExperimentFailed,
    ExperimentSpec,
    MetricsRow,
    MetricsTable,
    TrialCounts,
    default_trials,
    delta_range,
    load_spec,
    prevalence_at_target,
    read_table,
    run_experiment,
    run_trial,
    write_table,
)


class FixedStream:
    """Stands in for a generator whose uniforms force a chosen defective vector."""

    def __init__(self, d):
        self.d = np.asarray(d)

    def random(self, n):
        return np.where(self.d == 1, 0.0, 0.999)


def test_zero_prevalence_trial(example_graph, rng):
    out = run_trial(example_graph, 0.0, ["bp", "peeling"], rng)
    for counts in out.values():
        assert counts == TrialCounts(defectives=0, misdetections=0, nondefectives=8, false_alarms=0)


def test_forced_trial(example_graph):
    out = run_trial(example_graph, 0.3, ["bp", "peeling", "oracle"], FixedStream([0, 0, 1, 0, 1, 0, 1, 1]))
    for counts in out.values():
        assert counts.misdetections == 0 and counts.false_alarms == 0
        assert counts.defectives == 4


def test_count_bounds(rng):
    g = build_regular_graph(GraphConfig(48, 3, 6, seed=3))
    for _ in range(50):
        for c in run_trial(g, 0.35, ["bp", "peeling"], rng).values():
            assert 0 <= c.misdetections <= c.defectives
            assert 0 <= c.false_alarms <= c.nondefectives
            assert c.defectives + c.nondefectives == g.n


def test_from_decision():
    c = TrialCounts.from_decision([1, 1, 0, 0, 1], [1, 0, 1, 0, 0])
    assert c == TrialCounts(defectives=3, misdetections=2, nondefectives=2, false_alarms=1)


def test_delta_range():
    grid = delta_range(0.05, 0.50, 0.01)
    assert len(grid) == 46
    assert grid[0] == 0.05 and grid[-1] == 0.5 and grid[17] == 0.22


def test_default_trials():
    assert [default_trials(n) for n in (128, 256, 1024, 2048, 4095)] == [
        100_000, 100_000, 10_000, 10_000, 1_000,
    ]


def test_single_trial_zero_grid():
    spec = ExperimentSpec(delta_grid=[0.0], graph=GraphConfig(16, 2, 4, seed=1), trials=1)
    rows = run_experiment(spec).rows
    assert len(rows) == 2
    for row in rows:
        assert row.pmd is None and row.pmd_ci95 is None
        assert row.pfa == 0.0
        fields = row.csv_fields()
        assert fields[10] == "" and fields[11] == "0.000000000e+00"


def test_harness_matches_per_trial_loop():
    g = build_regular_graph(GraphConfig(18, 3, 6, seed=4))
    deltas = [0.1, 0.25, 0.4]
    spec = ExperimentSpec(delta_grid=deltas, graph=GraphConfig(18, 3, 6, seed=4), trials=60,
                          decoders=("bp", "peeling", "oracle"), seed=5)
    table = run_experiment(spec, chunk_trials=7)
    for delta in deltas:
        sums = {name: np.zeros(4, dtype=int) for name in spec.decoders}
        for t in range(60):
            for name, c in run_trial(g, delta, spec.decoders, trial_stream(5, t)).items():
                sums[name] += (c.defectives, c.misdetections, c.nondefectives, c.false_alarms)
        for name in spec.decoders:
            row = table.get(delta, name)
            got = (row.defectives, row.misdetections, row.nondefectives, row.false_alarms)
            assert got == tuple(sums[name]), (delta, name)


def test_chunking_and_workers_do_not_change_output(tmp_path):
    spec = ExperimentSpec(delta_grid=delta_range(0.1, 0.3, 0.05), graph=GraphConfig(64, 3, 6, seed=2),
                          trials=300, seed=11)
    ref = run_experiment(spec)
    assert run_experiment(spec, chunk_trials=37) == ref
    assert run_experiment(spec, workers=2, chunk_trials=50) == ref
    write_table(ref, tmp_path / "a.csv")
    write_table(run_experiment(spec), tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_resampled_mode_is_reproducible():
    spec = ExperimentSpec(delta_grid=[0.2], graph=GraphConfig(24, 3, 6, seed=0), trials=20,
                          graph_mode="resampled")
    a = run_experiment(spec)
    assert a == run_experiment(spec, chunk_trials=3)
    fixed = run_experiment(ExperimentSpec(delta_grid=[0.2], graph=GraphConfig(24, 3, 6, seed=0), trials=20))
    assert a.rows[0].defectives == fixed.rows[0].defectives  # same draws, other graphs


def test_estimator_consistency_small_graph(tmp_path):
    # exact P_MD of the oracle decoder on a 6-item graph by enumerating all 2^6 vectors
    g = from_pools([[0, 1, 2], [3, 4, 5], [0, 3], [1, 4], [2, 5]], n=6)
    delta = 0.3
    mis = dfc = 0.0
    for bits in itertools.product((0, 1), repeat=6):
        d = np.array(bits)
        w = delta ** d.sum() * (1 - delta) ** (6 - d.sum())
        res = exact_marginals(g, compute_syndrome(g, d), PrevalenceModel(delta))
        d_hat = res.marginals[:, 1] > res.marginals[:, 0]
        mis += w * (d.astype(bool) & ~d_hat).sum()
        dfc += w * d.sum()
    exact = mis / dfc
    path = tmp_path / "g.txt"
    write_graph(g, path)  # the graph file path of the harness
    spec = ExperimentSpec(delta_grid=[delta], graph_file=str(path), trials=40_000, decoders=("oracle",))
    row = run_experiment(spec).rows[0]
    assert row.dv is None and row.dc is None
    assert abs(row.pmd - exact) < 4 * row.pmd_ci95 / 1.96


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(trials=0),
        dict(delta_grid=[]),
        dict(delta_grid=[1.2]),
        dict(decoders=("bp", "magic")),
        dict(graph_mode="sometimes"),
        dict(iterations=0),
    ],
)
def test_spec_validation(kwargs):
    base = dict(delta_grid=[0.1], graph=GraphConfig(16, 2, 4), trials=1)
    base.update(kwargs)
    with pytest.raises(ValueError):
        run_experiment(ExperimentSpec(**base))


def test_oracle_size_guard():
    spec = ExperimentSpec(delta_grid=[0.1], graph=GraphConfig(32, 2, 4), trials=1, decoders=("oracle",))
    with pytest.raises(ValueError, match="n <= 26"):
        run_experiment(spec)


def test_failure_keeps_partial_rows(tmp_path, monkeypatch):
    import qgtbp.sim as sim

    real = sim._simulate_chunk
    calls = []

    def flaky(job):
        calls.append(job[2])
        if len(calls) == 3:
            raise sim.TrialError(job[2], RuntimeError("boom"))
        return real(job)

    monkeypatch.setattr(sim, "_simulate_chunk", flaky)
    spec = ExperimentSpec(delta_grid=[0.1], graph=GraphConfig(16, 2, 4), trials=50)
    with pytest.raises(ExperimentFailed) as info:
        run_experiment(spec, chunk_trials=10)
    partial = info.value.partial
    assert partial.rows[0].trials == 20
    write_table(partial, tmp_path / "p.csv", failure=str(info.value))
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[-1].startswith("# incomplete: ")
    assert read_table(tmp_path / "p.csv") == partial


def test_table_io(tmp_path):
    write_table(MetricsTable([]), tmp_path / "empty.csv")
    assert (tmp_path / "empty.csv").read_text() == CSV_HEADER + "\n"
    assert read_table(tmp_path / "empty.csv").rows == []

    row = MetricsRow(delta=0.1, decoder="bp", n=128, dv=3, dc=6, trials=10, defectives=130,
                     misdetections=2, nondefectives=1150, false_alarms=0)
    table = MetricsTable([row])
    write_table(table, tmp_path / "one.csv")
    line = (tmp_path / "one.csv").read_text().splitlines()[1]
    assert line.startswith("0.100000,bp,128,3,6,10,130,2,1150,0,1.538461538e-02,0.000000000e+00,")
    assert read_table(tmp_path / "one.csv") == table


def test_confidence_half_width():
    row = MetricsRow(0.2, "bp", 100, 3, 6, 1, 400, 100, 600, 0)
    assert row.pmd == 0.25
    assert row.pmd_ci95 == pytest.approx(1.959963984540054 * np.sqrt(0.25 * 0.75 / 400))


def test_prevalence_at_target():
    rows = [MetricsRow(d, "bp", 1, 1, 2, 1, 1000, m, 1, 0) for d, m in
            [(0.1, 0), (0.2, 1), (0.3, 5), (0.4, 1)]]
    assert prevalence_at_target(rows, 1e-3) == 0.4
    assert prevalence_at_target(rows[2:3], 1e-3) is None


def test_load_spec(tmp_path):
    path = tmp_path / "spec.json"
    path.write_text(json.dumps({
        "graph": {"n": 128, "dv": 3, "dc": 6, "seed": 1},
        "delta_grid": {"start": 0.05, "stop": 0.5, "step": 0.01},
        "trials": 100, "decoders": ["bp"],
    }))
    spec = load_spec(path)
    assert spec.graph == GraphConfig(128, 3, 6, 1)
    assert len(spec.delta_grid) == 46 and spec.decoders == ("bp",)
    over = load_spec(path, n=256, trials=7, delta_grid=[0.1, 0.2], graph_seed=3)
    assert over.graph == GraphConfig(256, 3, 6, 3)
    assert over.trials == 7 and over.delta_grid == (0.1, 0.2)
    assert load_spec(path, graph_file="g.txt").graph_file == "g.txt"
    path.write_text(json.dumps({"graph": {"n": 8, "dv": 2, "dc": 4}, "delta_grid": [0.1], "speed": 3}))
    with pytest.raises(ValueError, match="unknown"):
        load_spec(path)


def test_shipped_experiment_specs_load():
    from pathlib import Path

    files = sorted((Path(__file__).parent.parent / "experiments").glob("*.json"))
    assert len(files) == 4
    for path in files:
        spec = load_spec(path)
        spec.check(spec.graph.n)
        assert spec.trial_count(spec.graph.n) == default_trials(spec.graph.n)
