"""Command-line interface: ``qgt {gen-graph,decode,oracle,simulate,validate}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .bp import DecoderConfig, decode
from .graph import GraphConfig, build_regular_graph, format_graph, read_graph, validate, write_graph
from .model import PrevalenceModel
from .oracle import exact_marginals
from .peeling import peel
from .sim import DECODERS, ExperimentFailed, load_spec, run_experiment, write_table

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def parse_syndrome(text: str) -> np.ndarray:
    """Comma-separated integers, or ``@path`` to a file with one integer per line."""
    try:
        if text.startswith("@"):
            values = [int(x) for x in Path(text[1:]).read_text().split()]
        else:
            values = [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError(f"bad syndrome {text!r}: {exc}") from exc
    except OSError as exc:
        raise UsageError(f"cannot read syndrome file: {exc}") from exc
    return np.array(values, dtype=np.int64)


def _emit(lines: list[str], out: str | None) -> None:
    text = "\n".join(lines) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="qgt", description="Quantitative group testing with BP and peeling decoders.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-graph", help="sample a regular pooling graph",
                       description="Sample a simple (dv, dc)-regular pooling graph.")
    g.add_argument("--n", type=int, required=True, help="number of items")
    g.add_argument("--dv", type=int, required=True, help="tests per item")
    g.add_argument("--dc", type=int, required=True, help="items per test")
    g.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")
    g.add_argument("--out", help="output graph file (default stdout)")

    for name, helptext in (("decode", "decode one syndrome"),
                           ("oracle", "exact marginals by enumeration (n <= 26)")):
        d = sub.add_parser(name, help=helptext, description=helptext.capitalize() + "; "
                           "prints CSV columns item,p1,dhat.")
        d.add_argument("--graph", required=True, help="graph file")
        d.add_argument("--syndrome", required=True,
                       help="comma-separated test outcomes, or @file with one per line")
        d.add_argument("--delta", type=float, required=True, help="prevalence")
        d.add_argument("--out", help="output CSV (default stdout)")
        if name == "decode":
            d.add_argument("--decoder", choices=("bp", "peeling"), default="bp",
                           help="decoder (default bp)")
            d.add_argument("--iters", type=int, default=100,
                           help="maximum BP iterations (default 100)")
            d.add_argument("--kernel", choices=("convolution", "enumeration"),
                           default="convolution", help="BP constraint-node kernel")

    s = sub.add_parser("simulate", help="Monte Carlo sweep over prevalence",
                       description="Run an experiment spec and write the results CSV. "
                       "Flags override values from the spec file.")
    s.add_argument("--spec", help="JSON experiment spec")
    s.add_argument("--out", help="results CSV (default stdout)")
    s.add_argument("--workers", type=int, default=1, help="worker processes (output is independent of this)")
    s.add_argument("--trials", type=int, help="trials per prevalence")
    s.add_argument("--seed", type=int, help="master seed")
    s.add_argument("--iters", type=int, dest="iterations", help="BP iterations")
    s.add_argument("--decoders", help=f"comma-separated subset of {','.join(DECODERS)}")
    s.add_argument("--deltas", help="comma-separated prevalences, or start:step:stop")
    s.add_argument("--graph", dest="graph_file", help="graph file instead of a sampled graph")
    s.add_argument("--n", type=int, help="number of items of the sampled graph")
    s.add_argument("--dv", type=int, help="VN degree of the sampled graph")
    s.add_argument("--dc", type=int, help="CN degree of the sampled graph")
    s.add_argument("--graph-seed", type=int, help="seed of the sampled graph")
    s.add_argument("--graph-mode", choices=("fixed", "resampled"), help="reuse one graph or draw one per trial")

    v = sub.add_parser("validate", help="check a graph file",
                       description="Report invariant violations of a graph file.")
    v.add_argument("--graph", required=True, help="graph file")
    return p


def _parse_deltas(text: str | None):
    if text is None:
        return None
    try:
        if ":" in text:
            start, step, stop = (float(x) for x in text.split(":"))
            return {"start": start, "step": step, "stop": stop}
        return [float(x) for x in text.split(",")]
    except ValueError as exc:
        raise UsageError(f"bad --deltas {text!r}") from exc


def cmd_gen_graph(args) -> int:
    graph = build_regular_graph(GraphConfig(args.n, args.dv, args.dc, args.seed))
    if args.out:
        write_graph(graph, args.out)
    else:
        sys.stdout.write(format_graph(graph))
    return EXIT_OK


def cmd_decode(args) -> int:
    graph = read_graph(args.graph)
    s = parse_syndrome(args.syndrome)
    lines = ["item,p1,dhat"]
    if args.decoder == "bp":
        cfg = DecoderConfig(max_iterations=args.iters, cn_kernel=args.kernel)
        res = decode(graph, s, PrevalenceModel(args.delta), cfg)
        lines += [f"{j + 1},{res.posteriors[j, 1]:.12e},{res.d_hat[j]}" for j in range(graph.n)]
        print(f"iterations={res.iterations_used} syndrome_satisfied={res.syndrome_satisfied}",
              file=sys.stderr)
    else:
        d_hat, resolved = peel(graph, s)
        # unresolved items carry no posterior
        lines += [
            f"{j + 1},{float(d_hat[j]):.12e},{d_hat[j]}" if resolved[j] else f"{j + 1},,{d_hat[j]}"
            for j in range(graph.n)
        ]
        print(f"resolved={int(resolved.sum())}/{graph.n}", file=sys.stderr)
    _emit(lines, args.out)
    return EXIT_OK


def cmd_oracle(args) -> int:
    graph = read_graph(args.graph)
    s = parse_syndrome(args.syndrome)
    res = exact_marginals(graph, s, PrevalenceModel(args.delta))
    d_hat = (res.marginals[:, 1] > res.marginals[:, 0]).astype(int)
    lines = ["item,p1,dhat"]
    lines += [f"{j + 1},{res.marginals[j, 1]:.12e},{d_hat[j]}" for j in range(graph.n)]
    lines.append(f"# consistent_count={res.consistent_count}")
    _emit(lines, args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    decoders = tuple(args.decoders.split(",")) if args.decoders else None
    spec = load_spec(
        args.spec, trials=args.trials, seed=args.seed, iterations=args.iterations,
        decoders=decoders, delta_grid=_parse_deltas(args.deltas), graph_file=args.graph_file,
        n=args.n, dv=args.dv, dc=args.dc, graph_seed=args.graph_seed, graph_mode=args.graph_mode,
    )
    out = args.out or "/dev/stdout"
    try:
        table = run_experiment(spec, workers=args.workers)
    except ExperimentFailed as exc:
        write_table(exc.partial, out, failure=str(exc))
        raise
    write_table(table, out)
    return EXIT_OK


def cmd_validate(args) -> int:
    # read_graph already rejects invalid graphs; report the reason as violations
    from .graph import GraphValidationError

    try:
        graph = read_graph(args.graph)
    except GraphValidationError as exc:
        print(f"INVALID: {exc}")
        return EXIT_RUNTIME
    problems = validate(graph)
    for line in problems:
        print(line)
    if problems:
        return EXIT_RUNTIME
    degrees = graph.regular_degrees()
    shape = f"regular ({degrees[0]},{degrees[1]})" if degrees else "irregular"
    print(f"OK n={graph.n} r={graph.r} edges={graph.num_edges} {shape} rate={graph.rate:.6f}")
    return EXIT_OK


COMMANDS = {
    "gen-graph": cmd_gen_graph,
    "decode": cmd_decode,
    "oracle": cmd_oracle,
    "simulate": cmd_simulate,
    "validate": cmd_validate,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"qgt {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        print(f"qgt {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
