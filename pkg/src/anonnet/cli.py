"""Command line front end.

Subcommands: gen, validate, run, sweep, check, compile, exactfreq.  All
outputs are CSV or plain text; nothing is interactive.  Exit codes:
0 success, 1 usage/domain error, 3 step budget exhausted, 4 invariant or
protocol violation, 5 distributed/reference output mismatch.
"""

from __future__ import annotations

import argparse
import csv
import sys
from fractions import Fraction

from . import averaging, compiler, engine, experiments, kernel, network, tracking
from .rng import RNG_ID, SplitMix64

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_BUDGET = 3
EXIT_INVARIANT = 4
EXIT_MISMATCH = 5


def _open_out(path: str | None):
    if path is None or path == "-":
        return sys.stdout, False
    return open(path, "w", encoding="utf-8", newline=""), True


def _write_summary_rows(path: str | None, rows) -> None:
    fh, close = _open_out(path)
    try:
        fh.write(experiments.summary_header_comment() + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(experiments.SUMMARY_COLUMNS)
        for row in rows:
            writer.writerow(row.csv_fields())
    finally:
        if close:
            fh.close()


def cmd_gen(args) -> int:
    name, g = experiments.parse_graph_arg(args.family)
    fh, close = _open_out(args.out)
    try:
        fh.write(f"# {name}\n")
        fh.write(network.serialize_graph(g))
    finally:
        if close:
            fh.close()
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        _name, g = experiments.parse_graph_arg(args.graph)
    except network.GraphFormatError as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return EXIT_ERROR
    report = network.validate(g)
    if report.ok:
        print(f"ok: {g.n} nodes, {g.edge_count()} edges")
        return EXIT_OK
    print(f"violation: {report.violation} ({report.detail})", file=sys.stderr)
    return EXIT_ERROR


def _trace_observer(algo: str, g):
    if algo in ("maxtrack", "mintrack"):
        comp = "max" if algo == "maxtrack" else "min"

        def render(t, cfg):
            view = tracking.observe_pointer_graph(g, cfg, comp)
            edges = " ".join(f"{i}->{j}" for i, j in view.edges)
            valid = "".join("v" if ok else "." for ok in view.valid)
            return f"edges[{edges}] valid[{valid}]"

        return render
    if algo == "interval-avg":

        def render(t, cfg):
            view = averaging.observe_exchange(g, cfg)
            paths = " ".join("-".join(str(i) for i in p) for p in view.paths)
            return f"paths[{paths}] u_hat{list(view.u_hat)} V={view.variance_scaled}/n^2"

        return render
    return None


def cmd_run(args) -> int:
    name, g = experiments.parse_graph_arg(args.graph)
    inputs, k_guess = experiments.parse_inputs_arg(args.inputs, g.n, args.seed)
    k = args.K if args.K is not None else k_guess

    if args.algo == "exactfreq":
        return _run_exactfreq(args, name, g, inputs)
    if args.algo == "compiled":
        return _run_compiled(args, name, g, inputs)

    if args.algo == "interval-avg" and not args.trace:
        row = experiments.run_interval_avg(
            name, g, inputs, k=k, seed=args.seed, max_steps=args.max_steps, backend=args.backend
        )
        _write_summary_rows(args.out, [row])
        if not row.checks_ok:
            print(f"invariant violation: {row.detail}", file=sys.stderr)
            return EXIT_INVARIANT
        return EXIT_OK if row.status == "fixed-point" else EXIT_BUDGET

    # generic engine path (always used when tracing)
    if args.algo == "interval-avg":
        spec = averaging.averaging_automaton()
        checker = averaging.AveragingChecker(g, inputs, k)
        on_step = checker.on_step
    else:
        spec = {
            "detect": engine.detection_automaton,
            "maxtrack": tracking.max_tracking_automaton,
            "mintrack": tracking.min_tracking_automaton,
        }[args.algo]()
        on_step = None
    cap = args.max_steps if args.max_steps is not None else averaging.termination_bound(g.n, max(k, 1)) + g.n + 16
    try:
        res = engine.run_to_fixed_point(
            g, spec, list(inputs), max_steps=cap, record_trace=bool(args.trace), on_step=on_step
        )
    except (tracking.InvariantViolation, averaging.ProtocolViolation) as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    if args.trace:
        with open(args.trace, "w", encoding="utf-8", newline="") as fh:
            engine.dump_trace_csv(fh, g, res.trace, observer=_trace_observer(args.algo, g))
    if args.algo == "interval-avg":
        us = [z.pebbles for z in res.config.zs]
        view = averaging.observe_exchange(g, res.config)
        states = list(res.config.zs)
        row = experiments.RunRow(
            graph=name,
            n=g.n,
            k=k,
            seed=args.seed,
            steps=res.steps,
            status=res.status,
            acceptance_count=len(checker.accept_slots),
            v_initial=None if checker.v_initial is None else Fraction(checker.v_initial, g.n * g.n),
            v_final=view.variance(),
            final_max=max(z.max_track.estimate for z in states),
            final_min=min(z.min_track.estimate for z in states),
            output_interval=averaging.render_interval(res.config.ys[0]),
        )
        _write_summary_rows(args.out, [row])
    else:
        row, _res = experiments.run_generic(args.algo, name, g, inputs, k, args.seed, cap)
        _write_summary_rows(args.out, [row])
    return EXIT_OK if res.status == "fixed-point" else EXIT_BUDGET


def _run_compiled(args, name, g, inputs) -> int:
    if not args.spec:
        print("--algo compiled requires --spec", file=sys.stderr)
        return EXIT_ERROR
    with open(args.spec, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        program = compiler.compile_spec(compiler.parse_spec(text))
    except (compiler.SpecSyntaxError, compiler.CompileError) as exc:
        print(f"spec error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    labels, steps, runs = program.run_distributed(g, inputs, backend=args.backend)
    want = compiler.evaluate_reference(program.spec, inputs)
    agreed = all(lab == want for lab in labels)
    print(f"graph={name} steps={steps} output={labels[0]} reference={want}")
    if any(r.status != "fixed-point" for r in runs):
        return EXIT_BUDGET
    if not all(r.all_checks_ok() for r in runs):
        return EXIT_INVARIANT
    return EXIT_OK if agreed else EXIT_MISMATCH


def _run_exactfreq(args, name, g, inputs) -> int:
    res = compiler.run_exact_frequency(
        g,
        inputs,
        target=args.target,
        m_max=args.m_max,
        max_steps=args.max_steps or 2_000_000,
    )
    if res.status != "settled":
        print(f"budget exhausted after {res.steps} slots ({res.instances_settled} instances settled)", file=sys.stderr)
        return EXIT_BUDGET
    value: Fraction = res.value
    print(f"graph={name} target={args.target} frequency={value.numerator}/{value.denominator} steps={res.steps}")
    return EXIT_OK


def _parse_sizes(token: str) -> tuple[int, ...]:
    if ":" in token:
        parts = [int(p) for p in token.split(":")]
        lo, hi = parts[0], parts[1]
        step = parts[2] if len(parts) > 2 else 1
        return tuple(range(lo, hi + 1, step))
    return tuple(int(p) for p in token.split(","))


def cmd_sweep(args) -> int:
    config = experiments.SweepConfig(
        family=args.family,
        sizes=_parse_sizes(args.sizes),
        inputs=args.inputs,
        runs=args.runs,
        seed=args.seed,
        max_steps=args.max_steps,
        backend=args.backend,
    )
    result = experiments.run_sweep(config)
    _write_summary_rows(args.out, result.rows)
    if args.agg:
        fh, close = _open_out(args.agg)
        try:
            fh.write(f"# anonnet sweep aggregate; rng={RNG_ID}; seed={args.seed}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["family", "n", "runs", "mean_steps", "min_steps", "max_steps", "failures"])
            for agg in result.aggregate:
                writer.writerow(
                    [
                        agg["family"],
                        agg["n"],
                        agg["runs"],
                        repr(agg["mean_steps"]),
                        agg["min_steps"],
                        agg["max_steps"],
                        agg["failures"],
                    ]
                )
        finally:
            if close:
                fh.close()
    bad = [r for r in result.rows if r.status != "fixed-point" or not r.checks_ok]
    if any(not r.checks_ok for r in bad):
        return EXIT_INVARIANT
    if bad:
        return EXIT_BUDGET
    return EXIT_OK


def cmd_check(args) -> int:
    report = experiments.check_exhaustive(max_n=args.max_n, k=args.K, backend=args.backend)
    print(f"graphs checked: {report.graphs}")
    print(f"runs checked:   {report.runs}")
    print(f"violations:     {len(report.violations)}")
    if report.ok:
        return EXIT_OK
    first = report.violations[0]
    print(f"first violation: {first['kind']}: {first['detail']}", file=sys.stderr)
    target = args.out or "check_violation.txt"
    with open(target, "w", encoding="utf-8") as fh:
        fh.write(f"kind {first['kind']}\n")
        fh.write(f"detail {first['detail']}\n")
        fh.write(f"inputs {first['inputs']}\n")
        fh.write(first["graph"])
    print(f"reproducing instance written to {target}", file=sys.stderr)
    return EXIT_INVARIANT


def cmd_compile(args) -> int:
    with open(args.spec, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        spec = compiler.parse_spec(text)
        program = compiler.compile_spec(spec)
    except compiler.SpecSyntaxError as exc:
        print(
            f"spec error: {exc}\n(only rational coefficients are in the compilable class)",
            file=sys.stderr,
        )
        return EXIT_ERROR
    except compiler.CompileError as exc:
        print(f"compile error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    print(f"alphabet size: {spec.alphabet_size}")
    print(f"instances: {len(program.instances)}")
    for i, ci in enumerate(program.instances):
        print(f"  [{i}] payload coefficients {ci.signed}, threshold {ci.qstar}, alphabet 0..{ci.alphabet_bound}, {'strict' if ci.strict else 'non-strict'}")
    for label, clauses in program.table:
        rendered = " | ".join(
            "(" + " & ".join(f"{'' if want else '!'}[{idx}]" for idx, want in clause) + ")" for clause in clauses
        )
        print(f"  output {label}: {rendered}")
    if args.graph:
        name, g = experiments.parse_graph_arg(args.graph)
        inputs, _k = experiments.parse_inputs_arg(args.inputs, g.n, args.seed)
        args2 = argparse.Namespace(spec=args.spec, backend=args.backend)
        return _run_compiled(args2, name, g, inputs)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="anonnet", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="emit a builder graph in the text format")
    p.add_argument("family", help="complete:N | line:N | ring:N | ring:N:M | dumbbell:N")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("validate", help="validate a graph file or family token")
    p.add_argument("--graph", required=True)
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("run", help="run one instance and emit a summary row")
    p.add_argument("--graph", required=True, help="graph file or family:n token")
    p.add_argument("--algo", default="interval-avg", choices=["detect", "maxtrack", "mintrack", "interval-avg", "compiled", "exactfreq"])
    p.add_argument("--inputs", required=True, help="comma list | uniform:lo:hi | dumbbell-adversarial")
    p.add_argument("--K", type=int, default=None, help="alphabet bound (default: inferred)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--trace", default=None, help="write the full per-slot trace CSV here")
    p.add_argument("--out", default=None)
    p.add_argument("--spec", default=None, help="function spec file (with --algo compiled)")
    p.add_argument("--target", type=int, default=1, help="value whose frequency to compute (exactfreq)")
    p.add_argument("--m-max", type=int, default=None, help="instance cap for exactfreq (default 2n)")
    p.add_argument("--backend", default=None, choices=["numba", "python"])
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("sweep", help="seeded batch of runs with aggregates")
    p.add_argument("--family", required=True, choices=["complete", "line", "ring", "dumbbell"])
    p.add_argument("--sizes", required=True, help="lo:hi[:step] or comma list")
    p.add_argument("--inputs", required=True)
    p.add_argument("--runs", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--agg", default=None)
    p.add_argument("--backend", default=None, choices=["numba", "python"])
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("check", help="exhaustive small-instance invariant verification")
    p.add_argument("--max-n", type=int, default=5)
    p.add_argument("--K", type=int, default=2)
    p.add_argument("--out", default=None, help="where to write a reproducing instance on failure")
    p.add_argument("--backend", default=None, choices=["numba", "python"])
    p.set_defaults(fn=cmd_check)

    p = sub.add_parser("compile", help="compile a function spec; optionally run it")
    p.add_argument("--spec", required=True)
    p.add_argument("--graph", default=None)
    p.add_argument("--inputs", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--backend", default=None, choices=["numba", "python"])
    p.set_defaults(fn=cmd_compile)

    p = sub.add_parser("exactfreq", help="exact value frequency via the interleaved program")
    p.add_argument("--graph", required=True)
    p.add_argument("--inputs", required=True)
    p.add_argument("--target", type=int, required=True)
    p.add_argument("--m-max", type=int, default=None)
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=lambda a: _run_exactfreq(a, *_graph_and_inputs(a)))

    return ap


def _graph_and_inputs(args):
    name, g = experiments.parse_graph_arg(args.graph)
    inputs, _k = experiments.parse_inputs_arg(args.inputs, g.n, args.seed)
    return name, g, inputs


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (network.GraphFormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
