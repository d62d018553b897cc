"""Command-line front end: load networks, run any engine or the centralized
reference evaluator, compile rule programs, emit results and metrics, and
generate fixture graphs.

Sub-commands: oracle-fo, oracle-fp, qe-fo, qe-fp, qe-fo-loc, qe-fp-loc,
netlog-run, datalog-run, compile, check-consistent, fixtures.  Reports are
byte-deterministic for a fixed invocation: tuples sort lexicographically and
metrics appear in the order IN-TIME/ROUND, DIST-TIME, MSG-SIZE, #MSG/NODE.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional

from .engine_fo import run_qe_fo
from .engine_fp import run_qe_fp
from .fixtures import exhaustive_graphs
from .local_engine import run_qe_fo_loc, run_qe_fp_loc
from .logic import free_vars, parse_fixpoint, parse_formula
from .netlog import netlog_stages, parse_datalog, parse_netlog, run_netlog
from .oracle import (
    eval_datalog,
    eval_fo,
    eval_fp,
    eval_fp_loc,
    grid_graph,
    path_graph,
    ring_graph,
    star_graph,
)
from .rewriter import compile as compile_rules
from .rewriter import emit_text
from .simnet import (
    check_locally_consistent,
    load_network,
    metrics_report,
    network_text,
    parse_identity_mode,
)


class CliError(ValueError):
    pass


# ----------------------------------------------------------------- plumbing


def _read_source(value: str) -> str:
    """Treat the value as a file path when one exists, else as inline text."""
    p = Path(value)
    if p.exists() and p.is_file():
        return p.read_text()
    return value


def _load_labels(path: Optional[str]) -> Optional[dict[int, int]]:
    if path is None:
        return None
    labels: dict[int, int] = {}
    for ln in Path(path).read_text().splitlines():
        ln = ln.strip()
        if not ln or ln.startswith("#"):
            continue
        parts = ln.split()
        if len(parts) != 2:
            raise CliError(f"label line must be 'node label': {ln!r}")
        labels[int(parts[0])] = int(parts[1])
    return labels


def _load_net(args):
    if not args.net:
        raise CliError("--net is required for this command")
    labels = _load_labels(getattr(args, "labels", None))
    mode = parse_identity_mode(args.identity, labels)
    return load_network(
        Path(args.net).read_text(), mode=mode, port_seed=args.port_seed
    )


def _load_graph(args):
    if not args.net:
        raise CliError("--net is required for this command")
    return load_network(Path(args.net).read_text()).graph


def _query_text(args) -> str:
    if not args.query:
        raise CliError("--query is required for this command")
    return _read_source(args.query)


def _requester(args, net) -> int:
    if args.req is None:
        raise CliError("--req is required for this command")
    if args.req not in net.graph.adj:
        raise CliError(f"requester {args.req} is not a node of the network")
    return args.req


def _tuple_text(t: tuple[int, ...]) -> str:
    return "(" + ",".join(str(v) for v in t) + ")"


def _print_relation(rel, fmt: str) -> None:
    rows = rel.sorted_tuples()
    if fmt == "table":
        print(f"result: arity {rel.arity}, {len(rows)} tuples")
        for t in rows:
            print("  " + _tuple_text(t))
    else:
        for t in rows:
            print(",".join(["result"] + [str(v) for v in t]))


def _print_placement(placement, fmt: str) -> None:
    if fmt == "table":
        print("placement:")
        for a in sorted(placement):
            held = " ".join(_tuple_text(t) for t in sorted(placement[a]))
            print(f"  node {a}: {held}")
    else:
        for a in sorted(placement):
            for t in sorted(placement[a]):
                print(",".join(["placement", str(a)] + [str(v) for v in t]))


def _print_metrics(metrics, fmt: str) -> None:
    print(metrics_report(metrics, fmt))


def _fact_text(fact) -> str:
    pred, args = fact
    return f"{pred}({','.join(str(v) for v in args)})"


def _check_outcome(ok: bool) -> int:
    print("CHECK OK" if ok else "CHECK FAILED")
    return 0 if ok else 1


# ----------------------------------------------------------------- commands


def cmd_oracle_fo(args) -> int:
    g = _load_graph(args)
    f = parse_formula(_query_text(args))
    rel = eval_fo(g, f, free_vars(f))
    _print_relation(rel, args.format)
    return 0


def cmd_oracle_fp(args) -> int:
    g = _load_graph(args)
    q = parse_fixpoint(_query_text(args))
    trace = eval_fp_loc(g, q) if q.radius is not None else eval_fp(g, q)
    _print_relation(trace.stages[-1], args.format)
    return 0


def cmd_qe_fo(args) -> int:
    net = _load_net(args)
    f = parse_formula(_query_text(args))
    req = _requester(args, net)
    rel, metrics, placement = run_qe_fo(
        net,
        f,
        req,
        order_seed=args.order_seed,
        round_cap=args.rounds_cap,
        with_placement=True,
    )
    _print_relation(rel, args.format)
    _print_placement(placement, args.format)
    _print_metrics(metrics, args.format)
    if args.check:
        want = eval_fo(net.graph, f, free_vars(f))
        return _check_outcome(rel.tuples == want.tuples)
    return 0


def cmd_qe_fp(args) -> int:
    net = _load_net(args)
    q = parse_fixpoint(_query_text(args))
    req = _requester(args, net)
    rel, metrics, placement = run_qe_fp(
        net,
        q,
        req,
        order_seed=args.order_seed,
        round_cap=args.rounds_cap,
        with_placement=True,
    )
    _print_relation(rel, args.format)
    _print_placement(placement, args.format)
    _print_metrics(metrics, args.format)
    if args.check:
        want = eval_fp(net.graph, q).stages[-1]
        return _check_outcome(rel.tuples == want.tuples)
    return 0


def cmd_qe_fo_loc(args) -> int:
    net = _load_net(args)
    f = parse_formula(_query_text(args))
    req = _requester(args, net)
    rel, metrics, placement = run_qe_fo_loc(
        net,
        f,
        req,
        order_seed=args.order_seed,
        round_cap=args.rounds_cap,
        with_placement=True,
    )
    _print_relation(rel, args.format)
    _print_placement(placement, args.format)
    _print_metrics(metrics, args.format)
    if args.check:
        want = eval_fo(net.graph, f, free_vars(f))
        return _check_outcome(rel.tuples == want.tuples)
    return 0


def cmd_qe_fp_loc(args) -> int:
    net = _load_net(args)
    q = parse_fixpoint(_query_text(args))
    req = _requester(args, net)
    rel, metrics, placement = run_qe_fp_loc(
        net,
        q,
        req,
        order_seed=args.order_seed,
        round_cap=args.rounds_cap,
        with_placement=True,
    )
    _print_relation(rel, args.format)
    _print_placement(placement, args.format)
    _print_metrics(metrics, args.format)
    if args.check:
        want = eval_fp_loc(net.graph, q).stages[-1]
        return _check_outcome(rel.tuples == want.tuples)
    return 0


def cmd_netlog_run(args) -> int:
    net = _load_net(args)
    program = parse_netlog(_query_text(args))
    instance, metrics = run_netlog(
        program, net, order_seed=args.order_seed, round_cap=args.rounds_cap
    )
    facts = sorted(instance.union_facts())
    if args.format == "table":
        print(f"facts: {len(facts)}")
        for fact in facts:
            print("  " + _fact_text(fact))
        print("placement:")
        for a in sorted(instance.stores):
            held = " ".join(
                _fact_text(fc) for fc in sorted(instance.stores[a])
            )
            print(f"  node {a}: {held}")
    else:
        for pred, vals in facts:
            print(",".join(["fact", pred] + [str(v) for v in vals]))
        for a in sorted(instance.stores):
            for pred, vals in sorted(instance.stores[a]):
                print(
                    ",".join(["placement", str(a), pred]
                             + [str(v) for v in vals])
                )
    _print_metrics(metrics, args.format)
    if args.check:
        want = netlog_stages(program, net.graph)[-1]
        return _check_outcome(
            instance.union_facts() == want.union_facts()
        )
    return 0


def cmd_datalog_run(args) -> int:
    g = _load_graph(args)
    program = parse_datalog(_query_text(args))
    trace = eval_datalog(program, g)
    facts = sorted(trace.stages[-1])
    if args.format == "table":
        print(f"facts: {len(facts)}")
        for fact in facts:
            print("  " + _fact_text(fact))
    else:
        for pred, vals in facts:
            print(",".join(["fact", pred] + [str(v) for v in vals]))
    return 0


def cmd_compile(args) -> int:
    source = parse_datalog(_query_text(args))
    if args.delta is not None:
        delta = args.delta
    elif args.net:
        delta = _load_graph(args).diameter
    else:
        raise CliError("compile needs --delta or --net to fix the diameter")
    out = compile_rules(source, delta)
    sys.stdout.write(emit_text(out))
    return 0


def cmd_check_consistent(args) -> int:
    g = _load_graph(args)
    labels = _load_labels(args.labels)
    if labels is None:
        raise CliError("--labels is required for this command")
    ok = check_locally_consistent(g, labels, args.radius)
    print(
        f"locally consistent at radius {args.radius}: {'yes' if ok else 'no'}"
    )
    return 0 if ok else 1


_FAMILIES = {
    "path": path_graph,
    "ring": ring_graph,
    "star": star_graph,
}


def cmd_fixtures(args) -> int:
    if args.family == "all":
        if not args.out:
            raise CliError("fixtures all needs --out DIRECTORY")
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        count = 0
        for name, g in exhaustive_graphs(args.size):
            (outdir / f"{name}.net").write_text(network_text(g))
            count += 1
        print(f"wrote {count} graphs to {outdir}")
        return 0
    if args.family == "grid":
        g = grid_graph(args.size, args.size)
        name = f"grid-{args.size}x{args.size}"
    else:
        g = _FAMILIES[args.family](args.size)
        name = f"{args.family}-{args.size}"
    text = network_text(g)
    if args.out:
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        target = outdir / f"{name}.net"
        target.write_text(text)
        print(f"wrote {target}")
    else:
        sys.stdout.write(text)
    return 0


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="netquery",
        description="distributed graph-query engines with a centralized "
        "reference evaluator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, needs_req=False):
        p.add_argument("--net", help="network file (edge-list format)")
        p.add_argument(
            "--query", help="query text or path to a file holding it"
        )
        if needs_req:
            p.add_argument(
                "--req", type=int, help="requesting node id"
            )
        p.add_argument(
            "--identity",
            default="global",
            help="global | local-consistent:<k> | anonymous",
        )
        p.add_argument(
            "--labels",
            help="label map file for locally-consistent mode "
            "('node label' lines)",
        )
        p.add_argument("--port-seed", type=int, default=0)
        p.add_argument("--order-seed", type=int, default=0)
        p.add_argument("--rounds-cap", type=int, default=None)
        p.add_argument(
            "--format", choices=("table", "csv"), default="table"
        )
        p.add_argument(
            "--check",
            action="store_true",
            help="also run the centralized evaluator and fail on mismatch",
        )

    for name, fn, needs_req in (
        ("oracle-fo", cmd_oracle_fo, False),
        ("oracle-fp", cmd_oracle_fp, False),
        ("qe-fo", cmd_qe_fo, True),
        ("qe-fp", cmd_qe_fp, True),
        ("qe-fo-loc", cmd_qe_fo_loc, True),
        ("qe-fp-loc", cmd_qe_fp_loc, True),
        ("netlog-run", cmd_netlog_run, False),
        ("datalog-run", cmd_datalog_run, False),
    ):
        p = sub.add_parser(name)
        common(p, needs_req=needs_req)
        p.set_defaults(fn=fn)

    p = sub.add_parser("compile")
    common(p)
    p.add_argument(
        "--delta", type=int, default=None, help="network diameter"
    )
    p.set_defaults(fn=cmd_compile)

    p = sub.add_parser("check-consistent")
    common(p)
    p.add_argument("--radius", type=int, default=1)
    p.set_defaults(fn=cmd_check_consistent)

    p = sub.add_parser("fixtures")
    p.add_argument(
        "family", choices=("path", "ring", "star", "grid", "all")
    )
    p.add_argument("size", type=int)
    p.add_argument("--out", help="directory to write graph files into")
    p.set_defaults(fn=cmd_fixtures)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
