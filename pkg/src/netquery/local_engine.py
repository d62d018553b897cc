"""Distributed evaluation of radius-bounded queries on port-numbered networks.

The engines here answer queries whose quantifiers and free variables are all
confined to a fixed-radius neighborhood of a designated center variable.  A
node reconstructs its surroundings without reading any neighbor identity: it
floods bounded walks over its ports, every visited node records the port
trace of each walk that reaches it, and the returned traces are quotiented
by the equivalence that relates two walks exactly when some visited node
certifies that they end at the same place.  The quotient classes serve as
self-made local names: formulas are evaluated over them, fixpoint tables are
keyed by them, and the table fragment held by a nearby node is consulted by
source-routing a request along a recorded walk and re-locating each name in
the holder's own frame.

Concurrent collections are kept apart by a constant-size random nonce drawn
by each initiator: two different initiators can otherwise record identical
port traces at the same node (for instance on a ring whose ports are labeled
the same way everywhere), which would merge classes that belong to distinct
nodes.  The nonce scopes every record to one wave, and the reconstruction
verifier cross-checks the outcome against the reference construction.

The module also provides centralized reference constructions (direct walk
enumeration on the network object) used to validate the protocol, local-name
translation between frames, and a reconstruction verifier.
"""
from __future__ import annotations

import itertools
import random
from dataclasses import dataclass
from typing import Any, Iterable, Mapping, Optional, Sequence, Union

from . import simnet
from .engine_fo import EngineError
from .logic import (
    EDGE_PRED,
    And,
    Atom,
    BoolConst,
    Cmp,
    Exists,
    FixpointQuery,
    Forall,
    Formula,
    InNbhd,
    Not,
    Or,
    Var,
    _detect_radius,
    constants,
    free_vars,
    parse_fixpoint,
    parse_formula,
    print_fixpoint,
    print_formula,
    subformulas,
)
from .oracle import Relation, neighborhood
from .simnet import (
    EncodingParams,
    Message,
    Metrics,
    Network,
    NodeContext,
    NodeEngine,
    StepResult,
    broadcast,
    check_locally_consistent,
)

__all__ = [
    "PortTrace",
    "TraceQuotient",
    "LocalName",
    "LocalTopology",
    "collect_topology",
    "verify_reconstruction",
    "local_name",
    "translate_name",
    "resolve_trace",
    "reverse_trace",
    "reduce_trace",
    "run_qe_fo_loc",
    "run_qe_fp_loc",
    "check_locally_consistent",
    "local_payload_bits",
    "FOLocReport",
    "FPLocReport",
]


# A port trace is a flat tuple of port numbers: positions 0, 2, 4, ... are
# the ports a walk leaves through and positions 1, 3, 5, ... the ports it
# arrives on.  Even length means the trace pins down a node; the empty trace
# names the walk's start.
PortTrace = tuple[int, ...]

_NONCE_BITS = 32
_SMALL_COUNTER_BITS = 8


# ------------------------------------------------------------ trace algebra


def reverse_trace(trace: PortTrace) -> PortTrace:
    """The same walk traversed backwards (even-length traces only)."""
    if len(trace) % 2:
        raise EngineError("only even-length traces can be reversed")
    return tuple(reversed(trace))


def reduce_trace(trace: PortTrace) -> PortTrace:
    """Cancel immediate reversals (leave and re-enter over the same edge)."""
    if len(trace) % 2:
        raise EngineError("only even-length traces can be reduced")
    steps: list[tuple[int, int]] = []
    for i in range(0, len(trace), 2):
        step = (trace[i], trace[i + 1])
        if steps and steps[-1] == (step[1], step[0]):
            steps.pop()
        else:
            steps.append(step)
    return tuple(x for s in steps for x in s)


def resolve_trace(net: Network, start: int, trace: PortTrace) -> int:
    """Walk a trace over the network's port assignment and return the
    endpoint (harness-side helper; nodes never resolve traces to ids)."""
    if len(trace) % 2:
        raise EngineError("only even-length traces pin down a node")
    cur = start
    for i in range(0, len(trace), 2):
        nxt = net.neighbor_on_port(cur, trace[i])
        if net.port_to[nxt][cur] != trace[i + 1]:
            raise EngineError(
                f"trace {trace!r} does not follow the port assignment"
            )
        cur = nxt
    return cur


def _min_trace(net: Network, start: int, goal: int) -> PortTrace:
    """Shortest trace from start to goal, ties broken lexicographically."""
    best: dict[int, PortTrace] = {start: ()}
    frontier: list[tuple[PortTrace, int]] = [((), start)]
    while frontier:
        nxt: list[tuple[PortTrace, int]] = []
        for trace, u in sorted(frontier):
            for p in range(1, net.degree(u) + 1):
                v = net.neighbor_on_port(u, p)
                if v in best:
                    continue
                best[v] = trace + (p, net.port_to[v][u])
                nxt.append((best[v], v))
        if goal in best:
            return best[goal]
        frontier = nxt
    raise EngineError(f"no walk from {start} to {goal}")


# -------------------------------------------------------- quotient and names


@dataclass(frozen=True)
class TraceQuotient:
    """Recorded walk traces from one node, partitioned by the certified
    same-endpoint equivalence (closed reflexively, symmetrically, and
    transitively)."""

    radius: int
    traces: frozenset[PortTrace]
    tracelists: Mapping[PortTrace, frozenset[PortTrace]]
    classes: tuple[frozenset[PortTrace], ...]
    class_of: Mapping[PortTrace, int]
    reps: tuple[PortTrace, ...]

    def rep(self, idx: int) -> PortTrace:
        return self.reps[idx]

    def dist(self, idx: int) -> int:
        return len(self.reps[idx]) // 2

    def class_index(self, trace: PortTrace) -> int:
        try:
            return self.class_of[trace]
        except KeyError:
            raise EngineError(
                f"trace {trace!r} lies outside the collected fragment"
            ) from None


@dataclass(frozen=True)
class LocalName:
    """A node named from `owner`'s viewpoint: the class of all equivalent
    traces of at most 2*radius ports leading to it."""

    owner: int
    radius: int
    traces: frozenset[PortTrace]

    @property
    def rep(self) -> PortTrace:
        return min(self.traces, key=lambda t: (len(t), t))


@dataclass(frozen=True)
class LocalTopology:
    """The neighborhood a node reconstructs from traces alone: quotient
    classes as vertices, edges certified by recorded walks, plus the input
    facts and (where the identity mode provides one) the label carried home
    by the collection."""

    owner: int
    radius: int
    quotient: TraceQuotient
    vertices: tuple[int, ...]
    edges: frozenset[tuple[int, int]]
    center: int
    attrs: Mapping[int, frozenset[str]]
    labels: Mapping[int, Optional[int]]

    def rep(self, idx: int) -> PortTrace:
        return self.quotient.rep(idx)

    def dist(self, idx: int) -> int:
        return self.quotient.dist(idx)

    def has_edge(self, a: int, b: int) -> bool:
        return a != b and (min(a, b), max(a, b)) in self.edges


class _UnionFind:
    def __init__(self, items: Iterable[PortTrace]):
        self.parent = {x: x for x in items}

    def find(self, x: PortTrace) -> PortTrace:
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a: PortTrace, b: PortTrace) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[ra] = rb


def _quotient_from_lists(
    radius: int, lists: Mapping[PortTrace, frozenset[PortTrace]]
) -> TraceQuotient:
    traces = frozenset(lists)
    uf = _UnionFind(traces)
    for t, lst in lists.items():
        for u in lst:
            if u in traces:
                uf.union(t, u)
    groups: dict[PortTrace, set[PortTrace]] = {}
    for t in traces:
        groups.setdefault(uf.find(t), set()).add(t)
    keyed = sorted(
        (min((len(t), t) for t in g), frozenset(g)) for g in groups.values()
    )
    classes = tuple(g for _, g in keyed)
    reps = tuple(key[1] for key, _ in keyed)
    class_of = {t: i for i, g in enumerate(classes) for t in g}
    return TraceQuotient(
        radius=radius,
        traces=traces,
        tracelists=dict(lists),
        classes=classes,
        class_of=class_of,
        reps=reps,
    )


# Per-trace collection record: (tracelist of the endpoint, its input facts,
# its exposed label or None).
_Entry = tuple[tuple[PortTrace, ...], tuple[str, ...], Optional[int]]


def _topology_from_entries(
    owner: int, radius: int, entries: Mapping[PortTrace, _Entry]
) -> LocalTopology:
    lists = {t: frozenset(e[0]) for t, e in entries.items()}
    q = _quotient_from_lists(radius, lists)
    vertices = tuple(
        i for i in range(len(q.classes)) if q.dist(i) <= radius
    )
    vset = set(vertices)
    edges: set[tuple[int, int]] = set()
    for t in q.traces:
        if not t:
            continue
        c1 = q.class_of[t[:-2]]
        c2 = q.class_of[t]
        if c1 in vset and c2 in vset and c1 != c2:
            edges.add((min(c1, c2), max(c1, c2)))
    attrs: dict[int, frozenset[str]] = {}
    labels: dict[int, Optional[int]] = {}
    for i, cls in enumerate(q.classes):
        a: set[str] = set()
        ls: set[int] = set()
        for t in cls:
            e = entries[t]
            a.update(e[1])
            if e[2] is not None:
                ls.add(e[2])
        attrs[i] = frozenset(a)
        labels[i] = min(ls) if ls else None
    return LocalTopology(
        owner=owner,
        radius=radius,
        quotient=q,
        vertices=vertices,
        edges=frozenset(edges),
        center=q.class_of[()],
        attrs=attrs,
        labels=labels,
    )


# ----------------------------------------------- centralized reference build


def _walk_traces(net: Network, start: int, radius: int) -> dict[PortTrace, int]:
    """Every even trace of at most radius+1 steps from `start` that never
    immediately reverses, mapped to its endpoint."""
    out: dict[PortTrace, int] = {(): start}
    frontier: list[tuple[PortTrace, int]] = [((), start)]
    for _ in range(radius + 1):
        nxt: list[tuple[PortTrace, int]] = []
        for trace, u in frontier:
            entered = trace[-1] if trace else None
            for p in range(1, net.degree(u) + 1):
                if p == entered:
                    continue
                v = net.neighbor_on_port(u, p)
                t2 = trace + (p, net.port_to[v][u])
                out[t2] = v
                nxt.append((t2, v))
        frontier = nxt
    return out


def _node_label(net: Network, a: int) -> Optional[int]:
    if net.mode.kind == "global":
        return a
    if net.mode.kind == "local-consistent":
        assert net.mode.labels is not None
        return net.mode.labels[a]
    return None


def _central_entries(
    net: Network, start: int, radius: int
) -> dict[PortTrace, _Entry]:
    walks = _walk_traces(net, start, radius)
    by_end: dict[int, set[PortTrace]] = {}
    for t, u in walks.items():
        if t:
            by_end.setdefault(u, set()).add(t)
    g = net.graph
    out: dict[PortTrace, _Entry] = {}
    for t, u in walks.items():
        attrs = tuple(sorted(p for p, m in g.unary.items() if u in m))
        out[t] = (
            tuple(sorted(by_end.get(u, ()))),
            attrs,
            _node_label(net, u),
        )
    return out


def collect_topology(net: Network, a: int, k: int) -> LocalTopology:
    """Reference construction of the trace-quotient view of N^k(a): what the
    distributed collection at `a` produces, computed directly."""
    if a not in net.graph.adj:
        raise EngineError(f"{a} is not a node")
    if k < 1:
        raise EngineError("collection radius must be >= 1")
    return _topology_from_entries(a, k, _central_entries(net, a, k))


def verify_reconstruction(net: Network, a: int, k: int) -> bool:
    """True when the trace-quotient reconstruction of N^k(a) admits a
    center-preserving isomorphism onto the true neighborhood fragment."""
    topo = collect_topology(net, a, k)
    frag = neighborhood(net.graph, a, k)
    classes = list(topo.vertices)
    nodes = sorted(frag.nodes)
    if len(classes) != len(nodes):
        return False
    cdeg = {
        c: sum(1 for d in classes if topo.has_edge(c, d)) for c in classes
    }
    nadj: dict[int, set[int]] = {u: set() for u in nodes}
    for u, v in frag.edges:
        nadj[u].add(v)
        nadj[v].add(u)
    order = [topo.center] + sorted(
        (c for c in classes if c != topo.center), key=lambda c: -cdeg[c]
    )

    def extend(i: int, assign: dict[int, int], used: set[int]) -> bool:
        if i == len(order):
            return True
        c = order[i]
        candidates = [a] if c == topo.center else [
            u for u in nodes if u not in used and len(nadj[u]) == cdeg[c]
        ]
        for u in candidates:
            if u in used:
                continue
            ok = True
            for d, w in assign.items():
                if topo.has_edge(c, d) != (w in nadj[u]):
                    ok = False
                    break
            if ok:
                assign[c] = u
                used.add(u)
                if extend(i + 1, assign, used):
                    return True
                del assign[c]
                used.discard(u)
        return False

    return extend(0, {}, set())


def local_name(net: Network, owner: int, radius: int, target: int) -> LocalName:
    """The name `owner` has for `target` in the frame of the given radius:
    the class of all certified-equivalent traces of at most 2*radius ports."""
    if radius < 1:
        raise EngineError("name frame radius must be >= 1")
    topo = collect_topology(net, owner, radius)
    route = _min_trace(net, owner, target)
    if len(route) > 2 * radius:
        raise EngineError(
            f"{target} lies outside the radius-{radius} frame of {owner}"
        )
    cls = topo.quotient.classes[topo.quotient.class_index(route)]
    value = frozenset(t for t in cls if len(t) <= 2 * radius)
    return LocalName(owner=owner, radius=radius, traces=value)


def translate_name(
    net: Network,
    name: LocalName,
    target: int,
    target_radius: Optional[int] = None,
) -> LocalName:
    """Re-express a name from `name.owner`'s frame in `target`'s frame.

    The representative trace is prefixed with the reversed owner-to-target
    route, immediate reversals are cancelled, and the composed trace is
    located in the target's own quotient.  Raises when the target is too far
    from the owner or when the named node falls outside the target frame.
    """
    k_t = target_radius if target_radius is not None else name.radius // 2
    if k_t < 1:
        raise EngineError("target frame radius must be >= 1")
    if target not in net.graph.adj:
        raise EngineError(f"{target} is not a node")
    route = _min_trace(net, name.owner, target)
    if len(route) > 2 * k_t:
        raise EngineError(
            f"{target} lies outside the radius-{k_t} frame of {name.owner}"
        )
    composed = reduce_trace(reverse_trace(route) + name.rep)
    collect_radius = max(name.radius, k_t)
    topo = collect_topology(net, target, collect_radius)
    idx = topo.quotient.class_index(composed)
    cls = topo.quotient.classes[idx]
    value = frozenset(t for t in cls if len(t) <= 2 * k_t)
    if not value:
        raise EngineError(
            f"the named node lies outside the radius-{k_t} frame of {target}"
        )
    return LocalName(owner=target, radius=k_t, traces=value)


# --------------------------------------------------------- query validation


def _local_shape(
    f: Formula, *, mode_kind: str, table: Optional[tuple[str, int]] = None
) -> tuple[str, int]:
    """Check the radius-bounded shape and return (center variable, radius)."""
    centers: set[str] = set()
    radii: set[int] = set()
    for g in subformulas(f):
        if isinstance(g, (Exists, Forall)):
            if g.bound is None:
                raise EngineError(
                    "unbounded quantifier: the query is not radius-bounded"
                )
            c, r = g.bound
            if not isinstance(c, Var):
                raise EngineError("quantifier bounds must center on a variable")
            centers.add(c.name)
            radii.add(r)
        elif isinstance(g, InNbhd):
            if not isinstance(g.center, Var):
                raise EngineError(
                    "neighborhood atoms must center on a variable"
                )
            centers.add(g.center.name)
            radii.add(g.radius)
        elif isinstance(g, Cmp):
            if g.op == ">=" and mode_kind == "anonymous":
                raise EngineError(
                    "order comparison needs node labels; "
                    "the network is anonymous"
                )
        elif isinstance(g, Atom):
            if g.pred == EDGE_PRED:
                continue
            if table is not None and g.pred == table[0]:
                if len(g.args) != table[1]:
                    raise EngineError(
                        f"table atom {g.pred} used with arity {len(g.args)}"
                    )
                if not all(isinstance(t, Var) for t in g.args):
                    raise EngineError("table atoms must use variables")
                continue
            if len(g.args) != 1:
                raise EngineError(
                    f"relation {g.pred}/{len(g.args)} is not available "
                    "on the network"
                )
    if constants(f):
        raise EngineError(
            "constants are not available to the local-fragment engines"
        )
    if len(radii) != 1 or len(centers) != 1:
        raise EngineError(
            "cannot infer a single locality radius and center variable"
        )
    k = radii.pop()
    x = centers.pop()
    if k < 1:
        raise EngineError("locality radius must be >= 1")
    if x not in free_vars(f):
        raise EngineError("the locality center must be a free variable")
    return x, k


def _check_free_guards(f: Formula, center: str, k: int) -> None:
    others = [y for y in free_vars(f) if y != center]
    if not others:
        return
    parts = f.parts if isinstance(f, And) else (f,)
    guarded = {
        p.term.name
        for p in parts
        if isinstance(p, InNbhd)
        and isinstance(p.term, Var)
        and p.radius == k
        and isinstance(p.center, Var)
        and p.center.name == center
    }
    missing = [y for y in others if y not in guarded]
    if missing:
        raise EngineError(
            f"free variables {missing} lack a neighborhood guard around "
            f"{center!r}; the query is not radius-bounded"
        )


def _validate_fp_local(q: FixpointQuery, mode_kind: str) -> int:
    if q.radius is None:
        raise EngineError(
            "the fixpoint query carries no locality radius; "
            "use the unrestricted fixpoint engine"
        )
    if q.name == EDGE_PRED:
        raise EngineError(f"fixpoint relation may not shadow {EDGE_PRED!r}")
    if set(free_vars(q.body)) != set(q.vars):
        raise EngineError(
            "every declared fixpoint variable must occur in the body"
        )
    plain = FixpointQuery(q.name, q.vars, q.body, None)
    if _detect_radius(plain) != q.radius:
        raise EngineError(
            "the body is not the radius-bounded form of any query at the "
            "declared radius"
        )
    x, k = _local_shape(
        q.body, mode_kind=mode_kind, table=(q.name, len(q.vars))
    )
    if x != q.vars[0] or k != q.radius:
        raise EngineError(
            "the locality center must be the first declared variable"
        )
    return k


# ----------------------------------------------------------- local evaluator


def _holds(
    f: Formula,
    env: dict[str, int],
    topo: LocalTopology,
    domain: tuple[int, ...],
    table_truth,
    work: list[int],
) -> bool:
    work[0] += 1
    if isinstance(f, BoolConst):
        return f.value
    if isinstance(f, Atom):
        if f.pred == EDGE_PRED:
            a = env[f.args[0].name]
            b = env[f.args[1].name]
            return topo.has_edge(a, b)
        if table_truth is not None and f.pred == table_truth.name:
            holder = env[f.args[0].name]
            args = tuple(env[t.name] for t in f.args[1:])
            return table_truth(holder, args)
        return f.pred in topo.attrs.get(env[f.args[0].name], frozenset())
    if isinstance(f, Cmp):
        a = env[f.left.name]
        b = env[f.right.name]
        if f.op == "=":
            return a == b
        if f.op == "!=":
            return a != b
        la, lb = topo.labels.get(a), topo.labels.get(b)
        if la is None or lb is None:
            raise EngineError("order comparison on an unlabeled node")
        return la >= lb
    if isinstance(f, InNbhd):
        return topo.dist(env[f.term.name]) <= f.radius
    if isinstance(f, Not):
        return not _holds(f.body, env, topo, domain, table_truth, work)
    if isinstance(f, And):
        return all(
            _holds(p, env, topo, domain, table_truth, work) for p in f.parts
        )
    if isinstance(f, Or):
        return any(
            _holds(p, env, topo, domain, table_truth, work) for p in f.parts
        )
    if isinstance(f, (Exists, Forall)):
        assert f.bound is not None
        radius = f.bound[1]
        had = f.var in env
        old = env.get(f.var)
        hit = isinstance(f, Forall)
        for c in domain:
            if topo.dist(c) > radius:
                continue
            env[f.var] = c
            v = _holds(f.body, env, topo, domain, table_truth, work)
            if isinstance(f, Exists) and v:
                hit = True
                break
            if isinstance(f, Forall) and not v:
                hit = False
                break
        if had:
            env[f.var] = old  # type: ignore[assignment]
        else:
            env.pop(f.var, None)
        return hit
    raise EngineError(f"cannot evaluate {type(f).__name__} locally")


# ------------------------------------------------------- collection protocol


def _wire_entries(entries: Mapping[PortTrace, _Entry]) -> tuple:
    return tuple(
        (t, e[0], e[1], e[2]) for t, e in sorted(entries.items())
    )


class _Collector:
    """Per-node state of the walk-flood collection.  One wave is launched by
    this node (identified by its nonce); waves of every other node are served
    with the same rules."""

    __slots__ = ("nonce", "radius", "records", "pending", "acc", "stored",
                 "launched")

    def __init__(self, nonce: int):
        self.nonce = nonce
        self.radius: Optional[int] = None
        self.records: dict[int, set[PortTrace]] = {}
        self.pending: dict[tuple[int, PortTrace], set[int]] = {}
        self.acc: dict[tuple[int, PortTrace], dict[PortTrace, _Entry]] = {}
        self.stored: Optional[dict[PortTrace, _Entry]] = None
        self.launched = False

    @property
    def done(self) -> bool:
        return self.stored is not None

    def _self_entry(self, ctx: NodeContext, wave: int) -> _Entry:
        return (
            tuple(sorted(self.records.get(wave, ()))),
            tuple(sorted(ctx.self_unary)),
            ctx.label,
        )

    def launch(
        self, ctx: NodeContext, radius: int, out: list[tuple[int, Any]]
    ) -> None:
        self.radius = radius
        self.launched = True
        if not ctx.ports:
            self.stored = {(): self._self_entry(ctx, self.nonce)}
            return
        self.pending[(self.nonce, ())] = set(ctx.ports)
        self.acc[(self.nonce, ())] = {}
        for p in ctx.ports:
            out.append((p, ("C", self.nonce, radius, (p,))))

    def note_collect(self, msg: Message) -> None:
        """First pass over the inbox: record every arriving trace before any
        reply snapshot of this round is taken."""
        _, wave, _, todd = msg.payload
        full = tuple(todd) + (msg.dst_port,)
        if len(full) % 2:
            raise EngineError(f"malformed collection trace {full!r}")
        self.records.setdefault(wave, set()).add(full)

    def serve_collect(
        self, ctx: NodeContext, msg: Message, out: list[tuple[int, Any]]
    ) -> None:
        _, wave, budget, todd = msg.payload
        full = tuple(todd) + (msg.dst_port,)
        rest = [p for p in ctx.ports if p != msg.dst_port]
        if budget > 0 and rest:
            self.pending[(wave, full)] = set(rest)
            self.acc[(wave, full)] = {}
            for p in rest:
                out.append((p, ("C", wave, budget - 1, full + (p,))))
        else:
            entry = {full: self._self_entry(ctx, wave)}
            out.append((msg.dst_port, ("R", wave, full, _wire_entries(entry))))

    def serve_reply(
        self, ctx: NodeContext, msg: Message, out: list[tuple[int, Any]]
    ) -> None:
        _, wave, walk, wire = msg.payload
        walk = tuple(walk)
        key = (wave, walk[:-2])
        pend = self.pending.get(key)
        if pend is None or walk[-2] not in pend:
            raise EngineError("reply for a walk that was never forwarded")
        pend.discard(walk[-2])
        bucket = self.acc[key]
        for t, lst, attrs, label in wire:
            bucket[tuple(t)] = (tuple(lst), tuple(attrs), label)
        if pend:
            return
        del self.pending[key]
        entries = self.acc.pop(key)
        prefix = key[1]
        if prefix == ():
            if wave != self.nonce:
                raise EngineError("root reply for a foreign wave")
            entries[()] = self._self_entry(ctx, self.nonce)
            self.stored = entries
            return
        entries[prefix] = self._self_entry(ctx, wave)
        out.append((prefix[-1], ("R", wave, prefix, _wire_entries(entries))))

    def build(self, ctx: NodeContext) -> LocalTopology:
        assert self.stored is not None and self.radius is not None
        return _topology_from_entries(ctx.node, self.radius, self.stored)


def _node_nonce(ctx: NodeContext) -> int:
    # Stands in for each node's private random source; the true id seeds it
    # but never appears in any message or derived value.
    return random.Random(1_000_003 * ctx.node + 7).getrandbits(_NONCE_BITS)


# -------------------------------------------------------- first-order engine


@dataclass(frozen=True)
class FOLocReport:
    topology: Optional[LocalTopology]
    rows: frozenset[tuple[PortTrace, ...]]


class _FOLocState:
    __slots__ = ("formula", "center", "k", "adopted", "relay", "collector",
                 "topology", "rows", "evaluated")

    def __init__(self, collector: _Collector) -> None:
        self.formula: Optional[Formula] = None
        self.center = ""
        self.k = 0
        self.adopted = False
        self.relay = False
        self.collector = collector
        self.topology: Optional[LocalTopology] = None
        self.rows: frozenset[tuple[PortTrace, ...]] = frozenset()
        self.evaluated = False


class FOLocEngine(NodeEngine):
    """Radius-bounded first-order evaluation: flood the query, collect the
    k-neighborhood as a trace quotient, evaluate in-node over the classes."""

    def __init__(self, order: tuple[str, ...], mode_kind: str):
        self.order = tuple(order)
        self.mode_kind = mode_kind

    def start(self, ctx: NodeContext) -> _FOLocState:
        return _FOLocState(_Collector(_node_nonce(ctx)))

    def inject(self, state: _FOLocState, ctx: NodeContext, payload: Any) -> Any:
        self._adopt(state, print_formula(payload))
        return state

    def _adopt(self, state: _FOLocState, text: str) -> None:
        if state.adopted:
            return
        f = parse_formula(text)
        center, k = _local_shape(f, mode_kind=self.mode_kind)
        state.formula = f
        state.center = center
        state.k = k
        state.adopted = True
        state.relay = True

    def step(
        self,
        state: _FOLocState,
        ctx: NodeContext,
        round_no: int,
        inbox: Sequence[Message],
    ) -> StepResult:
        out: list[tuple[int, Any]] = []
        work = len(inbox)
        for m in inbox:
            if m.payload[0] == "C":
                state.collector.note_collect(m)
        for m in inbox:
            tag = m.payload[0]
            if tag == "lq":
                self._adopt(state, m.payload[1])
            elif tag == "C":
                state.collector.serve_collect(ctx, m, out)
            elif tag == "R":
                state.collector.serve_reply(ctx, m, out)
            else:
                raise EngineError(f"unexpected message tag {tag!r}")
        if state.relay:
            state.relay = False
            assert state.formula is not None
            out.extend(broadcast(ctx, ("lq", print_formula(state.formula))))
            state.collector.launch(ctx, state.k, out)
        if state.collector.done and not state.evaluated:
            work += self._evaluate(state, ctx)
        return StepResult(
            state=state,
            sends=tuple(out),
            quiescent=not out and (not state.adopted or state.evaluated),
            steps=1 + work,
        )

    def _evaluate(self, state: _FOLocState, ctx: NodeContext) -> int:
        assert state.formula is not None
        topo = state.collector.build(ctx)
        state.topology = topo
        domain = tuple(
            i for i in topo.vertices if topo.dist(i) <= state.k
        )
        frees = [v for v in self.order if v != state.center]
        counter = [0]
        rows: set[tuple[PortTrace, ...]] = set()
        for combo in itertools.product(domain, repeat=len(frees)):
            env = {state.center: topo.center}
            env.update(zip(frees, combo))
            if _holds(state.formula, env, topo, domain, None, counter):
                rows.add(tuple(topo.rep(env[v]) for v in self.order))
        state.rows = frozenset(rows)
        state.evaluated = True
        return counter[0]

    def collect(self, state: _FOLocState, ctx: NodeContext) -> FOLocReport:
        return FOLocReport(topology=state.topology, rows=state.rows)

    def payload_bits(self, payload: Any, enc: EncodingParams) -> int:
        return local_payload_bits(payload, enc)


def run_qe_fo_loc(
    net: Network,
    formula: Union[Formula, str],
    requester: int,
    *,
    order: Optional[Sequence[str]] = None,
    order_seed: int = 0,
    round_cap: Optional[int] = None,
    with_placement: bool = False,
):
    """Evaluate a radius-bounded first-order query distributively; every node
    answers for itself as the center and the relation is the union of the
    resolved per-node answer fragments.  With `with_placement` the resolved
    per-node fragments are returned as a third value."""
    f = parse_formula(formula) if isinstance(formula, str) else formula
    if requester not in net.graph.adj:
        raise EngineError(f"requester {requester} is not a node")
    center, k = _local_shape(f, mode_kind=net.mode.kind)
    _check_free_guards(f, center, k)
    fv = free_vars(f)
    ordered = tuple(order) if order is not None else fv
    if sorted(ordered) != sorted(set(ordered)) or set(ordered) != set(fv):
        raise EngineError(
            f"variable order {ordered!r} does not match free variables {fv!r}"
        )
    delta = net.graph.diameter
    cap = round_cap if round_cap is not None else delta + 2 * k + 16
    engine = FOLocEngine(ordered, net.mode.kind)
    result, metrics = simnet.run(
        net, engine, init={requester: f}, order_seed=order_seed, round_cap=cap
    )
    rows: set[tuple[int, ...]] = set()
    placement: dict[int, frozenset[tuple[int, ...]]] = {}
    for a, rep in result.per_node.items():
        mine = {
            tuple(resolve_trace(net, a, t) for t in row) for row in rep.rows
        }
        placement[a] = frozenset(mine)
        rows |= mine
    rel = Relation(len(ordered), frozenset(rows))
    if with_placement:
        return rel, metrics, placement
    return rel, metrics


# ----------------------------------------------------------- fixpoint engine


@dataclass(frozen=True)
class FPLocReport:
    topology: Optional[LocalTopology]
    tuples: frozenset[tuple[PortTrace, ...]]
    history: tuple[frozenset[tuple[PortTrace, ...]], ...]
    awake_windows: tuple[int, ...]


class _TableTruth:
    """Resolves ground table atoms during one evaluation window: the node's
    own committed rows directly, remote rows from the answers that came back
    this window."""

    __slots__ = ("name", "center", "topo", "table", "answers")

    def __init__(self, name, center, topo, table, answers):
        self.name = name
        self.center = center
        self.topo = topo
        self.table = table
        self.answers = answers

    def __call__(self, holder: int, args: tuple[int, ...]) -> bool:
        if holder == self.center:
            return tuple(self.topo.rep(c) for c in args) in self.table
        key = _query_key(self.topo, holder, args)
        truth = self.answers.get(key)
        if truth is None:
            raise EngineError("table query went unanswered within its window")
        return truth


def _query_key(
    topo: LocalTopology, holder: int, args: tuple[int, ...]
) -> tuple[PortTrace, tuple[PortTrace, ...]]:
    route = topo.rep(holder)
    back = reverse_trace(route)
    names = tuple(reduce_trace(back + topo.rep(c)) for c in args)
    return route, names


class _FPLocState:
    __slots__ = ("query", "k", "c0", "f0", "tau", "adopted", "relay",
                 "collector", "topology", "domain", "table", "buffer",
                 "history", "awake", "awake_windows", "window", "had_new",
                 "inform_heard", "max_relayed", "answers")

    def __init__(self, collector: _Collector) -> None:
        self.query: Optional[FixpointQuery] = None
        self.k = 0
        self.c0 = 0
        self.f0 = 0
        self.tau = 0
        self.adopted = False
        self.relay = False
        self.collector = collector
        self.topology: Optional[LocalTopology] = None
        self.domain: tuple[int, ...] = ()
        self.table: set[tuple[PortTrace, ...]] = set()
        self.buffer: set[tuple[PortTrace, ...]] = set()
        self.history: list[frozenset[tuple[PortTrace, ...]]] = []
        self.awake = False
        self.awake_windows: list[int] = []
        self.window = -1
        self.had_new = False
        self.inform_heard = False
        self.max_relayed = 0
        self.answers: dict = {}


class FPLocEngine(NodeEngine):
    """Radius-bounded inflationary fixpoint evaluation: collect the doubled
    neighborhood once, then run synchronized evaluation windows in which
    remote table fragments are consulted by source-routed, trace-named
    queries, new rows are committed at the window boundary, and nearby nodes
    are woken by bounded informs."""

    def __init__(self, mode_kind: str):
        self.mode_kind = mode_kind

    def start(self, ctx: NodeContext) -> _FPLocState:
        return _FPLocState(_Collector(_node_nonce(ctx)))

    def inject(self, state: _FPLocState, ctx: NodeContext, payload: Any) -> Any:
        self._adopt(state, ctx, print_fixpoint(payload))
        return state

    def _adopt(self, state: _FPLocState, ctx: NodeContext, text: str) -> None:
        if state.adopted:
            return
        q = parse_fixpoint(text)
        k = _validate_fp_local(q, self.mode_kind)
        state.query = q
        state.k = k
        state.c0 = ctx.diameter + 2
        state.f0 = state.c0 + 4 * k + 3
        state.tau = 3 * k + 2
        state.adopted = True
        state.relay = True

    def step(
        self,
        state: _FPLocState,
        ctx: NodeContext,
        round_no: int,
        inbox: Sequence[Message],
    ) -> StepResult:
        out: list[tuple[int, Any]] = []
        work = len(inbox)
        iterating = state.topology is not None
        boundary = (
            iterating
            and round_no >= state.f0
            and (round_no - state.f0) % state.tau == 0
        )
        if boundary:
            self._cross_boundary(state)
        if (
            state.adopted
            and state.topology is None
            and round_no >= state.f0
        ):
            raise EngineError("collection did not finish within its window")
        for m in inbox:
            if m.payload[0] == "C":
                state.collector.note_collect(m)
        for m in inbox:
            work += self._dispatch(state, ctx, m, out)
        if state.relay:
            state.relay = False
            assert state.query is not None
            out.extend(broadcast(ctx, ("lq", print_fixpoint(state.query))))
        if (
            state.adopted
            and round_no == state.c0
            and not state.collector.launched
        ):
            state.collector.launch(ctx, 2 * state.k, out)
        if state.collector.done and state.topology is None:
            self._finish_collection(state, ctx)
        if state.topology is not None and round_no >= state.f0:
            r = (round_no - state.f0) % state.tau
            if r == 0 and state.awake:
                work += self._open_window(state, out)
            elif r == 2 * state.k + 1 and state.awake:
                work += self._finalize_window(state, ctx, out)
        busy = state.adopted and (
            state.topology is None or state.awake or bool(state.buffer)
        )
        return StepResult(
            state=state,
            sends=tuple(out),
            quiescent=not out and not busy,
            steps=1 + work,
        )

    # -- phases

    def _cross_boundary(self, state: _FPLocState) -> None:
        if state.window >= 0:
            state.table |= state.buffer
            state.buffer = set()
            state.history.append(frozenset(state.table))
            state.awake = state.had_new or state.inform_heard
        else:
            state.awake = True
        state.window += 1
        state.had_new = False
        state.inform_heard = False
        state.max_relayed = 0
        state.answers = {}

    def _finish_collection(self, state: _FPLocState, ctx: NodeContext) -> None:
        topo = state.collector.build(ctx)
        state.topology = topo
        state.domain = tuple(
            i for i in topo.vertices if topo.dist(i) <= state.k
        )
        state.awake = True

    def _dispatch(
        self,
        state: _FPLocState,
        ctx: NodeContext,
        m: Message,
        out: list[tuple[int, Any]],
    ) -> int:
        tag = m.payload[0]
        if tag == "lq":
            self._adopt(state, ctx, m.payload[1])
            return 0
        if tag == "C":
            state.collector.serve_collect(ctx, m, out)
            return 0
        if tag == "R":
            state.collector.serve_reply(ctx, m, out)
            return 0
        if tag == "A":
            return self._serve_ask(state, ctx, m, out)
        if tag == "B":
            return self._serve_answer(state, m, out)
        if tag == "N":
            state.inform_heard = True
            budget = m.payload[1]
            if budget - 1 > state.max_relayed:
                state.max_relayed = budget - 1
                out.extend(broadcast(ctx, ("N", budget - 1)))
            return 0
        raise EngineError(f"unexpected message tag {tag!r}")

    def _serve_ask(
        self,
        state: _FPLocState,
        ctx: NodeContext,
        m: Message,
        out: list[tuple[int, Any]],
    ) -> int:
        _, route, j, names = m.payload
        route = tuple(route)
        if m.dst_port != route[j - 1]:
            raise EngineError("routed query strayed from its walk")
        if j < len(route):
            out.append((route[j], ("A", route, j + 2, names)))
            return 1
        topo = state.topology
        if topo is None:
            raise EngineError("table query arrived before any table exists")
        row = tuple(
            topo.rep(topo.quotient.class_index(tuple(t))) for t in names
        )
        truth = row in state.table
        back = reverse_trace(route)
        out.append((back[0], ("B", back, 2, route, names, truth)))
        return 1

    def _serve_answer(
        self, state: _FPLocState, m: Message, out: list[tuple[int, Any]]
    ) -> int:
        _, back, j, route, names, truth = m.payload
        back = tuple(back)
        if m.dst_port != back[j - 1]:
            raise EngineError("routed answer strayed from its walk")
        if j < len(back):
            out.append((back[j], ("B", back, j + 2, route, names, truth)))
            return 1
        state.answers[(tuple(route), tuple(tuple(t) for t in names))] = truth
        return 0

    def _open_window(
        self, state: _FPLocState, out: list[tuple[int, Any]]
    ) -> int:
        assert state.query is not None and state.topology is not None
        topo = state.topology
        ground: set[tuple[int, tuple[int, ...]]] = set()
        for g in subformulas(state.query.body):
            if not (isinstance(g, Atom) and g.pred == state.query.name):
                continue
            vars_in: list[str] = []
            for t in g.args:
                if t.name not in vars_in:
                    vars_in.append(t.name)
            center_var = state.query.vars[0]
            enum_vars = [v for v in vars_in if v != center_var]
            for combo in itertools.product(
                state.domain, repeat=len(enum_vars)
            ):
                env = dict(zip(enum_vars, combo))
                env[center_var] = topo.center
                ground.add(
                    (
                        env[g.args[0].name],
                        tuple(env[t.name] for t in g.args[1:]),
                    )
                )
        sent = 0
        for holder, args in sorted(ground):
            if holder == topo.center:
                continue
            route, names = _query_key(topo, holder, args)
            key = (route, names)
            if key in state.answers:
                continue
            state.answers[key] = None
            out.append((route[0], ("A", route, 2, names)))
            sent += 1
        return sent

    def _finalize_window(
        self,
        state: _FPLocState,
        ctx: NodeContext,
        out: list[tuple[int, Any]],
    ) -> int:
        assert state.query is not None and state.topology is not None
        q = state.query
        topo = state.topology
        truth = _TableTruth(
            q.name, topo.center, topo, state.table, state.answers
        )
        counter = [0]
        derived: set[tuple[PortTrace, ...]] = set()
        rest = q.vars[1:]
        for combo in itertools.product(state.domain, repeat=len(rest)):
            env = {q.vars[0]: topo.center}
            env.update(zip(rest, combo))
            if _holds(q.body, env, topo, state.domain, truth, counter):
                derived.add(tuple(topo.rep(env[v]) for v in rest))
        state.buffer = derived - state.table
        state.had_new = bool(state.buffer)
        state.awake_windows.append(state.window)
        if state.had_new:
            out.extend(broadcast(ctx, ("N", state.k)))
        state.awake = False
        return counter[0]

    def collect(self, state: _FPLocState, ctx: NodeContext) -> FPLocReport:
        return FPLocReport(
            topology=state.topology,
            tuples=frozenset(state.table),
            history=tuple(state.history),
            awake_windows=tuple(state.awake_windows),
        )

    def payload_bits(self, payload: Any, enc: EncodingParams) -> int:
        return local_payload_bits(payload, enc)


def default_fp_loc_round_cap(net: Network, q: FixpointQuery) -> int:
    assert q.radius is not None
    g = net.graph
    ell = len(q.vars) - 1
    total = sum(
        max(1, len(g.neighborhood_nodes(a, q.radius))) ** ell for a in g.nodes
    )
    tau = 3 * q.radius + 2
    f0 = (g.diameter + 2) + 4 * q.radius + 3
    return f0 + (total + 3) * tau + 8


def run_qe_fp_loc(
    net: Network,
    query: Union[FixpointQuery, str],
    requester: int,
    *,
    order_seed: int = 0,
    round_cap: Optional[int] = None,
    with_placement: bool = False,
):
    """Evaluate a radius-bounded inflationary fixpoint query distributively;
    the relation is the union of the resolved per-node table fragments.
    With `with_placement` the resolved fragments are returned per node."""
    q = parse_fixpoint(query) if isinstance(query, str) else query
    if requester not in net.graph.adj:
        raise EngineError(f"requester {requester} is not a node")
    _validate_fp_local(q, net.mode.kind)
    cap = round_cap if round_cap is not None else default_fp_loc_round_cap(
        net, q
    )
    engine = FPLocEngine(net.mode.kind)
    result, metrics = simnet.run(
        net, engine, init={requester: q}, order_seed=order_seed, round_cap=cap
    )
    rows: set[tuple[int, ...]] = set()
    placement: dict[int, frozenset[tuple[int, ...]]] = {}
    for a, rep in result.per_node.items():
        mine = {
            (a,) + tuple(resolve_trace(net, a, t) for t in row)
            for row in rep.tuples
        }
        placement[a] = frozenset(mine)
        rows |= mine
    rel = Relation(len(q.vars), frozenset(rows))
    if with_placement:
        return rel, metrics, placement
    return rel, metrics


# ------------------------------------------------------------- message sizes


def _trace_bits(trace: Sequence[int], enc: EncodingParams) -> int:
    return 8 + enc.port_bits * len(trace)


def local_payload_bits(payload: tuple, enc: EncodingParams) -> int:
    """Wire size of a local-engine payload.  No field grows with the network
    size: traces and counters are bounded by the query radius and the degree
    bound, and nonces have a fixed width."""
    tag = payload[0]
    if tag == "lq":
        return enc.tag_bits + enc.text_bits(payload[1])
    if tag == "C":
        return (
            enc.tag_bits
            + _NONCE_BITS
            + _SMALL_COUNTER_BITS
            + _trace_bits(payload[3], enc)
        )
    if tag == "R":
        bits = enc.tag_bits + _NONCE_BITS + _trace_bits(payload[2], enc)
        for t, lst, attrs, label in payload[3]:
            bits += _trace_bits(t, enc)
            bits += sum(_trace_bits(u, enc) for u in lst)
            bits += sum(8 + enc.text_bits(s) for s in attrs)
            bits += 1 + (enc.id_bits if label is not None else 0)
        return bits
    if tag == "A":
        return (
            enc.tag_bits
            + _trace_bits(payload[1], enc)
            + _SMALL_COUNTER_BITS
            + sum(_trace_bits(t, enc) for t in payload[3])
        )
    if tag == "B":
        return (
            enc.tag_bits
            + _trace_bits(payload[1], enc)
            + _SMALL_COUNTER_BITS
            + _trace_bits(payload[3], enc)
            + sum(_trace_bits(t, enc) for t in payload[4])
            + 1
        )
    if tag == "N":
        return enc.tag_bits + _SMALL_COUNTER_BITS
    raise EngineError(f"unknown payload tag {tag!r}")
