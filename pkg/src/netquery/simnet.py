"""Synchronous round-based message-passing network simulator.

Nodes run deterministic automata over port-numbered channels.  A round is a
computation phase (every node steps on its in-buffer) followed by an atomic
delivery phase (all out-buffers flushed to neighbor in-buffers, each
in-buffer permuted by the delivery-order seed).  The run terminates when a
computation phase leaves every out-buffer empty and every automaton
quiescent.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Optional, Sequence

from .oracle import Graph, GraphError, make_graph


class SimError(ValueError):
    pass


class RoundCapError(RuntimeError):
    """Round limit exceeded; carries the partial metrics and results."""

    def __init__(self, message: str, metrics: "Metrics", results: Mapping[int, Any]):
        super().__init__(message)
        self.metrics = metrics
        self.results = results


# ---------------------------------------------------------------- identity


@dataclass(frozen=True)
class IdentityMode:
    """What a node may know about itself and its neighborhood: globally
    unique ids, k-locally-consistent labels, or nothing but port numbers."""

    kind: str  # "global" | "local-consistent" | "anonymous"
    k: Optional[int] = None
    labels: Optional[Mapping[int, int]] = None

    def __post_init__(self) -> None:
        if self.kind not in ("global", "local-consistent", "anonymous"):
            raise SimError(f"unknown identity mode {self.kind!r}")
        if self.kind == "local-consistent":
            if self.k is None or self.k < 1:
                raise SimError("local-consistent mode needs a radius k >= 1")
            if self.labels is None:
                raise SimError("local-consistent mode needs a label map")


GLOBAL_IDS = IdentityMode("global")
ANONYMOUS = IdentityMode("anonymous")


def parse_identity_mode(
    text: str, labels: Optional[Mapping[int, int]] = None
) -> IdentityMode:
    if text == "global":
        return GLOBAL_IDS
    if text == "anonymous":
        return ANONYMOUS
    if text.startswith("local-consistent:"):
        k = int(text.split(":", 1)[1])
        return IdentityMode("local-consistent", k=k, labels=labels)
    raise SimError(f"unknown identity mode {text!r}")


def check_locally_consistent(g: Graph, labels: Mapping[int, int], k: int) -> bool:
    """True when any two distinct nodes within distance k of a common node
    carry distinct labels."""
    for a in g.nodes:
        seen: dict[int, int] = {}
        for b in g.neighborhood_nodes(a, k):
            lb = labels[b]
            if lb in seen and seen[lb] != b:
                return False
            seen[lb] = b
    return True


# ---------------------------------------------------------------- encoding


@dataclass(frozen=True)
class EncodingParams:
    """Canonical bit-cost model: node ids cost ceil(log2 n) bits, port
    numbers ceil(log2 D) bits, text payloads 8 bits per character, message
    tags 8 bits, counters a fixed width wide enough for round numbers."""

    id_bits: int
    port_bits: int
    counter_bits: int
    tag_bits: int = 8

    def text_bits(self, text: str) -> int:
        return 8 * len(text)


def encoding_for(n: int, degree_bound: int) -> EncodingParams:
    id_bits = max(1, math.ceil(math.log2(max(2, n))))
    port_bits = max(1, math.ceil(math.log2(max(2, degree_bound))))
    return EncodingParams(id_bits, port_bits, counter_bits=2 * id_bits + 8)


# ----------------------------------------------------------------- network


@dataclass(frozen=True)
class Network:
    graph: Graph
    ports: Mapping[int, tuple[int, ...]]  # node -> neighbor by port-1
    port_to: Mapping[int, Mapping[int, int]]  # node -> {neighbor: port}
    mode: IdentityMode
    enc: EncodingParams

    @property
    def n(self) -> int:
        return self.graph.n

    def degree(self, a: int) -> int:
        return len(self.ports[a])

    def neighbor_on_port(self, a: int, port: int) -> int:
        try:
            return self.ports[a][port - 1]
        except IndexError:
            raise SimError(f"node {a} has no port {port}") from None


def make_network(
    g: Graph, mode: IdentityMode = GLOBAL_IDS, port_seed: int = 0
) -> Network:
    if mode.kind == "local-consistent":
        labels = mode.labels or {}
        missing = [a for a in g.nodes if a not in labels]
        if missing:
            raise SimError(f"label map misses nodes {missing}")
        assert mode.k is not None
        if not check_locally_consistent(g, labels, mode.k):
            raise SimError(
                f"label map is not {mode.k}-locally consistent on this graph"
            )
    ports: dict[int, tuple[int, ...]] = {}
    port_to: dict[int, dict[int, int]] = {}
    for a in g.nodes:
        neighbors = list(g.adj[a])
        rng = random.Random(port_seed * 1_000_003 + a)
        rng.shuffle(neighbors)
        ports[a] = tuple(neighbors)
        port_to[a] = {b: i + 1 for i, b in enumerate(neighbors)}
    return Network(g, ports, port_to, mode, encoding_for(g.n, g.degree_bound))


def load_network(
    text: str,
    mode: IdentityMode = GLOBAL_IDS,
    port_seed: int = 0,
    degree_bound: Optional[int] = None,
) -> Network:
    """Parse the edge-list format: first line `n m`, then m lines `u v`,
    then optionally a line `@facts` followed by `Pred node` lines."""
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines:
        raise SimError("empty network file")
    head = lines[0].split()
    if len(head) != 2:
        raise SimError(f"expected 'n m' on the first line, got {lines[0]!r}")
    try:
        n, m = int(head[0]), int(head[1])
    except ValueError:
        raise SimError(f"expected integers on the first line, got {lines[0]!r}")
    if len(lines) < 1 + m:
        raise SimError(f"expected {m} edge lines, found {len(lines) - 1}")
    edges = []
    for ln in lines[1 : 1 + m]:
        parts = ln.split()
        if len(parts) != 2:
            raise SimError(f"malformed edge line {ln!r}")
        edges.append((int(parts[0]), int(parts[1])))
    unary: dict[str, set[int]] = {}
    rest = lines[1 + m :]
    if rest:
        if rest[0] != "@facts":
            raise SimError(f"unexpected line {rest[0]!r} (expected '@facts')")
        for ln in rest[1:]:
            parts = ln.split()
            if len(parts) != 2:
                raise SimError(f"malformed fact line {ln!r}")
            unary.setdefault(parts[0], set()).add(int(parts[1]))
    g = make_graph(
        edges, nodes=range(1, n + 1), degree_bound=degree_bound, unary=unary
    )
    return make_network(g, mode=mode, port_seed=port_seed)


def network_text(g: Graph) -> str:
    """Render a graph in the edge-list file format."""
    edge_list = list(g.edges())
    out = [f"{g.n} {len(edge_list)}"]
    out.extend(f"{u} {v}" for u, v in edge_list)
    if g.unary:
        out.append("@facts")
        for pred in sorted(g.unary):
            for a in sorted(g.unary[pred]):
                out.append(f"{pred} {a}")
    return "\n".join(out) + "\n"


# ----------------------------------------------------------------- context


@dataclass(frozen=True)
class NodeContext:
    """Everything a node automaton may read: metadata (size bound and
    diameter always; id only in global mode; label in labeled modes), the
    port list, mode-dependent neighbor knowledge, and input facts."""

    node: int  # simulator-internal true id (engines must honor the mode)
    node_id: Optional[int]  # exposed id, None unless mode is global
    label: Optional[int]  # exposed label (global: the id; anonymous: None)
    ports: tuple[int, ...]  # port numbers 1..deg
    neighbor_ids: Optional[Mapping[int, int]]  # port -> id, global mode only
    n_bound: int
    diameter: int
    degree_bound: int
    self_unary: frozenset[str]
    global_unary: Mapping[str, frozenset[int]]  # readable in global mode
    enc: EncodingParams

    @property
    def degree(self) -> int:
        return len(self.ports)


def _context_for(net: Network, a: int) -> NodeContext:
    g = net.graph
    mode = net.mode
    node_id = a if mode.kind == "global" else None
    if mode.kind == "global":
        label: Optional[int] = a
    elif mode.kind == "local-consistent":
        assert mode.labels is not None
        label = mode.labels[a]
    else:
        label = None
    neighbor_ids = (
        {p: net.ports[a][p - 1] for p in range(1, net.degree(a) + 1)}
        if mode.kind == "global"
        else None
    )
    self_unary = frozenset(p for p, members in g.unary.items() if a in members)
    global_unary = (
        {p: frozenset(m) for p, m in g.unary.items()}
        if mode.kind == "global"
        else {}
    )
    return NodeContext(
        node=a,
        node_id=node_id,
        label=label,
        ports=tuple(range(1, net.degree(a) + 1)),
        neighbor_ids=neighbor_ids,
        n_bound=g.n,
        diameter=g.diameter,
        degree_bound=g.degree_bound,
        self_unary=self_unary,
        global_unary=global_unary,
        enc=net.enc,
    )


# ---------------------------------------------------------------- messages


@dataclass(frozen=True)
class Message:
    payload: Any
    src_port: int  # port at the sender
    dst_port: int  # arrival port at the receiver
    size_bits: int


@dataclass
class NodeConfig:
    state: Any
    in_buffer: list[Message] = field(default_factory=list)
    out_buffer: list[tuple[int, Any]] = field(default_factory=list)  # (port, payload)
    step_counter: int = 0


@dataclass(frozen=True)
class StepResult:
    state: Any
    sends: tuple[tuple[int, Any], ...]  # (port, payload)
    quiescent: bool
    steps: int = 1


class NodeEngine:
    """Deterministic node automaton interface."""

    def start(self, ctx: NodeContext) -> Any:
        raise NotImplementedError

    def inject(self, state: Any, ctx: NodeContext, payload: Any) -> Any:
        raise SimError(f"{type(self).__name__} does not accept query injection")

    def step(
        self,
        state: Any,
        ctx: NodeContext,
        round_no: int,
        inbox: Sequence[Message],
    ) -> StepResult:
        raise NotImplementedError

    def collect(self, state: Any, ctx: NodeContext) -> Any:
        raise NotImplementedError

    def payload_bits(self, payload: Any, enc: EncodingParams) -> int:
        raise NotImplementedError


def broadcast(ctx: NodeContext, payload: Any) -> list[tuple[int, Any]]:
    """One logical broadcast: a copy on every port."""
    return [(p, payload) for p in ctx.ports]


# ----------------------------------------------------------------- metrics


@dataclass(frozen=True)
class Metrics:
    dist_time: int
    msgs_per_node: Mapping[int, int]
    max_msg_bits: int
    max_in_steps_per_round: int

    @property
    def max_msgs_per_node(self) -> int:
        return max(self.msgs_per_node.values(), default=0)

    @property
    def total_msgs(self) -> int:
        return sum(self.msgs_per_node.values())


def metrics_report(metrics: Metrics, fmt: str = "table") -> str:
    rows: list[tuple[str, str, int]] = [
        ("IN-TIME/ROUND", "", metrics.max_in_steps_per_round),
        ("DIST-TIME", "", metrics.dist_time),
        ("MSG-SIZE", "", metrics.max_msg_bits),
    ]
    for node in sorted(metrics.msgs_per_node):
        rows.append(("#MSG/NODE", str(node), metrics.msgs_per_node[node]))
    if fmt == "csv":
        out = ["measure,node,value"]
        out.extend(f"{m},{n},{v}" for m, n, v in rows)
        return "\n".join(out) + "\n"
    if fmt == "table":
        out = []
        for m, n, v in rows:
            name = f"{m}[{n}]" if n else m
            out.append(f"{name:<18} {v:>10}")
        return "\n".join(out) + "\n"
    raise SimError(f"unknown report format {fmt!r}")


# --------------------------------------------------------------------- run


@dataclass(frozen=True)
class DistributedResult:
    per_node: Mapping[int, Any]


def run(
    net: Network,
    engine: NodeEngine,
    init: Optional[Mapping[int, Any]] = None,
    order_seed: int = 0,
    round_cap: int = 10_000,
    stop_on_quiescence_alone: bool = False,
) -> tuple[DistributedResult, Metrics]:
    """Drive the engine to termination.

    Default termination: after a computation phase, every out-buffer is
    empty and every node is quiescent.  With stop_on_quiescence_alone the
    out-buffers are ignored — for interpreters whose rules keep re-sending
    stored facts after the global state has stabilized.
    """
    g = net.graph
    contexts = {a: _context_for(net, a) for a in g.nodes}
    configs: dict[int, NodeConfig] = {}
    for a in g.nodes:
        state = engine.start(contexts[a])
        configs[a] = NodeConfig(state=state)
    for a, payload in (init or {}).items():
        if a not in configs:
            raise SimError(f"init references unknown node {a}")
        configs[a].state = engine.inject(configs[a].state, contexts[a], payload)

    msgs_sent = {a: 0 for a in g.nodes}
    max_bits = 0
    max_steps = 0
    deliveries = 0

    def snapshot_metrics() -> Metrics:
        return Metrics(
            dist_time=max(deliveries, 1),
            msgs_per_node=dict(msgs_sent),
            max_msg_bits=max_bits,
            max_in_steps_per_round=max_steps,
        )

    def results() -> DistributedResult:
        return DistributedResult(
            {a: engine.collect(configs[a].state, contexts[a]) for a in g.nodes}
        )

    for round_no in range(1, round_cap + 1):
        all_quiet = True
        for a in g.nodes:
            cfg = configs[a]
            inbox = tuple(cfg.in_buffer)
            cfg.in_buffer.clear()
            res = engine.step(cfg.state, contexts[a], round_no, inbox)
            cfg.state = res.state
            cfg.out_buffer = list(res.sends)
            cfg.step_counter = res.steps
            max_steps = max(max_steps, res.steps)
            if not res.quiescent:
                all_quiet = False
        have_out = any(configs[a].out_buffer for a in g.nodes)
        if all_quiet and (stop_on_quiescence_alone or not have_out):
            return results(), snapshot_metrics()
        if have_out:
            for a in g.nodes:
                cfg = configs[a]
                for port, payload in cfg.out_buffer:
                    b = net.neighbor_on_port(a, port)
                    bits = engine.payload_bits(payload, net.enc)
                    if bits < 1:
                        raise SimError("message must be at least one bit")
                    arrival = net.port_to[b][a]
                    configs[b].in_buffer.append(
                        Message(payload, src_port=port, dst_port=arrival, size_bits=bits)
                    )
                    msgs_sent[a] += 1
                    max_bits = max(max_bits, bits)
                cfg.out_buffer = []
            deliveries += 1
            for b in g.nodes:
                rng = random.Random(
                    order_seed * 2_654_435_761 + round_no * 40_503 + b
                )
                rng.shuffle(configs[b].in_buffer)
    raise RoundCapError(
        f"round cap {round_cap} exceeded without termination",
        snapshot_metrics(),
        results().per_node,
    )
