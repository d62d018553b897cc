"""Distributed evaluation of inflationary fixpoint queries.

The computation alternates globally synchronized windows driven by the shared
round counter:

* Query flood: the requester broadcasts the printed fixpoint query with a
  hop budget of one less than the diameter; every node relays it once while
  the budget lasts, so by round ``1 + delta`` every node holds the query.
* Evaluation window (one per iteration): every node starts a fresh
  first-order core for the query body with its own id substituted for the
  last declared variable, the remaining variables resolved by the usual
  open-query machinery.  Atoms over the relation being computed are decided
  by the node named in their first argument, against the table committed in
  earlier iterations.  Positive tuples collect in the core until the window
  closes, then move into the committed table all at once, so every node
  switches stages in the same round.
* Inform window: a node that committed new tuples floods a small notice
  (relayed at most once per node per iteration).  At the end of the window
  each node continues to the next iteration if it committed new tuples or
  heard a notice, and halts otherwise; because notices reach every node
  within the window, all nodes make the same choice.

The committed tables grow exactly like the centralized stages: the union of
the per-node tables after iteration ``i`` equals stage ``i+1`` of the
centralized inflationary evaluation.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Mapping, Optional, Sequence, Union

from . import simnet
from .engine_fo import (
    AuxAtoms,
    EngineError,
    FOCore,
    _send_order,
    _validate_query,
    fo_payload_bits,
)
from .logic import (
    EDGE_PRED,
    FixpointQuery,
    free_vars,
    parse_fixpoint,
    print_fixpoint,
    stats,
    substitute,
)
from .oracle import Relation
from .simnet import (
    EncodingParams,
    Message,
    Metrics,
    Network,
    NodeContext,
    NodeEngine,
    StepResult,
    broadcast,
)


@dataclass(frozen=True)
class FPNodeReport:
    """Per-node outcome: the locally committed tuples, plus the table after
    every iteration (the union over nodes of ``history[i]`` is stage ``i+1``
    of the centralized evaluation)."""

    tuples: frozenset[tuple[int, ...]]
    history: tuple[frozenset[tuple[int, ...]], ...]

    @property
    def iterations(self) -> int:
        return len(self.history)


class _TableAtoms(AuxAtoms):
    """Decides atoms over the relation being computed and over any stored
    input relations: the node named by the first argument answers from its
    fragment, closed-world."""

    def __init__(
        self,
        name: str,
        self_id: int,
        committed: set[tuple[int, ...]],
        stored: Optional[Mapping[str, frozenset[tuple[int, ...]]]] = None,
    ):
        self.stored = {p: frozenset(ts) for p, ts in (stored or {}).items()}
        self.preds = frozenset({name}) | frozenset(self.stored)
        self.name = name
        self.self_id = self_id
        self.committed = committed

    def decide(self, pred: str, args: tuple[int, ...]) -> Optional[bool]:
        if args[0] != self.self_id:
            return None
        if pred != self.name:
            return args in self.stored[pred]
        return args in self.committed


def evaluation_window(w: int, v: int, delta: int) -> int:
    """Length of one per-iteration evaluation window.  The clock budget
    ``2*delta*w`` covers it whenever the query has at least two
    variables-or-constants; the second term is the exact deadline horizon of
    the embedded first-order evaluation and keeps degenerate queries sound.
    """
    return max(2 * delta * w, 1 + (v + 1) * delta)


def _fp_send_order(p: tuple) -> tuple:
    if p[0] == "FPQ":
        return (0, 0, "", p[1])
    if p[0] == "I":
        return (1, p[1], "", "")
    return (2, p[1]) + _send_order(p[2])


class FPCore:
    """One node's share of the distributed fixpoint evaluation."""

    def __init__(
        self,
        self_id: int,
        neighbors: frozenset[int],
        self_unary: frozenset[str],
        delta: int,
        stored: Optional[Mapping[str, frozenset[tuple[int, ...]]]] = None,
    ):
        self.self_id = self_id
        self.neighbors = frozenset(neighbors)
        self.self_unary = frozenset(self_unary)
        self.delta = delta
        self.stored = {p: frozenset(ts) for p, ts in (stored or {}).items()}
        self.query: Optional[FixpointQuery] = None
        self.window = 0  # evaluation window length, set with the query
        self.phase = "wait"  # wait -> run -> done
        self.it = -1  # index of the current iteration, -1 before the first
        self.core: Optional[FOCore] = None
        self.committed: set[tuple[int, ...]] = set()
        self.history: list[frozenset[tuple[int, ...]]] = []
        self.new_local = False
        self.inform_heard = False
        self.informs_seen: set[int] = set()
        self.out: list[tuple] = []
        self.work = 0

    # -- schedule (absolute rounds, identical on every node)

    def _start_round(self, i: int) -> int:
        return (1 + self.delta) + i * (self.window + self.delta)

    def _commit_round(self, i: int) -> int:
        return self._start_round(i) + self.window

    # -- query adoption

    def adopt(self, q: FixpointQuery) -> None:
        if self.query is not None:
            return
        st = stats(q)
        self.query = q
        self.window = evaluation_window(max(1, st.w), st.v, self.delta)
        self.phase = "run"
        self.work += 1

    def seed(self, q: FixpointQuery) -> None:
        """Requester entry point: adopt the query and start its flood."""
        text = print_fixpoint(q)
        self.adopt(parse_fixpoint(text))
        if self.delta >= 1:
            self.out.append(("FPQ", text, self.delta - 1))

    # -- iteration bookkeeping

    def _begin_iteration(self, i: int, round_no: int) -> None:
        q = self.query
        assert q is not None
        if self.core is not None:
            self.work += self.core.work
        self.it = i
        self.new_local = False
        self.inform_heard = False
        self.core = FOCore(
            self_id=self.self_id,
            neighbors=self.neighbors,
            self_unary=self.self_unary,
            delta=self.delta,
            order=q.vars,
            aux=_TableAtoms(
                q.name, self.self_id, set(self.committed), self.stored
            ),
            round_offset=self._start_round(i) - 1,
        )
        self.core.inject_query(
            substitute(q.body, q.vars[-1], self.self_id), (self.self_id,)
        )

    def _commit(self) -> None:
        assert self.core is not None
        fresh = set(self.core.stored) - self.committed
        self.committed |= fresh
        self.history.append(frozenset(self.committed))
        self.new_local = bool(fresh)
        self.work += 1
        if fresh and self.delta >= 1:
            self.out.append(("I", self.it, self.delta - 1))

    # -- round interface

    def ingest(self, payloads: Sequence[tuple], round_no: int) -> None:
        inform_hops = -1
        inner: list[tuple] = []
        for p in payloads:
            if p[0] == "FPQ":
                if self.query is None:
                    self.adopt(parse_fixpoint(p[1]))
                    if p[2] > 0:
                        self.out.append(("FPQ", p[1], p[2] - 1))
            elif p[0] == "I":
                if p[1] == self.it:
                    inform_hops = max(inform_hops, p[2])
            elif p[0] == "F":
                if p[1] == self.it:
                    inner.append(p[2])
        if inform_hops >= 0 and self.it not in self.informs_seen:
            self.informs_seen.add(self.it)
            self.inform_heard = True
            self.work += 1
            if inform_hops > 0:
                self.out.append(("I", self.it, inform_hops - 1))
        if inner and self.core is not None:
            self.core.ingest(inner, round_no)

    def advance(self, round_no: int) -> None:
        """Run the scheduled actions for this round: finish the current
        evaluation window, commit, and decide whether to continue."""
        if self.phase != "run":
            return
        if self.core is not None:
            self.core.sweep(round_no)
            if round_no == self._commit_round(self.it):
                self._commit()
        nxt = self.it + 1
        if round_no == self._start_round(nxt):
            if nxt > 0 and not (self.new_local or self.inform_heard):
                self.work += self.core.work if self.core is not None else 0
                self.core = None
                self.phase = "done"
                self.out = []
                return
            self._begin_iteration(nxt, round_no)
            self.core.sweep(round_no)

    def flush(self) -> list[tuple]:
        out = list(self.out)
        self.out = []
        if self.core is not None:
            out.extend(("F", self.it, p) for p in self.core.flush())
        return sorted(out, key=_fp_send_order)

    def total_work(self) -> int:
        return self.work + (self.core.work if self.core is not None else 0)

    def report(self) -> FPNodeReport:
        return FPNodeReport(
            tuples=frozenset(self.committed), history=tuple(self.history)
        )


# ------------------------------------------------------------ simnet engine


class FPQueryEngine(NodeEngine):
    """Simulator adapter: one FPCore per node; the requester is seeded with
    the query, everyone else learns it from the flood.  ``aux_placed`` maps
    node id -> relation name -> the fragment that node holds (tuples whose
    first coordinate names the node), modelling relations computed and
    stored by an earlier query."""

    def __init__(
        self,
        aux_placed: Optional[
            Mapping[int, Mapping[str, frozenset[tuple[int, ...]]]]
        ] = None,
    ):
        self.aux_placed = dict(aux_placed or {})

    def start(self, ctx: NodeContext) -> FPCore:
        if ctx.node_id is None or ctx.neighbor_ids is None:
            raise EngineError(
                "the fixpoint query engine needs globally unique node ids"
            )
        return FPCore(
            self_id=ctx.node_id,
            neighbors=frozenset(ctx.neighbor_ids.values()),
            self_unary=ctx.self_unary,
            delta=ctx.diameter,
            stored=self.aux_placed.get(ctx.node_id),
        )

    def inject(self, state: FPCore, ctx: NodeContext, payload: Any) -> FPCore:
        state.seed(payload)
        return state

    def step(
        self,
        state: FPCore,
        ctx: NodeContext,
        round_no: int,
        inbox: Sequence[Message],
    ) -> StepResult:
        before = state.total_work()
        state.ingest([m.payload for m in inbox], round_no)
        state.advance(round_no)
        outs = state.flush()
        sends: list[tuple[int, Any]] = []
        for p in outs:
            sends.extend(broadcast(ctx, p))
        quiescent = state.phase == "done" and not sends
        return StepResult(
            state=state,
            sends=tuple(sends),
            quiescent=quiescent,
            steps=1 + state.total_work() - before,
        )

    def collect(self, state: FPCore, ctx: NodeContext) -> FPNodeReport:
        return state.report()

    def payload_bits(self, payload: Any, enc: EncodingParams) -> int:
        if payload[0] == "FPQ":
            return enc.tag_bits + enc.text_bits(payload[1]) + enc.counter_bits
        if payload[0] == "I":
            return enc.tag_bits + 2 * enc.counter_bits
        return enc.tag_bits + enc.counter_bits + fo_payload_bits(payload[2], enc)


# -------------------------------------------------------------- entry point


def validate_fixpoint(
    q: FixpointQuery,
    net: Network,
    aux: Optional[Mapping[str, Relation]] = None,
) -> None:
    if q.radius is not None:
        raise EngineError(
            "radius-bounded fixpoint queries belong to the local-fragment engines"
        )
    if q.name == EDGE_PRED:
        raise EngineError(f"fixpoint relation may not shadow {EDGE_PRED!r}")
    if set(free_vars(q.body)) != set(q.vars):
        raise EngineError(
            "every declared fixpoint variable must occur in the body"
        )
    for v in q.vars:
        if v.startswith("q") and v[1:].isdigit():
            raise EngineError(f"declared variable name {v!r} is reserved")
    allow = {q.name: q.arity}
    for pred, rel in (aux or {}).items():
        if pred in (EDGE_PRED, q.name):
            raise EngineError(f"stored relation may not be named {pred!r}")
        if rel.arity < 1:
            raise EngineError(
                "stored relations need a first coordinate naming the holder"
            )
        nodes = set(net.graph.adj)
        for t in rel.tuples:
            if t[0] not in nodes:
                raise EngineError(
                    f"stored tuple {t} is not held by any node"
                )
        allow[pred] = rel.arity
    _validate_query(q.body, net, allow=allow)


def default_fp_round_cap(net: Network, q: FixpointQuery) -> int:
    st = stats(q)
    delta = net.graph.diameter
    window = evaluation_window(max(1, st.w), st.v, delta)
    horizon = net.graph.n**q.arity + 2
    return (1 + delta) + horizon * (window + delta) + window + delta + 8


def run_qe_fp(
    net: Network,
    query: Union[FixpointQuery, str],
    requester: int,
    *,
    order_seed: int = 0,
    round_cap: Optional[int] = None,
    with_placement: bool = False,
    aux: Optional[Mapping[str, Relation]] = None,
):
    """Evaluate an inflationary fixpoint query distributively; the relation
    is the union of the per-node committed fragments.  With
    `with_placement` the per-node fragments are returned as a third value.
    ``aux`` supplies already-computed relations, stored at the node named by
    each tuple's first coordinate (as a preceding query run leaves them)."""
    q = parse_fixpoint(query) if isinstance(query, str) else query
    if net.mode.kind != "global":
        raise EngineError(
            "the fixpoint query engine needs globally unique node ids"
        )
    if requester not in net.graph.adj:
        raise EngineError(f"requester {requester} is not a node")
    validate_fixpoint(q, net, aux)
    cap = round_cap if round_cap is not None else default_fp_round_cap(net, q)
    aux_placed: dict[int, dict[str, frozenset[tuple[int, ...]]]] = {}
    for pred, rel in (aux or {}).items():
        for t in rel.tuples:
            aux_placed.setdefault(t[0], {}).setdefault(pred, set())
        for a in net.graph.adj:
            frag = frozenset(t for t in rel.tuples if t[0] == a)
            aux_placed.setdefault(a, {})[pred] = frag
    engine = FPQueryEngine(aux_placed)
    result, metrics = simnet.run(
        net, engine, init={requester: q}, order_seed=order_seed, round_cap=cap
    )
    gathered: set[tuple[int, ...]] = set()
    for rep in result.per_node.values():
        gathered |= rep.tuples
    rel = Relation(q.arity, frozenset(gathered))
    if with_placement:
        placement = {
            a: frozenset(rep.tuples) for a, rep in result.per_node.items()
        }
        return rel, metrics, placement
    return rel, metrics
