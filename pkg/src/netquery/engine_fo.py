"""Distributed evaluation of first-order queries on identified networks.

Every node runs the same automaton over the port-numbered network.  Queries
flood the network as canonically printed formulas; each node reduces a query
by instantiating the rightmost free variable, or the leftmost (outermost)
quantified variable, with its own id.  The node that performs the last free
instantiation is the holding node for the resulting tuple.  Ground relation
atoms are decided by the nodes mentioned in them, which broadcast the truth
values; every answer is relayed at most once per node, so the answer floods
reach the whole network.

The nodes share the global round counter, so every quantifier occurrence has
an absolute deadline computed from the formula structure and the diameter:
by that round all instance values are derivable everywhere, and every node
silently aggregates the quantifier (no witness means false for an
existential, true for a universal) in the same round.  Short-circuit
resolutions found before the deadline are broadcast.  This keeps all nodes'
answer tables consistent regardless of message order, and the total response
time within the clock budget of `clock_value`.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Any, Iterator, Mapping, Optional, Sequence, Union

from . import simnet
from .logic import (
    EDGE_PRED,
    And,
    Atom,
    BoolConst,
    Cmp,
    Const,
    Exists,
    Forall,
    Formula,
    InNbhd,
    Not,
    Or,
    Var,
    atoms,
    canonical_print,
    constants,
    free_vars,
    parse_formula,
    stats,
    subformulas,
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


class EngineError(ValueError):
    pass


def clock_value(w: int, delta: int) -> int:
    """Response-time budget for a query with w variables-or-constants on a
    network of diameter delta."""
    if w < 1:
        raise EngineError("clock needs a positive variable-or-constant count")
    if delta < 1:
        raise EngineError("clock needs a positive diameter")
    return 2 * delta * w


def answer_key(text: str) -> int:
    """64-bit wire key for an answer to the canonically printed query."""
    return int.from_bytes(
        hashlib.blake2b(text.encode(), digest_size=8).digest(), "big"
    )


# ------------------------------------------------------------------- tables


@dataclass
class _Leaf:
    """One outermost quantifier occurrence of a stored query, with the
    absolute round by which its value can be aggregated locally."""

    path: tuple[int, ...]
    quant: Formula  # the Exists/Forall subformula
    var: str
    is_exists: bool
    deadline: int
    instances: set[str] = field(default_factory=set)  # instance query texts


@dataclass
class _Entry:
    text: str
    formula: Formula
    level: int  # number of instantiations performed so far
    kind: str  # "B" closed query, "O" open query
    suffix: tuple[int, ...] = ()  # open: already-assigned values, leftmost first
    leaves: dict[tuple[int, ...], _Leaf] = field(default_factory=dict)
    value: Optional[bool] = None


@dataclass(frozen=True)
class FONodeReport:
    """Per-node outcome: the locally held answer tuples and table sizes."""

    tuples: frozenset[tuple[int, ...]]
    root_truth: Optional[bool]
    entry_count: int
    answer_count: int


# ------------------------------------------------------------ formula walks


def _quantifier_leaves(
    f: Formula, path: tuple[int, ...] = ()
) -> Iterator[tuple[tuple[int, ...], Formula]]:
    """Outermost quantifier occurrences with their tree positions."""
    if isinstance(f, (Exists, Forall)):
        yield (path, f)
    elif isinstance(f, Not):
        yield from _quantifier_leaves(f.body, path + (0,))
    elif isinstance(f, (And, Or)):
        for i, p in enumerate(f.parts):
            yield from _quantifier_leaves(p, path + (i,))


def _cmp_holds(op: str, a: int, b: int) -> bool:
    if op == "=":
        return a == b
    if op == "!=":
        return a != b
    return a >= b


def _atom_terms(f: Formula) -> tuple:
    if isinstance(f, Atom):
        return f.args
    if isinstance(f, Cmp):
        return (f.left, f.right)
    return ()


class AuxAtoms:
    """Extension point: extra relations decided by their responsible nodes
    (used by the fixpoint engine for the relation being computed)."""

    preds: frozenset[str] = frozenset()

    def decide(self, pred: str, args: tuple[int, ...]) -> Optional[bool]:
        raise NotImplementedError


# ----------------------------------------------------------------- the core


def _send_order(p: tuple) -> tuple:
    if p[0] == "A":
        return (0, f"{p[1]:020d}", str(int(p[2])))
    if p[1] == "B":
        return (1, f"{p[3]:06d}", p[2])
    return (2, f"{len(p[3]):06d}", p[2] + "|" + ",".join(str(x) for x in p[3]))


class FOCore:
    """One node's share of the distributed first-order evaluation.

    Deterministic and order-insensitive: a round ingests the whole inbox
    into the query/answer tables, then runs a local pass to a fixed point in
    sorted key order, then flushes the queued broadcasts in sorted order.
    """

    def __init__(
        self,
        self_id: int,
        neighbors: frozenset[int],
        self_unary: frozenset[str],
        delta: int,
        order: tuple[str, ...],
        aux: Optional[AuxAtoms] = None,
        round_offset: int = 0,
    ):
        self.self_id = self_id
        self.neighbors = frozenset(neighbors)
        self.self_unary = frozenset(self_unary)
        self.delta = delta
        self.order = tuple(order)
        self.aux = aux
        self.round_offset = round_offset
        self.entries: dict[tuple[int, str], _Entry] = {}
        self.by_level: dict[int, set[str]] = {}
        self.answers: dict[int, bool] = {}
        self.sent_answers: set[int] = set()
        self.sent_queries: set[tuple[int, str]] = set()
        self.out: list[tuple] = []
        self.tuples: dict[tuple[int, str], tuple[int, ...]] = {}
        self.stored: set[tuple[int, ...]] = set()
        self.root_ek: Optional[tuple[int, str]] = None
        self.work = 0
        self._dirty = False

    # -- keys

    def key_of(self, f: Formula, level: int) -> str:
        text = canonical_print(f)
        if isinstance(f, (Atom, Cmp, BoolConst)):
            return text  # fact truth does not depend on the derivation depth
        return f"{level}|{text}"

    # -- local fact knowledge

    def _decide_atom(self, pred: str, args: tuple[int, ...]) -> Optional[bool]:
        if self.aux is not None and pred in self.aux.preds:
            return self.aux.decide(pred, args)
        if pred == EDGE_PRED:
            if self.self_id not in args:
                return None
            a, b = args
            if a == b:
                return False
            other = b if a == self.self_id else a
            return other in self.neighbors
        if len(args) == 1:
            if args[0] != self.self_id:
                return None
            return pred in self.self_unary
        raise EngineError(f"relation {pred}/{len(args)} is not available")

    # -- answer table

    def _insert_answer(self, key_text: str, value: bool, announce: bool) -> None:
        k = answer_key(key_text)
        prev = self.answers.get(k)
        if prev is not None:
            if prev != value:
                raise EngineError(f"conflicting answers for {key_text!r}")
            return
        self.answers[k] = value
        self._dirty = True
        if announce and k not in self.sent_answers:
            self.sent_answers.add(k)
            self.out.append(("A", k, value))

    def _scan_ground_atoms(self, f: Formula) -> None:
        for a in atoms(f):
            if isinstance(a, Atom) and all(isinstance(t, Const) for t in a.args):
                args = tuple(t.value for t in a.args)
                v = self._decide_atom(a.pred, args)
                if v is not None:
                    self._insert_answer(canonical_print(a), v, announce=True)

    # -- deadlines

    def _leaf_deadline(self, q: Formula, entry_level: int) -> int:
        """Round by which the quantifier occurrence q of a level-`entry_level`
        query is decidable everywhere.  An atom first becomes ground when the
        deepest variable in it is instantiated; the instantiating node is a
        party to the atom, so the truth value floods from it within delta
        rounds of that instantiation."""
        top = entry_level

        def go(f: Formula, env: dict[str, int], depth: int) -> None:
            nonlocal top
            if isinstance(f, (Atom, Cmp)):
                lv = [env[t.name] for t in _atom_terms(f) if isinstance(t, Var)]
                top = max(top, max(lv) if lv else entry_level)
            elif isinstance(f, Not):
                go(f.body, env, depth)
            elif isinstance(f, (And, Or)):
                for p in f.parts:
                    go(p, env, depth)
            elif isinstance(f, (Exists, Forall)):
                inner = dict(env)
                inner[f.var] = entry_level + depth + 1
                go(f.body, inner, depth + 1)

        go(q, {}, 0)
        return self.round_offset + 1 + (max(top, 1) + 1) * self.delta

    # -- query table construction

    def _create_entry(
        self,
        formula: Formula,
        kind: str,
        level: int,
        suffix: tuple[int, ...],
    ) -> _Entry:
        text = canonical_print(formula)
        ek = (level, text)
        if ek in self.entries:
            e = self.entries[ek]
            if kind == "O" and e.suffix != suffix:
                raise EngineError(
                    f"open query {text!r} reached with conflicting assignments"
                )
            return e
        self.work += 1
        e = _Entry(text=text, formula=formula, level=level, kind=kind, suffix=suffix)
        self.entries[ek] = e
        self.by_level.setdefault(level, set()).add(text)
        self._dirty = True
        if not isinstance(formula, BoolConst) and ek not in self.sent_queries:
            self.sent_queries.add(ek)
            if kind == "B":
                self.out.append(("Q", "B", text, level))
            else:
                self.out.append(("Q", "O", text, suffix))
        self._scan_ground_atoms(formula)
        if kind == "O":
            self._extend_open(e)
        else:
            for path, q in sorted(_quantifier_leaves(formula)):
                e.leaves[path] = _Leaf(
                    path=path,
                    quant=q,
                    var=q.var,  # type: ignore[union-attr]
                    is_exists=isinstance(q, Exists),
                    deadline=self._leaf_deadline(q, level),
                )
            self._spawn_instances(e)
            self._link_new_parent(e)
        self._link_new_child(e)
        return e

    def _extend_open(self, e: _Entry) -> None:
        present = set(free_vars(e.formula))
        remaining = [v for v in self.order if v in present]
        if not remaining:
            raise EngineError(f"open query {e.text!r} has no free variables left")
        rightmost = remaining[-1]
        nf = substitute(e.formula, rightmost, self.self_id)
        ns = (self.self_id,) + e.suffix
        if len(remaining) == 1:
            be = self._create_entry(nf, "B", e.level + 1, ())
            self.tuples[(e.level + 1, be.text)] = ns
        else:
            self._create_entry(nf, "O", e.level + 1, ns)

    def _spawn_instances(self, e: _Entry) -> None:
        for path in sorted(e.leaves):
            leaf = e.leaves[path]
            inst = substitute(leaf.quant, leaf.var, self.self_id)
            ie = self._create_entry(inst, "B", e.level + 1, ())
            leaf.instances.add(ie.text)

    def _match(self, leaf: _Leaf, cand: _Entry) -> bool:
        probes = sorted(set(constants(cand.formula)) | {1})
        for b in probes:
            if canonical_print(substitute(leaf.quant, leaf.var, b)) == cand.text:
                return True
        return False

    def _link_new_parent(self, e: _Entry) -> None:
        if not e.leaves:
            return
        for text2 in sorted(self.by_level.get(e.level + 1, ())):
            cand = self.entries[(e.level + 1, text2)]
            for path in sorted(e.leaves):
                leaf = e.leaves[path]
                if text2 not in leaf.instances and self._match(leaf, cand):
                    leaf.instances.add(text2)

    def _link_new_child(self, e: _Entry) -> None:
        if e.level == 0:
            return
        for ptext in sorted(self.by_level.get(e.level - 1, ())):
            parent = self.entries[(e.level - 1, ptext)]
            for path in sorted(parent.leaves):
                leaf = parent.leaves[path]
                if e.text not in leaf.instances and self._match(leaf, e):
                    leaf.instances.add(e.text)

    # -- round interface

    def inject_root(self, f: Formula) -> None:
        self.inject_query(f, ())

    def inject_query(self, f: Formula, suffix: tuple[int, ...]) -> None:
        """Start evaluating a query whose last `len(suffix)` variables are
        already assigned (leftmost first); a closed query records the suffix
        as the candidate answer tuple of this node."""
        level = len(suffix)
        if free_vars(f):
            e = self._create_entry(f, "O", level, tuple(suffix))
        else:
            e = self._create_entry(f, "B", level, ())
            self.tuples[(level, e.text)] = tuple(suffix)
        self.root_ek = (level, e.text)

    def ingest(self, payloads: Sequence[tuple], round_no: int) -> None:
        ans = sorted((p for p in payloads if p[0] == "A"), key=_send_order)
        qs = sorted((p for p in payloads if p[0] == "Q"), key=_send_order)
        for _, k, v in ans:
            self.work += 1
            prev = self.answers.get(k)
            if prev is None:
                self.answers[k] = bool(v)
                self._dirty = True
                if k not in self.sent_answers:
                    self.sent_answers.add(k)
                    self.out.append(("A", k, bool(v)))
            elif prev != bool(v):
                raise EngineError("conflicting answers received for one query")
        for p in qs:
            self.work += 1
            if p[1] == "B":
                _, _, text, level = p
                if (level, text) in self.entries:
                    continue
                self._create_entry(parse_formula(text), "B", level, ())
            else:
                _, _, text, suffix = p
                suffix = tuple(suffix)
                level = len(suffix)
                ek = (level, text)
                if ek in self.entries:
                    if self.entries[ek].suffix != suffix:
                        raise EngineError(
                            f"open query {text!r} reached with conflicting assignments"
                        )
                    continue
                self._create_entry(parse_formula(text), "O", level, suffix)

    def sweep(self, round_no: int) -> None:
        changed = True
        while changed:
            self._dirty = False
            for ek in sorted(self.entries):
                e = self.entries[ek]
                if e.kind == "B" and e.value is None:
                    self._eval_entry(e, round_no)
            changed = self._dirty
        for ek in sorted(self.tuples):
            e = self.entries[ek]
            if e.value is True:
                self.stored.add(self.tuples[ek])

    def _eval_entry(self, e: _Entry, round_no: int) -> Optional[bool]:
        if e.value is not None:
            return e.value
        k = answer_key(self.key_of(e.formula, e.level))
        if k in self.answers:
            v: Optional[bool] = self.answers[k]
        else:
            v = self._ev(e, e.formula, (), round_no)
        if v is not None:
            e.value = v
            announce = not isinstance(e.formula, (Cmp, BoolConst))
            self._insert_answer(self.key_of(e.formula, e.level), v, announce)
            self._dirty = True
        return v

    def _ev(
        self, e: _Entry, f: Formula, path: tuple[int, ...], round_no: int
    ) -> Optional[bool]:
        self.work += 1
        if isinstance(f, BoolConst):
            return f.value
        if isinstance(f, Cmp):
            if isinstance(f.left, Const) and isinstance(f.right, Const):
                return _cmp_holds(f.op, f.left.value, f.right.value)
            raise EngineError(f"cannot evaluate open comparison {canonical_print(f)!r}")
        if isinstance(f, Atom):
            if not all(isinstance(t, Const) for t in f.args):
                raise EngineError(f"cannot evaluate open atom {canonical_print(f)!r}")
            return self.answers.get(answer_key(canonical_print(f)))
        if isinstance(f, Not):
            v = self._ev(e, f.body, path + (0,), round_no)
            return None if v is None else not v
        if isinstance(f, (And, Or)):
            vals = [
                self._ev(e, p, path + (i,), round_no) for i, p in enumerate(f.parts)
            ]
            if isinstance(f, And):
                if any(v is False for v in vals):
                    return False
                return True if all(v is True for v in vals) else None
            if any(v is True for v in vals):
                return True
            return False if all(v is False for v in vals) else None
        if isinstance(f, (Exists, Forall)):
            leaf = e.leaves[path]
            key_text = f"{e.level}|{canonical_print(f)}"
            k = answer_key(key_text)
            if k in self.answers:
                return self.answers[k]
            vals = []
            for text in sorted(leaf.instances):
                inst = self.entries[(e.level + 1, text)]
                vals.append(self._eval_entry(inst, round_no))
            if leaf.is_exists and any(v is True for v in vals):
                self._insert_answer(key_text, True, announce=True)
                return True
            if not leaf.is_exists and any(v is False for v in vals):
                self._insert_answer(key_text, False, announce=True)
                return False
            if round_no >= leaf.deadline:
                # Every instance value is derivable network-wide by now, so
                # all nodes reach the same default in the same round; nothing
                # needs to be sent.
                v = (
                    any(v is True for v in vals)
                    if leaf.is_exists
                    else not any(v is False for v in vals)
                )
                self._insert_answer(key_text, v, announce=False)
                return v
            return None
        raise EngineError(f"unsupported subformula {f!r}")

    def flush(self) -> list[tuple]:
        out = sorted(self.out, key=_send_order)
        self.out = []
        return out

    def pending(self, round_no: int) -> bool:
        for ek in sorted(self.entries):
            e = self.entries[ek]
            for path in e.leaves:
                leaf = e.leaves[path]
                if round_no >= leaf.deadline:
                    continue
                key_text = f"{e.level}|{canonical_print(leaf.quant)}"
                if answer_key(key_text) not in self.answers:
                    return True
        return False

    def report(self) -> FONodeReport:
        root = None
        if self.root_ek is not None:
            root = self.entries[self.root_ek].value
        return FONodeReport(
            tuples=frozenset(self.stored),
            root_truth=root,
            entry_count=len(self.entries),
            answer_count=len(self.answers),
        )


# ------------------------------------------------------------ simnet engine


class FOQueryEngine(NodeEngine):
    """Simulator adapter: one FOCore per node, broadcast-only sends."""

    def __init__(self, order: tuple[str, ...]):
        self.order = tuple(order)

    def start(self, ctx: NodeContext) -> FOCore:
        if ctx.node_id is None or ctx.neighbor_ids is None:
            raise EngineError(
                "the first-order query engine needs globally unique node ids"
            )
        return FOCore(
            self_id=ctx.node_id,
            neighbors=frozenset(ctx.neighbor_ids.values()),
            self_unary=ctx.self_unary,
            delta=ctx.diameter,
            order=self.order,
        )

    def inject(self, state: FOCore, ctx: NodeContext, payload: Any) -> FOCore:
        state.inject_root(payload)
        return state

    def step(
        self,
        state: FOCore,
        ctx: NodeContext,
        round_no: int,
        inbox: Sequence[Message],
    ) -> StepResult:
        before = state.work
        state.ingest([m.payload for m in inbox], round_no)
        state.sweep(round_no)
        outs = state.flush()
        sends: list[tuple[int, Any]] = []
        for p in outs:
            sends.extend(broadcast(ctx, p))
        quiescent = not outs and not state.pending(round_no)
        return StepResult(
            state=state,
            sends=tuple(sends),
            quiescent=quiescent,
            steps=1 + state.work - before,
        )

    def collect(self, state: FOCore, ctx: NodeContext) -> FONodeReport:
        return state.report()

    def payload_bits(self, payload: Any, enc: EncodingParams) -> int:
        return fo_payload_bits(payload, enc)


def fo_payload_bits(payload: tuple, enc: EncodingParams) -> int:
    """Wire size of one first-order engine payload (shared with the
    fixpoint engine, which wraps these payloads)."""
    if payload[0] == "A":
        return enc.tag_bits + 64 + 1
    if payload[1] == "B":
        return enc.tag_bits + enc.counter_bits + enc.text_bits(payload[2])
    return (
        enc.tag_bits
        + enc.text_bits(payload[2])
        + enc.id_bits * max(1, len(payload[3]))
    )


# -------------------------------------------------------------- entry point


def _validate_query(
    f: Formula, net: Network, allow: Optional[Mapping[str, int]] = None
) -> None:
    for g in subformulas(f):
        if isinstance(g, InNbhd):
            raise EngineError(
                "neighborhood atoms belong to the local-fragment engines"
            )
        if isinstance(g, (Exists, Forall)) and g.bound is not None:
            raise EngineError(
                "radius-bounded quantifiers belong to the local-fragment engines"
            )
        if isinstance(g, Atom):
            if g.pred == EDGE_PRED:
                continue
            if allow and allow.get(g.pred) == len(g.args):
                continue
            if len(g.args) != 1 or (allow and g.pred in allow):
                raise EngineError(
                    f"relation {g.pred}/{len(g.args)} is not available on the network"
                )
    nodes = set(net.graph.adj)
    for c in constants(f):
        if c not in nodes:
            raise EngineError(f"constant {c} is not a node id")
    for v in free_vars(f):
        if v.startswith("q") and v[1:].isdigit():
            raise EngineError(f"free variable name {v!r} is reserved")


def run_qe_fo(
    net: Network,
    formula: Union[Formula, str],
    requester: int,
    *,
    order: Optional[Sequence[str]] = None,
    order_seed: int = 0,
    round_cap: Optional[int] = None,
    with_placement: bool = False,
):
    """Evaluate a first-order query distributively; the relation is the
    union of the per-node held fragments (arity 0 encodes a Boolean result:
    {()} for true, {} for false).  With `with_placement` the per-node
    fragments are returned as a third value."""
    f = parse_formula(formula) if isinstance(formula, str) else formula
    if net.mode.kind != "global":
        raise EngineError(
            "the first-order query engine needs globally unique node ids"
        )
    if requester not in net.graph.adj:
        raise EngineError(f"requester {requester} is not a node")
    _validate_query(f, net)
    fv = free_vars(f)
    ordered = tuple(order) if order is not None else fv
    if sorted(ordered) != sorted(set(ordered)) or set(ordered) != set(fv):
        raise EngineError(
            f"variable order {ordered!r} does not match free variables {fv!r}"
        )
    delta = net.graph.diameter
    w = max(1, stats(f).w)
    budget = clock_value(w, max(1, delta))
    cap = round_cap if round_cap is not None else budget + delta + 8
    engine = FOQueryEngine(ordered)
    result, metrics = simnet.run(
        net, engine, init={requester: f}, order_seed=order_seed, round_cap=cap
    )
    gathered: set[tuple[int, ...]] = set()
    for rep in result.per_node.values():
        gathered |= rep.tuples
    rel = Relation(len(ordered), frozenset(gathered))
    if with_placement:
        placement = {
            a: frozenset(rep.tuples) for a, rep in result.per_node.items()
        }
        return rel, metrics, placement
    return rel, metrics
