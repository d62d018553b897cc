"""Rule language shared by the centralized Datalog-with-negation evaluator
and the distributed store-and-push engine.

Provides the parsed rule types, the localization checker for distributed
rules, a body-matching engine used by both evaluation modes, and the
per-round immediate-consequence operator over per-node stores.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Optional, Sequence

from .logic import Const, ParseError, Term, Var
from .oracle import Graph, Relation

Fact = tuple[str, tuple[int, ...]]

EDGE_PRED = "G"


class NetlogError(ValueError):
    pass


class NonterminationError(NetlogError):
    def __init__(self, message: str, rounds: int, instance: "DistributedInstance"):
        super().__init__(message)
        self.rounds = rounds
        self.instance = instance


# ------------------------------------------------------------------- types


class NetlogLiteral:
    """Base class for body/head literals: relation atoms and built-in guards."""

    __slots__ = ()


@dataclass(frozen=True, slots=True)
class RelLit(NetlogLiteral):
    """Relation atom, optionally negated, optionally with one argument
    marked @ as the holding variable."""

    pred: str
    args: tuple[Term, ...]
    positive: bool = True
    holding: Optional[int] = None  # index of the @-marked argument

    def holding_var(self) -> Optional[str]:
        if self.holding is None:
            return None
        t = self.args[self.holding]
        return t.name if isinstance(t, Var) else None


@dataclass(frozen=True, slots=True)
class GuardLit(NetlogLiteral):
    """Built-in guard: = / != / >= comparison, or decrement left = right - 1."""

    op: str  # "=", "!=", ">=", "dec"
    left: Term
    right: Term


@dataclass(frozen=True, slots=True)
class NetlogRule:
    head: RelLit
    body: tuple[NetlogLiteral, ...]
    push: bool = False

    def __str__(self) -> str:
        return print_rule(self)


@dataclass(frozen=True, slots=True)
class NetlogProgram:
    rules: tuple[NetlogRule, ...]

    @property
    def intensional_preds(self) -> tuple[str, ...]:
        seen: list[str] = []
        for r in self.rules:
            if r.head.pred not in seen:
                seen.append(r.head.pred)
        return tuple(seen)

    @property
    def body_only_preds(self) -> tuple[str, ...]:
        heads = set(self.intensional_preds)
        seen: list[str] = []
        for r in self.rules:
            for lit in r.body:
                if (
                    isinstance(lit, RelLit)
                    and lit.pred not in heads
                    and lit.pred != EDGE_PRED
                    and lit.pred not in seen
                ):
                    seen.append(lit.pred)
        return tuple(seen)

    def __str__(self) -> str:
        return print_program(self)


@dataclass(frozen=True, slots=True)
class DistributedInstance:
    """Per-node fact stores; the global instance is the union of the stores."""

    stores: Mapping[int, frozenset[Fact]]

    def union_facts(self) -> frozenset[Fact]:
        out: set[Fact] = set()
        for fs in self.stores.values():
            out |= fs
        return frozenset(out)

    def facts_of(self, pred: str) -> frozenset[tuple[int, ...]]:
        return frozenset(
            args for fs in self.stores.values() for p, args in fs if p == pred
        )

    def node_facts(self, v: int, pred: Optional[str] = None) -> frozenset[Fact]:
        fs = self.stores.get(v, frozenset())
        if pred is None:
            return fs
        return frozenset(f for f in fs if f[0] == pred)

    def relation(self, pred: str, arity: int) -> Relation:
        tuples = self.facts_of(pred)
        for t in tuples:
            if len(t) != arity:
                raise NetlogError(f"fact {pred}{t} does not have arity {arity}")
        return Relation(arity, tuples)

    def size(self) -> int:
        return sum(len(fs) for fs in self.stores.values())


def make_instance(
    g: Graph, stores: Optional[Mapping[int, Iterable[Fact]]] = None
) -> DistributedInstance:
    base: dict[int, frozenset[Fact]] = {v: frozenset() for v in g.nodes}
    for v, fs in (stores or {}).items():
        if v not in base:
            raise NetlogError(f"store references unknown node {v}")
        base[v] = frozenset(tuple(f) for f in fs)
    return DistributedInstance(base)


def start_instance(g: Graph) -> DistributedInstance:
    """Initial instance: one start(v) fact on every node."""
    return make_instance(g, {v: [("start", (v,))] for v in g.nodes})


# ---------------------------------------------------------------- printing


def print_term(t: Term) -> str:
    return t.name if isinstance(t, Var) else str(t.value)


def print_literal(lit: NetlogLiteral) -> str:
    if isinstance(lit, GuardLit):
        if lit.op == "dec":
            return f"{print_term(lit.left)} = {print_term(lit.right)} - 1"
        return f"{print_term(lit.left)} {lit.op} {print_term(lit.right)}"
    assert isinstance(lit, RelLit)
    parts = []
    for i, t in enumerate(lit.args):
        mark = "@" if i == lit.holding else ""
        parts.append(mark + print_term(t))
    neg = "" if lit.positive else "!"
    return f"{neg}{lit.pred}({', '.join(parts)})"


def print_rule(rule: NetlogRule) -> str:
    mark = "^" if rule.push else ""
    body = "; ".join(print_literal(lit) for lit in rule.body)
    return f"{mark}{print_literal(rule.head)} :- {body}."


def print_program(program: NetlogProgram) -> str:
    return "\n".join(print_rule(r) for r in program.rules) + "\n"


# ---------------------------------------------------------------- tokenizer

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<comment>%[^\n]*)
  | (?P<arrow>:-)
  | (?P<neq>!=|≠)
  | (?P<geq>>=|≥)
  | (?P<name>[A-Za-z_][A-Za-z0-9_']*)
  | (?P<int>\d+)
  | (?P<push>\^|↑)
  | (?P<neg>!|¬)
  | (?P<sym>[(),;.@=\-])
    """,
    re.VERBOSE,
)


def _tokenize(text: str) -> list[tuple[str, str, int, int]]:
    tokens: list[tuple[str, str, int, int]] = []
    line, col, pos = 1, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character {text[pos]!r}", line=line, col=col)
        kind = m.lastgroup
        value = m.group()
        if kind == "arrow":
            tokens.append((":-", value, line, col))
        elif kind == "neq":
            tokens.append(("!=", "!=", line, col))
        elif kind == "geq":
            tokens.append((">=", ">=", line, col))
        elif kind == "name":
            tokens.append(("name", value, line, col))
        elif kind == "int":
            tokens.append(("int", value, line, col))
        elif kind == "push":
            tokens.append(("^", "^", line, col))
        elif kind == "neg":
            tokens.append(("!", "!", line, col))
        elif kind == "sym":
            tokens.append((value, value, line, col))
        nl = value.count("\n")
        if nl:
            line += nl
            col = len(value) - value.rfind("\n")
        else:
            col += len(value)
        pos = m.end()
    tokens.append(("eof", "", line, col))
    return tokens


# ------------------------------------------------------------------ parser


class _RuleParser:
    def __init__(self, text: str, distributed: bool):
        self.tokens = _tokenize(text)
        self.i = 0
        self.distributed = distributed

    def peek(self) -> tuple[str, str, int, int]:
        return self.tokens[self.i]

    def next(self) -> tuple[str, str, int, int]:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, kind: str) -> tuple[str, str, int, int]:
        tok = self.next()
        if tok[0] != kind:
            raise ParseError(f"expected {kind!r}, found {tok[1] or 'end of input'!r}", line=tok[2], col=tok[3])
        return tok

    def error(self, message: str) -> ParseError:
        tok = self.peek()
        return ParseError(message, line=tok[2], col=tok[3])

    def parse_program(self) -> list[NetlogRule]:
        rules = []
        while self.peek()[0] != "eof":
            rules.append(self.parse_rule())
        return rules

    def parse_rule(self) -> NetlogRule:
        push = False
        if self.peek()[0] == "^":
            self.next()
            push = True
            if not self.distributed:
                raise self.error("push marker ^ is not allowed in centralized rules")
        head = self.parse_atom(allow_neg=False)
        self.expect(":-")
        body: list[NetlogLiteral] = [self.parse_literal()]
        while self.peek()[0] in (";", ","):
            self.next()
            body.append(self.parse_literal())
        self.expect(".")
        return NetlogRule(head, tuple(body), push)

    def parse_literal(self) -> NetlogLiteral:
        if self.peek()[0] == "!":
            self.next()
            return self.parse_atom(allow_neg=True, negated=True)
        kind, _value, _l, _c = self.peek()
        if kind == "name" and self.tokens[self.i + 1][0] == "(":
            return self.parse_atom(allow_neg=True)
        return self.parse_guard()

    def parse_atom(self, allow_neg: bool, negated: bool = False) -> RelLit:
        name_tok = self.expect("name")
        self.expect("(")
        args: list[Term] = []
        holding: Optional[int] = None
        while True:
            if self.peek()[0] == "@":
                at_tok = self.next()
                if not self.distributed:
                    raise ParseError("holding marker @ is not allowed in centralized rules", line=at_tok[2], col=at_tok[3])
                if holding is not None:
                    raise ParseError("literal has more than one holding marker", line=at_tok[2], col=at_tok[3])
                term = self.parse_term()
                if not isinstance(term, Var):
                    raise ParseError("holding marker must be on a variable", line=at_tok[2], col=at_tok[3])
                holding = len(args)
                args.append(term)
            else:
                args.append(self.parse_term())
            if self.peek()[0] == ",":
                self.next()
                continue
            break
        self.expect(")")
        return RelLit(name_tok[1], tuple(args), positive=not negated, holding=holding)

    def parse_guard(self) -> GuardLit:
        left = self.parse_term()
        op_tok = self.next()
        if op_tok[0] not in ("=", "!=", ">="):
            raise ParseError(f"expected comparison operator, found {op_tok[1]!r}", line=op_tok[2], col=op_tok[3])
        right = self.parse_term()
        if self.peek()[0] == "-":
            minus_tok = self.next()
            amount = self.expect("int")
            if op_tok[0] != "=" or amount[1] != "1":
                raise ParseError("only decrement guards of the form p = q - 1 are supported", line=minus_tok[2], col=minus_tok[3])
            if not isinstance(right, Var):
                raise ParseError("decrement guard needs a variable on the right side", line=minus_tok[2], col=minus_tok[3])
            return GuardLit("dec", left, right)
        return GuardLit(op_tok[0], left, right)

    def parse_term(self) -> Term:
        tok = self.next()
        if tok[0] == "name":
            return Var(tok[1])
        if tok[0] == "int":
            return Const(int(tok[1]))
        raise ParseError(f"expected a term, found {tok[1]!r}", line=tok[2], col=tok[3])


def _check_arities(rules: Sequence[NetlogRule]) -> None:
    arities: dict[str, int] = {EDGE_PRED: 2}
    for idx, rule in enumerate(rules, start=1):
        lits = [rule.head] + [lit for lit in rule.body if isinstance(lit, RelLit)]
        for lit in lits:
            known = arities.get(lit.pred)
            if known is None:
                arities[lit.pred] = len(lit.args)
            elif known != len(lit.args):
                raise NetlogError(
                    f"rule {idx}: predicate {lit.pred} used with arity "
                    f"{len(lit.args)} but previously with arity {known}"
                )


def parse_datalog(text: str) -> NetlogProgram:
    """Parse centralized rules: no holding markers, no push arrows."""
    rules = _RuleParser(text, distributed=False).parse_program()
    if not rules:
        raise NetlogError("empty program")
    _check_arities(rules)
    return NetlogProgram(tuple(rules))


def parse_netlog(text: str) -> NetlogProgram:
    """Parse distributed rules and enforce the localization restrictions."""
    rules = _RuleParser(text, distributed=True).parse_program()
    if not rules:
        raise NetlogError("empty program")
    _check_arities(rules)
    for idx, rule in enumerate(rules, start=1):
        if rule.head.holding is None:
            raise NetlogError(
                f"rule {idx}: head {print_literal(rule.head)} has no holding marker"
            )
        violation = check_localization(rule)
        if violation is not None:
            raise NetlogError(
                f"rule {idx} violates localization restriction {violation}"
            )
    return NetlogProgram(tuple(rules))


# ------------------------------------------------------- localization check


class _UnionFind:
    def __init__(self) -> None:
        self.parent: dict[str, str] = {}

    def find(self, x: str) -> str:
        self.parent.setdefault(x, x)
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a: str, b: str) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[ra] = rb

    def same(self, a: str, b: str) -> bool:
        return self.find(a) == self.find(b)


def _equality_classes(rule: NetlogRule) -> _UnionFind:
    uf = _UnionFind()
    for lit in rule.body:
        if (
            isinstance(lit, GuardLit)
            and lit.op == "="
            and isinstance(lit.left, Var)
            and isinstance(lit.right, Var)
        ):
            uf.union(lit.left.name, lit.right.name)
    return uf


def check_localization(rule: NetlogRule) -> Optional[str]:
    """Return None when the rule satisfies the three localization
    restrictions, or a string naming the violated restriction.

    Variables linked by positive equality guards count as one holding
    variable.
    """
    uf = _equality_classes(rule)
    body_hvs: list[str] = []
    for lit in rule.body:
        if isinstance(lit, RelLit) and lit.holding is not None:
            hv = lit.holding_var()
            assert hv is not None
            body_hvs.append(hv)
    if not body_hvs:
        return (
            "(i): no body literal carries a holding variable, so the rule "
            "cannot be evaluated on any node"
        )
    rep = body_hvs[0]
    for hv in body_hvs[1:]:
        if not uf.same(rep, hv):
            return (
                f"(i): body holding variables {rep!r} and {hv!r} are not the same"
            )
    head_hv = rule.head.holding_var()
    if head_hv is None:
        return "(ii): head has no holding variable"
    same = uf.same(head_hv, rep)
    if rule.push and same:
        return (
            f"(ii): rule is marked for pushing but head holding variable "
            f"{head_hv!r} equals the body holding variable"
        )
    if not rule.push and not same:
        return (
            f"(ii): head holding variable {head_hv!r} differs from body holding "
            f"variable {rep!r} but the rule is not marked for pushing"
        )
    if rule.push:
        linked = False
        for lit in rule.body:
            if (
                isinstance(lit, RelLit)
                and lit.positive
                and lit.pred == EDGE_PRED
                and len(lit.args) == 2
                and all(isinstance(t, Var) for t in lit.args)
            ):
                a, b = lit.args[0].name, lit.args[1].name
                if (uf.same(a, rep) and uf.same(b, head_hv)) or (
                    uf.same(b, rep) and uf.same(a, head_hv)
                ):
                    linked = True
                    break
        if not linked:
            return (
                f"(iii): pushed head holding variable {head_hv!r} is not linked "
                f"to body holding variable {rep!r} by an edge literal"
            )
    return None


def body_holding_vars(rule: NetlogRule) -> tuple[str, ...]:
    out: list[str] = []
    for lit in rule.body:
        if isinstance(lit, RelLit) and lit.holding is not None:
            hv = lit.holding_var()
            if hv is not None and hv not in out:
                out.append(hv)
    return tuple(out)


# ---------------------------------------------------------------- matching


def _lit_vars(lit: NetlogLiteral) -> set[str]:
    if isinstance(lit, RelLit):
        return {t.name for t in lit.args if isinstance(t, Var)}
    out = set()
    for t in (lit.left, lit.right):
        if isinstance(t, Var):
            out.add(t.name)
    return out


def static_order(
    body: Sequence[NetlogLiteral], prebound: Iterable[str] = ()
) -> list[NetlogLiteral]:
    """Order body literals so every literal is evaluable when reached:
    positive relation atoms join and bind, equality/decrement guards may bind
    one side, negated atoms and pure comparisons need all variables bound."""
    bound = set(prebound)
    remaining = list(body)
    ordered: list[NetlogLiteral] = []

    def ready(lit: NetlogLiteral) -> bool:
        if isinstance(lit, RelLit):
            if lit.positive:
                return True
            return _lit_vars(lit) <= bound
        lv = lit.left.name if isinstance(lit.left, Var) else None
        rv = lit.right.name if isinstance(lit.right, Var) else None
        left_ok = lv is None or lv in bound
        right_ok = rv is None or rv in bound
        if lit.op == "=":
            return left_ok or right_ok
        if lit.op == "dec":
            return right_ok
        return left_ok and right_ok

    while remaining:
        for lit in remaining:
            if ready(lit):
                ordered.append(lit)
                remaining.remove(lit)
                bound |= _lit_vars(lit)
                break
        else:
            names = sorted(set().union(*(_lit_vars(l) for l in remaining)) - bound)
            raise NetlogError(
                f"unsafe rule body: variables {names} cannot be bound"
            )
    return ordered


class _Lookup:
    """Fact access for one evaluation context."""

    def candidates(self, pred: str) -> Sequence[tuple[int, ...]]:
        raise NotImplementedError

    def contains(self, pred: str, args: tuple[int, ...]) -> bool:
        raise NotImplementedError


class _CentralLookup(_Lookup):
    def __init__(self, g: Graph, facts: Iterable[Fact]):
        self.g = g
        self.by_pred: dict[str, list[tuple[int, ...]]] = {}
        for pred, args in facts:
            self.by_pred.setdefault(pred, []).append(args)
        for lst in self.by_pred.values():
            lst.sort()

    def candidates(self, pred: str) -> Sequence[tuple[int, ...]]:
        if pred == EDGE_PRED:
            out = []
            for u, v in self.g.edges():
                out.append((u, v))
                out.append((v, u))
            return sorted(out)
        out = list(self.by_pred.get(pred, ()))
        if pred in self.g.unary:
            out.extend((a,) for a in sorted(self.g.unary[pred]))
        return sorted(set(out))

    def contains(self, pred: str, args: tuple[int, ...]) -> bool:
        if pred == EDGE_PRED:
            return len(args) == 2 and self.g.has_edge(args[0], args[1])
        if pred in self.g.unary and len(args) == 1 and args[0] in self.g.unary[pred]:
            return True
        return args in set(self.by_pred.get(pred, ()))


class _NodeLookup(_Lookup):
    """View of one node's store plus its incident edges and the global unary
    input facts.  Edge knowledge is strictly local: only edges touching the
    node itself are visible."""

    def __init__(
        self,
        v: int,
        neighbors: Iterable[int],
        unary: Mapping[str, Iterable[int]],
        store: Iterable[Fact],
    ):
        self.v = v
        self.neighbors = frozenset(neighbors)
        self.unary = {p: frozenset(members) for p, members in unary.items()}
        self.by_pred: dict[str, list[tuple[int, ...]]] = {}
        for pred, args in store:
            self.by_pred.setdefault(pred, []).append(args)
        for lst in self.by_pred.values():
            lst.sort()

    def candidates(self, pred: str) -> Sequence[tuple[int, ...]]:
        if pred == EDGE_PRED:
            out = []
            for u in sorted(self.neighbors):
                out.append((self.v, u))
                out.append((u, self.v))
            return sorted(out)
        out = list(self.by_pred.get(pred, ()))
        if pred in self.unary:
            out.extend((a,) for a in sorted(self.unary[pred]))
        return sorted(set(out))

    def contains(self, pred: str, args: tuple[int, ...]) -> bool:
        if pred == EDGE_PRED:
            return len(args) == 2 and (
                (args[0] == self.v and args[1] in self.neighbors)
                or (args[1] == self.v and args[0] in self.neighbors)
            )
        if pred in self.unary and len(args) == 1 and args[0] in self.unary[pred]:
            return True
        return args in set(self.by_pred.get(pred, ()))


def _resolve_term(t: Term, env: Mapping[str, int]) -> Optional[int]:
    if isinstance(t, Const):
        return t.value
    return env.get(t.name)


def _match_literal(
    lit: NetlogLiteral, lookup: _Lookup, env: dict[str, int]
) -> Iterator[dict[str, int]]:
    if isinstance(lit, RelLit):
        if lit.positive:
            for tup in lookup.candidates(lit.pred):
                if len(tup) != len(lit.args):
                    continue
                env2 = dict(env)
                ok = True
                for term, val in zip(lit.args, tup):
                    if isinstance(term, Const):
                        if term.value != val:
                            ok = False
                            break
                    else:
                        bound = env2.get(term.name)
                        if bound is None:
                            env2[term.name] = val
                        elif bound != val:
                            ok = False
                            break
                if ok:
                    yield env2
            return
        args = tuple(_resolve_term(t, env) for t in lit.args)
        if any(a is None for a in args):
            raise NetlogError(
                f"negated literal {print_literal(lit)} has unbound variables"
            )
        if not lookup.contains(lit.pred, args):  # type: ignore[arg-type]
            yield env
        return
    left = _resolve_term(lit.left, env)
    right = _resolve_term(lit.right, env)
    if lit.op == "dec":
        if right is None:
            raise NetlogError("decrement guard with unbound right side")
        want = right - 1
        if left is None:
            env2 = dict(env)
            env2[lit.left.name] = want  # type: ignore[union-attr]
            yield env2
        elif left == want:
            yield env
        return
    if lit.op == "=":
        if left is None and right is None:
            raise NetlogError("equality guard with both sides unbound")
        if left is None:
            env2 = dict(env)
            env2[lit.left.name] = right  # type: ignore[union-attr]
            yield env2
        elif right is None:
            env2 = dict(env)
            env2[lit.right.name] = left  # type: ignore[union-attr]
            yield env2
        elif left == right:
            yield env
        return
    if left is None or right is None:
        raise NetlogError("comparison guard with unbound variables")
    if (lit.op == "!=" and left != right) or (lit.op == ">=" and left >= right):
        yield env


def _match_ordered(
    ordered: Sequence[NetlogLiteral], lookup: _Lookup, env: dict[str, int]
) -> Iterator[dict[str, int]]:
    if not ordered:
        yield env
        return
    head, rest = ordered[0], ordered[1:]
    for env2 in _match_literal(head, lookup, env):
        yield from _match_ordered(rest, lookup, env2)


def match_body(
    body: Sequence[NetlogLiteral],
    facts: Iterable[Fact],
    g: Graph,
    prebound: Optional[Mapping[str, int]] = None,
) -> Iterator[Mapping[str, int]]:
    """All assignments satisfying the body against the given fact set, the
    graph edges, and the graph's unary input facts (centralized view)."""
    ordered = static_order(body, prebound=(prebound or {}).keys())
    lookup = _CentralLookup(g, facts)
    yield from _match_ordered(ordered, lookup, dict(prebound or {}))


# ------------------------------------------------------------- consequence


def _instantiate_head(rule: NetlogRule, env: Mapping[str, int]) -> Fact:
    args = []
    for t in rule.head.args:
        val = _resolve_term(t, env)
        if val is None:
            raise NetlogError(
                f"unsafe instantiation: head variable {t.name!r} unbound "  # type: ignore[union-attr]
                f"in rule {print_rule(rule)}"
            )
        args.append(val)
    return (rule.head.pred, tuple(args))


def consequence(
    program: NetlogProgram, g: Graph, instance: DistributedInstance
) -> DistributedInstance:
    """One application of the distributed immediate-consequence operator:
    every node fires every rule against its own store (plus incident edges
    and global unary input facts); each derived fact is placed at the node
    named by the head holding argument.  The result replaces the previous
    instance — persistence requires explicit copy rules."""
    orders = {
        id(rule): static_order(rule.body, prebound=body_holding_vars(rule))
        for rule in program.rules
    }
    new_stores: dict[int, set[Fact]] = {v: set() for v in g.nodes}
    for v in g.nodes:
        lookup = _NodeLookup(v, g.adj[v], g.unary, instance.stores.get(v, frozenset()))
        for rule in program.rules:
            env0 = {name: v for name in body_holding_vars(rule)}
            for env in _match_ordered(orders[id(rule)], lookup, env0):
                pred, args = _instantiate_head(rule, env)
                if rule.head.holding is None:
                    raise NetlogError(
                        f"rule {print_rule(rule)} has no head holding marker"
                    )
                target = args[rule.head.holding]
                if target not in new_stores:
                    raise NetlogError(
                        f"fact {pred}{args} addressed to unknown node {target}"
                    )
                new_stores[target].add((pred, args))
    return DistributedInstance({v: frozenset(fs) for v, fs in new_stores.items()})


def netlog_stages(
    program: NetlogProgram, g: Graph, cap: Optional[int] = None
) -> list[DistributedInstance]:
    """Round-by-round instance sequence starting from the start-fact seeding,
    ending when one round changes nothing.  Raises NonterminationError when
    the cap is exceeded."""
    if cap is None:
        cap = default_round_cap(program, g)
    stages = [start_instance(g)]
    for _ in range(cap):
        nxt = consequence(program, g, stages[-1])
        stages.append(nxt)
        if nxt == stages[-2]:
            return stages
    raise NonterminationError(
        f"no fixpoint after {cap} rounds; the program may not terminate "
        f"on this network",
        cap,
        stages[-1],
    )


def default_round_cap(program: NetlogProgram, g: Graph) -> int:
    arities = {
        (r.head.pred, len(r.head.args)) for r in program.rules
    }
    universe = sum(g.n**arity for _pred, arity in arities)
    return 10 * (universe + 2)


# -------------------------------------------------------- distributed run


@dataclass
class _NetlogNodeState:
    """snapshot holds this node's slice of the current global instance:
    locally derived facts from the previous round plus just-arrived pushes."""

    local: frozenset[Fact]
    snapshot: Optional[frozenset[Fact]] = None
    prev_snapshot: Optional[frozenset[Fact]] = None


class NetlogEngine:
    """Node automaton interpreting a localized rule program on the simulator.

    Each round a node assembles its instance slice (previous local
    derivations plus arrived pushed facts), fires every rule on it, keeps
    derivations addressed to itself, and sends push-rule derivations to the
    neighbor named by the head holding argument.  The store is replaced
    every round; persistence needs explicit copy rules.
    """

    def __init__(self, program: NetlogProgram):
        from . import simnet

        self._sim = simnet
        self.program = program
        self.orders = {
            id(rule): static_order(rule.body, prebound=body_holding_vars(rule))
            for rule in program.rules
        }
        preds = sorted({r.head.pred for r in program.rules} | {EDGE_PRED, "start"})
        self.pred_ids = {p: i for i, p in enumerate(preds)}

    def start(self, ctx) -> _NetlogNodeState:
        if ctx.node_id is None:
            raise NetlogError("the rule engine needs globally unique node ids")
        return _NetlogNodeState(local=frozenset({("start", (ctx.node_id,))}))

    def step(self, state: _NetlogNodeState, ctx, round_no: int, inbox):
        v = ctx.node_id
        arrived = frozenset(m.payload for m in inbox)
        snapshot = state.local | arrived
        quiescent = snapshot == state.snapshot
        neighbors = sorted(ctx.neighbor_ids.values())
        port_of = {b: p for p, b in ctx.neighbor_ids.items()}
        lookup = _NodeLookup(v, neighbors, ctx.global_unary, snapshot)
        local: set[Fact] = set()
        sends: list[tuple[int, Fact]] = []
        steps = 1
        for rule in self.program.rules:
            env0 = {name: v for name in body_holding_vars(rule)}
            for env in _match_ordered(self.orders[id(rule)], lookup, env0):
                steps += 1
                pred, args = _instantiate_head(rule, env)
                assert rule.head.holding is not None
                target = args[rule.head.holding]
                if target == v:
                    local.add((pred, args))
                else:
                    port = port_of.get(target)
                    if port is None:
                        raise NetlogError(
                            f"fact {pred}{args} addressed to non-neighbor {target}"
                        )
                    sends.append((port, (pred, args)))
        new_state = _NetlogNodeState(
            local=frozenset(local),
            snapshot=snapshot,
            prev_snapshot=state.snapshot,
        )
        return self._sim.StepResult(new_state, tuple(sends), quiescent, steps)

    def collect(self, state: _NetlogNodeState, ctx) -> frozenset[Fact]:
        return state.snapshot if state.snapshot is not None else state.local

    def payload_bits(self, payload: Fact, enc) -> int:
        pred, args = payload
        bits = enc.tag_bits
        for a in args:
            bits += max(enc.id_bits, a.bit_length() or 1)
        return bits


def run_netlog(program: NetlogProgram, net, order_seed: int = 0,
               round_cap: Optional[int] = None):
    """Run the program distributedly and return (final instance, metrics).

    Terminates when the global instance repeats (every node sees the same
    slice two rounds running); the store-refresh rules keep out-buffers
    busy, so termination ignores them.  Raises NonterminationError with the
    partial instance when the round cap is hit.
    """
    from . import simnet

    g = net.graph
    if round_cap is None:
        round_cap = default_round_cap(program, g)
    engine = NetlogEngine(program)
    try:
        res, metrics = simnet.run(
            net,
            engine,
            order_seed=order_seed,
            round_cap=round_cap,
            stop_on_quiescence_alone=True,
        )
    except simnet.RoundCapError as err:
        partial = DistributedInstance(
            {a: frozenset(fs) for a, fs in err.results.items()}
        )
        raise NonterminationError(
            f"no fixpoint after {round_cap} rounds; the program may not "
            f"terminate on this network",
            round_cap,
            partial,
        ) from None
    instance = DistributedInstance({a: res.per_node[a] for a in g.nodes})
    return instance, metrics
