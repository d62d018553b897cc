"""Compiler from centralized rule programs to localized store-and-push
programs.

The compilation proceeds in five steps:

1. localize: mark the leftmost argument of every literal as the holding
   variable, so every fact lives at the node named by its first argument.
2. rewrite_rule: split every rule whose body spans several holders into a
   local part plus sub-query rules evaluated where their data lives.  A
   sub-query connected to the local part by an edge literal pushes its
   result one hop (cost 1); a disconnected sub-query floods its result
   through relay rules (cost 1 + diameter).  The per-rule round count
   kappa_r accumulates along the recursion, and the stage length kappa is
   the maximum over rules, at least the diameter.
3. add_comm: mark rules whose head lives on a different node than the body
   with the push arrow.
4. add_clocks: guard every computation rule with a countdown clock so all
   nodes advance through stages in lockstep; per intensional relation the
   derivations collect in a temporary relation that commits when the clock
   reaches zero; nodes that commit new facts flood a continuation notice.
5. inflate: copy rules keep auxiliary facts alive while the clock runs and
   keep committed result facts alive forever.

The compiled program computes, stage for stage, the same result as the
centralized inflationary evaluation of the source program: a source fact
enters stage i of the centralized run exactly when it enters round
i*(kappa+1)+1 of the distributed run.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence, Union

from .logic import Const, Term, Var
from .netlog import (
    EDGE_PRED,
    GuardLit,
    NetlogError,
    NetlogLiteral,
    NetlogProgram,
    NetlogRule,
    RelLit,
    _equality_classes,
    _lit_vars,
    body_holding_vars,
    check_localization,
    parse_datalog,
    print_literal,
    print_program,
    print_rule,
    static_order,
)
from .oracle import _check_rule_safety

RESERVED = ("start", "clock", "continue", "inf", "stop")


class CompileError(ValueError):
    pass


# ------------------------------------------------------------------- types


@dataclass(frozen=True)
class RewriteContext:
    """One invocation frame of the rule-splitting recursion."""

    rule: NetlogRule
    holding_var: str
    connection_vars: frozenset[str]

    def __post_init__(self) -> None:
        if self.holding_var not in self.connection_vars:
            raise CompileError(
                "the holding variable must be a connection variable"
            )


@dataclass(frozen=True)
class CompileOutput:
    program: NetlogProgram
    kappa: int
    delta: int
    traces: tuple[tuple[tuple[NetlogRule, ...], int], ...]
    """Per source rule: the rules it became and its round count kappa_r."""


class _Names:
    """Fresh relation and variable names that never collide with the source
    program or with each other."""

    def __init__(self, taken_rels: set[str]):
        self.rels = set(taken_rels)
        self.vars: set[str] = set()

    def subquery(self, rule_no: int, comp_no: int, depth: int) -> str:
        base = f"Q_{rule_no}_{comp_no}_{depth}"
        name = base
        while name in self.rels:
            name += "_"
        self.rels.add(name)
        return name

    def fresh_var(self, prefix: str = "y") -> str:
        i = 1
        while f"{prefix}{i}" in self.vars:
            i += 1
        name = f"{prefix}{i}"
        self.vars.add(name)
        return name

    def note_vars(self, names: Sequence[str]) -> None:
        self.vars.update(names)


# ------------------------------------------------------------------ helpers


_lit_var_names = _lit_vars


def _rule_var_names(rule: NetlogRule) -> set[str]:
    out = _lit_var_names(rule.head)
    for lit in rule.body:
        out |= _lit_var_names(lit)
    return out


def _program_preds(rules: Sequence[NetlogRule]) -> dict[str, int]:
    out: dict[str, int] = {}
    for r in rules:
        lits = [r.head] + [l for l in r.body if isinstance(l, RelLit)]
        for lit in lits:
            out.setdefault(lit.pred, len(lit.args))
    return out


# -------------------------------------------------------- step 1: localize


def _mark_holding(lit: RelLit, rule_no: int) -> RelLit:
    if not lit.args:
        raise CompileError(
            f"rule {rule_no}: relation {lit.pred} has no argument to hold"
        )
    if not isinstance(lit.args[0], Var):
        raise CompileError(
            f"rule {rule_no}: literal {print_literal(lit)} has a constant in "
            f"the holding position; only variables can name the holder"
        )
    return RelLit(lit.pred, lit.args, lit.positive, holding=0)


def localize(program: NetlogProgram) -> NetlogProgram:
    """Mark the leftmost argument of every literal as the holding variable."""
    rules = []
    for no, rule in enumerate(program.rules, start=1):
        head = _mark_holding(rule.head, no)
        body = tuple(
            _mark_holding(l, no) if isinstance(l, RelLit) else l
            for l in rule.body
        )
        rules.append(NetlogRule(head, body, push=False))
    return NetlogProgram(tuple(rules))


# ---------------------------------------------------- step 2: rewrite rules


class _UF:
    def __init__(self, n: int):
        self.p = list(range(n))

    def find(self, i: int) -> int:
        while self.p[i] != i:
            self.p[i] = self.p[self.p[i]]
            i = self.p[i]
        return i

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.p[ra] = rb


def _components(
    items: Sequence[NetlogLiteral], connection_vars: frozenset[str]
) -> list[list[NetlogLiteral]]:
    """Partition into minimal groups closed under sharing a variable outside
    the connection variables."""
    uf = _UF(len(items))
    owner: dict[str, int] = {}
    for i, lit in enumerate(items):
        for v in _lit_var_names(lit) - connection_vars:
            if v in owner:
                uf.union(owner[v], i)
            else:
                owner[v] = i
    groups: dict[int, list[NetlogLiteral]] = {}
    order: list[int] = []
    for i, lit in enumerate(items):
        root = uf.find(i)
        if root not in groups:
            groups[root] = []
            order.append(root)
    for i, lit in enumerate(items):
        groups[uf.find(i)].append(lit)
    return [groups[r] for r in order]


def _rewrite(
    rule: NetlogRule,
    holding_var: str,
    connection_vars: frozenset[str],
    delta: int,
    names: _Names,
    rule_no: int,
    counter: list[int],
    depth: int,
) -> tuple[list[NetlogRule], int]:
    rel = [l for l in rule.body if isinstance(l, RelLit)]
    guards = [l for l in rule.body if isinstance(l, GuardLit)]
    local_rel = [l for l in rel if l.holding_var() == holding_var]
    remote_rel = [l for l in rel if l.holding_var() != holding_var]
    if not remote_rel:
        return [rule], 1

    head_vars = _lit_var_names(rule.head)
    anchor: set[str] = set()
    for l in local_rel:
        anchor |= _lit_var_names(l)
    local_cover = anchor | head_vars | set(connection_vars)
    local_guards = [g for g in guards if _lit_var_names(g) <= local_cover]
    remote_items: list[NetlogLiteral] = list(remote_rel) + [
        g for g in guards if g not in local_guards
    ]

    neighbor_vars = {
        l.args[1].name
        for l in local_rel
        if l.positive
        and l.pred == EDGE_PRED
        and len(l.args) == 2
        and isinstance(l.args[1], Var)
    }

    out_rules: list[NetlogRule] = []
    sub_atoms: list[RelLit] = []
    kappas: list[int] = []
    for comp in _components(remote_items, connection_vars):
        comp_rel = [l for l in comp if isinstance(l, RelLit)]
        if not comp_rel:
            raise CompileError(
                f"rule {rule_no}: comparison "
                f"{'; '.join(print_literal(l) for l in comp)} shares no "
                f"variables with any relation literal and cannot be placed"
            )
        counter[0] += 1
        qname = names.subquery(rule_no, counter[0], depth)
        hvs = sorted(
            {l.holding_var() for l in comp_rel if l.holding_var() is not None}
        )
        connected = [v for v in hvs if v in neighbor_vars]
        comp_vars: set[str] = set()
        for l in comp:
            comp_vars |= _lit_var_names(l)
        if connected:
            connector = connected[0]
            bridge = RelLit(
                EDGE_PRED, (Var(connector), Var(holding_var)), True, 0
            )
            body = list(comp) + [bridge]
            shared = sorted(
                (comp_vars | {holding_var}) & (anchor | head_vars)
            )
            args = [holding_var] + [v for v in shared if v != holding_var]
            head = RelLit(qname, tuple(Var(v) for v in args), True, 0)
            sub = NetlogRule(head, tuple(body), push=False)
            sub_rules, k = _rewrite(
                sub,
                connector,
                connection_vars | {connector},
                delta,
                names,
                rule_no,
                counter,
                depth + 1,
            )
            out_rules.extend(sub_rules)
            kappas.append(k + 1)
            sub_atoms.append(head)
        else:
            pivot = min(comp_rel, key=print_literal)
            pivot_var = pivot.holding_var()
            assert pivot_var is not None
            y = names.fresh_var()
            body = list(comp) + [GuardLit("=", Var(y), Var(pivot_var))]
            shared = sorted(comp_vars & (anchor | head_vars))
            head = RelLit(
                qname, tuple(Var(v) for v in [y] + shared), True, 0
            )
            sub = NetlogRule(head, tuple(body), push=False)
            sub_rules, k = _rewrite(
                sub,
                pivot_var,
                connection_vars | {pivot_var},
                delta,
                names,
                rule_no,
                counter,
                depth + 1,
            )
            src = names.fresh_var()
            dst = names.fresh_var()
            relay = NetlogRule(
                RelLit(qname, tuple(Var(v) for v in [dst] + shared), True, 0),
                (
                    RelLit(
                        qname, tuple(Var(v) for v in [src] + shared), True, 0
                    ),
                    RelLit(EDGE_PRED, (Var(src), Var(dst)), True, 0),
                ),
                push=False,
            )
            out_rules.extend(sub_rules)
            out_rules.append(relay)
            kappas.append(k + 1 + delta)
            sub_atoms.append(
                RelLit(
                    qname,
                    tuple(Var(v) for v in [holding_var] + shared),
                    True,
                    0,
                )
            )

    new_body: list[NetlogLiteral] = [
        l
        for l in rule.body
        if (isinstance(l, RelLit) and l in local_rel)
        or (isinstance(l, GuardLit) and l in local_guards)
    ]
    new_body.extend(sub_atoms)
    r_prime = NetlogRule(rule.head, tuple(new_body), push=False)
    return [r_prime] + out_rules, max(kappas)


def rewrite_rule(
    ctx: RewriteContext,
    delta: int,
    names: Optional[_Names] = None,
    rule_no: int = 1,
) -> tuple[list[NetlogRule], int]:
    """Split one localized rule so every output rule reads only facts held
    on a single node; returns the rules and the round count kappa_r."""
    if names is None:
        names = _Names(set(_program_preds([ctx.rule])))
    names.note_vars(sorted(_rule_var_names(ctx.rule)))
    return _rewrite(
        ctx.rule,
        ctx.holding_var,
        ctx.connection_vars,
        delta,
        names,
        rule_no,
        [0],
        1,
    )


# --------------------------------------------------- step 3: communication


def add_comm(program: NetlogProgram) -> NetlogProgram:
    """Mark rules whose head holder differs from the body holder (up to
    equality guards) with the push arrow."""
    rules = []
    for rule in program.rules:
        hvs = body_holding_vars(rule)
        head_hv = rule.head.holding_var()
        if not hvs or head_hv is None:
            rules.append(rule)
            continue
        uf = _equality_classes(rule)
        push = not uf.same(head_hv, hvs[0])
        rules.append(replace(rule, push=push))
    return NetlogProgram(tuple(rules))


# ------------------------------------------------------- step 4: the clock


def _guarded(rule: NetlogRule, names: _Names) -> NetlogRule:
    used = _rule_var_names(rule)
    qv = "q"
    i = 1
    while qv in used:
        qv = f"q{i}"
        i += 1
    hvs = body_holding_vars(rule)
    x = hvs[0] if hvs else rule.head.holding_var()
    assert x is not None
    extra = (
        RelLit("clock", (Var(x), Var(qv)), True, 0),
        GuardLit("!=", Var(qv), Const(0)),
    )
    return replace(rule, body=rule.body + extra)


def _head_vars(arity: int) -> list[Var]:
    return [Var(f"v{i}") for i in range(1, arity + 1)]


def _commit_rules(pred: str, arity: int) -> list[NetlogRule]:
    vs = _head_vars(arity)
    temp = RelLit("temp" + pred, tuple(vs), True, 0)
    full = RelLit(pred, tuple(vs), True, 0)
    absent = RelLit(pred, tuple(vs), False, 0)
    zero = RelLit("clock", (vs[0], Const(0)), True, 0)
    return [
        NetlogRule(full, (temp, zero)),
        NetlogRule(
            RelLit("continue", (vs[0],), True, 0), (temp, absent, zero)
        ),
        NetlogRule(
            RelLit("inf", (Var("w"), vs[0]), True, 0),
            (
                temp,
                absent,
                zero,
                RelLit(EDGE_PRED, (vs[0], Var("w")), True, 0),
            ),
            push=True,
        ),
    ]


def _bookkeeping(kappa: int) -> list[NetlogRule]:
    x, y, z, p, q = Var("x"), Var("y"), Var("z"), Var("p"), Var("q")

    def rel(pred: str, *args: Term, positive: bool = True) -> RelLit:
        return RelLit(pred, tuple(args), positive, holding=0)

    k = Const(kappa)
    return [
        NetlogRule(rel("continue", x), (rel("start", x),)),
        NetlogRule(
            rel("inf", y, x),
            (rel("start", x), rel(EDGE_PRED, x, y)),
            push=True,
        ),
        NetlogRule(rel("clock", x, k), (rel("start", x),)),
        NetlogRule(
            rel("clock", x, p),
            (
                rel("clock", x, q),
                GuardLit(">=", q, Const(1)),
                GuardLit("dec", p, q),
                rel("stop", x, positive=False),
            ),
        ),
        NetlogRule(
            rel("clock", x, k),
            (rel("clock", x, Const(0)), rel("stop", x, positive=False)),
        ),
        # The origin's notice is relayed while the stage clock is still
        # counting, so it reaches the whole network within one stage (the
        # stage length is at least the diameter); a copy arriving at clock
        # zero is ignored everywhere, so notices never leak across stages.
        NetlogRule(
            rel("inf", z, x),
            (
                rel("inf", y, x),
                rel(EDGE_PRED, y, z),
                GuardLit("!=", x, z),
                rel("clock", y, q),
                GuardLit(">=", q, Const(1)),
            ),
            push=True,
        ),
        NetlogRule(
            rel("continue", x),
            (
                rel("inf", x, y),
                rel("clock", x, q),
                GuardLit("!=", q, Const(0)),
            ),
        ),
        NetlogRule(
            rel("continue", x),
            (
                rel("continue", x),
                rel("clock", x, q),
                GuardLit("!=", q, Const(0)),
            ),
        ),
        NetlogRule(
            rel("stop", x),
            (rel("continue", x, positive=False), rel("clock", x, Const(0))),
        ),
    ]


def add_clocks(
    program: NetlogProgram,
    kappa: int,
    delta: int,
    source: NetlogProgram,
) -> NetlogProgram:
    """Guard every computation rule with the stage clock, divert intensional
    derivations into temporary relations, and add the commit and
    coordination rules."""
    intensional = list(source.intensional_preds)
    arities = _program_preds(list(source.rules))
    used = set(_program_preds(list(program.rules))) | set(arities)
    clash = sorted(
        (set(RESERVED) & used)
        | {"temp" + p for p in intensional if "temp" + p in used}
    )
    if clash:
        raise CompileError(
            f"program uses reserved relation names: {', '.join(clash)}"
        )
    names = _Names(used)
    rules = []
    for rule in program.rules:
        g = _guarded(rule, names)
        if rule.head.pred in intensional:
            g = replace(
                g, head=replace(g.head, pred="temp" + rule.head.pred)
            )
        rules.append(g)
    for pred in intensional:
        rules.extend(_commit_rules(pred, arities[pred]))
    rules.extend(_bookkeeping(kappa))
    return NetlogProgram(tuple(rules))


# -------------------------------------------------- step 5: keeping results


def inflate(program: NetlogProgram, source: NetlogProgram) -> NetlogProgram:
    """Add the copy rules: auxiliaries survive while the clock runs,
    committed source relations survive unconditionally."""
    source_preds = (
        set(source.intensional_preds)
        | set(source.body_only_preds)
        | {EDGE_PRED}
    )
    arities = _program_preds(list(program.rules))
    rules = list(program.rules)
    for pred in sorted(arities):
        if pred in RESERVED or pred in source_preds or pred == EDGE_PRED:
            continue
        vs = _head_vars(arities[pred])
        lit = RelLit(pred, tuple(vs), True, 0)
        rules.append(
            NetlogRule(
                lit,
                (
                    lit,
                    RelLit("clock", (vs[0], Var("q")), True, 0),
                    GuardLit("!=", Var("q"), Const(0)),
                ),
            )
        )
    intensional = _program_preds(list(source.rules))
    for pred in sorted(source.intensional_preds):
        vs = _head_vars(intensional[pred])
        lit = RelLit(pred, tuple(vs), True, 0)
        rules.append(NetlogRule(lit, (lit,)))
    return NetlogProgram(tuple(rules))


# -------------------------------------------------------------- entry point


def compile(  # noqa: A001 - the operation is named after what it does
    source: Union[NetlogProgram, str], delta: int
) -> CompileOutput:
    """Compile a centralized rule program for a network of the given
    diameter; the output program computes the same facts stage for stage."""
    if isinstance(source, str):
        source = parse_datalog(source)
    if delta < 0:
        raise CompileError("the network diameter cannot be negative")
    for no, rule in enumerate(source.rules, start=1):
        if rule.push or rule.head.holding is not None:
            raise CompileError(
                f"rule {no}: source rules must be centralized (no @ or ^)"
            )
        try:
            _check_rule_safety(rule)
        except Exception as e:
            raise CompileError(f"rule {no}: {e}") from None
    p1 = localize(source)
    names = _Names(set(_program_preds(list(source.rules))) | {EDGE_PRED})
    traces: list[tuple[tuple[NetlogRule, ...], int]] = []
    rewritten: list[NetlogRule] = []
    for no, rule in enumerate(p1.rules, start=1):
        h = rule.head.holding_var()
        assert h is not None
        names.note_vars(sorted(_rule_var_names(rule)))
        t_r, k_r = _rewrite(
            rule, h, frozenset({h}), delta, names, no, [0], 1
        )
        traces.append((tuple(t_r), k_r))
        rewritten.extend(t_r)
    kappa = max([delta, 1] + [k for _, k in traces])
    p2 = NetlogProgram(tuple(rewritten))
    p3 = add_comm(p2)
    p4 = add_clocks(p3, kappa, delta, source)
    pnl = inflate(p4, source)
    for no, rule in enumerate(pnl.rules, start=1):
        violation = check_localization(rule)
        if violation is not None:
            raise CompileError(
                f"compiled rule {no} ({print_rule(rule)}) violates "
                f"localization restriction {violation}"
            )
        try:
            static_order(rule.body, prebound=body_holding_vars(rule))
        except NetlogError as e:
            raise CompileError(
                f"compiled rule {no} ({print_rule(rule)}) is not evaluable: {e}"
            ) from None
    return CompileOutput(
        program=pnl, kappa=kappa, delta=delta, traces=tuple(traces)
    )


def emit_text(output: CompileOutput) -> str:
    """Emitted program text: a header comment recording the stage length and
    the diameter, then the rules."""
    return (
        f"% kappa={output.kappa} delta={output.delta}\n"
        + print_program(output.program)
    )
