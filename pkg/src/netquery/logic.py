"""ASTs, parser, printers, and syntactic transformations for graph queries.

Formulas are built from edge atoms G(s,t), named relation atoms, comparisons
over the ordered constant universe, neighborhood-membership atoms, boolean
connectives, and plain or radius-bounded quantifiers.  Fixpoint queries wrap a
formula body with a named relation of fixed arity.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Iterator, Mapping, Optional, Union


class ParseError(ValueError):
    """Syntax error with source position."""

    def __init__(
        self,
        message: str,
        text: str = "",
        pos: int = 0,
        *,
        line: Optional[int] = None,
        col: Optional[int] = None,
    ):
        if line is None:
            line = text.count("\n", 0, pos) + 1
            col = pos - (text.rfind("\n", 0, pos) + 1) + 1
        super().__init__(f"{message} (line {line}, column {col})")
        self.pos = pos
        self.line = line
        self.col = col


class FormulaError(ValueError):
    """Structural error in a formula or fixpoint query."""


# --------------------------------------------------------------------- terms


@dataclass(frozen=True, slots=True)
class Var:
    name: str


@dataclass(frozen=True, slots=True)
class Const:
    value: int


Term = Union[Var, Const]


def term_str(t: Term) -> str:
    return t.name if isinstance(t, Var) else str(t.value)


# ------------------------------------------------------------------ formulas


@dataclass(frozen=True, slots=True)
class Atom:
    pred: str
    args: tuple[Term, ...]


@dataclass(frozen=True, slots=True)
class Cmp:
    op: str  # "=", "!=", ">="
    left: Term
    right: Term


@dataclass(frozen=True, slots=True)
class InNbhd:
    """Membership atom: term lies within distance `radius` of `center`."""

    term: Term
    radius: int
    center: Term


@dataclass(frozen=True, slots=True)
class Not:
    body: "Formula"


@dataclass(frozen=True, slots=True)
class And:
    parts: tuple["Formula", ...]


@dataclass(frozen=True, slots=True)
class Or:
    parts: tuple["Formula", ...]


@dataclass(frozen=True, slots=True)
class Exists:
    var: str
    body: "Formula"
    bound: Optional[tuple[Term, int]] = None  # (center, radius)


@dataclass(frozen=True, slots=True)
class Forall:
    var: str
    body: "Formula"
    bound: Optional[tuple[Term, int]] = None


@dataclass(frozen=True, slots=True)
class BoolConst:
    value: bool


Formula = Union[Atom, Cmp, InNbhd, Not, And, Or, Exists, Forall, BoolConst]

TRUE = BoolConst(True)
FALSE = BoolConst(False)

EDGE_PRED = "G"


@dataclass(frozen=True, slots=True)
class FixpointQuery:
    name: str
    vars: tuple[str, ...]
    body: Formula
    radius: Optional[int] = None

    @property
    def arity(self) -> int:
        return len(self.vars)


@dataclass(frozen=True, slots=True)
class FormulaStats:
    num_free_vars: int
    num_bound_vars: int
    num_constants: int

    @property
    def w(self) -> int:
        return self.num_free_vars + self.num_bound_vars + self.num_constants

    @property
    def v(self) -> int:
        return self.num_free_vars + self.num_bound_vars


# ------------------------------------------------------- smart constructors


def make_not(body: Formula) -> Formula:
    if isinstance(body, BoolConst):
        return BoolConst(not body.value)
    return Not(body)


def make_and(parts) -> Formula:
    flat: list[Formula] = []
    for p in parts:
        if isinstance(p, BoolConst):
            if not p.value:
                return FALSE
            continue
        if isinstance(p, And):
            flat.extend(p.parts)
        else:
            flat.append(p)
    if not flat:
        return TRUE
    if len(flat) == 1:
        return flat[0]
    return And(tuple(flat))


def make_or(parts) -> Formula:
    flat: list[Formula] = []
    for p in parts:
        if isinstance(p, BoolConst):
            if p.value:
                return TRUE
            continue
        if isinstance(p, Or):
            flat.extend(p.parts)
        else:
            flat.append(p)
    if not flat:
        return FALSE
    if len(flat) == 1:
        return flat[0]
    return Or(tuple(flat))


# ------------------------------------------------------------------- walking


def subformulas(f: Formula) -> Iterator[Formula]:
    """Pre-order traversal of all subformulas, including f itself."""
    yield f
    if isinstance(f, Not):
        yield from subformulas(f.body)
    elif isinstance(f, (And, Or)):
        for p in f.parts:
            yield from subformulas(p)
    elif isinstance(f, (Exists, Forall)):
        yield from subformulas(f.body)


def atoms(f: Formula) -> Iterator[Formula]:
    """All atomic subformulas (relation atoms, comparisons, memberships)."""
    for g in subformulas(f):
        if isinstance(g, (Atom, Cmp, InNbhd)):
            yield g


def _terms_of(g: Formula) -> tuple[Term, ...]:
    if isinstance(g, Atom):
        return g.args
    if isinstance(g, Cmp):
        return (g.left, g.right)
    if isinstance(g, InNbhd):
        return (g.term, g.center)
    return ()


def free_vars(f: Formula) -> tuple[str, ...]:
    """Free variables in order of first occurrence."""
    out: list[str] = []

    def go(g: Formula, bound: frozenset[str]) -> None:
        if isinstance(g, (Atom, Cmp, InNbhd)):
            for t in _terms_of(g):
                if isinstance(t, Var) and t.name not in bound and t.name not in out:
                    out.append(t.name)
        elif isinstance(g, Not):
            go(g.body, bound)
        elif isinstance(g, (And, Or)):
            for p in g.parts:
                go(p, bound)
        elif isinstance(g, (Exists, Forall)):
            if g.bound is not None:
                c = g.bound[0]
                if isinstance(c, Var) and c.name not in bound and c.name not in out:
                    out.append(c.name)
            go(g.body, bound | {g.var})

    go(f, frozenset())
    return tuple(out)


def bound_vars(f: Formula) -> tuple[str, ...]:
    out = []
    for g in subformulas(f):
        if isinstance(g, (Exists, Forall)):
            out.append(g.var)
    return tuple(out)


def constants(f: Formula) -> tuple[int, ...]:
    """Distinct constant values in order of first occurrence."""
    out: list[int] = []
    for g in atoms(f):
        for t in _terms_of(g):
            if isinstance(t, Const) and t.value not in out:
                out.append(t.value)
    return tuple(out)


def is_ground(f: Formula) -> bool:
    return not free_vars(f) and not bound_vars(f)


# ------------------------------------------------------------------ printing

_PREC_ATOM = 100
_PREC_NOT = 90
_PREC_AND = 50
_PREC_OR = 40
_PREC_QUANT = 10


def _prec(f: Formula) -> int:
    if isinstance(f, Not):
        return _PREC_NOT
    if isinstance(f, And):
        return _PREC_AND
    if isinstance(f, Or):
        return _PREC_OR
    if isinstance(f, (Exists, Forall)):
        return _PREC_QUANT
    return _PREC_ATOM


def print_formula(f: Formula) -> str:
    def wrap(g: Formula, minimum: int) -> str:
        s = print_formula(g)
        return f"({s})" if _prec(g) < minimum else s

    if isinstance(f, BoolConst):
        return "true" if f.value else "false"
    if isinstance(f, Atom):
        return f"{f.pred}({','.join(term_str(a) for a in f.args)})"
    if isinstance(f, Cmp):
        return f"{term_str(f.left)} {f.op} {term_str(f.right)}"
    if isinstance(f, InNbhd):
        return f"{term_str(f.term)} in N^{f.radius}({term_str(f.center)})"
    if isinstance(f, Not):
        return "!" + wrap(f.body, _PREC_NOT)
    if isinstance(f, And):
        return " & ".join(wrap(p, _PREC_AND + 1) for p in f.parts)
    if isinstance(f, Or):
        return " | ".join(wrap(p, _PREC_OR + 1) for p in f.parts)
    if isinstance(f, (Exists, Forall)):
        kw = "exists" if isinstance(f, Exists) else "forall"
        rng = ""
        if f.bound is not None:
            center, radius = f.bound
            rng = f" in N^{radius}({term_str(center)})"
        return f"{kw} {f.var}{rng}. {print_formula(f.body)}"
    raise TypeError(f"not a formula: {f!r}")


def print_fixpoint(q: FixpointQuery) -> str:
    return f"mu {q.name}({','.join(q.vars)}). {print_formula(q.body)}"


def rename_var(f: Formula, old: str, new: str) -> Formula:
    """Rename a variable everywhere, including binders (capture-naive)."""

    def tr(t: Term) -> Term:
        return Var(new) if isinstance(t, Var) and t.name == old else t

    def go(g: Formula) -> Formula:
        if isinstance(g, Atom):
            return Atom(g.pred, tuple(tr(a) for a in g.args))
        if isinstance(g, Cmp):
            return Cmp(g.op, tr(g.left), tr(g.right))
        if isinstance(g, InNbhd):
            return InNbhd(tr(g.term), g.radius, tr(g.center))
        if isinstance(g, Not):
            return Not(go(g.body))
        if isinstance(g, And):
            return And(tuple(go(p) for p in g.parts))
        if isinstance(g, Or):
            return Or(tuple(go(p) for p in g.parts))
        if isinstance(g, (Exists, Forall)):
            bound = g.bound
            if bound is not None:
                bound = (tr(bound[0]), bound[1])
            var = new if g.var == old else g.var
            return type(g)(var, go(g.body), bound)
        return g

    return go(f)


def canonical_print(f: Formula) -> str:
    """Printed form with bound variables renamed q1, q2, ... in pre-order.

    Alpha-equivalent formulas print identically; the string doubles as the
    canonical query key throughout the distributed engines.
    """
    counter = [0]

    def go(g: Formula, env: dict[str, str]) -> str:
        def ts(t: Term) -> str:
            if isinstance(t, Var):
                return env.get(t.name, t.name)
            return str(t.value)

        def wrap(h: Formula, minimum: int) -> str:
            s = go(h, env)
            return f"({s})" if _prec(h) < minimum else s

        if isinstance(g, BoolConst):
            return "true" if g.value else "false"
        if isinstance(g, Atom):
            return f"{g.pred}({','.join(ts(a) for a in g.args)})"
        if isinstance(g, Cmp):
            return f"{ts(g.left)} {g.op} {ts(g.right)}"
        if isinstance(g, InNbhd):
            return f"{ts(g.term)} in N^{g.radius}({ts(g.center)})"
        if isinstance(g, Not):
            return "!" + wrap(g.body, _PREC_NOT)
        if isinstance(g, And):
            return " & ".join(wrap(p, _PREC_AND + 1) for p in g.parts)
        if isinstance(g, Or):
            return " | ".join(wrap(p, _PREC_OR + 1) for p in g.parts)
        if isinstance(g, (Exists, Forall)):
            kw = "exists" if isinstance(g, Exists) else "forall"
            counter[0] += 1
            fresh = f"q{counter[0]}"
            rng = ""
            if g.bound is not None:
                center, radius = g.bound
                rng = f" in N^{radius}({ts(center)})"
            inner = dict(env)
            inner[g.var] = fresh
            return f"{kw} {fresh}{rng}. {go(g.body, inner)}"
        raise TypeError(f"not a formula: {g!r}")

    return go(f, {})


# ----------------------------------------------------------------- tokenizer

_TOKEN_RE = re.compile(
    r"""(?P<ws>\s+|\#[^\n]*)
      | (?P<neq>!=)
      | (?P<geq>>=)
      | (?P<name>[A-Za-z_][A-Za-z0-9_']*)
      | (?P<int>\d+)
      | (?P<op>[()=.,&|!^])
    """,
    re.VERBOSE,
)

_KEYWORDS = {"exists", "forall", "in", "mu", "true", "false"}


@dataclass(frozen=True, slots=True)
class _Tok:
    kind: str  # "name", "int", or the operator text itself
    text: str
    pos: int


def _tokenize(text: str) -> list[_Tok]:
    toks: list[_Tok] = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", text, pos)
        if m.lastgroup == "ws":
            pass
        elif m.lastgroup == "name":
            toks.append(_Tok("name", m.group(), m.start()))
        elif m.lastgroup == "int":
            toks.append(_Tok("int", m.group(), m.start()))
        elif m.lastgroup == "neq":
            toks.append(_Tok("!=", "!=", m.start()))
        elif m.lastgroup == "geq":
            toks.append(_Tok(">=", ">=", m.start()))
        else:
            toks.append(_Tok(m.group(), m.group(), m.start()))
        pos = m.end()
    toks.append(_Tok("eof", "", len(text)))
    return toks


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0

    # -- token helpers

    def peek(self) -> _Tok:
        return self.toks[self.i]

    def next(self) -> _Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, kind: str) -> _Tok:
        t = self.peek()
        if t.kind != kind:
            shown = t.text if t.kind != "eof" else "end of input"
            raise ParseError(f"expected {kind!r}, found {shown!r}", self.text, t.pos)
        return self.next()

    def fail(self, message: str) -> None:
        raise ParseError(message, self.text, self.peek().pos)

    # -- grammar

    def parse_formula(self) -> Formula:
        f = self.parse_or()
        if self.peek().kind != "eof":
            self.fail(f"trailing input starting at {self.peek().text!r}")
        return f

    def parse_or(self) -> Formula:
        parts = [self.parse_and()]
        while self.peek().kind == "|":
            self.next()
            parts.append(self.parse_and())
        return parts[0] if len(parts) == 1 else Or(tuple(parts))

    def parse_and(self) -> Formula:
        parts = [self.parse_unary()]
        while self.peek().kind == "&":
            self.next()
            parts.append(self.parse_unary())
        return parts[0] if len(parts) == 1 else And(tuple(parts))

    def parse_unary(self) -> Formula:
        t = self.peek()
        if t.kind == "!":
            self.next()
            return Not(self.parse_unary())
        if t.kind == "name" and t.text in ("exists", "forall"):
            return self.parse_quantifier()
        return self.parse_primary()

    def parse_quantifier(self) -> Formula:
        kw = self.next().text
        var_tok = self.expect("name")
        if var_tok.text in _KEYWORDS:
            raise ParseError(
                f"keyword {var_tok.text!r} cannot be a variable", self.text, var_tok.pos
            )
        bound = None
        if self.peek().kind == "name" and self.peek().text == "in":
            self.next()
            bound = self.parse_nbhd_range()
        self.expect(".")
        body = self.parse_or()
        cls = Exists if kw == "exists" else Forall
        return cls(var_tok.text, body, bound)

    def parse_nbhd_range(self) -> tuple[Term, int]:
        n = self.expect("name")
        if n.text != "N":
            raise ParseError("expected neighborhood range N^k(...)", self.text, n.pos)
        self.expect("^")
        radius = int(self.expect("int").text)
        self.expect("(")
        center = self.parse_term()
        self.expect(")")
        return (center, radius)

    def parse_term(self) -> Term:
        t = self.peek()
        if t.kind == "int":
            self.next()
            return Const(int(t.text))
        if t.kind == "name" and t.text not in _KEYWORDS:
            self.next()
            return Var(t.text)
        self.fail(f"expected a term, found {t.text!r}")
        raise AssertionError

    def parse_primary(self) -> Formula:
        t = self.peek()
        if t.kind == "(":
            self.next()
            f = self.parse_or()
            self.expect(")")
            return f
        if t.kind == "name" and t.text == "true":
            self.next()
            return TRUE
        if t.kind == "name" and t.text == "false":
            self.next()
            return FALSE
        if t.kind == "name" and t.text in _KEYWORDS and t.text != "N":
            self.fail(f"unexpected keyword {t.text!r}")
        # Relation atom: NAME '(' ...
        if t.kind == "name" and self.toks[self.i + 1].kind == "(":
            name = self.next().text
            self.next()  # '('
            args = [self.parse_term()]
            while self.peek().kind == ",":
                self.next()
                args.append(self.parse_term())
            self.expect(")")
            return Atom(name, tuple(args))
        # Otherwise: a term followed by a comparison or membership.
        left = self.parse_term()
        op = self.peek()
        if op.kind in ("=", "!=", ">="):
            self.next()
            right = self.parse_term()
            return Cmp(op.kind, left, right)
        if op.kind == "name" and op.text == "in":
            self.next()
            center, radius = self.parse_nbhd_range()
            return InNbhd(left, radius, center)
        self.fail("expected a comparison or membership after term")
        raise AssertionError


# ------------------------------------------------- post-parse normalization


def _check_arities(f: Formula, fixpoint_name: Optional[str] = None,
                   fixpoint_arity: Optional[int] = None) -> None:
    seen: dict[str, int] = {EDGE_PRED: 2}
    if fixpoint_name is not None:
        seen[fixpoint_name] = fixpoint_arity  # type: ignore[assignment]
    for g in atoms(f):
        if isinstance(g, Atom):
            expected = seen.get(g.pred)
            if expected is None:
                seen[g.pred] = len(g.args)
            elif expected != len(g.args):
                raise FormulaError(
                    f"arity mismatch for {g.pred}: {len(g.args)} vs {expected}"
                )


def _uniquify_binders(f: Formula) -> Formula:
    """Rename shadowing/duplicate binders so every binder is distinct and no
    bound name collides with a free name."""
    taken = set(free_vars(f))

    def go(g: Formula, env: dict[str, str]) -> Formula:
        def tr(t: Term) -> Term:
            if isinstance(t, Var) and t.name in env:
                return Var(env[t.name])
            return t

        if isinstance(g, Atom):
            return Atom(g.pred, tuple(tr(a) for a in g.args))
        if isinstance(g, Cmp):
            return Cmp(g.op, tr(g.left), tr(g.right))
        if isinstance(g, InNbhd):
            return InNbhd(tr(g.term), g.radius, tr(g.center))
        if isinstance(g, Not):
            return Not(go(g.body, env))
        if isinstance(g, And):
            return And(tuple(go(p, env) for p in g.parts))
        if isinstance(g, Or):
            return Or(tuple(go(p, env) for p in g.parts))
        if isinstance(g, (Exists, Forall)):
            bound = g.bound
            if bound is not None:
                bound = (tr(bound[0]), bound[1])
            name = g.var
            if name in taken:
                base = name
                while name in taken:
                    name += "'"
            taken.add(name)
            inner = dict(env)
            inner[g.var] = name
            return type(g)(name, go(g.body, inner), bound)
        return g

    return go(f, {})


def _drop_unused_binders(f: Formula) -> Formula:
    if isinstance(f, Not):
        return make_not(_drop_unused_binders(f.body))
    if isinstance(f, And):
        return make_and(_drop_unused_binders(p) for p in f.parts)
    if isinstance(f, Or):
        return make_or(_drop_unused_binders(p) for p in f.parts)
    if isinstance(f, (Exists, Forall)):
        body = _drop_unused_binders(f.body)
        if f.var not in free_vars(body):
            # The quantifier range is never empty (any node for a plain
            # binder; the center's own neighborhood for a bounded one), so a
            # vacuous binder can be dropped without changing truth.
            return body
        return type(f)(f.var, body, f.bound)
    return f


def normalize(f: Formula) -> Formula:
    return _uniquify_binders(_drop_unused_binders(f))


# ----------------------------------------------------------------- front end


def parse_formula(text: str) -> Formula:
    f = _Parser(text).parse_formula()
    _check_arities(f)
    return normalize(f)


def parse_fixpoint(text: str) -> FixpointQuery:
    p = _Parser(text)
    kw = p.expect("name")
    if kw.text != "mu":
        raise ParseError("fixpoint query must start with 'mu'", text, kw.pos)
    name_tok = p.expect("name")
    if name_tok.text in _KEYWORDS:
        raise ParseError("fixpoint relation name is a keyword", text, name_tok.pos)
    p.expect("(")
    vars_: list[str] = [p.expect("name").text]
    while p.peek().kind == ",":
        p.next()
        vars_.append(p.expect("name").text)
    p.expect(")")
    p.expect(".")
    body = p.parse_or()
    if p.peek().kind != "eof":
        raise ParseError(f"trailing input {p.peek().text!r}", text, p.peek().pos)
    if len(set(vars_)) != len(vars_):
        raise FormulaError(f"duplicate declared variables in mu {name_tok.text}")
    _check_arities(body, fixpoint_name=name_tok.text, fixpoint_arity=len(vars_))
    body = normalize(body)
    fv = set(free_vars(body))
    declared = set(vars_)
    if not fv <= declared:
        raise FormulaError(
            f"body free variables {sorted(fv - declared)} are not declared"
        )
    q = FixpointQuery(name_tok.text, tuple(vars_), body, radius=None)
    radius = _detect_radius(q)
    if radius is not None:
        q = FixpointQuery(q.name, q.vars, q.body, radius=radius)
    return q


# ------------------------------------------------------------------- stats


def stats(f: Union[Formula, FixpointQuery]) -> FormulaStats:
    if isinstance(f, FixpointQuery):
        body = f.body
        ell = len(f.vars)
    else:
        body = f
        ell = len(free_vars(f))
    k = len(bound_vars(body))
    c = len(constants(body))
    return FormulaStats(ell, k, c)


# ------------------------------------------------------------ substitution


def substitute(f: Formula, var: str, value: int) -> Formula:
    """Replace every occurrence of `var` by the constant; remove its binder.

    Instantiating a radius-bounded binder keeps the range constraint as an
    explicit membership conjunct (for exists) or disjoined negation (for
    forall), preserving the bounded quantifier's semantics.
    """
    const = Const(value)

    def tr(t: Term) -> Term:
        return const if isinstance(t, Var) and t.name == var else t

    def go(g: Formula) -> Formula:
        if isinstance(g, Atom):
            return Atom(g.pred, tuple(tr(a) for a in g.args))
        if isinstance(g, Cmp):
            return Cmp(g.op, tr(g.left), tr(g.right))
        if isinstance(g, InNbhd):
            return InNbhd(tr(g.term), g.radius, tr(g.center))
        if isinstance(g, Not):
            return make_not(go(g.body))
        if isinstance(g, And):
            return make_and(go(p) for p in g.parts)
        if isinstance(g, Or):
            return make_or(go(p) for p in g.parts)
        if isinstance(g, (Exists, Forall)):
            if g.var == var:
                body = go(g.body)  # binder removed; occurrences replaced
                if g.bound is None:
                    return body
                center, radius = g.bound
                guard = InNbhd(const, radius, tr(center))
                if isinstance(g, Exists):
                    return make_and([guard, body])
                return make_or([make_not(guard), body])
            bound = g.bound
            if bound is not None:
                bound = (tr(bound[0]), bound[1])
            return type(g)(g.var, go(g.body), bound)
        return g

    return go(f)


# ----------------------------------------------------------- relativization


def relativize(f: Formula, center: str, k: int) -> Formula:
    """Bound every quantifier by N^k(center) and constrain every other free
    variable to N^k(center) via top-level membership conjuncts."""
    if center not in free_vars(f):
        raise FormulaError(f"center {center!r} is not a free variable")
    if k < 1:
        raise FormulaError("radius must be >= 1")
    c = Var(center)

    def go(g: Formula) -> Formula:
        if isinstance(g, Not):
            return Not(go(g.body))
        if isinstance(g, And):
            return And(tuple(go(p) for p in g.parts))
        if isinstance(g, Or):
            return Or(tuple(go(p) for p in g.parts))
        if isinstance(g, (Exists, Forall)):
            return type(g)(g.var, go(g.body), (c, k))
        return g

    out = go(f)
    guards = [
        InNbhd(Var(y), k, c) for y in free_vars(f) if y != center
    ]
    if guards:
        out = make_and([out] + guards)
    return out


def relativize_fixpoint(q: FixpointQuery, k: int) -> FixpointQuery:
    body = relativize(q.body, q.vars[0], k)
    return FixpointQuery(q.name, q.vars, body, radius=k)


def _detect_radius(q: FixpointQuery) -> Optional[int]:
    """Return k if q.body is exactly relativize(inner, x1, k) for some inner."""
    radii: set[int] = set()
    for g in subformulas(q.body):
        if isinstance(g, (Exists, Forall)) and g.bound is not None:
            center, radius = g.bound
            if not (isinstance(center, Var) and center.name == q.vars[0]):
                return None
            radii.add(radius)
        if isinstance(g, InNbhd):
            if not (isinstance(g.center, Var) and g.center.name == q.vars[0]):
                return None
            radii.add(g.radius)
    if len(radii) != 1:
        return None
    k = radii.pop()
    inner = _strip_relativization(q.body, q.vars[0], k)
    if inner is None:
        return None
    try:
        rebuilt = relativize(inner, q.vars[0], k)
    except FormulaError:
        return None
    if canonical_print(rebuilt) == canonical_print(q.body):
        return k
    return None


def _strip_relativization(f: Formula, center: str, k: int) -> Optional[Formula]:
    """Best-effort inverse of relativize: unbound quantifiers, drop top-level
    membership guards of free variables."""

    def unbind(g: Formula) -> Formula:
        if isinstance(g, Not):
            return Not(unbind(g.body))
        if isinstance(g, And):
            return And(tuple(unbind(p) for p in g.parts))
        if isinstance(g, Or):
            return Or(tuple(unbind(p) for p in g.parts))
        if isinstance(g, (Exists, Forall)):
            return type(g)(g.var, unbind(g.body), None)
        return g

    if isinstance(f, And):
        core: list[Formula] = []
        for p in f.parts:
            if (
                isinstance(p, InNbhd)
                and p.radius == k
                and isinstance(p.center, Var)
                and p.center.name == center
                and isinstance(p.term, Var)
            ):
                continue
            core.append(p)
        if not core:
            return None
        return unbind(make_and(core))
    return unbind(f)


# ------------------------------------------------------------- simplification

FactLookup = Callable[[Formula], Optional[bool]]


def _as_lookup(facts) -> FactLookup:
    if facts is None:
        return lambda _g: None
    if callable(facts):
        return facts
    if isinstance(facts, Mapping):
        table = dict(facts)

        def lookup(g: Formula) -> Optional[bool]:
            return table.get(print_formula(g))

        return lookup
    raise TypeError("facts must be a mapping, a callable, or None")


def simplify(f: Formula, facts=None) -> Formula:
    """Replace ground atoms decided by `facts` with boolean constants and
    propagate constants through the connectives, to a fixed point.

    `facts` maps printed ground atoms to truth values (or is a callable from
    atom ASTs to Optional[bool]).  Ground comparisons are always decided.
    """
    lookup = _as_lookup(facts)

    def go(g: Formula) -> Formula:
        if isinstance(g, BoolConst):
            return g
        if isinstance(g, Atom):
            if all(isinstance(t, Const) for t in g.args):
                v = lookup(g)
                if v is not None:
                    return BoolConst(v)
            return g
        if isinstance(g, Cmp):
            lv, rv = g.left, g.right
            if isinstance(lv, Const) and isinstance(rv, Const):
                a, b = lv.value, rv.value
                return BoolConst(
                    a == b if g.op == "=" else a != b if g.op == "!=" else a >= b
                )
            if lv == rv:
                return BoolConst(g.op != "!=")
            return g
        if isinstance(g, InNbhd):
            if g.term == g.center:
                return TRUE  # distance zero
            if isinstance(g.term, Const) and isinstance(g.center, Const):
                v = lookup(g)
                if v is not None:
                    return BoolConst(v)
            return g
        if isinstance(g, Not):
            return make_not(go(g.body))
        if isinstance(g, And):
            return make_and(go(p) for p in g.parts)
        if isinstance(g, Or):
            return make_or(go(p) for p in g.parts)
        if isinstance(g, (Exists, Forall)):
            body = go(g.body)
            if isinstance(body, BoolConst):
                # Quantifier ranges are never empty: any node for a plain
                # binder, and N^k(center) always contains the center.
                return body
            return type(g)(g.var, body, g.bound)
        raise TypeError(f"not a formula: {g!r}")

    return go(f)
