"""Parser, printer, stats, substitution, relativization, simplification."""
from __future__ import annotations

import pytest

from netquery.logic import (
    And,
    Atom,
    BoolConst,
    Cmp,
    Const,
    Exists,
    FixpointQuery,
    Forall,
    FormulaError,
    InNbhd,
    Not,
    Or,
    ParseError,
    Var,
    canonical_print,
    free_vars,
    parse_formula,
    parse_fixpoint,
    print_formula,
    print_fixpoint,
    relativize,
    relativize_fixpoint,
    simplify,
    stats,
    substitute,
)

from netquery.fixtures import (
    ROUTING_TABLE_TEXT,
    SPANNING_TREE_TEXT,
    TRANSITIVE_CLOSURE_TEXT,
)


# ----------------------------------------------------------------- parsing


def test_parse_exists_edge_atom():
    f = parse_formula("exists y. G(x,y)")
    assert isinstance(f, Exists)
    assert f.var == "y"
    assert f.bound is None
    assert f.body == Atom("G", (Var("x"), Var("y")))
    assert free_vars(f) == ("x",)


def test_parse_conjunction_with_comparison():
    f = parse_formula("G(x,h) & h = d")
    assert isinstance(f, And)
    assert f.parts[0] == Atom("G", (Var("x"), Var("h")))
    assert f.parts[1] == Cmp("=", Var("h"), Var("d"))


def test_parse_bounded_quantifier():
    f = parse_formula("exists z in N^2(x). G(x,z)")
    assert isinstance(f, Exists)
    assert f.var == "z"
    assert f.bound == (Var("x"), 2)
    assert f.body == Atom("G", (Var("x"), Var("z")))


def test_parse_membership_atom():
    f = parse_formula("y in N^1(x)")
    assert f == InNbhd(Var("y"), 1, Var("x"))


def test_parse_precedence_not_and_or():
    f = parse_formula("!G(x,y) & G(y,z) | x = y")
    assert isinstance(f, Or)
    left = f.parts[0]
    assert isinstance(left, And)
    assert isinstance(left.parts[0], Not)


def test_quantifier_body_extends_right():
    f = parse_formula("exists y. G(x,y) & x != y")
    assert isinstance(f, Exists)
    assert isinstance(f.body, And)


def test_parse_errors_carry_position():
    with pytest.raises(ParseError) as e:
        parse_formula("exists . G(x,y)")
    assert "column" in str(e.value)
    with pytest.raises(ParseError):
        parse_formula("G(x,")
    with pytest.raises(ParseError):
        parse_formula("")


def test_arity_mismatch_rejected():
    with pytest.raises(FormulaError):
        parse_formula("G(x,y) & G(x,y,z)")
    with pytest.raises(FormulaError):
        parse_formula("G(x)")


def test_comments_and_whitespace():
    f = parse_formula("# leading comment\n  G( x , y )  # trailing\n")
    assert f == Atom("G", (Var("x"), Var("y")))


def test_shadowed_binders_are_renamed():
    f = parse_formula("exists x. (G(x,y) & exists x. G(x,x))")
    binders = []
    stack = [f]
    while stack:
        g = stack.pop()
        if isinstance(g, Exists):
            binders.append(g.var)
            stack.append(g.body)
        elif isinstance(g, And):
            stack.extend(g.parts)
    assert len(binders) == len(set(binders)) == 2


def test_unused_binder_dropped():
    f = parse_formula("exists y. G(x,x)")
    assert f == Atom("G", (Var("x"), Var("x")))


# ------------------------------------------------------------- fixpoints


def test_parse_fixpoint_transitive_closure():
    q = parse_fixpoint(TRANSITIVE_CLOSURE_TEXT)
    assert q.name == "T"
    assert q.vars == ("x", "y")
    assert q.arity == 2
    assert q.radius is None


def test_parse_fixpoint_spanning_tree():
    q = parse_fixpoint(SPANNING_TREE_TEXT)
    assert q.name == "ST"
    assert q.arity == 2


def test_fixpoint_arity_mismatch():
    with pytest.raises(FormulaError):
        parse_fixpoint("mu T(x). exists y. T(x,y)")


def test_fixpoint_undeclared_free_variable():
    with pytest.raises(FormulaError):
        parse_fixpoint("mu T(x). G(x,y)")


def test_fixpoint_radius_detection_roundtrip():
    q = parse_fixpoint(SPANNING_TREE_TEXT)
    rq = relativize_fixpoint(q, 1)
    assert rq.radius == 1
    reparsed = parse_fixpoint(print_fixpoint(rq))
    assert reparsed.radius == 1
    assert canonical_print(reparsed.body) == canonical_print(rq.body)


# ----------------------------------------------------------------- stats


def test_stats_simple_exists():
    s = stats(parse_formula("exists y. G(x,y)"))
    assert (s.num_free_vars, s.num_bound_vars, s.num_constants) == (1, 1, 0)
    assert s.w == 2 and s.v == 2


def test_stats_routing_table_body():
    s = stats(parse_fixpoint(ROUTING_TABLE_TEXT))
    assert s.num_free_vars == 3
    assert s.num_bound_vars == 2
    assert s.num_constants == 0
    assert s.w == 5 and s.v == 5


def test_stats_constants_only():
    s = stats(parse_formula("G(3,4)"))
    assert (s.num_free_vars, s.num_bound_vars, s.num_constants) == (0, 0, 2)
    assert s.w == 2 and s.v == 0


def test_stats_repeated_constant_counts_once():
    s = stats(parse_formula("G(3,3)"))
    assert s.num_constants == 1


# ------------------------------------------------------------ substitution


def test_substitute_free_variable():
    f = parse_formula("exists y. G(x,y)")
    g = substitute(f, "x", 3)
    assert g == Exists("y", Atom("G", (Const(3), Var("y"))))


def test_substitute_bound_variable_removes_binder():
    f = parse_formula("exists y. G(x,y)")
    g = substitute(f, "y", 3)
    assert g == Atom("G", (Var("x"), Const(3)))


def test_substitute_comparison():
    f = parse_formula("G(x,y) & y = d")
    g = substitute(f, "d", 7)
    assert g == And((Atom("G", (Var("x"), Var("y"))), Cmp("=", Var("y"), Const(7))))


def test_substitute_bounded_exists_keeps_guard():
    f = parse_formula("exists z in N^2(x). G(x,z)")
    g = substitute(f, "z", 5)
    assert g == And((InNbhd(Const(5), 2, Var("x")), Atom("G", (Var("x"), Const(5)))))


def test_substitute_bounded_forall_guards_by_implication():
    f = parse_formula("forall z in N^1(x). G(x,z)")
    g = substitute(f, "z", 5)
    assert g == Or(
        (Not(InNbhd(Const(5), 1, Var("x"))), Atom("G", (Var("x"), Const(5))))
    )


def test_substitute_keeps_w_constant_for_single_occurrence():
    f = parse_formula("exists y. G(x,y) & x != 9")
    before = stats(f).w
    after = stats(substitute(f, "y", 7)).w
    assert before == after  # one variable out, one fresh constant in


# --------------------------------------------------------- relativization


def test_relativize_adds_free_var_guard():
    f = parse_formula("G(x,y)")
    out = relativize(f, "x", 1)
    assert out == And((Atom("G", (Var("x"), Var("y"))), InNbhd(Var("y"), 1, Var("x"))))


def test_relativize_bounds_quantifier():
    f = parse_formula("exists z. G(x,z)")
    out = relativize(f, "x", 2)
    assert out == Exists("z", Atom("G", (Var("x"), Var("z"))), (Var("x"), 2))


def test_relativize_identity_when_nothing_to_do():
    f = parse_formula("G(x,x)")
    assert relativize(f, "x", 3) == f


def test_relativize_requires_free_center():
    with pytest.raises(FormulaError):
        relativize(parse_formula("G(y,z)"), "x", 1)


def test_relativize_preserves_free_vars_and_quantifier_count():
    f = parse_formula("(exists z. G(x,z)) & (forall u. (!G(u,y) | u = x))")
    out = relativize(f, "x", 2)
    assert set(free_vars(out)) == set(free_vars(f))
    def count_quants(g):
        from netquery.logic import subformulas, Exists, Forall
        return sum(1 for h in subformulas(g) if isinstance(h, (Exists, Forall)))
    assert count_quants(out) == count_quants(f)


# ----------------------------------------------------------- simplification


def test_simplify_true_conjunct_removed():
    f = parse_formula("G(1,2) & G(3,4)")
    out = simplify(f, {"G(1,2)": True})
    assert out == Atom("G", (Const(3), Const(4)))


def test_simplify_true_disjunct_decides():
    f = parse_formula("G(1,2) | G(3,4)")
    assert simplify(f, {"G(1,2)": True}) == BoolConst(True)


def test_simplify_negation_and_unknown():
    f = parse_formula("!G(1,2) & G(3,4)")
    out = simplify(f, {"G(1,2)": False})
    assert out == Atom("G", (Const(3), Const(4)))


def test_simplify_ground_comparisons_always_decided():
    assert simplify(parse_formula("3 >= 2")) == BoolConst(True)
    assert simplify(parse_formula("2 >= 3")) == BoolConst(False)
    assert simplify(parse_formula("3 != 3")) == BoolConst(False)
    assert simplify(parse_formula("x = x")) == BoolConst(True)


def test_simplify_quantifier_over_constant_body():
    f = Exists("y", BoolConst(False))
    assert simplify(f) == BoolConst(False)
    g = Forall("y", BoolConst(True))
    assert simplify(g) == BoolConst(True)


def test_simplify_self_membership():
    assert simplify(parse_formula("x in N^1(x)")) == BoolConst(True)


# ------------------------------------------------------------- round trips


ROUND_TRIP_CASES = [
    "exists y. G(x,y)",
    "forall y. (!G(x,y) | (exists z. (G(y,z) & z != x)))",
    "G(x,h) & h = d",
    "exists z in N^2(x). G(x,z)",
    "y in N^1(x) & G(x,y)",
    "!(G(1,2) | G(2,1)) & x >= 3",
    "forall u. exists v. (G(u,v) | u = v)",
    "ReqNode(x) & (exists w. (T(w,x) & w != y))",
]


@pytest.mark.parametrize("text", ROUND_TRIP_CASES)
def test_parse_print_round_trip(text):
    f = parse_formula(text)
    g = parse_formula(print_formula(f))
    assert canonical_print(f) == canonical_print(g)


def test_canonical_print_identifies_alpha_equivalent():
    f = parse_formula("exists y. G(x,y)")
    g = parse_formula("exists banana. G(x,banana)")
    assert canonical_print(f) == canonical_print(g)
    assert canonical_print(f) != canonical_print(parse_formula("exists y. G(y,x)"))


def test_fixpoint_print_round_trip():
    for text in (ROUTING_TABLE_TEXT, SPANNING_TREE_TEXT, TRANSITIVE_CLOSURE_TEXT):
        q = parse_fixpoint(text)
        r = parse_fixpoint(print_fixpoint(q))
        assert q.name == r.name and q.vars == r.vars
        assert canonical_print(q.body) == canonical_print(r.body)
