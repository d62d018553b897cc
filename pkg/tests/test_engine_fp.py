"""Distributed fixpoint evaluation against the centralized oracle."""
import pytest

from netquery import simnet
from netquery.engine_fp import (
    EngineError,
    FPQueryEngine,
    default_fp_round_cap,
    evaluation_window,
    run_qe_fp,
)
from netquery.fixtures import (
    ROUTING_TABLE_TEXT,
    SPANNING_TREE_TEXT,
    TRANSITIVE_CLOSURE_TEXT,
    exhaustive_graphs,
    fixture_graphs,
)
from netquery.logic import FixpointQuery, parse_fixpoint, stats
from netquery.oracle import eval_fp, path_graph, ring_graph
from netquery.simnet import ANONYMOUS, make_network

GRAPHS = dict(fixture_graphs())


def _net(g, **kw):
    return make_network(g, **kw)


def _run_with_reports(g, q, requester, **kw):
    net = _net(g)
    cap = default_fp_round_cap(net, q)
    return simnet.run(net, FPQueryEngine(), init={requester: q}, round_cap=cap, **kw)


# ------------------------------------------------------------ window length


def test_evaluation_window_uses_clock_budget():
    # twice diameter times the variable-or-constant count, as for plain
    # first-order queries
    assert evaluation_window(3, 3, 1) == 6
    assert evaluation_window(3, 3, 2) == 12
    assert evaluation_window(5, 5, 2) == 20


def test_evaluation_window_floor_for_degenerate_queries():
    # a single-variable body still needs the full deadline horizon
    assert evaluation_window(1, 1, 2) == 5
    assert evaluation_window(1, 1, 0) == 1


# ------------------------------------------------- matches the oracle


def test_transitive_closure_matches_oracle_on_fixtures():
    q = parse_fixpoint(TRANSITIVE_CLOSURE_TEXT)
    checked = 0
    for name, g in fixture_graphs():
        if g.n > 4:
            continue
        got, _ = run_qe_fp(_net(g), q, min(g.nodes))
        want = eval_fp(g, q).final
        assert got.tuples == want.tuples, name
        checked += 1
    assert checked == 8


def test_transitive_closure_matches_oracle_exhaustively():
    q = parse_fixpoint(TRANSITIVE_CLOSURE_TEXT)
    checked = 0
    for name, g in exhaustive_graphs(3):
        got, _ = run_qe_fp(_net(g), q, min(g.nodes))
        assert got.tuples == eval_fp(g, q).final.tuples, name
        checked += 1
    assert checked == 5


def test_routing_table_matches_oracle():
    q = parse_fixpoint(ROUTING_TABLE_TEXT)
    for name in ["path-3", "ring-3"]:
        g = GRAPHS[name]
        got, _ = run_qe_fp(_net(g), q, min(g.nodes))
        assert got.tuples == eval_fp(g, q).final.tuples, name


def test_spanning_tree_matches_oracle():
    q = parse_fixpoint(SPANNING_TREE_TEXT)
    for name in ["path-3", "ring-4"]:
        g = GRAPHS[name].with_unary({"ReqNode": [1]})
        got, _ = run_qe_fp(_net(g), q, 1)
        assert got.tuples == eval_fp(g, q).final.tuples, name


def test_accepts_query_text():
    g = GRAPHS["path-3"]
    got, _ = run_qe_fp(_net(g), TRANSITIVE_CLOSURE_TEXT, 1)
    assert got.arity == 2
    assert got.tuples == eval_fp(g, parse_fixpoint(TRANSITIVE_CLOSURE_TEXT)).final.tuples


# ------------------------------------------------------- stage synchrony


def test_iterations_commit_oracle_stages_in_lockstep():
    q = parse_fixpoint(TRANSITIVE_CLOSURE_TEXT)
    for name in ["path-4", "ring-4"]:
        g = GRAPHS[name]
        trace = eval_fp(g, q)
        res, _ = _run_with_reports(g, q, min(g.nodes))
        reps = res.per_node
        counts = {len(r.history) for r in reps.values()}
        assert counts == {len(trace.stages) - 1}, name
        for i in range(len(trace.stages) - 1):
            union = set()
            for r in reps.values():
                union |= set(r.history[i])
            assert union == set(trace.stages[i + 1].tuples), (name, i)


def test_committed_tuples_stay_at_their_first_coordinate():
    q = parse_fixpoint(TRANSITIVE_CLOSURE_TEXT)
    res, _ = _run_with_reports(GRAPHS["ring-4"], q, 1)
    for a, rep in res.per_node.items():
        assert all(t[0] == a for t in rep.tuples)


def test_empty_body_stops_after_one_iteration():
    q = parse_fixpoint("mu T(x,y). G(x,y) & x = y & x != y")
    res, metrics = _run_with_reports(GRAPHS["path-3"], q, 1)
    for rep in res.per_node.values():
        assert rep.history == (frozenset(),)
        assert rep.tuples == frozenset()
    assert metrics.dist_time >= 1


# ------------------------------------------------------------- resources


def test_response_time_within_budget():
    q = parse_fixpoint(TRANSITIVE_CLOSURE_TEXT)
    w = stats(q).w
    for name, g in fixture_graphs():
        if g.n > 4:
            continue
        _, m = run_qe_fp(_net(g), q, min(g.nodes))
        d = g.diameter
        assert m.dist_time <= d + (g.n**q.arity) * (2 * d * w + d), name


def test_message_size_logarithmic_in_network_size():
    q = parse_fixpoint(TRANSITIVE_CLOSURE_TEXT)
    for name in ["path-3", "path-6"]:
        g = GRAPHS[name]
        _, m = run_qe_fp(_net(g), q, min(g.nodes))
        # formula text plus a constant number of ids and counters
        assert m.max_msg_bits <= 8 * 64 + 6 * g.n.bit_length(), name


# ---------------------------------------------------------- insensitivity


def test_outcome_insensitive_to_delivery_order_and_ports():
    q = parse_fixpoint(TRANSITIVE_CLOSURE_TEXT)
    g = GRAPHS["ring-4"]
    want = eval_fp(g, q).final
    signatures = set()
    for order_seed in (0, 1, 7):
        for port_seed in (0, 3):
            net = make_network(g, port_seed=port_seed)
            got, m = run_qe_fp(net, q, 2, order_seed=order_seed)
            assert got.tuples == want.tuples
            signatures.add(
                (
                    tuple(got.sorted_tuples()),
                    m.dist_time,
                    m.max_msg_bits,
                    tuple(sorted(m.msgs_per_node.items())),
                )
            )
    assert len(signatures) == 1


def test_outcome_insensitive_to_requester():
    q = parse_fixpoint(TRANSITIVE_CLOSURE_TEXT)
    g = GRAPHS["path-3"]
    want = eval_fp(g, q).final
    for req in g.nodes:
        got, _ = run_qe_fp(_net(g), q, req)
        assert got.tuples == want.tuples


# ------------------------------------------------------------- validation


def test_rejects_anonymous_networks():
    net = make_network(path_graph(3), mode=ANONYMOUS)
    with pytest.raises(EngineError):
        run_qe_fp(net, TRANSITIVE_CLOSURE_TEXT, 1)


def test_rejects_unknown_requester():
    with pytest.raises(EngineError):
        run_qe_fp(_net(path_graph(3)), TRANSITIVE_CLOSURE_TEXT, 9)


def test_rejects_radius_bounded_queries():
    q0 = parse_fixpoint(TRANSITIVE_CLOSURE_TEXT)
    q = FixpointQuery(q0.name, q0.vars, q0.body, radius=2)
    with pytest.raises(EngineError):
        run_qe_fp(_net(path_graph(3)), q, 1)


def test_rejects_unused_declared_variable():
    with pytest.raises(EngineError):
        run_qe_fp(_net(path_graph(3)), "mu T(x,y). G(x,x)", 1)


def test_rejects_reserved_variable_names():
    with pytest.raises(EngineError):
        run_qe_fp(_net(path_graph(3)), "mu T(q1,y). G(q1,y)", 1)


def test_rejects_foreign_relations():
    with pytest.raises(EngineError):
        run_qe_fp(_net(path_graph(3)), "mu T(x,y). R(x,y)", 1)


def test_ring_six_converges():
    q = parse_fixpoint(TRANSITIVE_CLOSURE_TEXT)
    g = ring_graph(6)
    got, m = run_qe_fp(_net(g), q, 1)
    assert got.tuples == eval_fp(g, q).final.tuples
    d = g.diameter
    assert m.dist_time <= d + (g.n**2) * (2 * d * stats(q).w + d)
