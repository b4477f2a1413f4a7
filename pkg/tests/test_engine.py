import io

import pytest

from anonnet.engine import (
    EMPTY,
    AutomatonSpec,
    MalformedAutomatonError,
    compose,
    detection_automaton,
    dump_trace_csv,
    identity_automaton,
    initial_configuration,
    map_input,
    product,
    run_to_fixed_point,
    run_to_stable_outputs,
    step,
    wrap_output,
)
from anonnet.network import build_complete, build_labeled_ring, build_line, replicate_ring
from anonnet.tracking import max_tracking_automaton


def test_single_node_detection():
    g = build_line(1)
    cfg = initial_configuration(g, detection_automaton(), [1])
    cfg = step(g, detection_automaton(), cfg)
    assert cfg.ys == (1,)


def test_two_line_detection_two_steps():
    g = build_line(2)
    spec = detection_automaton()
    cfg = initial_configuration(g, spec, [0, 1])
    cfg = step(g, spec, cfg)
    assert cfg.ys == (0, 1)
    cfg = step(g, spec, cfg)
    assert cfg.ys == (1, 1)


def test_identity_config_unchanged():
    g = build_complete(3)
    spec = identity_automaton()
    cfg = initial_configuration(g, spec, [5, 6, 7])
    assert step(g, spec, cfg) == cfg


def test_run_to_fixed_point_detection_three_line():
    g = build_line(3)
    res = run_to_fixed_point(g, detection_automaton(), [0, 0, 1])
    assert res.status == "fixed-point"
    assert res.config.ys == (1, 1, 1)
    assert res.steps <= 4


def test_run_all_zero_immediate():
    g = build_line(3)
    res = run_to_fixed_point(g, detection_automaton(), [0, 0, 0])
    assert res.status == "fixed-point"
    assert res.steps == 0
    assert res.config.ys == (0, 0, 0)


def counter_automaton():
    # never reaches a fixed point: memory increments forever
    def init(x, d):
        return 0, 0, (EMPTY,) * d

    def transition(x, z, y, inc):
        return z + 1, y, (EMPTY,) * len(inc)

    return AutomatonSpec("counter", transition, init)


def test_budget_result_carries_last_config():
    g = build_line(2)
    res = run_to_fixed_point(g, counter_automaton(), [0, 0], max_steps=10)
    assert res.status == "budget"
    assert res.steps == 10
    assert res.config.zs == (10, 10)
    assert not res.ok


def test_malformed_arity_raises():
    bad = AutomatonSpec("bad", lambda x, z, y, inc: (z, y, (EMPTY,) * (len(inc) + 1)))
    g = build_line(2)
    cfg = initial_configuration(g, bad, [0, 0])
    with pytest.raises(MalformedAutomatonError):
        step(g, bad, cfg)


def test_determinism_bit_for_bit():
    g = build_complete(4)
    a = run_to_fixed_point(g, detection_automaton(), [0, 1, 0, 0], record_trace=True)
    b = run_to_fixed_point(g, detection_automaton(), [0, 1, 0, 0], record_trace=True)
    assert a.trace == b.trace and a.steps == b.steps


def test_compose_product_law():
    g = build_line(3)
    inputs = [1, 0, 0]
    single = run_to_fixed_point(g, detection_automaton(), inputs, record_trace=True)
    pair = run_to_fixed_point(g, compose(detection_automaton(), detection_automaton()), inputs, record_trace=True)
    assert pair.steps == single.steps
    for cfg_pair, cfg_one in zip(pair.trace, single.trace):
        for i in range(g.n):
            assert cfg_pair.zs[i] == (cfg_one.zs[i], cfg_one.zs[i])
            assert cfg_pair.ys[i] == (cfg_one.ys[i], cfg_one.ys[i])
            for k in range(g.degree(i)):
                assert cfg_pair.msgs[i][k] == (cfg_one.msgs[i][k], cfg_one.msgs[i][k])


def test_compose_with_identity_preserves_first_component():
    g = build_line(3)
    inputs = [0, 1, 0]
    single = run_to_fixed_point(g, detection_automaton(), inputs, record_trace=True)
    pair = run_to_fixed_point(g, compose(detection_automaton(), identity_automaton()), inputs, record_trace=True)
    assert pair.steps == single.steps
    for cfg_pair, cfg_one in zip(pair.trace, single.trace):
        assert tuple(z[0] for z in cfg_pair.zs) == cfg_one.zs
        assert tuple(y[0] for y in cfg_pair.ys) == cfg_one.ys


def test_compose_max_min_tracking_substrate():
    from anonnet.tracking import min_tracking_automaton

    g = build_complete(4)
    res = run_to_fixed_point(g, compose(max_tracking_automaton(), min_tracking_automaton()), [3, 9, 1, 4])
    assert res.status == "fixed-point"
    assert all(y == (9, 1) for y in res.config.ys)


def test_input_schedule_changes_tracking():
    g = build_line(3)
    res = run_to_fixed_point(
        g, max_tracking_automaton(), [2, 5, 1], schedule=[(4, 1, 0)], max_steps=500
    )
    assert res.status == "fixed-point"
    # after node 1 drops from 5 to 0 the true maximum is 2
    assert all(y == 2 for y in res.config.ys)
    assert res.config.xs == (2, 0, 1)


def test_schedule_validation():
    g = build_line(2)
    with pytest.raises(ValueError):
        run_to_fixed_point(g, detection_automaton(), [0, 0], schedule=[(1, 0, 1), (1, 0, 0)])
    with pytest.raises(ValueError):
        run_to_fixed_point(g, detection_automaton(), [0, 0], schedule=[(1, 7, 1)])


def permuted_network(g, inputs, perm):
    """Relabel nodes by perm, keeping each edge's port at its (moved) node."""
    from anonnet.network import from_edges

    edges = []
    for i in range(g.n):
        for j, p in g.adj[i]:
            edges.append((perm[i], perm[j], p))
    inv = [0] * g.n
    for i in range(g.n):
        inv[perm[i]] = i
    return from_edges(g.n, edges), [inputs[inv[i]] for i in range(g.n)]


@pytest.mark.parametrize("perm", [(1, 0, 2, 3), (3, 2, 1, 0), (2, 0, 3, 1)])
def test_anonymity_port_consistent_relabeling(perm):
    # permuting ids together with a port-preserving isomorphism permutes traces
    g = build_complete(4)
    inputs = [0, 1, 0, 1]
    g2, inputs2 = permuted_network(g, inputs, perm)
    a = run_to_fixed_point(g, max_tracking_automaton(), inputs, record_trace=True, max_steps=200)
    b = run_to_fixed_point(g2, max_tracking_automaton(), inputs2, record_trace=True, max_steps=200)
    assert a.steps == b.steps
    for ca, cb in zip(a.trace, b.trace):
        for i in range(g.n):
            assert ca.xs[i] == cb.xs[perm[i]]
            assert ca.zs[i] == cb.zs[perm[i]]
            assert ca.ys[i] == cb.ys[perm[i]]


def test_ring_replication_trace_equality():
    g = build_labeled_ring(5)
    x = [1, 0, 0, 1, 0]
    for m in (2, 3):
        r = replicate_ring(g, m)
        a = run_to_fixed_point(g, max_tracking_automaton(), x, record_trace=True, max_steps=300)
        b = run_to_fixed_point(r, max_tracking_automaton(), x * m, record_trace=True, max_steps=300)
        horizon = min(len(a.trace), len(b.trace))
        for t in range(horizon):
            for j in range(r.n):
                assert b.trace[t].zs[j] == a.trace[t].zs[j % 5]


def test_run_to_stable_outputs_on_detection():
    g = build_line(4)
    res = run_to_stable_outputs(g, detection_automaton(), [0, 0, 0, 1], window=8)
    assert res.status == "stable"
    assert res.config.ys == (1, 1, 1, 1)
    assert res.steps <= 4


def test_map_input_and_wrap_output():
    g = build_line(2)
    spec = wrap_output(map_input(detection_automaton(), lambda x: 1 - x), lambda y: f"y={y}")
    res = run_to_fixed_point(g, spec, [0, 1])
    assert res.config.ys == ("y=1", "y=1")  # inverted inputs: the 0 becomes a 1


def test_product_three_components():
    g = build_line(2)
    spec = product([detection_automaton(), identity_automaton(), detection_automaton()])
    res = run_to_fixed_point(g, spec, [1, 0])
    assert res.config.ys[0] == (1, EMPTY, 1)


def test_trace_csv_dump():
    g = build_line(2)
    res = run_to_fixed_point(g, detection_automaton(), [0, 1], record_trace=True)
    buf = io.StringIO()
    dump_trace_csv(buf, g, res.trace, observer=lambda t, c: f"t{t}")
    lines = buf.getvalue().splitlines()
    assert lines[0] == "t,node,x,y,z,out,observer"
    assert len(lines) == 1 + 2 * len(res.trace)
    assert lines[1].endswith("t0")
