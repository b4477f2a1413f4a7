import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anonnet.engine import EMPTY, run_to_fixed_point
from anonnet.network import build_complete, build_labeled_ring, build_line, random_connected_graph
from anonnet.rng import SplitMix64
from anonnet.tracking import (
    RESTART,
    SELF,
    TrackingChecker,
    TrackingState,
    max_tracking_automaton,
    min_tracking_automaton,
    min_tracking_transition,
    observe_pointer_graph,
    pointer_chain_end,
    tracking_transition,
)


def test_root_steady_state_broadcasts_estimate():
    st0 = TrackingState(4, SELF, 4)
    st1, msg = tracking_transition(st0, 4, (EMPTY, EMPTY))
    assert st1 == st0
    assert msg == ("E", 4)


def test_adopt_best_estimate_smallest_port_and_restart():
    st0 = TrackingState(3, SELF, 3)
    st1, msg = tracking_transition(st0, 3, (("E", 4), ("E", 5)))
    assert st1 == TrackingState(5, 1, 3)
    assert msg == RESTART
    # tie on the better value: smallest port wins
    st2, msg2 = tracking_transition(st0, 3, (("E", 5), ("E", 5)))
    assert st2.pointer == 0 and st2.estimate == 5
    assert msg2 == RESTART


def test_input_change_restarts():
    st0 = TrackingState(5, SELF, 5)
    st1, msg = tracking_transition(st0, 2, (EMPTY,))
    assert st1 == TrackingState(2, SELF, 2)
    assert msg == RESTART


def test_input_change_beats_adoption():
    st0 = TrackingState(5, SELF, 5)
    st1, msg = tracking_transition(st0, 2, (("E", 9),))
    assert st1 == TrackingState(2, SELF, 2) and msg == RESTART


def test_restart_from_parent_resets():
    st0 = TrackingState(9, 0, 4)
    st1, msg = tracking_transition(st0, 4, (RESTART, EMPTY))
    assert st1 == TrackingState(4, SELF, 4)
    assert msg == RESTART


def test_adoption_beats_restart_from_parent():
    st0 = TrackingState(5, 0, 4)
    st1, msg = tracking_transition(st0, 4, (RESTART, ("E", 8)))
    assert st1 == TrackingState(8, 1, 4)
    assert msg == RESTART


def test_parent_confirmation_rebroadcasts():
    st0 = TrackingState(7, 0, 4)
    st1, msg = tracking_transition(st0, 4, (("E", 7), EMPTY))
    assert st1 == st0
    assert msg == ("E", 7)


def test_no_case_broadcasts_nothing():
    st0 = TrackingState(7, 0, 4)
    st1, msg = tracking_transition(st0, 4, (EMPTY, ("E", 6)))
    assert st1 == st0
    assert msg is EMPTY
    # equal estimate from a non-parent port is ignored too
    st2, msg2 = tracking_transition(st0, 4, (EMPTY, ("E", 7)))
    assert st2 == st0 and msg2 is EMPTY


def _negate_msg(m):
    if type(m) is tuple and m[0] == "E":
        return ("E", -m[1])
    return m


@given(
    m=st.integers(-10, 10),
    p=st.integers(-1, 2),
    up=st.integers(-10, 10),
    u=st.integers(-10, 10),
    msgs=st.lists(
        st.one_of(
            st.none(),
            st.just(RESTART),
            st.tuples(st.just("E"), st.integers(-10, 10)),
        ),
        min_size=3,
        max_size=3,
    ),
)
@settings(max_examples=300, deadline=None)
def test_min_tracking_is_negated_max_tracking(m, p, up, u, msgs):
    state = TrackingState(m, p, up)
    neg_state = TrackingState(-m, p, -up)
    neg_msgs = tuple(_negate_msg(x) for x in msgs)
    st1, out1 = min_tracking_transition(state, u, tuple(msgs))
    st2, out2 = tracking_transition(neg_state, -u, neg_msgs)
    assert st1 == TrackingState(-st2.estimate, st2.pointer, -st2.input_prev)
    assert out1 == _negate_msg(out2)


def test_min_tracking_two_line():
    g = build_line(2)
    res = run_to_fixed_point(g, min_tracking_automaton(), [1, 4])
    assert res.status == "fixed-point"
    assert res.config.ys == (1, 1)


def test_min_tracking_single_node():
    g = build_line(1)
    res = run_to_fixed_point(g, min_tracking_automaton(), [3])
    assert res.config.ys == (3,)


def test_pointer_graph_initial_empty():
    g = build_complete(4)
    from anonnet.engine import initial_configuration

    cfg = initial_configuration(g, max_tracking_automaton(), [1, 2, 3, 4])
    view = observe_pointer_graph(g, cfg)
    assert view.edges == ()
    assert view.acyclic
    assert all(view.valid)


def test_pointer_graph_converged_forest_roots_at_max():
    g = build_line(5)
    inputs = [2, 7, 1, 3, 5]
    res = run_to_fixed_point(g, max_tracking_automaton(), inputs, max_steps=200)
    view = observe_pointer_graph(g, res.config)
    assert view.acyclic and all(view.valid)
    states = list(res.config.zs)
    for i in range(g.n):
        root = view.root_of[i]
        assert res.config.xs[root] == max(inputs)
        assert states[i].estimate == max(inputs)
        assert pointer_chain_end(g, states, i) == root


def test_fresh_adopter_has_no_incoming_edges():
    # one slot after a node adopts a better estimate, nothing points at it
    g = build_line(3)
    from anonnet.engine import initial_configuration, step

    spec = max_tracking_automaton()
    cfg = initial_configuration(g, spec, [0, 0, 9])
    seen_adoption = False
    prev_pointers = [z.pointer for z in cfg.zs]
    for _ in range(8):
        cfg = step(g, spec, cfg)
        pointers = [z.pointer for z in cfg.zs]
        view = observe_pointer_graph(g, cfg)
        for i in range(g.n):
            if pointers[i] != prev_pointers[i] and pointers[i] != SELF:
                seen_adoption = True
                assert all(j != i for (_a, j) in view.edges)
        prev_pointers = pointers
    assert seen_adoption


def _run_with_checker(g, inputs, schedule, extra=0):
    checker = TrackingChecker(g, "max", quiet_time=(max((t for t, _n, _v in schedule), default=0)))
    res = run_to_fixed_point(
        g,
        max_tracking_automaton(),
        inputs,
        schedule=schedule,
        max_steps=2000 + extra,
        on_step=checker.on_step,
    )
    return res


def test_invariants_under_scripted_schedules():
    rng = SplitMix64(42)
    for trial in range(60):
        n = rng.randint(2, 7)
        g = random_connected_graph(n, rng)
        inputs = [rng.randint(0, 12) for _ in range(n)]
        entries = []
        for node in range(n):
            times = sorted({rng.randint(1, 25) for _ in range(rng.randint(0, 3))})
            for t in times:
                entries.append((t, node, rng.randint(0, 12)))
        res = _run_with_checker(g, inputs, entries)
        assert res.status == "fixed-point"
        final_inputs = res.config.xs
        assert all(y == max(final_inputs) for y in res.config.ys)


def test_convergence_within_5n_static():
    for g, inputs in [
        (build_line(6), [3, 1, 4, 1, 5, 2]),
        (build_complete(5), [2, 2, 9, 0, 4]),
        (build_labeled_ring(7), [1, 0, 6, 2, 2, 5, 3]),
    ]:
        snapshots = {}
        run_to_fixed_point(
            g,
            max_tracking_automaton(),
            inputs,
            max_steps=10 * g.n + 50,
            on_step=lambda t, cfg: snapshots.__setitem__(t, cfg),
        )
        deadline = 5 * g.n
        target = max(inputs)
        for t, cfg in snapshots.items():
            if t >= deadline:
                states = list(cfg.zs)
                assert all(z.estimate == target for z in states), f"t={t}"
                for i in range(g.n):
                    j = pointer_chain_end(g, states, i)
                    assert inputs[j] == target
