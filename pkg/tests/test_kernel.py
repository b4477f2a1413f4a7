import numpy as np
import pytest

from anonnet.averaging import averaging_automaton, observe_exchange, termination_bound
from anonnet.engine import run_to_fixed_point
from anonnet.kernel import (
    config_to_arrays,
    graph_arrays,
    have_numba,
    simulate_averaging,
)
from anonnet.network import (
    build_complete,
    build_dumbbell,
    build_labeled_ring,
    build_line,
    random_connected_graph,
)
from anonnet.rng import SplitMix64

BACKENDS = ["python"] + (["numba"] if have_numba() else [])


def cases():
    rng = SplitMix64(2024)
    yield build_line(1), [3]
    yield build_line(2), [0, 2]
    yield build_line(2), [0, 1]
    yield build_complete(4), [0, 3, 1, 2]
    yield build_labeled_ring(5), [4, 0, 0, 2, 1]
    yield build_dumbbell(9), [0, 0, 0, 2, 2, 2, 1, 1, 1]
    for _ in range(25):
        n = rng.randint(1, 7)
        g = random_connected_graph(n, rng)
        k = rng.randint(1, 6)
        yield g, [rng.randint(0, k) for _ in range(n)]


@pytest.mark.parametrize("backend", BACKENDS)
def test_kernel_matches_generic_engine_slot_for_slot(backend):
    for g, inputs in cases():
        cap = termination_bound(g.n, max(max(inputs), 1)) + 8
        gen = run_to_fixed_point(g, averaging_automaton(), inputs, max_steps=cap, record_trace=True)
        ker = simulate_averaging(g, inputs, max_steps=cap, backend=backend, record=True)
        assert gen.status == "fixed-point" and ker.status == "fixed-point"
        assert ker.steps == gen.steps
        assert ker.fault == 0
        for t, cfg in enumerate(gen.trace):
            s_ref, m_ref = config_to_arrays(g, cfg)
            assert np.array_equal(ker.trace_state[t], s_ref), (t, inputs)
            if m_ref.size:
                assert np.array_equal(ker.trace_msgs[t], m_ref), (t, inputs)


@pytest.mark.parametrize("backend", BACKENDS)
def test_kernel_stats_match_observer(backend):
    for g, inputs in cases():
        cap = termination_bound(g.n, max(max(inputs), 1)) + 8
        gen = run_to_fixed_point(g, averaging_automaton(), inputs, max_steps=cap, record_trace=True)
        ker = simulate_averaging(g, inputs, max_steps=cap, backend=backend)
        assert ker.all_checks_ok()
        v0 = observe_exchange(g, gen.trace[0]).variance_scaled
        v_fin = observe_exchange(g, gen.trace[-1]).variance_scaled
        assert ker.v0_scaled == v0
        assert ker.v_final_scaled == v_fin
        accepted = 0
        for a, b in zip(gen.trace, gen.trace[1:]):
            accepted += sum(1 for za, zb in zip(a.zs, b.zs) if zb.pebbles < za.pebbles)
        assert ker.accept_count == accepted
        us = sorted(z.pebbles for z in gen.config.zs)
        assert sorted(ker.pebbles.tolist()) == us


@pytest.mark.skipif(not have_numba(), reason="numba not installed")
def test_backends_bit_identical():
    rng = SplitMix64(7)
    for _ in range(15):
        n = rng.randint(1, 8)
        g = random_connected_graph(n, rng)
        k = rng.randint(1, 8)
        inputs = [rng.randint(0, k) for _ in range(n)]
        cap = termination_bound(n, k) + 8
        a = simulate_averaging(g, inputs, max_steps=cap, backend="python")
        b = simulate_averaging(g, inputs, max_steps=cap, backend="numba")
        assert a.status == b.status and a.steps == b.steps
        assert a.accept_count == b.accept_count
        assert np.array_equal(a.final_state, b.final_state)
        assert np.array_equal(a.final_msgs, b.final_msgs)
        assert (a.v0_scaled, a.v_final_scaled) == (b.v0_scaled, b.v_final_scaled)


def test_budget_status():
    g = build_dumbbell(9)
    res = simulate_averaging(g, [0, 0, 0, 2, 2, 2, 1, 1, 1], max_steps=5, backend="python")
    assert res.status == "budget" and res.steps == 5


def test_graph_arrays_routing():
    g = build_labeled_ring(5)
    deg, nbr, back = graph_arrays(g)
    for i in range(g.n):
        assert deg[i] == g.degree(i)
        for k in range(g.degree(i)):
            j = int(nbr[i, k])
            assert g.neighbor(i, k) == j
            assert g.neighbor(j, int(back[i, k])) == i
