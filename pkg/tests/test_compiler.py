from fractions import Fraction
from itertools import product as iproduct

import pytest

from anonnet.compiler import (
    ABSTAIN_MAJORITY_SPEC,
    MAJORITY_SPEC,
    CompileError,
    FrequencyFunctionSpec,
    LinearInequality,
    SpecSyntaxError,
    UNDEFINED,
    boxes_to_spec,
    compile_spec,
    decide,
    encode_input,
    evaluate_reference,
    exact_frequency_program,
    normalize,
    parse_spec,
    run_exact_frequency,
    second_popular_spec_text,
)
from anonnet.engine import run_to_fixed_point
from anonnet.network import build_complete, build_labeled_ring, build_line, connected_graphs_up_to_iso
from anonnet.rng import SplitMix64

F = Fraction


def ineq(coeffs, bound, strict=False):
    return LinearInequality(tuple(F(c) for c in coeffs), F(bound), strict)


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def test_parse_majority():
    spec = parse_spec("alphabet 2; output yes: 1 p1 <= 1/2; output no: -1 p1 < -1/2;")
    assert spec.alphabet_size == 2
    assert spec.labels() == ["yes", "no"]
    (yes_label, yes_clauses), (no_label, no_clauses) = spec.levels
    assert yes_clauses == ((ineq([0, 1], "1/2"),),)
    assert no_clauses == ((ineq([0, -1], "-1/2", strict=True),),)


def test_parse_default_coefficient_and_missing_index():
    spec = parse_spec("alphabet 3; output win: 1 p1 - 1 p0 <= 0;")
    ((label, clauses),) = spec.levels
    assert clauses == ((ineq([-1, 1, 0], 0),),)


def test_parse_index_out_of_alphabet():
    with pytest.raises(SpecSyntaxError) as exc:
        parse_spec("alphabet 2; output bad: 1 p5 <= 1;")
    assert "outside alphabet" in str(exc.value)


def test_parse_errors_are_located():
    with pytest.raises(SpecSyntaxError) as exc:
        parse_spec("alphabet 2;\noutput a: p1 <= 1/0;")
    assert exc.value.line == 2
    assert "zero denominator" in str(exc.value)
    with pytest.raises(SpecSyntaxError):
        parse_spec("alphabet 2; output a p1 <= 1;")
    with pytest.raises(SpecSyntaxError):
        parse_spec("alphabet 2; output a: p1 ! 1;")


def test_parse_ge_normalized_to_le():
    spec = parse_spec("alphabet 2; output a: p1 - p0 >= 0;")
    ((label, clauses),) = spec.levels
    assert clauses == ((ineq([1, -1], 0),),)


def test_parse_comments_and_duplicate_label():
    spec = parse_spec("# c\nalphabet 2;\noutput a: p1 <= 1; # trailing\n")
    assert spec.labels() == ["a"]
    with pytest.raises(SpecSyntaxError):
        parse_spec("alphabet 2; output a: p1 <= 1; output a: p0 <= 1;")


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------


def frequencies(xs, size):
    n = len(xs)
    return [F(sum(1 for x in xs if x == k), n) for k in range(size)]


def equivalent_on_all_inputs(iq: LinearInequality, n_max=6):
    ci = normalize(iq)
    size = len(iq.coeffs)
    for n in range(1, n_max + 1):
        for xs in iproduct(range(size), repeat=n):
            p = frequencies(xs, size)
            direct = iq.holds(p)
            avg_q = F(sum(encode_input(x, ci) for x in xs), n)
            via_payload = avg_q < ci.qstar if ci.strict else avg_q <= ci.qstar
            if direct != via_payload:
                return False, xs
            if not all(0 <= encode_input(x, ci) <= ci.alphabet_bound for x in xs):
                return False, xs
    return True, None


def test_normalize_half_threshold():
    ci = normalize(ineq([0, 1], "1/2"))
    assert ci.signed == (0, 2) and ci.bound == 1
    assert ci.beta == (0, 2) and ci.positive == frozenset({1})
    assert ci.qstar == 1 and ci.alphabet_bound == 2
    assert encode_input(1, ci) == 2 and encode_input(0, ci) == 0
    ok, _ = equivalent_on_all_inputs(ineq([0, 1], "1/2"))
    assert ok


def test_normalize_abstain_comparison():
    ci = normalize(ineq([1, -1, 0], 0))
    assert ci.signed == (1, -1, 0) and ci.bound == 0
    assert ci.qstar == 1 and ci.alphabet_bound == 2
    assert encode_input(0, ci) == 2  # chi_0 hit and 1 - chi_1
    assert encode_input(1, ci) == 0
    assert encode_input(2, ci) == 1
    ok, _ = equivalent_on_all_inputs(ineq([1, -1, 0], 0))
    assert ok


def test_normalize_mixed_denominators():
    ci = normalize(ineq(["1/2", "-1/3"], "1/6"))
    assert ci.signed == (3, -2) and ci.bound == 1
    assert ci.qstar == 3 and ci.alphabet_bound == 5
    ok, witness = equivalent_on_all_inputs(ineq(["1/2", "-1/3"], "1/6"))
    assert ok, witness


def test_normalize_negative_bound_shifts():
    iq = ineq([1, -1], "-1/2")
    ci = normalize(iq)
    assert ci.bound >= 0 and ci.qstar >= 0
    ok, witness = equivalent_on_all_inputs(iq)
    assert ok, witness


def test_normalize_equivalence_random_rationals():
    rng = SplitMix64(31)
    for _ in range(40):
        size = rng.randint(2, 3)
        coeffs = [F(rng.randint(-6, 6), rng.randint(1, 4)) for _ in range(size)]
        bound = F(rng.randint(-6, 6), rng.randint(1, 4))
        iq = LinearInequality(tuple(coeffs), bound, bool(rng.randint(0, 1)))
        ok, witness = equivalent_on_all_inputs(iq, n_max=5)
        assert ok, (iq, witness)


def test_decide():
    assert decide(("point", 1), 1, False) is True
    assert decide(("open", 1, 2), 1, False) is False
    assert decide(("open", 1, 2), 2, True) is True
    assert decide(("point", 1), 1, True) is False
    with pytest.raises(ValueError):
        decide(("unstable", 0, 3), 1, False)


# ---------------------------------------------------------------------------
# Whole programs
# ---------------------------------------------------------------------------


def test_compile_majority_single_instance():
    # the two level inequalities are complements: one instance, two table rows
    program = compile_spec(parse_spec(MAJORITY_SPEC))
    assert len(program.instances) == 1
    assert program.label_for([True]) == "yes"
    assert program.label_for([False]) == "no"


def test_compile_second_popular_dedupes_pairwise_instances():
    # p_a < p_b and its complement p_b <= p_a share an instance: one per
    # unordered pair of the four letters
    program = compile_spec(parse_spec(second_popular_spec_text()))
    assert len(program.instances) == 6
    assert len(program.table) == 4
    assert all(len(clauses) == 6 for _label, clauses in program.table)


def test_compile_overlap_error():
    with pytest.raises(CompileError) as exc:
        compile_spec(parse_spec("alphabet 2; output a: p1 <= 1/2; output b: p1 <= 1/2;"))
    assert "overlap" in str(exc.value)


def test_undefined_label_for_gaps():
    spec = parse_spec("alphabet 2; output low: p1 < 1/4;")
    program = compile_spec(spec)
    assert evaluate_reference(spec, [1, 1, 1, 1]) == UNDEFINED
    assert program.label_for([False]) == UNDEFINED


def test_evaluate_reference_majority():
    spec = parse_spec(MAJORITY_SPEC)
    assert evaluate_reference(spec, [1, 1, 0, 0]) == "yes"
    assert evaluate_reference(spec, [1, 1, 1, 0]) == "no"
    assert evaluate_reference(spec, [1]) == "no"


def second_popular_oracle(xs):
    counts = [xs.count(k) for k in range(4)]
    ranking = sorted(range(4), key=lambda k: (-counts[k], k))
    return f"v{ranking[1]}"


def test_second_popular_reference_matches_counting_oracle():
    spec = parse_spec(second_popular_spec_text())
    rng = SplitMix64(8)
    for _ in range(300):
        n = rng.randint(1, 8)
        xs = [rng.randint(0, 3) for _ in range(n)]
        assert evaluate_reference(spec, xs) == second_popular_oracle(xs)


def test_permutation_invariance_of_reference():
    spec = parse_spec(ABSTAIN_MAJORITY_SPEC)
    rng = SplitMix64(17)
    for _ in range(100):
        n = rng.randint(1, 7)
        xs = [rng.randint(0, 2) for _ in range(n)]
        shuffled = list(xs)
        for i in range(n - 1, 0, -1):
            j = rng.randint(0, i)
            shuffled[i], shuffled[j] = shuffled[j], shuffled[i]
        assert evaluate_reference(spec, xs) == evaluate_reference(spec, shuffled)


def test_boxes_to_spec():
    spec = boxes_to_spec([("lo", [(F(0), F(1)), (F(0), F("1/2"))])], 2)
    ((label, clauses),) = spec.levels
    assert label == "lo"
    assert len(clauses[0]) == 4 and all(iq.strict for iq in clauses[0])
    two = boxes_to_spec(
        [("a", [(F(0), F(1)), (F(0), F("1/2"))]), ("b", [(F(0), F(1)), (F("1/2"), F(1))])], 2
    )
    assert two.labels() == ["a", "b"]
    assert evaluate_reference(two, [0, 1, 1, 1]) == "b"
    with pytest.raises(CompileError):
        boxes_to_spec(
            [("a", [(F(0), F(1)), (F(0), F("2/3"))]), ("b", [(F(0), F(1)), (F("1/2"), F(1))])], 2
        )


def test_distributed_majority_matches_reference():
    program = compile_spec(parse_spec(MAJORITY_SPEC))
    spec = program.spec
    rng = SplitMix64(5)
    for _ in range(30):
        n = rng.randint(1, 8)
        g = build_complete(n) if rng.randint(0, 1) else build_line(n)
        xs = [rng.randint(0, 1) for _ in range(n)]
        labels, steps, _runs = program.run_distributed(g, xs, backend="python")
        want = evaluate_reference(spec, xs)
        assert labels == [want] * n


def test_product_automaton_agrees_with_per_instance_runs():
    program = compile_spec(parse_spec(ABSTAIN_MAJORITY_SPEC))
    for g, xs in [
        (build_line(3), [0, 2, 1]),
        (build_complete(4), [1, 1, 0, 2]),
        (build_labeled_ring(5), [0, 1, 2, 1, 0]),
    ]:
        res = run_to_fixed_point(g, program.automaton(), xs, max_steps=5000)
        assert res.status == "fixed-point"
        labels, steps, _ = program.run_distributed(g, xs, backend="python")
        assert list(res.config.ys) == labels
        assert res.steps == steps
        assert labels[0] == evaluate_reference(program.spec, xs)


# ---------------------------------------------------------------------------
# Exact frequency
# ---------------------------------------------------------------------------


def test_exact_frequency_half():
    g = build_complete(4)
    res = run_exact_frequency(g, [1, 1, 0, 0], target=1)
    assert res.status == "settled"
    assert res.value == F(1, 2)


def test_exact_frequency_all_and_none():
    g = build_line(3)
    assert run_exact_frequency(g, [1, 1, 1], target=1).value == 1
    assert run_exact_frequency(g, [0, 0, 0], target=1).value == 0


def test_exact_frequency_various_counts():
    for g in connected_graphs_up_to_iso(4)[:3]:
        for ones in range(5):
            xs = [1] * ones + [0] * (4 - ones)
            res = run_exact_frequency(g, xs, target=1)
            assert res.status == "settled"
            assert res.value == F(ones, 4)


def test_exact_frequency_budget_when_cap_too_small():
    g = build_line(5)
    res = run_exact_frequency(g, [1, 0, 0, 0, 0], target=1, m_max=2, max_steps=100_000)
    assert res.status == "budget"
    assert res.value is None


def test_exact_frequency_program_through_engine_stop_rule():
    from anonnet.engine import run_to_stable_outputs

    g = build_line(2)
    spec = exact_frequency_program(target=1, m_max=4)
    res = run_to_stable_outputs(g, spec, [1, 0], window=600, max_steps=20_000)
    assert res.status == "stable"
    assert all(y == F(1, 2) for y in res.config.ys)
