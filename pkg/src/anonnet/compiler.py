"""Compile frequency-based function specs into distributed programs.

A *frequency spec* names an alphabet {0..K} and a list of output labels,
each defined by a union of clauses; a clause is a conjunction of linear
inequalities over the value frequencies p0..pK with rational coefficients.
Compilation turns every distinct inequality into an integer payload an
averaging instance can evaluate:

* clear denominators, so the inequality reads
  ``sum_k a_k p_k  (<|<=)  b`` with integers ``a_k, b``;
* shift by a multiple of ``p0 + ... + pK = 1`` so the bound is nonnegative;
* split indices by coefficient sign and move the negative terms across,
  yielding per-node payloads ``q_i = sum_{a_k>0} a_k chi_k(i) +
  sum_{a_k<0} |a_k| (1 - chi_k(i))`` in ``{0..K'}`` with
  ``K' = sum_k |a_k|``, and a threshold ``q* = b + sum_{a_k<0} |a_k|``
  such that the original inequality holds iff ``avg(q) <= q*`` (or ``<``).

One interval-averaging instance per distinct inequality runs in parallel
(a product automaton; components never interact), and a decision table
maps the vector of inequality verdicts to the label of the first clause,
in document order, that is fully satisfied.  ``evaluate_reference`` is the
centralized oracle: it evaluates the original rational inequalities on the
exact frequency vector and must agree with the settled distributed output.

The module also hosts the unbounded-memory interleaved scheme that
recovers a value's exact frequency as a reduced rational: instance m maps
input k to m (else 0) and interval-averages over {0..m}; instances advance
in the triangular order 1, 12, 123, ...; the output divides the smallest
singleton instance's value by its index.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from itertools import permutations
from math import gcd, isqrt, lcm
from typing import Callable, Iterable, Sequence

from .averaging import averaging_automaton, averaging_transition, decode_output, termination_bound
from .engine import EMPTY, AutomatonSpec, Configuration, map_input, product, run_to_fixed_point, wrap_output
from .network import PortLabeledGraph
from .tracking import SELF, TrackingState

__all__ = [
    "LinearInequality",
    "FrequencyFunctionSpec",
    "CompiledInequality",
    "CompiledProgram",
    "SpecSyntaxError",
    "CompileError",
    "UNDEFINED",
    "parse_spec",
    "normalize",
    "encode_input",
    "decide",
    "compile_spec",
    "evaluate_reference",
    "boxes_to_spec",
    "exact_frequency_program",
    "run_exact_frequency",
]

UNDEFINED = "undefined"


class SpecSyntaxError(ValueError):
    def __init__(self, message: str, line: int, column: int):
        self.line = line
        self.column = column
        super().__init__(f"{line}:{column}: {message}")


class CompileError(ValueError):
    pass


@dataclass(frozen=True)
class LinearInequality:
    """sum_k coeffs[k] * p_k  <=  bound   (or strictly, when strict)."""

    coeffs: tuple[Fraction, ...]
    bound: Fraction
    strict: bool

    def holds(self, p: Sequence[Fraction]) -> bool:
        lhs = sum((c * pk for c, pk in zip(self.coeffs, p)), Fraction(0))
        return lhs < self.bound if self.strict else lhs <= self.bound


@dataclass(frozen=True)
class FrequencyFunctionSpec:
    alphabet_size: int  # K + 1
    levels: tuple[tuple[str, tuple[tuple[LinearInequality, ...], ...]], ...]

    @property
    def k(self) -> int:
        return self.alphabet_size - 1

    def labels(self) -> list[str]:
        return [label for label, _cl in self.levels]


# ---------------------------------------------------------------------------
# DSL parser (recursive descent)
#
#   spec     := "alphabet" INT ";" level+
#   level    := "output" IDENT ":" clause ("|" clause)* ";"
#   clause   := ineq ("&" ineq)*
#   ineq     := term (("+"|"-") term)* REL rational
#   term     := rational? "p" INT
#   REL      := "<=" | "<" | ">=" | ">"
#   rational := INT ("/" INT)?
#
# '#' starts a comment; whitespace is insignificant; integers may be signed.
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""(?P<ws>\s+|\#[^\n]*)
      | (?P<pidx>p(?=\d)\d+)
      | (?P<int>\d+)
      | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
      | (?P<op><=|>=|<|>|[;:|&+\-/])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str  # "pidx" | "int" | "ident" | "op" | "eof"
    text: str
    line: int
    column: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    line, col = 1, 1
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise SpecSyntaxError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        lexeme = m.group()
        if kind != "ws":
            tokens.append(_Token(kind, lexeme, line, col))
        newlines = lexeme.count("\n")
        if newlines:
            line += newlines
            col = len(lexeme) - lexeme.rfind("\n")
        else:
            col += len(lexeme)
        pos = m.end()
    tokens.append(_Token("eof", "", line, col))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def next(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def error(self, message: str) -> SpecSyntaxError:
        tok = self.peek()
        return SpecSyntaxError(message + (f" (found {tok.text!r})" if tok.kind != "eof" else " (at end of input)"), tok.line, tok.column)

    def expect_op(self, op: str) -> None:
        tok = self.peek()
        if tok.kind != "op" or tok.text != op:
            raise self.error(f"expected {op!r}")
        self.next()

    def expect_keyword(self, word: str) -> None:
        tok = self.peek()
        if tok.kind != "ident" or tok.text != word:
            raise self.error(f"expected {word!r}")
        self.next()

    def at_op(self, *ops: str) -> bool:
        tok = self.peek()
        return tok.kind == "op" and tok.text in ops

    def parse_int(self) -> int:
        sign = 1
        if self.at_op("-"):
            self.next()
            sign = -1
        elif self.at_op("+"):
            self.next()
        tok = self.peek()
        if tok.kind != "int":
            raise self.error("expected an integer")
        self.next()
        return sign * int(tok.text)

    def parse_rational(self) -> Fraction:
        tok = self.peek()
        num = self.parse_int()
        if self.at_op("/"):
            self.next()
            den_tok = self.peek()
            den = self.parse_int()
            if den == 0:
                raise SpecSyntaxError("zero denominator", den_tok.line, den_tok.column)
            return Fraction(num, den)
        return Fraction(num)

    def parse_spec(self) -> FrequencyFunctionSpec:
        self.expect_keyword("alphabet")
        size_tok = self.peek()
        size = self.parse_int()
        if size < 1:
            raise SpecSyntaxError("alphabet size must be >= 1", size_tok.line, size_tok.column)
        self.expect_op(";")
        levels = []
        labels_seen = set()
        while self.peek().kind != "eof":
            levels.append(self.parse_level(size, labels_seen))
        if not levels:
            raise self.error("expected at least one 'output' level")
        return FrequencyFunctionSpec(size, tuple(levels))

    def parse_level(self, size: int, labels_seen: set):
        self.expect_keyword("output")
        tok = self.peek()
        if tok.kind != "ident":
            raise self.error("expected an output label")
        label = self.next().text
        if label in labels_seen:
            raise SpecSyntaxError(f"duplicate output label {label!r}", tok.line, tok.column)
        if label == UNDEFINED:
            raise SpecSyntaxError(f"label {UNDEFINED!r} is reserved for undefined inputs", tok.line, tok.column)
        labels_seen.add(label)
        self.expect_op(":")
        clauses = [self.parse_clause(size)]
        while self.at_op("|"):
            self.next()
            clauses.append(self.parse_clause(size))
        self.expect_op(";")
        return label, tuple(clauses)

    def parse_clause(self, size: int) -> tuple[LinearInequality, ...]:
        ineqs = [self.parse_ineq(size)]
        while self.at_op("&"):
            self.next()
            ineqs.append(self.parse_ineq(size))
        return tuple(ineqs)

    def parse_ineq(self, size: int) -> LinearInequality:
        coeffs = [Fraction(0)] * size
        self.parse_term(coeffs, Fraction(1))
        while self.at_op("+", "-"):
            sign = Fraction(1) if self.next().text == "+" else Fraction(-1)
            self.parse_term(coeffs, sign)
        tok = self.peek()
        if tok.kind != "op" or tok.text not in ("<=", "<", ">=", ">"):
            raise self.error("expected a relation (<=, <, >= or >)")
        rel = self.next().text
        bound = self.parse_rational()
        if rel in ("<=", "<"):
            return LinearInequality(tuple(coeffs), bound, rel == "<")
        # normalize >= / > by negating both sides
        return LinearInequality(tuple(-c for c in coeffs), -bound, rel == ">")

    def parse_term(self, coeffs: list[Fraction], sign: Fraction) -> None:
        coeff = Fraction(1)
        tok = self.peek()
        if tok.kind == "int" or self.at_op("-", "+"):
            coeff = self.parse_rational()
        tok = self.peek()
        if tok.kind != "pidx":
            raise self.error("expected a frequency symbol p<index>")
        idx = int(self.next().text[1:])
        if idx >= len(coeffs):
            raise SpecSyntaxError(
                f"frequency index {idx} outside alphabet 0..{len(coeffs) - 1}", tok.line, tok.column
            )
        coeffs[idx] += sign * coeff


def parse_spec(text: str) -> FrequencyFunctionSpec:
    """Parse the inequality DSL; raises SpecSyntaxError with line:column."""
    return _Parser(text).parse_spec()


# ---------------------------------------------------------------------------
# Normalization to integer payloads
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CompiledInequality:
    """Integer form of one inequality, ready for distributed evaluation.

    ``signed[k]`` is the cleared (and shifted) integer coefficient of p_k.
    Derived views: ``beta`` are the magnitudes, ``positive``/``negative``
    the sign classes, ``qstar`` the integer threshold and
    ``alphabet_bound`` the payload alphabet K'.
    """

    signed: tuple[int, ...]
    bound: int  # nonnegative after shifting
    strict: bool

    @property
    def beta(self) -> tuple[int, ...]:
        return tuple(abs(a) for a in self.signed)

    @property
    def positive(self) -> frozenset[int]:
        return frozenset(k for k, a in enumerate(self.signed) if a > 0)

    @property
    def negative(self) -> frozenset[int]:
        return frozenset(k for k, a in enumerate(self.signed) if a < 0)

    @property
    def qstar(self) -> int:
        return self.bound + sum(-a for a in self.signed if a < 0)

    @property
    def alphabet_bound(self) -> int:
        return sum(abs(a) for a in self.signed)


def normalize(ineq: LinearInequality) -> CompiledInequality:
    """Clear denominators and shift so all derived constants are nonnegative.

    Adding c * (p0 + ... + pK) = c to both sides leaves the inequality's
    meaning on the frequency simplex unchanged; c is chosen as the smallest
    value making the integer bound nonnegative.
    """
    mult = lcm(*(f.denominator for f in (*ineq.coeffs, ineq.bound)))
    ints = [int(c * mult) for c in ineq.coeffs]
    b = int(ineq.bound * mult)
    g = gcd(*ints, b)
    if g > 1:
        ints = [a // g for a in ints]
        b //= g
    shift = max(0, -b)
    return CompiledInequality(tuple(a + shift for a in ints), b + shift, ineq.strict)


def encode_input(x: int, ci: CompiledInequality) -> int:
    """Per-node payload q_i for one inequality instance."""
    if not (0 <= x < len(ci.signed)):
        raise ValueError(f"input {x} outside alphabet 0..{len(ci.signed) - 1}")
    q = 0
    for k, a in enumerate(ci.signed):
        if a > 0 and x == k:
            q += a
        elif a < 0 and x != k:
            q += -a
    return q


def decide(interval, qstar: int, strict: bool) -> bool:
    """Exact verdict of avg <= q* (or <) from the interval-consensus output.

    Exactness relies on q* being an integer while the true average lies in
    the decoded element: an open interval (m, m+1) is on one side of every
    integer.
    """
    kind = interval[0]
    if kind == "point":
        m = interval[1]
        return m < qstar if strict else m <= qstar
    if kind == "open":
        return interval[2] <= qstar
    raise ValueError(f"undecodable interval {interval!r}")


# ---------------------------------------------------------------------------
# Whole-program compilation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CompiledProgram:
    spec: FrequencyFunctionSpec
    instances: tuple[CompiledInequality, ...]
    # per level: (label, clauses); a clause is a conjunction of literals
    # (instance index, expected verdict), so an inequality and its logical
    # complement share a single averaging instance
    table: tuple[tuple[str, tuple[tuple[tuple[int, bool], ...], ...]], ...]

    def label_for(self, verdicts: Sequence[bool]) -> str:
        """First label, in document order, with some clause fully satisfied."""
        for label, clauses in self.table:
            for clause in clauses:
                if all(verdicts[idx] == want for idx, want in clause):
                    return label
        return UNDEFINED

    def label_from_outputs(self, outputs) -> str:
        """Label from per-instance interval outputs; undefined while any
        instance is still unsettled."""
        if any(y[0] == "unstable" for y in outputs):
            return UNDEFINED
        verdicts = [decide(y, ci.qstar, ci.strict) for y, ci in zip(outputs, self.instances)]
        return self.label_for(verdicts)

    def automaton(self) -> AutomatonSpec:
        """Product automaton: one averaging instance per inequality, output
        label decoded from the component outputs every slot."""
        parts = [
            map_input(averaging_automaton(), (lambda ci: lambda x: encode_input(x, ci))(ci), name=f"ineq{i}")
            for i, ci in enumerate(self.instances)
        ]
        return wrap_output(product(parts), self.label_from_outputs, name="compiled")

    def run_distributed(self, g: PortLabeledGraph, inputs: Sequence[int], backend: str | None = None):
        """Execute on a network, one kernel run per instance.

        Components of the product automaton never interact, so running the
        instances one after another is the same computation; per-instance
        fixed-point times combine by max.  Returns (per-node labels, steps,
        per-instance kernel results).
        """
        from .kernel import simulate_averaging

        if any(not 0 <= x <= self.spec.k for x in inputs):
            raise ValueError("input outside the spec alphabet")
        n = g.n
        runs = []
        steps = 0
        outputs_per_node = [[] for _ in range(n)]
        for ci in self.instances:
            q = [encode_input(x, ci) for x in inputs]
            cap = termination_bound(n, max(ci.alphabet_bound, 1)) + n + 16
            res = simulate_averaging(g, q, max_steps=cap, backend=backend)
            runs.append(res)
            steps = max(steps, res.steps)
            for i in range(n):
                outputs_per_node[i].append(
                    decode_output(int(res.pebbles[i]), int(res.max_estimates[i]), int(res.min_estimates[i]))
                )
        labels = [self.label_from_outputs(outs) for outs in outputs_per_node]
        return labels, steps, runs


def _simplex_points(size: int, max_denominator: int) -> Iterable[tuple[tuple[int, ...], int]]:
    """All frequency vectors with denominator up to the cap, as integer
    (counts, denominator) pairs; non-primitive vectors are skipped since
    they already appeared at a smaller denominator."""
    for den in range(1, max_denominator + 1):
        for combo in _compositions(den, size):
            if gcd(*combo, den) == 1:
                yield combo, den


def _compositions(total: int, parts: int):
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first, *rest)


def _cleared(ineq: LinearInequality) -> tuple[tuple[int, ...], int, bool]:
    mult = lcm(*(f.denominator for f in (*ineq.coeffs, ineq.bound)))
    return tuple(int(c * mult) for c in ineq.coeffs), int(ineq.bound * mult), ineq.strict


def _canonical_form(coeffs: tuple[int, ...], bound: int, strict: bool):
    """Unique representative of an inequality modulo positive scaling and
    shifts by multiples of p0 + ... + pK = 1: smallest coefficient pinned
    to zero, then divided through by the gcd."""
    c = min(coeffs)
    coeffs = tuple(a - c for a in coeffs)
    bound -= c
    g = gcd(*coeffs, bound)
    if g > 1:
        coeffs = tuple(a // g for a in coeffs)
        bound //= g
    return coeffs, bound, strict


def _canonical_key(ineq: LinearInequality):
    coeffs, bound, strict = _cleared(ineq)
    return _canonical_form(coeffs, bound, strict)


def _complement_key(key):
    # not (L <= b)  <=>  -L < -b   (and dually for strict)
    coeffs, bound, strict = key
    return _canonical_form(tuple(-a for a in coeffs), -bound, not strict)


def _holds_at(cleared: tuple[tuple[int, ...], int, bool], counts: tuple[int, ...], den: int) -> bool:
    coeffs, bound, strict = cleared
    lhs = sum(a * c for a, c in zip(coeffs, counts))
    rhs = bound * den
    return lhs < rhs if strict else lhs <= rhs


def compile_spec(
    spec: FrequencyFunctionSpec,
    overlap_grid_denominator: int = 24,
) -> CompiledProgram:
    """Deduplicate and normalize all inequalities and build the decision table.

    Level sets must partition their domain; that is only checkable where
    decidable, so a rational grid (denominators up to the cap) is sampled
    and any point satisfying clauses of two different labels is an error.
    Gaps are fine: inputs matching no clause yield the undefined label.
    """
    instances: list[CompiledInequality] = []
    index: dict = {}
    table = []
    for label, clauses in spec.levels:
        compiled_clauses = []
        for clause in clauses:
            literals = []
            for ineq in clause:
                key = _canonical_key(ineq)
                if key in index:
                    literals.append((index[key], True))
                    continue
                comp = _complement_key(key)
                if comp in index:
                    literals.append((index[comp], False))
                    continue
                index[key] = len(instances)
                instances.append(normalize(ineq))
                literals.append((index[key], True))
            compiled_clauses.append(tuple(literals))
        table.append((label, tuple(compiled_clauses)))
    program = CompiledProgram(spec, tuple(instances), tuple(table))

    if overlap_grid_denominator > 0:
        cleared_levels = [
            (label, [[_cleared(iq) for iq in clause] for clause in clauses])
            for label, clauses in spec.levels
        ]
        for counts, den in _simplex_points(spec.alphabet_size, overlap_grid_denominator):
            hit = None
            for label, clauses in cleared_levels:
                if any(all(_holds_at(iq, counts, den) for iq in clause) for clause in clauses):
                    if hit is not None and hit != label:
                        point = ", ".join(f"{c}/{den}" for c in counts)
                        raise CompileError(f"labels {hit!r} and {label!r} overlap at frequencies ({point})")
                    if hit is None:
                        hit = label
    return program


def evaluate_reference(spec: FrequencyFunctionSpec, inputs: Sequence[int]) -> str:
    """Centralized oracle: exact frequencies, direct clause evaluation.

    Works on the original rational inequalities, independently of the
    normalize/averaging pipeline that the distributed run uses.
    """
    n = len(inputs)
    if n == 0:
        raise ValueError("empty input vector")
    if any(not 0 <= x <= spec.k for x in inputs):
        raise ValueError("input outside the spec alphabet")
    p = tuple(Fraction(sum(1 for x in inputs if x == k), n) for k in range(spec.alphabet_size))
    for label, clauses in spec.levels:
        if any(all(iq.holds(p) for iq in clause) for clause in clauses):
            return label
    return UNDEFINED


def boxes_to_spec(boxes: Sequence[tuple[str, Sequence[tuple[Fraction, Fraction]]]], alphabet_size: int) -> FrequencyFunctionSpec:
    """Spec whose labels are open boxes in frequency space.

    Each box is one clause of strict inequalities p_k > lo_k and p_k < hi_k.
    Boxes must be pairwise disjoint, which is checked on the bounds alone.
    """
    for label, bounds in boxes:
        if len(bounds) != alphabet_size:
            raise CompileError(f"box for {label!r} has {len(bounds)} sides, expected {alphabet_size}")
    for a in range(len(boxes)):
        for b in range(a + 1, len(boxes)):
            la, ba = boxes[a]
            lb, bb = boxes[b]
            if all(max(lo1, lo2) < min(hi1, hi2) for (lo1, hi1), (lo2, hi2) in zip(ba, bb)):
                raise CompileError(f"boxes for {la!r} and {lb!r} overlap")
    levels: dict[str, list] = {}
    order: list[str] = []
    for label, bounds in boxes:
        clause = []
        for k, (lo, hi) in enumerate(bounds):
            coeffs_lo = tuple(Fraction(-1) if j == k else Fraction(0) for j in range(alphabet_size))
            clause.append(LinearInequality(coeffs_lo, Fraction(-lo), True))  # p_k > lo
            coeffs_hi = tuple(Fraction(1) if j == k else Fraction(0) for j in range(alphabet_size))
            clause.append(LinearInequality(coeffs_hi, Fraction(hi), True))  # p_k < hi
        if label not in levels:
            levels[label] = []
            order.append(label)
        levels[label].append(tuple(clause))
    return FrequencyFunctionSpec(alphabet_size, tuple((lab, tuple(levels[lab])) for lab in order))


# ---------------------------------------------------------------------------
# Exact frequency with unbounded memory
# ---------------------------------------------------------------------------


def _schedule_position(t: int) -> tuple[int, int]:
    """Triangular schedule: slot t belongs to block b and runs instance r+1.

    Blocks are 1; 1 2; 1 2 3; ... so block b starts at slot b(b-1)/2.
    """
    b = (isqrt(8 * t + 1) + 1) // 2
    start = b * (b - 1) // 2
    return b, t - start


def exact_frequency_program(target: int, m_max: int) -> AutomatonSpec:
    """Interleaved program whose output settles on the exact frequency of
    ``target`` among the inputs, as a reduced Fraction.

    Memory grows with time (instance list and a slot counter), so the
    configuration never reaches a fixed point; drive it with
    :func:`run_exact_frequency` or the engine's stable-output stop rule.
    Instance m is capped at ``m_max``; any network of at most m_max nodes
    settles because instance n's integer output is a singleton.
    """
    if m_max < 1:
        raise ValueError("m_max must be >= 1")
    avg = averaging_automaton()

    def inst_input(x, m):
        return m if x == target else 0

    def output(insts):
        for m, (_z, y, _out) in enumerate(insts, start=1):
            if y[0] == "point":
                return Fraction(y[1], m)
        return EMPTY

    def init(x, d):
        # the first instance starts at slot 0, not at init time
        return (0, ()), EMPTY, ((),) * d

    def transition(x, z, y, incoming):
        t, insts = z
        _b, r = _schedule_position(t)
        m = r + 1
        insts = list(insts)
        d = len(incoming)
        if m <= m_max:
            if m == len(insts) + 1:
                z0, y0, _out0 = avg.init(inst_input(x, m), d)
                inc = (EMPTY,) * d
                z1, y1, out1 = avg.transition(inst_input(x, m), z0, y0, inc)
                insts.append((z1, y1, out1))
            elif m <= len(insts):
                idx = m - 1
                inc = tuple(
                    msg[idx] if msg is not None and len(msg) > idx else EMPTY for msg in incoming
                )
                z0, y0, _o = insts[idx]
                z1, y1, out1 = avg.transition(inst_input(x, m), z0, y0, inc)
                insts[idx] = (z1, y1, out1)
        out = tuple(tuple(inst[2][k] for inst in insts) for k in range(d))
        return (t + 1, tuple(insts)), output(insts), out

    return AutomatonSpec(f"exactfreq[{target}]", transition, init)


@dataclass(frozen=True)
class ExactFrequencyResult:
    status: str  # "settled" | "budget"
    value: Fraction | None
    steps: int
    instances_settled: int


def run_exact_frequency(
    g: PortLabeledGraph,
    inputs: Sequence[int],
    target: int,
    m_max: int | None = None,
    max_steps: int = 2_000_000,
) -> ExactFrequencyResult:
    """Drive the interleaved program until its answer can no longer change.

    The observer stops once instances 1..min(n, m_max) have each reached a
    fixed point of their own sub-configuration (state plus latest messages
    across all nodes): instance n's output is an integer singleton, so the
    smallest settled singleton, hence the output, is determined from then
    on.  A plain output-stability window is not sound here because gaps
    between an instance's activations grow linearly with time.
    """
    from .engine import initial_configuration, routing_table, step

    if m_max is None:
        m_max = 2 * g.n
    need = min(g.n, m_max)
    spec = exact_frequency_program(target, m_max)
    routes = routing_table(g)
    config = initial_configuration(g, spec, list(inputs))
    snapshots: dict[int, tuple] = {}
    settled: dict[int, bool] = {}
    t = 0
    while t < max_steps:
        _b, r = _schedule_position(t)
        m = r + 1
        config = step(g, spec, config, routes)
        t += 1
        if m <= m_max and m <= max(len(z[1]) for z in config.zs):
            snap = tuple((z[1][m - 1][0], z[1][m - 1][2]) for z in config.zs)
            if m in snapshots:
                settled[m] = snapshots[m] == snap
            snapshots[m] = snap
        if all(settled.get(m2, False) for m2 in range(1, need + 1)) and len(settled) >= need:
            values = set(config.ys)
            if len(values) == 1 and config.ys[0] is not EMPTY:
                return ExactFrequencyResult("settled", config.ys[0], t, need)
            # cap below the network size and no singleton: nothing further
            # can change the answer, so report the exhausted budget now
            return ExactFrequencyResult("budget", None, t, need)
    return ExactFrequencyResult("budget", None, t, sum(settled.values()))


# ---------------------------------------------------------------------------
# Ready-made specs used by experiments and docs
# ---------------------------------------------------------------------------

MAJORITY_SPEC = """\
# simple majority between two options: is the frequency of ones at most 1/2?
alphabet 2;
output yes: 1 p1 <= 1/2;
output no: -1 p1 < -1/2;
"""

ABSTAIN_MAJORITY_SPEC = """\
# majority with abstention (letter 2): do zeros outnumber ones?
alphabet 3;
output yes: p0 - p1 <= 0;
output no: p1 - p0 < 0;
"""


def second_popular_spec_text() -> str:
    """Second most popular of four values, ties ranked toward smaller index.

    One clause per total order of the four frequencies; between adjacent
    values the comparison is strict when the lower-ranked index is smaller,
    so the 24 clauses partition frequency space exactly.
    """
    lines = [
        "# second most popular value of four; on ties the smaller index ranks higher",
        "alphabet 4;",
    ]
    by_label: dict[int, list[str]] = {0: [], 1: [], 2: [], 3: []}
    for order in permutations(range(4)):  # ascending popularity
        parts = []
        for a, b in zip(order, order[1:]):
            rel = "<" if a < b else "<="
            parts.append(f"p{a} - p{b} {rel} 0")
        by_label[order[2]].append(" & ".join(parts))
    for label in range(4):
        lines.append(f"output v{label}: " + " | ".join(by_label[label]) + ";")
    return "\n".join(lines) + "\n"
