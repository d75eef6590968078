import itertools
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import settings
from hypothesis import strategies as st

from app.enclosure import IMAG
from app.enclosure import ONE
from app.enclosure import ComplexRational
from app.enclosure import Exponent
from app.enclosure import Interval
from app.presentation import CauchyVectorSeq
from app.presentation import DirectSpace
from app.presentation import OraclePresentation
from app.presentation import PresentedSpace
from app.presentation import RationalVector
from app.presentation import cauchy_limit
from app.presentation import dyadic_interval
from app.presentation import dyadic_ring
from app.presentation import finite_ring
from app.presentation import from_generators
from app.presentation import half_swapped_dyadic
from app.presentation import induced_presentation
from app.presentation import measure_lower_bounds
from app.presentation import norm_oracle
from app.presentation import norm_via_cells
from app.presentation import oracle_view
from app.presentation import space_for
from app.presentation import standard_dyadic
from app.stepfn import DyadicSet
from app.stepfn import StepFn
from app.stepfn import norm_p
from app.utils import ModulusViolationError
from app.utils import PresentationError

P1 = Exponent.rational(1)
P3 = Exponent.rational(3)
HALF = Fraction(1, 2)
QUARTER = Fraction(1, 4)


def _loose_contains(x: Interval, value: float, slack: float = 1e-9) -> bool:
    return float(x.lo) - slack <= value <= float(x.hi) + slack


def test_rational_vector_algebra():
    """Duplicate indices add and zero coefficients vanish."""
    v = RationalVector.of([(3, 1), (1, IMAG), (3, -1)])
    assert v.terms == ((1, IMAG),)
    w = RationalVector.basis(2) + v.scale(2)
    assert w.coefficient(1) == ComplexRational(Fraction(0), Fraction(2))
    assert w.support() == (1, 2)
    assert (w - w).is_zero
    assert RationalVector.from_json(w.to_json()) == w


def test_dyadic_enumeration_order():
    """Level first, then left endpoint."""
    assert dyadic_interval(0) == (Fraction(0), Fraction(1))
    assert dyadic_interval(1) == (Fraction(0), HALF)
    assert dyadic_interval(2) == (HALF, Fraction(1))
    assert dyadic_interval(3) == (Fraction(0), QUARTER)
    assert dyadic_interval(6) == (Fraction(3, 4), Fraction(1))


def test_standard_and_half_swapped_generators():
    """The swapped presentation exchanges the two halves of [0, 1]."""
    a, b = standard_dyadic(P1), half_swapped_dyadic(P1)
    assert a.generator(0) == b.generator(0) == StepFn.constant(1)
    assert a.generator(1) == b.generator(2) == StepFn.indicator(0, HALF)
    assert b.generator(3) == StepFn.indicator(HALF, Fraction(3, 4))
    assert a.norm(RationalVector.basis(1), 10) == Interval.point(HALF)


def test_norm_oracle_examples():
    """Empty vector, complementary halves and a cube root."""
    a = standard_dyadic(P1)
    assert norm_oracle(a, RationalVector(), 10) == Interval.point(0)
    assert norm_oracle(a, RationalVector.of({1: 1, 2: 1}), 10).contains(1)
    cube = norm_oracle(standard_dyadic(P3), RationalVector.basis(1), 20)
    assert _loose_contains(cube, 0.5 ** (1 / 3))


def test_induced_presentation_cell_example():
    """1 on R(0) plus i on R(1) with overlapping halves has L^1 norm (2 + sqrt 2) / 4."""
    ring = finite_ring([DyadicSet.interval(0, HALF), DyadicSet.interval(QUARTER, Fraction(3, 4))])
    pres = induced_presentation(ring, P1)
    v = RationalVector.of({0: ONE, 1: IMAG})
    assert _loose_contains(pres.norm(v, 30), (2 + 2**0.5) / 4)
    assert _loose_contains(norm_via_cells(ring, v, P1, 30), (2 + 2**0.5) / 4)
    assert norm_via_cells(ring, RationalVector.basis(0), P1, 10).contains(HALF)
    assert norm_via_cells(ring, RationalVector(), P1, 10) == Interval.point(0)


def test_dyadic_ring_operations():
    """Union and difference indices land on the right sets."""
    ring = dyadic_ring()
    assert ring.R(0) == DyadicSet()
    assert ring.R(1) == DyadicSet.interval(0, HALF)
    assert ring.R(2) == DyadicSet.interval(HALF, 1)
    assert ring.R(3) == DyadicSet.interval(0, 1)
    assert ring.R(4) == DyadicSet.interval(0, QUARTER)
    assert ring.R(8) == DyadicSet.interval(0, HALF)
    assert ring.R(12) == DyadicSet.interval(0, QUARTER) | DyadicSet.interval(Fraction(3, 4), 1)
    for n, m in itertools.product(range(24), repeat=2):
        assert ring.R(ring.union_index(n, m)) == ring.R(n) | ring.R(m)
        assert ring.R(ring.diff_index(m, n)) == ring.R(n) - ring.R(m)
        assert ring.R(ring.intersection_index(n, m)) == ring.R(n) & ring.R(m)


def test_finite_ring_closure():
    """The generated Boolean ring holds unions and differences of the given sets."""
    sets = [DyadicSet.interval(0, HALF), DyadicSet.interval(QUARTER, 1)]
    ring = finite_ring(sets)
    assert ring.R(0) == sets[0]
    assert ring.R(ring.diff_index(1, 0)) == DyadicSet.interval(0, QUARTER)
    assert ring.R(ring.union_index(0, 1)) == DyadicSet.interval(0, 1)
    with pytest.raises(PresentationError):
        finite_ring([DyadicSet.interval(0, Fraction(1, n)) for n in range(1, 20)])


@settings(max_examples=200, deadline=None)
@given(
    st.dictionaries(
        st.integers(min_value=0, max_value=21),
        st.builds(
            ComplexRational,
            st.fractions(min_value=-2, max_value=2, max_denominator=4),
            st.fractions(min_value=-2, max_value=2, max_denominator=4),
        ),
        max_size=8,
    )
)
def test_cells_agree_with_direct_norms(coeffs):
    """norm_via_cells and the direct step-function norm overlap at k = 20."""
    ring = dyadic_ring()
    v = RationalVector.of(coeffs)
    f = StepFn.zero()
    for n, c in v.terms:
        f = f + StepFn.from_set(ring.R(n), c)
    for p in (P1, P3):
        assert norm_via_cells(ring, v, p, 20).overlaps(norm_p(f, p, 20))


def test_measure_lower_bounds():
    """Bounds are nondecreasing, capped by the total and reach it on the dyadic ring."""
    bounds = list(itertools.islice(measure_lower_bounds(dyadic_ring()), 64))
    assert all(a <= b for a, b in zip(bounds, bounds[1:]))
    assert all(b <= 1 for b in bounds)
    assert bounds[0] == 0 and bounds[-1] == 1
    empty = list(itertools.islice(measure_lower_bounds(finite_ring([DyadicSet()])), 5))
    assert empty == [0] * 5


def test_dyadic_lower_bounds_trace():
    """Single intervals come first, so the stream passes 1/2 before it reaches 1."""
    bounds = list(itertools.islice(measure_lower_bounds(dyadic_ring()), 1 << 11))
    assert bounds[:4] == [0, HALF, 1, 1]
    prefix_end = 0
    for j in range(1, 4):
        prefix_end += (1 << (1 << j)) - 1
        assert bounds[prefix_end] >= 1 - Fraction(1, 1 << j)
    assert bounds[-1] > 1 - Fraction(1, 1 << 10)


def test_cauchy_limit_shrinking_intervals():
    """chi_[0, 1/2 + 2^-(n+2)) converges to chi_[0, 1/2) with the stated modulus."""
    gens = [StepFn.indicator(0, HALF + Fraction(1, 1 << (n + 2))) for n in range(16)]
    pres = from_generators(P1, gens)
    seq = CauchyVectorSeq(RationalVector.basis, modulus_certified=True)
    k = 4
    out = cauchy_limit(pres, seq, k)
    assert out == RationalVector.basis(k + 1)
    assert norm_p(pres.evaluate(out) - StepFn.indicator(0, HALF), P1, 10).hi < Fraction(1, 1 << k)
    assert cauchy_limit(pres, seq, 0) == RationalVector.basis(1)


def test_cauchy_limit_rejects_slow_sequences():
    """A step of norm 1 at n = 0 breaks the modulus."""
    pres = from_generators(P1, [StepFn.constant(1), StepFn.zero(), StepFn.zero()])
    with pytest.raises(ModulusViolationError):
        cauchy_limit(pres, CauchyVectorSeq(RationalVector.basis), 1)


def test_oracle_view_hides_generators():
    """Oracle presentations answer norms only."""
    hidden = oracle_view(standard_dyadic(P1))
    assert not hidden.white_box
    assert hidden.norm(RationalVector.basis(2), 10) == Interval.point(HALF)
    with pytest.raises(PresentationError):
        hidden.generator(0)
    with pytest.raises(PresentationError):
        DirectSpace(P1, hidden)
    assert isinstance(space_for(hidden, "dovetail"), PresentedSpace)
    assert isinstance(space_for(standard_dyadic(P1), "whitebox"), DirectSpace)


def test_oracle_width_contract():
    """An oracle answering too wide an interval is rejected."""
    sloppy = OraclePresentation(P1, lambda v, k: Interval(Fraction(0), Fraction(1)), "sloppy")
    with pytest.raises(PresentationError):
        sloppy.norm(RationalVector.basis(0), 5)


def test_spaces_agree_on_norms():
    """Direct and presented spaces give overlapping norms for the same vector."""
    pres = standard_dyadic(P3)
    direct, presented = DirectSpace(P3, pres), PresentedSpace(pres)
    v = RationalVector.of({1: 2, 4: IMAG})
    assert direct.norm(pres.evaluate(v), 20).overlaps(presented.norm(v, 20))
    assert presented.generator(4) == RationalVector.basis(4)
