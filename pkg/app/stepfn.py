"""Complex-rational step functions on [0, 1] and their supports.

Cells are half-open [t_j, t_{j+1}), which fixes an everywhere-defined
representative of each a.e. class, so support, subvector and meet tests
are exact.
"""

from __future__ import annotations

import bisect
from collections.abc import Iterable
from collections.abc import Iterator
from collections.abc import Sequence
from dataclasses import dataclass
from fractions import Fraction
from typing import Any

from .enclosure import ONE
from .enclosure import ZERO
from .enclosure import ComplexRational
from .enclosure import Exponent
from .enclosure import Interval
from .enclosure import RationalLike
from .enclosure import as_rational
from .enclosure import format_rational
from .enclosure import pow_abs
from .enclosure import root_of_power

_ZERO_Q = Fraction(0)
_ONE_Q = Fraction(1)

Span = tuple[Fraction, Fraction]


@dataclass(frozen=True, slots=True)
class DyadicSet:
    """A finite union of disjoint half-open rational intervals inside [0, 1]."""

    intervals: tuple[Span, ...] = ()

    @classmethod
    def of(cls, *spans: tuple[RationalLike, RationalLike]) -> DyadicSet:
        cleaned: list[Span] = []
        for lo, hi in spans:
            lo, hi = as_rational(lo), as_rational(hi)
            if not (_ZERO_Q <= lo <= hi <= _ONE_Q):
                raise ValueError(f"interval [{lo}, {hi}) is not inside [0, 1]")
            if lo < hi:
                cleaned.append((lo, hi))
        cleaned.sort()
        merged: list[Span] = []
        for lo, hi in cleaned:
            if merged and lo <= merged[-1][1]:
                merged[-1] = (merged[-1][0], max(merged[-1][1], hi))
            else:
                merged.append((lo, hi))
        return cls(tuple(merged))

    @classmethod
    def interval(cls, lo: RationalLike, hi: RationalLike) -> DyadicSet:
        return cls.of((lo, hi))

    def __bool__(self) -> bool:
        return bool(self.intervals)

    @property
    def is_empty(self) -> bool:
        return not self.intervals

    def measure(self) -> Fraction:
        return sum((hi - lo for lo, hi in self.intervals), _ZERO_Q)

    def union(self, other: DyadicSet) -> DyadicSet:
        return DyadicSet.of(*self.intervals, *other.intervals)

    def intersection(self, other: DyadicSet) -> DyadicSet:
        out: list[Span] = []
        i = j = 0
        a, b = self.intervals, other.intervals
        while i < len(a) and j < len(b):
            lo, hi = max(a[i][0], b[j][0]), min(a[i][1], b[j][1])
            if lo < hi:
                out.append((lo, hi))
            if a[i][1] <= b[j][1]:
                i += 1
            else:
                j += 1
        return DyadicSet(tuple(out))

    def complement(self) -> DyadicSet:
        out: list[Span] = []
        cursor = _ZERO_Q
        for lo, hi in self.intervals:
            if cursor < lo:
                out.append((cursor, lo))
            cursor = hi
        if cursor < _ONE_Q:
            out.append((cursor, _ONE_Q))
        return DyadicSet(tuple(out))

    def difference(self, other: DyadicSet) -> DyadicSet:
        return self.intersection(other.complement())

    def issubset(self, other: DyadicSet) -> bool:
        return self.difference(other).is_empty

    def isdisjoint(self, other: DyadicSet) -> bool:
        return self.intersection(other).is_empty

    def contains_point(self, t: RationalLike) -> bool:
        t = as_rational(t)
        return any(lo <= t < hi for lo, hi in self.intervals)

    __or__ = union
    __and__ = intersection
    __sub__ = difference

    def indicator(self, value: ComplexRational = ONE) -> StepFn:
        return StepFn.from_set(self, value)

    def to_json(self) -> list[dict[str, str]]:
        return [
            {"lo": format_rational(lo), "hi": format_rational(hi)}
            for lo, hi in self.intervals
        ]

    @classmethod
    def from_json(cls, data: Iterable[Any]) -> DyadicSet:
        spans = []
        for item in data:
            if isinstance(item, dict):
                spans.append((item["lo"], item["hi"]))
            else:
                lo, hi = item
                spans.append((lo, hi))
        return cls.of(*spans)

    def __str__(self) -> str:
        if not self.intervals:
            return "{}"
        return " u ".join(f"[{lo}, {hi})" for lo, hi in self.intervals)


EMPTY_SET = DyadicSet()
UNIT_SET = DyadicSet(((_ZERO_Q, _ONE_Q),))


def _canonical(
    breakpoints: Sequence[Fraction], values: Sequence[ComplexRational]
) -> tuple[tuple[Fraction, ...], tuple[ComplexRational, ...]]:
    out_b = [breakpoints[0]]
    out_v: list[ComplexRational] = []
    for j, v in enumerate(values):
        if out_v and out_v[-1] == v:
            out_b[-1] = breakpoints[j + 1]
        else:
            out_v.append(v)
            out_b.append(breakpoints[j + 1])
    return tuple(out_b), tuple(out_v)


@dataclass(frozen=True, slots=True)
class StepFn:
    """A complex-rational step function in canonical form."""

    breakpoints: tuple[Fraction, ...]
    values: tuple[ComplexRational, ...]

    def __post_init__(self) -> None:
        bps = tuple(as_rational(t) for t in self.breakpoints)
        vals = tuple(ComplexRational.of(v) for v in self.values)
        if len(bps) != len(vals) + 1 or not vals:
            raise ValueError("a step function needs m >= 1 cells and m + 1 breakpoints")
        if bps[0] != 0 or bps[-1] != 1:
            raise ValueError("breakpoints must run from 0 to 1")
        if any(a >= b for a, b in zip(bps, bps[1:])):
            raise ValueError("breakpoints must be strictly increasing")
        bps, vals = _canonical(bps, vals)
        object.__setattr__(self, "breakpoints", bps)
        object.__setattr__(self, "values", vals)

    @classmethod
    def zero(cls) -> StepFn:
        return cls((_ZERO_Q, _ONE_Q), (ZERO,))

    @classmethod
    def constant(cls, value: Any) -> StepFn:
        return cls((_ZERO_Q, _ONE_Q), (ComplexRational.of(value),))

    @classmethod
    def indicator(cls, lo: RationalLike, hi: RationalLike, value: Any = ONE) -> StepFn:
        return cls.from_set(DyadicSet.interval(lo, hi), value)

    @classmethod
    def from_set(cls, subset: DyadicSet, value: Any = ONE) -> StepFn:
        value = ComplexRational.of(value)
        bps = [_ZERO_Q]
        vals: list[ComplexRational] = []
        for lo, hi in subset.intervals:
            if lo > bps[-1]:
                vals.append(ZERO)
                bps.append(lo)
            vals.append(value)
            bps.append(hi)
        if bps[-1] < _ONE_Q:
            vals.append(ZERO)
            bps.append(_ONE_Q)
        if not vals:
            return cls.zero()
        return cls(tuple(bps), tuple(vals))

    @classmethod
    def from_pieces(cls, pieces: Iterable[tuple[RationalLike, RationalLike, Any]]) -> StepFn:
        """Sum of value * chi_[lo, hi) over the pieces; overlapping pieces add."""
        items = [(as_rational(lo), as_rational(hi), ComplexRational.of(v)) for lo, hi, v in pieces]
        for lo, hi, _ in items:
            if not (_ZERO_Q <= lo <= hi <= _ONE_Q):
                raise ValueError(f"piece [{lo}, {hi}) is not inside [0, 1]")
        grid = sorted({_ZERO_Q, _ONE_Q} | {t for lo, hi, _ in items for t in (lo, hi)})
        values = []
        for a, b in zip(grid, grid[1:]):
            total = ZERO
            for lo, hi, v in items:
                if lo <= a and b <= hi:
                    total = total + v
            values.append(total)
        return cls(tuple(grid), tuple(values))

    def cells(self) -> Iterator[tuple[Fraction, Fraction, ComplexRational]]:
        for j, v in enumerate(self.values):
            yield self.breakpoints[j], self.breakpoints[j + 1], v

    def value_at(self, t: RationalLike) -> ComplexRational:
        t = as_rational(t)
        if not (_ZERO_Q <= t < _ONE_Q):
            return ZERO
        return self.values[bisect.bisect_right(self.breakpoints, t) - 1]

    @property
    def is_zero(self) -> bool:
        return len(self.values) == 1 and not self.values[0]

    def __bool__(self) -> bool:
        return not self.is_zero

    def __add__(self, other: StepFn) -> StepFn:
        return linear_combine([(ONE, self), (ONE, other)])

    def __sub__(self, other: StepFn) -> StepFn:
        return linear_combine([(ONE, self), (-ONE, other)])

    def __neg__(self) -> StepFn:
        return self.scale(-ONE)

    def scale(self, c: Any) -> StepFn:
        c = ComplexRational.of(c)
        return StepFn(self.breakpoints, tuple(c * v for v in self.values))

    def __mul__(self, other: Any) -> StepFn:
        if isinstance(other, StepFn):
            return self.multiply(other)
        return self.scale(other)

    __rmul__ = __mul__

    def multiply(self, other: StepFn) -> StepFn:
        grid = refine_common(self, other)
        return StepFn(grid.breakpoints, tuple(a * b for a, b in zip(grid.left, grid.right)))

    def restrict(self, subset: DyadicSet) -> StepFn:
        """f * chi_A."""
        return self.multiply(StepFn.from_set(subset))

    def support(self) -> DyadicSet:
        return DyadicSet.of(*((lo, hi) for lo, hi, v in self.cells() if v))

    def norm_pow(self, p: Exponent, k: int) -> Interval:
        """Enclose sum |v|^p * length, width <= 2^-k (lengths sum to 1)."""
        lo = hi = _ZERO_Q
        for a, b, v in self.cells():
            if not v:
                continue
            term = pow_abs(v, p, k)
            lo += term.lo * (b - a)
            hi += term.hi * (b - a)
        return Interval(lo, hi)

    def norm(self, p: Exponent, k: int) -> Interval:
        return norm_p(self, p, k)

    def to_json(self) -> dict[str, list[dict[str, str]]]:
        pieces = []
        for lo, hi, v in self.cells():
            if v:
                pieces.append(
                    {
                        "lo": format_rational(lo),
                        "hi": format_rational(hi),
                        "re": format_rational(v.re),
                        "im": format_rational(v.im),
                    }
                )
        return {"pieces": pieces}

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> StepFn:
        return cls.from_pieces(
            (
                piece["lo"],
                piece["hi"],
                ComplexRational(
                    as_rational(piece.get("re", "0")), as_rational(piece.get("im", "0"))
                ),
            )
            for piece in data.get("pieces", [])
        )

    def __str__(self) -> str:
        parts = [f"{v}*[{lo}, {hi})" for lo, hi, v in self.cells() if v]
        return " + ".join(parts) if parts else "0"


@dataclass(frozen=True, slots=True)
class CommonRefinement:
    """Two (or more) step functions sampled on one shared breakpoint list.

    Kept separate from StepFn because canonical form would merge the
    shared grid back apart.
    """

    breakpoints: tuple[Fraction, ...]
    columns: tuple[tuple[ComplexRational, ...], ...]

    @property
    def left(self) -> tuple[ComplexRational, ...]:
        return self.columns[0]

    @property
    def right(self) -> tuple[ComplexRational, ...]:
        return self.columns[1]

    @property
    def lengths(self) -> tuple[Fraction, ...]:
        return tuple(b - a for a, b in zip(self.breakpoints, self.breakpoints[1:]))

    def __len__(self) -> int:
        return len(self.breakpoints) - 1

    def as_stepfns(self) -> tuple[StepFn, ...]:
        return tuple(StepFn(self.breakpoints, column) for column in self.columns)


def _sample(f: StepFn, grid: Sequence[Fraction]) -> tuple[ComplexRational, ...]:
    out = []
    j = 0
    for t in grid[:-1]:
        while f.breakpoints[j + 1] <= t:
            j += 1
        out.append(f.values[j])
    return tuple(out)


def refine_all(fns: Sequence[StepFn]) -> CommonRefinement:
    grid: set[Fraction] = {_ZERO_Q, _ONE_Q}
    for f in fns:
        grid.update(f.breakpoints)
    shared = tuple(sorted(grid))
    return CommonRefinement(shared, tuple(_sample(f, shared) for f in fns))


def refine_common(f: StepFn, g: StepFn) -> CommonRefinement:
    return refine_all((f, g))


def linear_combine(coeffs: Iterable[tuple[Any, StepFn]]) -> StepFn:
    """Exact sum of c * f over the given pairs."""
    pairs = [(ComplexRational.of(c), f) for c, f in coeffs]
    if not pairs:
        return StepFn.zero()
    grid = refine_all([f for _, f in pairs])
    values = []
    for j in range(len(grid)):
        total = ZERO
        for (c, _), column in zip(pairs, grid.columns):
            if column[j]:
                total = total + c * column[j]
        values.append(total)
    return StepFn(grid.breakpoints, tuple(values))


def support(f: StepFn) -> DyadicSet:
    return f.support()


def norm_p(f: StepFn, p: Exponent, k: int) -> Interval:
    if f.is_zero:
        return Interval.point(0)
    return root_of_power(lambda kk: f.norm_pow(p, kk), p, k)


def subvector_le(f: StepFn, g: StepFn) -> bool:
    """Decide f <= g in the subvector order: g agrees with f wherever f != 0."""
    grid = refine_common(f, g)
    return all(a == b for a, b in zip(grid.left, grid.right) if a)


def meet(f: StepFn, g: StepFn) -> StepFn:
    """f restricted to {f = g}, the greatest common subvector."""
    grid = refine_common(f, g)
    return StepFn(
        grid.breakpoints, tuple(a if a == b else ZERO for a, b in zip(grid.left, grid.right))
    )


def disjointly_supported(f: StepFn, g: StepFn) -> bool:
    grid = refine_common(f, g)
    return not any(a and b for a, b in zip(grid.left, grid.right))


def reciprocal_witness(f: StepFn) -> StepFn:
    """The simple s with s * f = chi_supp(f) exactly."""
    return StepFn(f.breakpoints, tuple(v.reciprocal() if v else ZERO for v in f.values))


def density_gap(f: StepFn, subset: DyadicSet, p: Exponent, k: int) -> Interval:
    """Enclose ||chi_A - chi_A * s * f||_p for the reciprocal witness s of f.

    Zero exactly when A lies inside supp(f).
    """
    s = reciprocal_witness(f)
    chi = StepFn.from_set(subset)
    return norm_p(chi - (s * f).restrict(subset), p, k)
