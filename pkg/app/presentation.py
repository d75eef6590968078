"""Presentations of L^p spaces and the normed-space adapters built on them.

A presentation is a generator sequence plus a norm oracle for rational
combinations. White-box presentations also hand out the generators as step
functions; oracle presentations answer norm queries only, and everything
downstream that must work for both is written against ``NormedSpace``.

Generator order is part of the interface: the standard dyadic presentation
enumerates by level, then by left endpoint, so generator(0) is chi_[0,1),
generator(1) is chi_[0,1/2), generator(2) is chi_[1/2,1) and so on.
"""

from __future__ import annotations

import itertools
import math
from abc import ABC
from abc import abstractmethod
from collections.abc import Callable
from collections.abc import Iterable
from collections.abc import Iterator
from collections.abc import Mapping
from collections.abc import Sequence
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Any
from typing import Generic
from typing import TypeVar

from .config import settings
from .enclosure import ONE
from .enclosure import ZERO
from .enclosure import ComplexRational
from .enclosure import Exponent
from .enclosure import Interval
from .enclosure import pow_abs
from .enclosure import power_of_root
from .enclosure import root_of_power
from .stepfn import EMPTY_SET
from .stepfn import DyadicSet
from .stepfn import StepFn
from .stepfn import linear_combine
from .stepfn import norm_p
from .utils import ModulusViolationError
from .utils import PresentationError


@dataclass(frozen=True, slots=True)
class RationalVector:
    """A finite Q(i)-combination of generators, stored sorted with nonzero coefficients."""

    terms: tuple[tuple[int, ComplexRational], ...] = ()

    @classmethod
    def of(cls, mapping: Mapping[int, Any] | Iterable[tuple[int, Any]]) -> RationalVector:
        items = mapping.items() if isinstance(mapping, Mapping) else mapping
        acc: dict[int, ComplexRational] = {}
        for n, c in items:
            if n < 0:
                raise ValueError(f"generator index must be non-negative, got {n}")
            acc[n] = acc.get(n, ZERO) + ComplexRational.of(c)
        return cls(tuple(sorted((n, c) for n, c in acc.items() if c)))

    @classmethod
    def basis(cls, n: int, c: Any = ONE) -> RationalVector:
        return cls.of({n: c})

    def as_dict(self) -> dict[int, ComplexRational]:
        return dict(self.terms)

    def coefficient(self, n: int) -> ComplexRational:
        return self.as_dict().get(n, ZERO)

    def support(self) -> tuple[int, ...]:
        return tuple(n for n, _ in self.terms)

    @property
    def is_zero(self) -> bool:
        return not self.terms

    def __bool__(self) -> bool:
        return bool(self.terms)

    def __add__(self, other: RationalVector) -> RationalVector:
        return RationalVector.of(itertools.chain(self.terms, other.terms))

    def __sub__(self, other: RationalVector) -> RationalVector:
        return self + other.scale(-ONE)

    def __neg__(self) -> RationalVector:
        return self.scale(-ONE)

    def scale(self, c: Any) -> RationalVector:
        c = ComplexRational.of(c)
        return RationalVector.of((n, c * v) for n, v in self.terms)

    def to_json(self) -> dict[str, dict[str, str]]:
        return {str(n): c.to_json() for n, c in self.terms}

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> RationalVector:
        return cls.of(
            (int(n), ComplexRational.from_json(c) if isinstance(c, Mapping) else c)
            for n, c in data.items()
        )

    def __str__(self) -> str:
        if not self.terms:
            return "0"
        return " + ".join(f"({c})e{n}" for n, c in self.terms)


def combine_vectors(pairs: Iterable[tuple[Any, RationalVector]]) -> RationalVector:
    return RationalVector.of(
        (n, ComplexRational.of(c) * v) for c, vec in pairs for n, v in vec.terms
    )


class Presentation(ABC):
    """A generator sequence with a norm oracle for rational vectors."""

    def __init__(self, p: Exponent, name: str, size: int | None = None) -> None:
        self.p = p
        self.name = name
        self.size = size
        self._norms = lru_cache(maxsize=1 << 14)(self._norm)

    @property
    def white_box(self) -> bool:
        return False

    def generator(self, n: int) -> StepFn:
        raise PresentationError(
            f"presentation {self.name!r} does not expose its generators", {"n": n}
        )

    def evaluate(self, v: RationalVector) -> StepFn:
        return linear_combine((c, self.generator(n)) for n, c in v.terms)

    def norm(self, v: RationalVector, k: int) -> Interval:
        if v.is_zero:
            return Interval.point(0)
        out = self._norms(v, k)
        if out.width > Fraction(1, 1 << k):
            raise PresentationError(
                f"norm oracle of {self.name!r} returned width above 2^-{k}",
                {"k": k, "interval": out.to_json()},
            )
        return out

    @abstractmethod
    def _norm(self, v: RationalVector, k: int) -> Interval:
        ...

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.name!r}, p={self.p})"


class StepPresentation(Presentation):
    """White-box presentation whose generators are step functions."""

    def __init__(
        self,
        p: Exponent,
        generator: Callable[[int], StepFn],
        name: str,
        size: int | None = None,
    ) -> None:
        super().__init__(p, name, size)
        self._generator = lru_cache(maxsize=1 << 12)(generator)

    @property
    def white_box(self) -> bool:
        return True

    def generator(self, n: int) -> StepFn:
        if n < 0 or (self.size is not None and n >= self.size):
            return StepFn.zero()
        return self._generator(n)

    def _norm(self, v: RationalVector, k: int) -> Interval:
        return norm_p(self.evaluate(v), self.p, k)


class OraclePresentation(Presentation):
    """Black-box presentation answering norm queries only."""

    def __init__(
        self,
        p: Exponent,
        norm: Callable[[RationalVector, int], Interval],
        name: str,
        size: int | None = None,
    ) -> None:
        super().__init__(p, name, size)
        self._oracle = norm

    def _norm(self, v: RationalVector, k: int) -> Interval:
        return self._oracle(v, k)


@dataclass(frozen=True)
class MeasureRing:
    """An indexed ring of subsets of [0, 1] closed under union and difference."""

    name: str
    set_at: Callable[[int], DyadicSet]
    union_index: Callable[[int, int], int]
    diff_index: Callable[[int, int], int]
    size: int | None = None
    measure_fn: Callable[[int, int], Interval] | None = None

    def R(self, n: int) -> DyadicSet:
        return self.set_at(n)

    def intersection_index(self, n: int, m: int) -> int:
        # R(n) & R(m) = R(n) - (R(n) - R(m))
        return self.diff_index(self.diff_index(m, n), n)

    def measure(self, n: int, k: int) -> Interval:
        if self.measure_fn is not None:
            return self.measure_fn(n, k)
        return Interval.point(self.R(n).measure())


def _block_size(level: int) -> int:
    return (1 << (1 << level)) - 1


def _dyadic_level(n: int) -> tuple[int, int]:
    """(level, mask) of ring index n; index 0 is the empty set."""
    if n == 0:
        return 0, 0
    level, offset = 1, 1
    while n >= offset + _block_size(level):
        offset += _block_size(level)
        level += 1
    r, width = n - offset, 1 << level
    if r < width:
        return level, 1 << r
    # the t-th mask with two or more bits is the m with m - 1 - bit_length(m) = t
    t, bits = r - width, 2
    while True:
        mask = t + 1 + bits
        if mask.bit_length() == bits and mask & (mask - 1):
            return level, mask
        bits += 1


def _dyadic_index(level: int, mask: int) -> int:
    if not mask:
        return 0
    if level == 0:
        level, mask = 1, 3
    offset = 1 + sum(_block_size(i) for i in range(1, level))
    if not mask & (mask - 1):
        return offset + mask.bit_length() - 1
    return offset + (1 << level) + mask - 1 - mask.bit_length()


def _lift_mask(mask: int, level: int, target: int) -> int:
    block = (1 << (1 << (target - level))) - 1
    shift = 1 << (target - level)
    out = 0
    for c in range(1 << level):
        if mask >> c & 1:
            out |= block << (c * shift)
    return out


def _dyadic_set(n: int) -> DyadicSet:
    level, mask = _dyadic_level(n)
    scale = 1 << level
    return DyadicSet.of(
        *((Fraction(c, scale), Fraction(c + 1, scale)) for c in range(scale) if mask >> c & 1)
    )


def _dyadic_binary(op: Callable[[int, int], int]) -> Callable[[int, int], int]:
    def apply(a: int, b: int) -> int:
        (la, ma), (lb, mb) = _dyadic_level(a), _dyadic_level(b)
        top = max(la, lb)
        return _dyadic_index(top, op(_lift_mask(ma, la, top), _lift_mask(mb, lb, top)))

    return apply


def dyadic_ring() -> MeasureRing:
    """Finite unions of dyadic intervals with Lebesgue measure.

    Index 0 is the empty set. Then come level blocks j = 1, 2, ...: the 2^j
    single intervals [c/2^j, (c+1)/2^j) left to right, followed by the other
    nonempty unions of level-j intervals in increasing mask order (bit c
    selects the c-th interval). [0, 1) first appears as index 3.
    """
    return MeasureRing(
        name="dyadic",
        set_at=_dyadic_set,
        union_index=_dyadic_binary(lambda x, y: x | y),
        diff_index=_dyadic_binary(lambda x, y: y & ~x),
    )


def finite_ring(sets: Sequence[DyadicSet], name: str = "finite") -> MeasureRing:
    """The Boolean ring generated by finitely many sets.

    Indices below M are the given sets; index M + mask is the union of the
    atoms selected by mask.
    """
    if len(sets) > settings.max_ring_sets:
        raise PresentationError(
            f"a finite ring takes at most {settings.max_ring_sets} sets", {"sets": len(sets)}
        )
    grid = sorted({t for s in sets for span in s.intervals for t in span})
    patterns: dict[int, list[tuple[Fraction, Fraction]]] = {}
    for a, b in zip(grid, grid[1:]):
        mid = (a + b) / 2
        pattern = sum(1 << j for j, s in enumerate(sets) if s.contains_point(mid))
        if pattern:
            patterns.setdefault(pattern, []).append((a, b))
    atoms = [DyadicSet.of(*spans) for spans in patterns.values()]
    atom_patterns = list(patterns)
    given = len(sets)
    limit = given + (1 << len(atoms))

    def mask_of(n: int) -> int:
        if n < given:
            return sum(1 << i for i, pat in enumerate(atom_patterns) if pat >> n & 1)
        return n - given if n < limit else 0

    def set_at(n: int) -> DyadicSet:
        if n < given:
            return sets[n]
        mask = mask_of(n)
        out = EMPTY_SET
        for i, atom in enumerate(atoms):
            if mask >> i & 1:
                out = out.union(atom)
        return out

    return MeasureRing(
        name=name,
        set_at=set_at,
        union_index=lambda n, m: given + (mask_of(n) | mask_of(m)),
        diff_index=lambda m, n: given + (mask_of(n) & ~mask_of(m)),
        size=limit,
    )


class RingPresentation(Presentation):
    """The presentation D_R(n) = chi_R(n) induced by a measure ring."""

    def __init__(self, ring: MeasureRing, p: Exponent) -> None:
        super().__init__(p, f"ring:{ring.name}", ring.size)
        self.ring = ring

    @property
    def white_box(self) -> bool:
        return True

    def generator(self, n: int) -> StepFn:
        return StepFn.from_set(self.ring.R(n))

    def _norm(self, v: RationalVector, k: int) -> Interval:
        return norm_via_cells(self.ring, v, self.p, k)


def dyadic_interval(n: int) -> tuple[Fraction, Fraction]:
    """The n-th dyadic interval in level-then-left-endpoint order."""
    level = (n + 1).bit_length() - 1
    i = n - ((1 << level) - 1)
    return Fraction(i, 1 << level), Fraction(i + 1, 1 << level)


def _half_swap(lo: Fraction, hi: Fraction) -> tuple[Fraction, Fraction]:
    if hi - lo == 1:
        return lo, hi
    half = Fraction(1, 2)
    return (lo + half, hi + half) if hi <= half else (lo - half, hi - half)


def standard_dyadic(p: Exponent) -> StepPresentation:
    return StepPresentation(p, lambda n: StepFn.indicator(*dyadic_interval(n)), "standard_dyadic")


def half_swapped_dyadic(p: Exponent) -> StepPresentation:
    """Dyadic generators with the halves [0,1/2) and [1/2,1) exchanged."""
    return StepPresentation(
        p, lambda n: StepFn.indicator(*_half_swap(*dyadic_interval(n))), "half_swapped_dyadic"
    )


def from_generators(p: Exponent, generators: Sequence[StepFn], name: str = "stepfn") -> StepPresentation:
    frozen = tuple(generators)
    return StepPresentation(p, lambda n: frozen[n], name, size=len(frozen))


def oracle_view(presentation: Presentation) -> OraclePresentation:
    """Hide the generators of a presentation behind its norm oracle."""
    return OraclePresentation(
        presentation.p, presentation.norm, f"oracle:{presentation.name}", presentation.size
    )


def induced_presentation(ring: MeasureRing, p: Exponent) -> RingPresentation:
    return RingPresentation(ring, p)


def norm_oracle(presentation: Presentation, v: RationalVector, k: int) -> Interval:
    return presentation.norm(v, k)


def _cells(ring: MeasureRing, indices: Sequence[int]) -> dict[int, int]:
    """Ring index of every nonempty S_h, keyed by the membership pattern h."""
    sets = [ring.R(n) for n in indices]
    grid = sorted({t for s in sets for span in s.intervals for t in span})
    seen: set[int] = set()
    for a, b in zip(grid, grid[1:]):
        mid = (a + b) / 2
        pattern = sum(1 << j for j, s in enumerate(sets) if s.contains_point(mid))
        if pattern:
            seen.add(pattern)
    out: dict[int, int] = {}
    for pattern in sorted(seen):
        inside = [indices[j] for j in range(len(indices)) if pattern >> j & 1]
        outside = [indices[j] for j in range(len(indices)) if not pattern >> j & 1]
        idx = inside[0]
        for n in inside[1:]:
            idx = ring.intersection_index(idx, n)
        for n in outside:
            idx = ring.diff_index(n, idx)
        out[pattern] = idx
    return out


def norm_via_cells(ring: MeasureRing, v: RationalVector, p: Exponent, k: int) -> Interval:
    """Enclose (sum_h |beta_h|^p mu(S_h))^(1/p), with beta_h summing the
    coefficients of the sets that contain S_h."""
    if v.is_zero:
        return Interval.point(0)
    indices = list(v.support())
    coeffs = [c for _, c in v.terms]
    cells = _cells(ring, indices)
    betas = {}
    for pattern in cells:
        beta = ZERO
        for j, c in enumerate(coeffs):
            if pattern >> j & 1:
                beta = beta + c
        betas[pattern] = beta
    top = max((b.abs2() for b in betas.values()), default=Fraction(0))
    extra = len(cells).bit_length() + math.ceil(
        p.interval(0).hi * max(0, top.numerator.bit_length() - top.denominator.bit_length() + 1)
    ) + 2

    def pow_at(kk: int) -> Interval:
        lo = hi = Fraction(0)
        for pattern, idx in cells.items():
            if not betas[pattern]:
                continue
            term = pow_abs(betas[pattern], p, kk + extra) * ring.measure(idx, kk + extra)
            lo += term.lo
            hi += term.hi
        return Interval(max(lo, Fraction(0)), hi)

    return root_of_power(pow_at, p, k)


def measure_lower_bounds(ring: MeasureRing) -> Iterator[Fraction]:
    """Nondecreasing lower bounds converging to the total measure.

    Disjointifies F_n = R(n) - (R(0) u ... u R(n-1)); the n-th bound sums
    lower ends of mu(F_m) at precision n + 1.
    """
    pieces: list[int] = []
    exact: dict[int, Fraction] = {}
    covered: int | None = None
    best = Fraction(0)
    for n in itertools.count():
        pieces.append(n if covered is None else ring.diff_index(covered, n))
        covered = n if covered is None else ring.union_index(covered, n)
        total = Fraction(0)
        for m, idx in enumerate(pieces):
            if m in exact:
                total += exact[m]
                continue
            enclosure = ring.measure(idx, n + 1)
            if enclosure.is_point:
                exact[m] = enclosure.lo
            total += max(enclosure.lo, Fraction(0))
        best = max(best, total)
        yield best


@dataclass(frozen=True)
class CauchyVectorSeq:
    """A sequence of rational vectors with the modulus ||at(n) - at(n+1)|| < 2^-n."""

    at: Callable[[int], RationalVector]
    modulus_certified: bool = False


def _step_below(presentation: Presentation, step: RationalVector, n: int) -> bool:
    bound = Fraction(1, 1 << n)
    k = n + 2
    for _ in range(settings.max_refinements):
        enclosure = presentation.norm(step, k)
        if enclosure.hi < bound:
            return True
        if enclosure.lo >= bound:
            return False
        k += settings.refine_step
    return False


def cauchy_limit(presentation: Presentation, seq: CauchyVectorSeq, k: int) -> RationalVector:
    """Return at(k+1), which lies within 2^-k of the limit."""
    target = k + 1
    for n in range(target + 1):
        if not _step_below(presentation, seq.at(n) - seq.at(n + 1), n):
            raise ModulusViolationError(
                f"step {n} of the sequence is not certified below 2^-{n}", {"n": n}
            )
    return seq.at(target)


V = TypeVar("V")


class NormedSpace(ABC, Generic[V]):
    """The vector operations the search and certification code relies on."""

    p: Exponent
    size: int | None

    @property
    @abstractmethod
    def white_box(self) -> bool:
        ...

    @abstractmethod
    def zero(self) -> V:
        ...

    @abstractmethod
    def combine(self, pairs: Iterable[tuple[Any, V]]) -> V:
        ...

    @abstractmethod
    def norm(self, v: V, k: int) -> Interval:
        ...

    @abstractmethod
    def generator(self, n: int) -> V:
        ...

    @abstractmethod
    def is_zero(self, v: V) -> bool:
        ...

    def norm_pow(self, v: V, k: int) -> Interval:
        return power_of_root(lambda kk: self.norm(v, kk), self.p, k)

    def add(self, a: V, b: V) -> V:
        return self.combine([(ONE, a), (ONE, b)])

    def sub(self, a: V, b: V) -> V:
        return self.combine([(ONE, a), (-ONE, b)])

    def scale(self, c: Any, v: V) -> V:
        return self.combine([(c, v)])


class DirectSpace(NormedSpace[StepFn]):
    """Step-function vectors with exact arithmetic and direct norms."""

    def __init__(self, p: Exponent, presentation: Presentation | None = None) -> None:
        if presentation is not None and not presentation.white_box:
            raise PresentationError("direct spaces need a white-box presentation")
        self.p = p
        self.presentation = presentation
        self.size = presentation.size if presentation is not None else None

    @property
    def white_box(self) -> bool:
        return True

    def zero(self) -> StepFn:
        return StepFn.zero()

    def combine(self, pairs: Iterable[tuple[Any, StepFn]]) -> StepFn:
        return linear_combine(pairs)

    def norm(self, v: StepFn, k: int) -> Interval:
        return norm_p(v, self.p, k)

    def norm_pow(self, v: StepFn, k: int) -> Interval:
        return v.norm_pow(self.p, k)

    def generator(self, n: int) -> StepFn:
        if self.presentation is None:
            raise PresentationError("no presentation attached to this space")
        return self.presentation.generator(n)

    def is_zero(self, v: StepFn) -> bool:
        return v.is_zero


class PresentedSpace(NormedSpace[RationalVector]):
    """Rational-vector arithmetic over a presentation; norms come from its oracle only."""

    def __init__(self, presentation: Presentation) -> None:
        self.p = presentation.p
        self.presentation = presentation
        self.size = presentation.size

    @property
    def white_box(self) -> bool:
        return False

    def zero(self) -> RationalVector:
        return RationalVector()

    def combine(self, pairs: Iterable[tuple[Any, RationalVector]]) -> RationalVector:
        return combine_vectors(pairs)

    def norm(self, v: RationalVector, k: int) -> Interval:
        return self.presentation.norm(v, k)

    def generator(self, n: int) -> RationalVector:
        return RationalVector.basis(n)

    def is_zero(self, v: RationalVector) -> bool:
        # syntactic; a nonzero combination may still have norm zero
        return v.is_zero


def space_for(presentation: Presentation, strategy: str) -> NormedSpace[Any]:
    """Direct space for white-box search, oracle-only space otherwise."""
    if strategy == "whitebox":
        return DirectSpace(presentation.p, presentation)
    return PresentedSpace(presentation)
