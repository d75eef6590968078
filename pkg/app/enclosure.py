"""Exact rationals, Gaussian rationals and validated interval enclosures.

Irrational quantities (|z|^p, x^(1/p), the sigma constant) are evaluated in
mpmath's interval context, converted back to exact rational endpoints and
rounded outward onto a dyadic grid, so every result is deterministic in k.
Rational exponents take exact paths whenever the power is itself rational.
"""

from __future__ import annotations

import math
from collections.abc import Callable
from collections.abc import Iterable
from dataclasses import dataclass
from dataclasses import field
from fractions import Fraction
from functools import cached_property
from functools import lru_cache
from typing import Any

from mpmath import libmp
from mpmath.ctx_iv import MPIntervalContext

from .config import settings
from .utils import NegativeInputError
from .utils import PEqualsTwoError
from .utils import PrecisionExhaustedError

Rational = Fraction
RationalLike = Fraction | int | str


def as_rational(value: Any) -> Fraction:
    """Read an int, Fraction or "num/den" string as an exact rational."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise TypeError("booleans are not rationals")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, str):
        try:
            return Fraction(value.strip())
        except (ValueError, ZeroDivisionError) as exc:
            raise ValueError(f"not a rational: {value!r}") from exc
    raise TypeError(f"cannot read {type(value).__name__} as a rational")


def format_rational(q: Fraction) -> str:
    return str(q)


@dataclass(frozen=True, slots=True)
class ComplexRational:
    """An element of Q(i)."""

    re: Fraction = Fraction(0)
    im: Fraction = Fraction(0)

    def __post_init__(self) -> None:
        object.__setattr__(self, "re", as_rational(self.re))
        object.__setattr__(self, "im", as_rational(self.im))

    @classmethod
    def of(cls, value: Any) -> ComplexRational:
        if isinstance(value, ComplexRational):
            return value
        if isinstance(value, tuple):
            return cls(*value)
        return cls(as_rational(value))

    def __add__(self, other: Any) -> ComplexRational:
        o = _coerce(other)
        if o is None:
            return NotImplemented
        return ComplexRational(self.re + o.re, self.im + o.im)

    __radd__ = __add__

    def __sub__(self, other: Any) -> ComplexRational:
        o = _coerce(other)
        if o is None:
            return NotImplemented
        return ComplexRational(self.re - o.re, self.im - o.im)

    def __rsub__(self, other: Any) -> ComplexRational:
        o = _coerce(other)
        return NotImplemented if o is None else o - self

    def __neg__(self) -> ComplexRational:
        return ComplexRational(-self.re, -self.im)

    def __mul__(self, other: Any) -> ComplexRational:
        o = _coerce(other)
        if o is None:
            return NotImplemented
        return ComplexRational(
            self.re * o.re - self.im * o.im, self.re * o.im + self.im * o.re
        )

    __rmul__ = __mul__

    def __truediv__(self, other: Any) -> ComplexRational:
        o = _coerce(other)
        return NotImplemented if o is None else self * o.reciprocal()

    def reciprocal(self) -> ComplexRational:
        d = self.abs2()
        if d == 0:
            raise ZeroDivisionError("reciprocal of zero")
        return ComplexRational(self.re / d, -self.im / d)

    def conjugate(self) -> ComplexRational:
        return ComplexRational(self.re, -self.im)

    def abs2(self) -> Fraction:
        """|z|^2, always exact."""
        return self.re * self.re + self.im * self.im

    def __bool__(self) -> bool:
        return bool(self.re) or bool(self.im)

    def __complex__(self) -> complex:
        return complex(float(self.re), float(self.im))

    def to_json(self) -> dict[str, str]:
        return {"re": format_rational(self.re), "im": format_rational(self.im)}

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> ComplexRational:
        return cls(as_rational(data.get("re", "0")), as_rational(data.get("im", "0")))

    def __str__(self) -> str:
        if not self.im:
            return format_rational(self.re)
        return f"{format_rational(self.re)}+{format_rational(self.im)}i"


def _coerce(value: Any) -> ComplexRational | None:
    if isinstance(value, ComplexRational):
        return value
    if isinstance(value, (Fraction, int)) and not isinstance(value, bool):
        return ComplexRational(Fraction(value))
    return None


ZERO = ComplexRational()
ONE = ComplexRational(Fraction(1))
IMAG = ComplexRational(Fraction(0), Fraction(1))


@dataclass(frozen=True, slots=True)
class Interval:
    """A closed rational interval [lo, hi]."""

    lo: Fraction
    hi: Fraction

    def __post_init__(self) -> None:
        lo, hi = as_rational(self.lo), as_rational(self.hi)
        if lo > hi:
            raise ValueError(f"empty interval [{lo}, {hi}]")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def point(cls, q: RationalLike) -> Interval:
        q = as_rational(q)
        return cls(q, q)

    @property
    def width(self) -> Fraction:
        return self.hi - self.lo

    @property
    def mid(self) -> Fraction:
        return (self.lo + self.hi) / 2

    @property
    def is_point(self) -> bool:
        return self.lo == self.hi

    def contains(self, x: Interval | RationalLike) -> bool:
        if isinstance(x, Interval):
            return self.lo <= x.lo and x.hi <= self.hi
        x = as_rational(x)
        return self.lo <= x <= self.hi

    def contains_zero(self) -> bool:
        return self.lo <= 0 <= self.hi

    def excludes_zero(self) -> bool:
        return not self.contains_zero()

    def overlaps(self, other: Interval) -> bool:
        return self.lo <= other.hi and other.lo <= self.hi

    def hull(self, other: Interval) -> Interval:
        return Interval(min(self.lo, other.lo), max(self.hi, other.hi))

    def intersect(self, other: Interval) -> Interval | None:
        lo, hi = max(self.lo, other.lo), min(self.hi, other.hi)
        return Interval(lo, hi) if lo <= hi else None

    def __add__(self, other: Interval | RationalLike) -> Interval:
        o = _as_interval(other)
        return Interval(self.lo + o.lo, self.hi + o.hi)

    __radd__ = __add__

    def __sub__(self, other: Interval | RationalLike) -> Interval:
        o = _as_interval(other)
        return Interval(self.lo - o.hi, self.hi - o.lo)

    def __rsub__(self, other: Interval | RationalLike) -> Interval:
        return _as_interval(other) - self

    def __neg__(self) -> Interval:
        return Interval(-self.hi, -self.lo)

    def __mul__(self, other: Interval | RationalLike) -> Interval:
        o = _as_interval(other)
        products = (self.lo * o.lo, self.lo * o.hi, self.hi * o.lo, self.hi * o.hi)
        return Interval(min(products), max(products))

    __rmul__ = __mul__

    def abs(self) -> Interval:
        if self.lo >= 0:
            return self
        if self.hi <= 0:
            return -self
        return Interval(Fraction(0), max(-self.lo, self.hi))

    def to_json(self) -> dict[str, str]:
        return {"lo": format_rational(self.lo), "hi": format_rational(self.hi)}

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> Interval:
        return cls(as_rational(data["lo"]), as_rational(data["hi"]))

    def __str__(self) -> str:
        return f"[{format_rational(self.lo)}, {format_rational(self.hi)}]"


ZERO_INTERVAL = Interval(Fraction(0), Fraction(0))


def _as_interval(value: Interval | RationalLike) -> Interval:
    return value if isinstance(value, Interval) else Interval.point(value)


def interval_sum(items: Iterable[Interval]) -> Interval:
    total = ZERO_INTERVAL
    for item in items:
        total = total + item
    return total


def round_out(x: Interval, bits: int) -> Interval:
    """Round outward onto the grid 2^-bits."""
    scale = 1 << bits
    return Interval(
        Fraction(math.floor(x.lo * scale), scale), Fraction(math.ceil(x.hi * scale), scale)
    )


def refine(compute: Callable[[int], Interval], k: int) -> Interval:
    """Evaluate a precision-indexed enclosure until its width is at most 2^-k."""
    target = Fraction(1, 1 << k)
    kk = k
    for _ in range(settings.max_refinements):
        out = compute(kk)
        if out.width <= target:
            return out
        kk += settings.refine_step
    raise PrecisionExhaustedError(
        f"enclosure did not reach width 2^-{k}", {"k": k, "last_precision": kk}
    )


@dataclass(frozen=True)
class Exponent:
    """The exponent p >= 1, either an exact rational or a computable real.

    Computable exponents compare and hash by their enclosure function, so
    two of them sharing a label never share cached powers.
    """

    value: Fraction | None = None
    enclosure: Callable[[int], Interval] | None = field(default=None, repr=False)
    label: str = ""

    def __post_init__(self) -> None:
        if (self.value is None) == (self.enclosure is None):
            raise ValueError("an exponent needs exactly one of value or enclosure")
        if self.value is not None:
            v = as_rational(self.value)
            if v < 1:
                raise ValueError(f"exponent must be >= 1, got {v}")
            object.__setattr__(self, "value", v)
            if not self.label:
                object.__setattr__(self, "label", format_rational(v))

    @classmethod
    def rational(cls, q: RationalLike) -> Exponent:
        return cls(value=as_rational(q))

    @classmethod
    def computable(cls, enclosure: Callable[[int], Interval], label: str) -> Exponent:
        return cls(enclosure=enclosure, label=label)

    @property
    def is_rational(self) -> bool:
        return self.value is not None

    def interval(self, k: int) -> Interval:
        if self.value is not None:
            return Interval.point(self.value)
        return self.enclosure(k)

    @cached_property
    def not_two(self) -> bool:
        if self.value is not None:
            return self.value != 2
        for k in range(0, settings.max_exponent_precision + 1, 4):
            if not self.interval(k).contains(2):
                return True
        return False

    def certify_not_two(self) -> None:
        if not self.not_two:
            raise PEqualsTwoError(
                f"cannot certify p != 2 for exponent {self.label}", {"p": self.label}
            )

    def approx(self) -> float:
        return float(self.interval(40).mid)

    def __str__(self) -> str:
        return self.label


def _integer_root(x: int, n: int) -> int | None:
    """Exact n-th root of a non-negative integer, or None."""
    if x < 2:
        return x
    r = 1 << -(-x.bit_length() // n)
    while True:
        s = ((n - 1) * r + x // r ** (n - 1)) // n
        if s >= r:
            break
        r = s
    return r if r**n == x else None


def _exact_power(a: Fraction, e: Fraction) -> Fraction | None:
    """a**e for a >= 0 and e > 0 when the result is rational."""
    n, d = e.numerator, e.denominator
    if d == 1:
        return a**n
    num = _integer_root(a.numerator, d)
    den = _integer_root(a.denominator, d)
    if num is None or den is None:
        return None
    return Fraction(num, den) ** n


@lru_cache(maxsize=64)
def _context(bits: int) -> MPIntervalContext:
    # one context per working precision; never mutated after creation
    ctx = MPIntervalContext()
    ctx.prec = bits
    return ctx


def _mp_str(q: Fraction) -> str:
    return f"{q.numerator}/{q.denominator}"


def _to_iv(ctx: MPIntervalContext, x: Interval) -> Any:
    return ctx.mpf((_mp_str(x.lo), _mp_str(x.hi)))


def _from_iv(value: Any) -> Interval:
    ends = []
    for raw in value._mpi_:
        _sign, man, _exp, bc = raw
        if not man and bc < 0:
            raise PrecisionExhaustedError("non-finite interval endpoint")
        ends.append(Fraction(*libmp.to_rational(raw)))
    return Interval(ends[0], ends[1])


def _magnitude_bits(q: Fraction) -> int:
    return max(0, q.numerator.bit_length() - q.denominator.bit_length() + 1)


def pow_abs(z: ComplexRational, p: Exponent, k: int) -> Interval:
    """Enclose |z|^p to width 2^-k, computed as (|z|^2)^(p/2)."""
    return _pow_abs2(z.abs2(), p, k)


def pow_abs2(a: Fraction, p: Exponent, k: int) -> Interval:
    """Enclose a^(p/2) for a squared magnitude a >= 0."""
    if a < 0:
        raise NegativeInputError(f"squared magnitude {a} is negative")
    return _pow_abs2(a, p, k)


@lru_cache(maxsize=1 << 16)
def _pow_abs2(a: Fraction, p: Exponent, k: int) -> Interval:
    if a == 0 or a == 1:
        return Interval.point(a)
    if p.value is not None:
        exact = _exact_power(a, p.value / 2)
        if exact is not None:
            return Interval.point(exact)
    mag = _magnitude_bits(a)
    p_hi = p.interval(0).hi

    def compute(kk: int) -> Interval:
        ctx = _context(kk + settings.guard_bits + math.ceil(p_hi * mag))
        pe = _to_iv(ctx, p.interval(kk + 8 + mag))
        x = ctx.exp(pe / 2 * ctx.ln(_to_iv(ctx, Interval.point(a))))
        return round_out(_from_iv(x), kk + 2)

    return refine(compute, k)


def pow_interval(x: Interval, p: Exponent, k: int) -> Interval:
    """Enclose {t^p : t in x} for x >= 0."""
    if x.lo < 0:
        raise NegativeInputError(f"power of a negative interval {x}")
    return Interval(_pow_abs2(x.lo * x.lo, p, k).lo, _pow_abs2(x.hi * x.hi, p, k).hi)


def root(x: Interval, p: Exponent, k: int) -> Interval:
    """Enclose {t^(1/p) : t in x}.

    Each endpoint is enclosed to 2^-(k+1), so the width is at most
    2^-k plus the true spread x.hi^(1/p) - x.lo^(1/p).
    """
    if x.lo < 0:
        raise NegativeInputError(f"root of a negative interval {x}")
    lo = _root_point(x.lo, p, k + 1).lo
    hi = _root_point(x.hi, p, k + 1).hi
    return Interval(lo, hi)


def root_of_power(pow_at: Callable[[int], Interval], p: Exponent, k: int) -> Interval:
    """Enclose x^(1/p) to width 2^-k from enclosures of x >= 0.

    Uses |a^(1/p) - b^(1/p)| <= |a - b|^(1/p), so x is requested at
    roughly p times the target precision.
    """
    scale = math.ceil(p.interval(0).hi)

    def compute(kk: int) -> Interval:
        x = pow_at(scale * (kk + 1))
        return root(Interval(max(x.lo, Fraction(0)), max(x.hi, Fraction(0))), p, kk + 1)

    return refine(compute, k)


def power_of_root(norm_at: Callable[[int], Interval], p: Exponent, k: int) -> Interval:
    """Enclose x^p to width 2^-k from enclosures of x >= 0."""
    p_hi = p.interval(0).hi
    bound = norm_at(0).hi + 1
    # Lipschitz constant p * bound^(p-1) of t -> t^p on [0, bound]
    extra = math.ceil(p_hi).bit_length() + math.ceil(p_hi * _magnitude_bits(bound)) + 1

    def compute(kk: int) -> Interval:
        x = norm_at(kk + extra).abs()
        return pow_interval(x, p, kk + 1)

    return refine(compute, k)


@lru_cache(maxsize=1 << 14)
def _root_point(q: Fraction, p: Exponent, k: int) -> Interval:
    if q == 0 or q == 1:
        return Interval.point(q)
    if p.value is not None:
        exact = _exact_power(q, 1 / p.value)
        if exact is not None:
            return Interval.point(exact)
    mag = _magnitude_bits(q)

    def compute(kk: int) -> Interval:
        ctx = _context(kk + settings.guard_bits + mag)
        pe = _to_iv(ctx, p.interval(kk + 8 + mag))
        x = ctx.exp(ctx.ln(_to_iv(ctx, Interval.point(q))) / pe)
        return round_out(_from_iv(x), kk + 2)

    return refine(compute, k)


def sigma_constant(p: Exponent, k: int) -> Interval:
    """Enclose |4 - 2*(sqrt 2)^p|^-1."""
    p.certify_not_two()
    return _sigma_constant(p, k)


@lru_cache(maxsize=256)
def _sigma_constant(p: Exponent, k: int) -> Interval:
    if p.value is not None:
        half = p.value / 2
        if half.denominator == 1:
            return Interval.point(Fraction(1, abs(4 - 2 * 2**half.numerator)))

    def compute(kk: int) -> Interval:
        ctx = _context(kk + settings.guard_bits + 8)
        pe = _to_iv(ctx, p.interval(kk + 12))
        t = 4 - 2 * ctx.exp(pe / 2 * ctx.ln(ctx.mpf(2)))
        magnitude = _from_iv(t).abs()
        if magnitude.lo == 0:
            # not yet separated from zero at this precision
            return Interval(Fraction(0), Fraction(1 << (kk + 1)))
        return round_out(Interval(1 / magnitude.hi, 1 / magnitude.lo), kk + 2)

    return refine(compute, k)
