"""Midpoint-radius reals on top of MPFR and the reductions modulo 2*pi.

Every value is a :class:`PrecReal`: an MPFR midpoint, a nonnegative absolute
error bound and the working precision it was produced at.  MPFR rounds every
operation correctly, so a rounding step at ``p`` bits contributes at most
``|result| * 2**-p``; that is added to the propagated input error.  Error
bounds themselves are evaluated with upward rounding.

No operation touches the global gmpy2 context; each call builds its own
context object, which keeps the module free of shared mutable state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import Decimal
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Protocol, Union, runtime_checkable

import gmpy2
from gmpy2 import mpfr, mpq, mpz

from .exceptions import PrecisionExhausted

__all__ = [
    "DEFAULT_PREC",
    "DEFAULT_CEILING",
    "PrecReal",
    "Angle",
    "RealSource",
    "LazyReal",
    "PI",
    "LN2",
    "E",
    "TWO_PI_OVER_LN2",
    "as_real",
    "const_pi",
    "const_ln2",
    "const_e",
    "signed_mod_2pi",
    "factorial_scaled_angle",
    "scaled_expm1",
    "log2_weight",
    "exp2_log",
]

DEFAULT_PREC = 128
DEFAULT_CEILING = 1 << 20
GUARD_BITS = 32
VERIFY_BITS = 64

_ERR_PREC = 64
# Below this binary exponent a quantity is replaced by zero plus a bound;
# MPFR's exponent range here is about +-2**30.
_EXP_FLOOR = -(1 << 28)

Number = Union[int, Fraction, "PrecReal"]


def _ctx(prec: int, rnd=gmpy2.RoundToNearest) -> gmpy2.context:
    return gmpy2.context(precision=prec, round=rnd)


def _up(name: str, *args) -> mpfr:
    return getattr(_ctx(_ERR_PREC, gmpy2.RoundUp), name)(*args)


def _down(name: str, *args) -> mpfr:
    return getattr(_ctx(_ERR_PREC, gmpy2.RoundDown), name)(*args)


_ZERO = mpfr(0)
_ONE = mpfr(1)


# Unary operators on mpfr round to the *global* context; these stay exact.
def _abs(v: mpfr) -> mpfr:
    return _ctx(max(v.precision, 2)).abs(v)


def _neg(v: mpfr) -> mpfr:
    return _ctx(max(v.precision, 2)).minus(v)


def _uadd(*terms) -> mpfr:
    total = _ZERO
    for term in terms:
        total = _up("add", total, term)
    return total


def _rounding_bound(ctx: gmpy2.context, result: mpfr, prec: int) -> mpfr:
    if not ctx.inexact and not ctx.underflow:
        return _ZERO
    bound = _up("mul_2exp", _abs(result), -prec)
    if ctx.underflow:
        bound = _uadd(bound, _up("exp2", mpz(_ctx(prec).emin + 2)))
    return bound


def _apply(prec: int, name: str, *args) -> tuple[mpfr, mpfr]:
    """Run one MPFR operation at ``prec`` bits; return (result, rounding bound)."""
    ctx = _ctx(prec)
    result = getattr(ctx, name)(*args)
    return result, _rounding_bound(ctx, result, prec)


def _fraction_to_mpfr(q: Fraction, prec: int) -> tuple[mpfr, mpfr]:
    if q.denominator == 1:
        return _apply(prec, "add", mpz(q.numerator), _ZERO)
    return _apply(prec, "div", mpz(q.numerator), mpz(q.denominator))


@dataclass(frozen=True)
class PrecReal:
    """A real number known to lie in ``[mid - err, mid + err]``."""

    mid: mpfr
    err: mpfr
    prec: int

    def __post_init__(self):
        if not gmpy2.is_finite(self.mid):
            raise ValueError(f"non-finite midpoint {self.mid!r}")
        if not gmpy2.is_finite(self.err) or self.err < 0:
            raise ValueError(f"error bound must be finite and >= 0, got {self.err!r}")

    # -- construction -------------------------------------------------
    @classmethod
    def from_int(cls, n: int, prec: int = DEFAULT_PREC) -> PrecReal:
        mid, rnd = _apply(prec, "add", mpz(n), _ZERO)
        return cls(mid, rnd, prec)

    @classmethod
    def from_fraction(cls, q: Fraction | int, prec: int = DEFAULT_PREC) -> PrecReal:
        mid, rnd = _fraction_to_mpfr(Fraction(q), prec)
        return cls(mid, rnd, prec)

    @classmethod
    def from_mpfr(cls, value: mpfr, prec: int, err: mpfr = _ZERO) -> PrecReal:
        mid, rnd = _apply(prec, "add", value, _ZERO)
        return cls(mid, _uadd(err, rnd), prec)

    @classmethod
    def coerce(cls, value: Number, prec: int) -> PrecReal:
        if isinstance(value, PrecReal):
            return value
        if isinstance(value, (int, Fraction)):
            return cls.from_fraction(value, prec)
        raise TypeError(f"cannot convert {type(value).__name__} to PrecReal")

    def at(self, prec: int) -> PrecReal:
        """A fixed value does not refine; it is its own approximation."""
        return self

    # -- inspection ---------------------------------------------------
    @property
    def is_exact(self) -> bool:
        return self.err == 0

    def lo(self) -> mpfr:
        return _ctx(self.prec + 8, gmpy2.RoundDown).sub(self.mid, self.err)

    def hi(self) -> mpfr:
        return _ctx(self.prec + 8, gmpy2.RoundUp).add(self.mid, self.err)

    def abs_lo(self) -> mpfr:
        return max(_ctx(self.prec + 8, gmpy2.RoundDown).sub(_abs(self.mid), self.err), _ZERO)

    def abs_hi(self) -> mpfr:
        return _ctx(self.prec + 8, gmpy2.RoundUp).add(_abs(self.mid), self.err)

    def is_positive(self) -> bool:
        return self.lo() > 0

    def is_negative(self) -> bool:
        return self.hi() < 0

    def contains(self, value) -> bool:
        if isinstance(value, Fraction):
            value = mpq(value.numerator, value.denominator)
        return self.lo() <= value <= self.hi()

    def overlaps(self, other: PrecReal) -> bool:
        return self.lo() <= other.hi() and other.lo() <= self.hi()

    def fraction(self) -> Fraction:
        """Exact rational value of the midpoint."""
        q = mpq(self.mid)
        return Fraction(int(q.numerator), int(q.denominator))

    def __float__(self) -> float:
        return float(self.mid)

    def __repr__(self) -> str:
        return f"PrecReal({float(self.mid)!r} +/- {float(self.err):.3g}, prec={self.prec})"

    # -- arithmetic ---------------------------------------------------
    def _pair(self, other) -> tuple[PrecReal, int]:
        other = PrecReal.coerce(other, self.prec)
        return other, max(self.prec, other.prec)

    def __neg__(self) -> PrecReal:
        return PrecReal(_neg(self.mid) if self.mid else _ZERO, self.err, self.prec)

    def __abs__(self) -> PrecReal:
        return PrecReal(_abs(self.mid), self.err, self.prec)

    def __add__(self, other) -> PrecReal:
        other, p = self._pair(other)
        mid, rnd = _apply(p, "add", self.mid, other.mid)
        return PrecReal(mid, _uadd(self.err, other.err, rnd), p)

    __radd__ = __add__

    def __sub__(self, other) -> PrecReal:
        other, p = self._pair(other)
        mid, rnd = _apply(p, "sub", self.mid, other.mid)
        return PrecReal(mid, _uadd(self.err, other.err, rnd), p)

    def __rsub__(self, other) -> PrecReal:
        return PrecReal.coerce(other, self.prec) - self

    def __mul__(self, other) -> PrecReal:
        if isinstance(other, int):
            mid, rnd = _apply(self.prec, "mul", self.mid, mpz(other))
            return PrecReal(mid, _uadd(_up("mul", self.err, abs(mpz(other))), rnd), self.prec)
        other, p = self._pair(other)
        mid, rnd = _apply(p, "mul", self.mid, other.mid)
        prop = _uadd(
            _up("mul", _abs(self.mid), other.err),
            _up("mul", _abs(other.mid), self.err),
            _up("mul", self.err, other.err),
        )
        return PrecReal(mid, _uadd(prop, rnd), p)

    __rmul__ = __mul__

    def __truediv__(self, other) -> PrecReal:
        other, p = self._pair(other)
        denom_lo = other.abs_lo()
        if denom_lo <= 0:
            raise PrecisionExhausted("division by a value whose enclosure contains zero")
        mid, rnd = _apply(p, "div", self.mid, other.mid)
        num = _uadd(_up("mul", self.err, _abs(other.mid)), _up("mul", _abs(self.mid), other.err))
        prop = _up("div", num, _down("mul", _abs(other.mid), denom_lo)) if num else _ZERO
        return PrecReal(mid, _uadd(prop, rnd), p)

    def __rtruediv__(self, other) -> PrecReal:
        return PrecReal.coerce(other, self.prec) / self

    def ldexp(self, k: int) -> PrecReal:
        """Multiply by ``2**k`` (exact apart from exponent range)."""
        mid, rnd = _apply(self.prec, "mul_2exp", self.mid, k)
        return PrecReal(mid, _uadd(_up("mul_2exp", self.err, k), rnd), self.prec)

    def square(self) -> PrecReal:
        mid, rnd = _apply(self.prec, "square", self.mid)
        prop = _uadd(_up("mul_2exp", _up("mul", _abs(self.mid), self.err), 1), _up("square", self.err))
        return PrecReal(mid, _uadd(prop, rnd), self.prec)

    def sqrt(self) -> PrecReal:
        if self.hi() < 0:
            raise ValueError("square root of a negative value")
        base = max(self.mid, _ZERO)
        mid, rnd = _apply(self.prec, "sqrt", base)
        lower = self.lo()
        if lower > 0:
            prop = _up("div", self.err, _down("sqrt", lower)) if self.err else _ZERO
        else:
            prop = _up("sqrt", _uadd(_abs(self.mid), self.err))
        return PrecReal(mid, _uadd(prop, rnd), self.prec)

    def exp(self) -> PrecReal:
        mid, rnd = _apply(self.prec, "exp", self.mid)
        prop = _up("mul", _magnitude(mid, self.prec), _up("expm1", self.err)) if self.err else _ZERO
        return PrecReal(mid, _uadd(prop, rnd), self.prec)

    def expm1(self) -> PrecReal:
        mid, rnd = _apply(self.prec, "expm1", self.mid)
        if self.err:
            exp_mid = _uadd(_ONE, _magnitude(mid, self.prec)) if mid > 0 else _ONE
            prop = _up("mul", exp_mid, _up("expm1", self.err))
        else:
            prop = _ZERO
        return PrecReal(mid, _uadd(prop, rnd), self.prec)

    def exp2(self) -> PrecReal:
        mid, rnd = _apply(self.prec, "exp2", self.mid)
        if self.err:
            prop = _up("mul", _magnitude(mid, self.prec), _up("expm1", _up("mul", self.err, mpfr("0.6932"))))
        else:
            prop = _ZERO
        return PrecReal(mid, _uadd(prop, rnd), self.prec)

    def _log_prop(self) -> mpfr:
        # worst case of |log(m + d) - log(m)| for |d| <= err
        if not self.err:
            return _ZERO
        lower = self.lo()
        if lower <= 0:
            raise PrecisionExhausted("logarithm of a value whose enclosure reaches zero")
        ratio = _up("div", self.err, lower)
        return _up("log1p", ratio)

    def log(self) -> PrecReal:
        prop = self._log_prop()
        mid, rnd = _apply(self.prec, "log", self.mid)
        return PrecReal(mid, _uadd(prop, rnd), self.prec)

    def log2(self) -> PrecReal:
        prop = self._log_prop()
        mid, rnd = _apply(self.prec, "log2", self.mid)
        return PrecReal(mid, _uadd(_up("div", prop, mpfr("0.6931")), rnd), self.prec)

    def log1p(self) -> PrecReal:
        return (self + 1).log() if self.mid > 1 else self._log1p_small()

    def _log1p_small(self) -> PrecReal:
        shifted_lo = _ctx(self.prec + 8, gmpy2.RoundDown).add(self.lo(), 1)
        if shifted_lo <= 0:
            raise PrecisionExhausted("log1p of a value whose enclosure reaches -1")
        prop = _up("log1p", _up("div", self.err, shifted_lo)) if self.err else _ZERO
        mid, rnd = _apply(self.prec, "log1p", self.mid)
        return PrecReal(mid, _uadd(prop, rnd), self.prec)

    def cos(self) -> PrecReal:
        mid, rnd = _apply(self.prec, "cos", self.mid)
        return PrecReal(mid, _uadd(self.err, rnd), self.prec)

    def sin(self) -> PrecReal:
        mid, rnd = _apply(self.prec, "sin", self.mid)
        return PrecReal(mid, _uadd(self.err, rnd), self.prec)


def _magnitude(value: mpfr, prec: int) -> mpfr:
    """Upper bound on the exact quantity that ``value`` approximates."""
    return _up("mul", _abs(value), _uadd(_ONE, _up("exp2", mpz(2 - prec))))


# -- constants ------------------------------------------------------------
@lru_cache(maxsize=64)
def const_pi(prec: int) -> PrecReal:
    mid, rnd = _apply(prec, "const_pi")
    return PrecReal(mid, rnd, prec)


@lru_cache(maxsize=64)
def const_ln2(prec: int) -> PrecReal:
    mid, rnd = _apply(prec, "const_log2")
    return PrecReal(mid, rnd, prec)


@lru_cache(maxsize=64)
def const_e(prec: int) -> PrecReal:
    mid, rnd = _apply(prec, "exp", _ONE)
    return PrecReal(mid, rnd, prec)


@runtime_checkable
class RealSource(Protocol):
    """Anything that can deliver an enclosure at a requested precision."""

    def at(self, prec: int) -> PrecReal: ...


class LazyReal:
    """A real number defined by a procedure that can be rerun at any precision."""

    def __init__(self, build: Callable[[int], PrecReal], label: str, turns: Fraction | None = None):
        self._build = lru_cache(maxsize=16)(build)
        self.label = label
        # t = turns * 2pi / ln2 exactly, when known; lets angles reduce exactly
        self.turns = turns

    def at(self, prec: int) -> PrecReal:
        return self._build(prec)

    def __neg__(self) -> LazyReal:
        label = self.label[1:] if self.label.startswith("-") else "-" + self.label
        turns = None if self.turns is None else -self.turns
        return LazyReal(lambda p: -self.at(p), label, turns)

    def __repr__(self) -> str:
        return f"LazyReal({self.label!r})"


PI = LazyReal(const_pi, "pi")
LN2 = LazyReal(const_ln2, "ln2")
E = LazyReal(const_e, "e")
TWO_PI_OVER_LN2 = LazyReal(lambda p: const_pi(p + 8).ldexp(1) / const_ln2(p + 8), "2pi/ln2", Fraction(1))


def _format_fraction(q: Fraction) -> str:
    return str(q.numerator) if q.denominator == 1 else f"{q.numerator}/{q.denominator}"


def as_real(value) -> RealSource:
    """Exact rationals, decimal strings and ``p/q`` strings become lazy sources."""
    if isinstance(value, RealSource):
        return value
    if isinstance(value, str):
        value = Fraction(Decimal(value)) if "/" not in value else Fraction(value)
    if isinstance(value, float):
        value = Fraction(value)
    if isinstance(value, (int, Fraction)):
        q = Fraction(value)
        return LazyReal(lambda p: PrecReal.from_fraction(q, p), _format_fraction(q))
    raise TypeError(f"cannot interpret {value!r} as a real number")


# -- reduction modulo 2*pi ------------------------------------------------
@dataclass(frozen=True)
class Angle:
    """A residue in (-pi, pi] together with its enclosure."""

    value: PrecReal
    boundary_ambiguous: bool = False

    @property
    def mid(self) -> mpfr:
        return self.value.mid

    @property
    def err(self) -> mpfr:
        return self.value.err

    def __float__(self) -> float:
        return float(self.value.mid)

    def __neg__(self) -> Angle:
        if self.value.mid == 0:
            return self
        return signed_mod_2pi(-self.value)


def _bit_length(value: mpfr) -> int:
    if value == 0:
        return 0
    return max(0, int(gmpy2.frexp(value)[1]))


def signed_mod_2pi(s: PrecReal) -> Angle:
    """Reduce ``s`` to the representative in (-pi, pi].

    The reduction constant is computed with enough extra bits that the
    output error is ``s.err`` plus rounding at ``s.prec``.
    """
    if s.err >= mpfr("3.14159"):
        raise PrecisionExhausted("input error is at least pi; the residue is undetermined")
    wp = s.prec + _bit_length(s.mid) + GUARD_BITS
    pi = const_pi(wp)
    two_pi = pi.ldexp(1)
    if s.mid == 0:
        r = s
    else:
        ctx = _ctx(wp)
        k = mpz(ctx.ceil(ctx.div(ctx.sub(s.mid, pi.mid), two_pi.mid)))
        r = s - two_pi * int(k) if k else PrecReal.from_mpfr(s.mid, wp, s.err)
        if r.mid > pi.mid:
            r = r - two_pi
        elif r.mid <= _neg(pi.mid):
            r = r + two_pi
    ambiguous = r.hi() > pi.lo() or r.lo() <= -pi.lo()
    return Angle(r, ambiguous)


def _circular_gap(a: Angle, b: Angle) -> mpfr:
    prec = max(a.value.prec, b.value.prec)
    gap = _abs(_ctx(prec).sub(a.mid, b.mid))
    two_pi = const_pi(prec).ldexp(1).mid
    if gap > const_pi(prec).mid:
        gap = _ctx(prec).sub(two_pi, gap)
    return _up("add", gap, _up("exp2", mpz(-prec + 4)))


def scaled_expm1(x_j, j: int, prec: int) -> PrecReal:
    """``exp(x_j / j!) - 1`` evaluated without cancellation.

    ``x_j`` is an exact rational or any object exposing its own
    ``scaled_expm1(prec)`` (closed-form entries produced by perturbation).
    """
    if hasattr(x_j, "scaled_expm1"):
        return x_j.scaled_expm1(prec)
    q = Fraction(x_j)
    if q == 0:
        return PrecReal(_ZERO, _ZERO, prec)
    return PrecReal.from_fraction(q / math.factorial(j), prec).expm1()


def log2_weight(j: int, x_j=0, prec: int = DEFAULT_PREC) -> PrecReal:
    """``log2`` of ``N_j * exp(-l_j)``, i.e. ``-j! * expm1(x_j / j!)``."""
    em1 = scaled_expm1(x_j, j, prec)
    return -(em1 * math.factorial(j))


def exp2_log(log2_value: PrecReal) -> PrecReal:
    """``2**log2_value``, replaced by zero plus a bound when it underflows."""
    if log2_value.hi() < _EXP_FLOOR:
        return PrecReal(_ZERO, _up("exp2", mpz(_EXP_FLOOR)), log2_value.prec)
    return log2_value.exp2()


def _exact_turn_angle(r: Fraction, target_err: float) -> Angle:
    """``2pi * r`` reduced into (-pi, pi] with ``r`` rational."""
    r = r - math.floor(r)
    if r > Fraction(1, 2):
        r -= 1
    if r == 0:
        return Angle(PrecReal(_ZERO, _ZERO, DEFAULT_PREC))
    prec = DEFAULT_PREC + max(0, math.ceil(-math.log2(target_err)))
    return Angle(const_pi(prec).ldexp(1) * PrecReal.from_fraction(r, prec))


def _angle_at(t: RealSource, fact: int, x_j, j: int, prec: int) -> Angle:
    tv = t.at(prec)
    scale = scaled_expm1(x_j, j, prec) + 1
    return signed_mod_2pi(tv * (const_ln2(prec) * fact) * scale)


def factorial_scaled_angle(
    t,
    j: int,
    x_j=0,
    target_err: float = 1e-20,
    *,
    guard_bits: int = GUARD_BITS,
    ceiling: int = DEFAULT_CEILING,
    exact_turns: bool = True,
) -> Angle:
    """``t * ln2 * j! * exp(x_j / j!)`` reduced into (-pi, pi].

    The working precision starts at ``bits(j!) + log2(1/target_err) + guard``
    and the result is confirmed by an independent pass ``VERIFY_BITS`` higher.
    On disagreement the guard doubles until ``ceiling`` is reached.

    When ``t`` is a known rational multiple ``q * 2pi/ln2`` and ``x_j = 0``
    the angle is ``2pi * (q j! mod 1)`` and is formed exactly; pass
    ``exact_turns=False`` to force the numerical path.
    """
    if j < 1:
        raise ValueError("j must be a positive integer")
    if not 0 < target_err < 1:
        raise ValueError("target_err must lie in (0, 1)")
    t = as_real(t)
    fact = math.factorial(j)
    turns = getattr(t, "turns", None)
    if exact_turns and turns is not None and not hasattr(x_j, "scaled_expm1") and Fraction(x_j) == 0:
        return _exact_turn_angle(turns * fact, target_err)
    tol_bits = math.ceil(-math.log2(target_err))
    t_bits = _bit_length(t.at(_ERR_PREC).mid)
    target = mpfr(target_err)
    guard = guard_bits
    while True:
        prec = fact.bit_length() + tol_bits + guard + t_bits
        if prec + VERIFY_BITS > ceiling:
            raise PrecisionExhausted(f"delta_{j} needs more than {ceiling} bits")
        first = _angle_at(t, fact, x_j, j, prec)
        check = _angle_at(t, fact, x_j, j, prec + VERIFY_BITS)
        if first.err <= target and _circular_gap(first, check) <= _uadd(first.err, check.err):
            return first
        if t.at(prec).err == t.at(prec + VERIFY_BITS).err != 0:
            raise PrecisionExhausted("t is a fixed-precision value too coarse for this target")
        guard *= 2
