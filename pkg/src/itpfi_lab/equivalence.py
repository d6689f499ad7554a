"""Araki-Woods sums between two factors and the orbit-preservation bound.

For two eigenvalue lists that are constant on the same blocks, the factors
are unitarily isomorphic as soon as

    sum_j N_j [ (sqrt(lam_j) - sqrt(lam'_j))**2
              + (sqrt(1 - lam_j) - sqrt(1 - lam'_j))**2 ]

is finite.  Block terms are assembled from ``Delta = l'_j - l_j`` without
ever subtracting two nearby square roots:

    term = w_j * Delta**2 / 4 * C,
    C    = T**2 + 4 u phi(-Delta)**2 / den**2,
    T    = phi(-Delta/2) f(u') - 2 u phi(-Delta) / den,

with ``u = exp(-l_j)``, ``f(v) = (1+v)**-1/2``, ``phi(y) = expm1(y)/y`` and
``den = (sqrt(1+u') + sqrt(1+u)) sqrt((1+u)(1+u'))``.  Everything stays in
log2 form until the final report, because G-vector entries sit near
``2**(-j!/2)``.
"""

from __future__ import annotations

import decimal
import math
import statistics
from dataclasses import dataclass, field
from decimal import Decimal
from fractions import Fraction
from typing import Callable

import gmpy2
from gmpy2 import mpfr, mpz

from .exceptions import PreconditionError, PrecisionExhausted
from .model import GEntry, GVector, ParamSequence, Value, scaled_expm1
from .precision import (
    DEFAULT_PREC,
    PrecReal,
    const_ln2,
    exp2_log,
    log2_weight,
)
from .series import CompensatedSum, Verdict

__all__ = [
    "LOG2_FLOOR",
    "Log2Value",
    "BlockRecord",
    "EquivalencePolicy",
    "EquivalenceReport",
    "aw_partial_sum",
    "g_norm_sq",
    "g_norm_sq_exact",
    "orbit_bound_check",
]

LOG2_FLOOR = -(1 << 16)

# Beyond this the MPFR exponent range is no longer trustworthy.
_RANGE_LIMIT = 1 << 28
_TINY_LOG2 = -(1 << 27)
_SUM_PREC = 256


def _up() -> gmpy2.context:
    return gmpy2.context(precision=64, round=gmpy2.RoundUp)


@dataclass(frozen=True)
class Log2Value:
    """``log2`` of a positive quantity as ``exact + rounded``.

    The exact rational part carries the large integers such as ``j!`` so
    they never go through a rounded addition.
    """

    exact: Fraction
    rounded: PrecReal

    def __add__(self, other: Log2Value) -> Log2Value:
        return Log2Value(self.exact + other.exact, self.rounded + other.rounded)

    def __sub__(self, other: Log2Value) -> Log2Value:
        return Log2Value(self.exact - other.exact, self.rounded - other.rounded)

    def shift(self, q) -> Log2Value:
        return Log2Value(self.exact + Fraction(q), self.rounded)

    def scale(self, k: int) -> Log2Value:
        return Log2Value(self.exact * k, self.rounded * k)

    def hi(self) -> Fraction:
        return self.exact + _frac_outward(self.rounded.hi(), up=True)

    def lo(self) -> Fraction:
        return self.exact + _frac_outward(self.rounded.lo(), up=False)

    def to_real(self, prec: int = DEFAULT_PREC) -> PrecReal:
        """The log2 value itself as one enclosure (loses the exact split)."""
        bits = max(abs(self.exact.numerator).bit_length() - self.exact.denominator.bit_length(), 0)
        return PrecReal.from_fraction(self.exact, prec + bits) + self.rounded

    def decimal(self, digits: int = 30) -> tuple[Decimal, Decimal]:
        """Midpoint and error as decimals; the midpoint keeps the exact part."""
        mid = self.exact + self.rounded.fraction()
        return _fraction_decimal(mid, digits), _fraction_decimal(_frac_outward(self.rounded.err, up=True), 6, up=True)

    def power(self, prec: int = DEFAULT_PREC) -> PrecReal:
        """``2**self`` with the usual underflow-to-bound convention."""
        if self.hi() < -_RANGE_LIMIT:
            return PrecReal(mpfr(0), _up().exp2(mpz(-_RANGE_LIMIT)), prec)
        if self.lo() > _RANGE_LIMIT:
            raise PreconditionError("value exceeds the representable exponent range")
        return exp2_log(self.to_real(prec))


_COARSE = Fraction(1, 1 << 1000)


def _frac_outward(m: mpfr, up: bool) -> Fraction:
    """Exact value of ``m``, or a nearby coarse bound on the requested side when
    ``m`` is so small that its exact denominator would be enormous."""
    if m and gmpy2.get_exp(m) < -1000:
        if up:
            return _COARSE if m > 0 else Fraction(0)
        return Fraction(0) if m > 0 else -_COARSE
    return _frac(m)


def _frac(m: mpfr) -> Fraction:
    n, d = m.as_integer_ratio()
    return Fraction(int(n), int(d))


def _fraction_decimal(q: Fraction, digits: int, up: bool = False) -> Decimal:
    ctx = decimal.Context(prec=digits, rounding=decimal.ROUND_UP if up else decimal.ROUND_HALF_EVEN)
    return ctx.divide(Decimal(q.numerator), Decimal(q.denominator))


def _phi(y: PrecReal) -> PrecReal:
    """``expm1(y) / y``, continuous through ``y = 0``."""
    mag = y.abs_hi()
    if mag < mpfr(2) ** -20:
        # 1 + y/2 + R with |R| <= |y|^2 / 5 on this range
        up = _up()
        rem = up.div(up.square(mag), 5)
        half = y.ldexp(-1)
        return PrecReal(half.mid, up.add(half.err, rem), y.prec) + 1
    if y.abs_lo() <= 0:
        raise PrecisionExhausted("argument of phi is too uncertain")
    return y.expm1() / y


def _log2_split_of_entry(e: GEntry, prec: int) -> Log2Value:
    if e.log2_magnitude is not None:
        return Log2Value(e.log2_magnitude, e._log2_factor(prec))
    return Log2Value(Fraction(0), PrecReal.from_fraction(e.magnitude, prec).log2())


def _entry_real(e: GEntry, prec: int) -> PrecReal:
    """Signed ``a(j)``; a zero-with-bound when far below the exponent range."""
    if e.log2_magnitude is not None and e.log2_magnitude < _TINY_LOG2:
        return PrecReal(mpfr(0), _up().exp2(mpz(_TINY_LOG2)), prec)
    return e.value(prec)


def _log2_u(x_j: Value, j: int, prec: int) -> Log2Value:
    """``log2 exp(-l_j) = -j! + log2 w_j``."""
    return Log2Value(Fraction(-math.factorial(j)), log2_weight(j, x_j, prec))


@dataclass(frozen=True)
class _Delta:
    sign: int
    log2_abs: Log2Value
    value: PrecReal


def _aw_log2(j: int, x_j: Value, d: _Delta, log2_u_prime: Log2Value, prec: int) -> Log2Value:
    u = _log2_u(x_j, j, prec).power(prec)
    u_p = log2_u_prime.power(prec)
    phi1 = _phi(-d.value)
    phi_half = _phi(-d.value.ldexp(-1))
    s, s_p = (u + 1).sqrt(), (u_p + 1).sqrt()
    den = (s + s_p) * (s * s_p)
    f_p = 1 / s_p
    T = phi_half * f_p - (u * phi1).ldexp(1) / den
    C = T.square() + (u * phi1.square()).ldexp(2) / den.square()
    return Log2Value(
        d.log2_abs.exact * 2 - 2,
        log2_weight(j, x_j, prec) + d.log2_abs.rounded * 2 + C.log2(),
    )


# -- reports ------------------------------------------------------------------


@dataclass(frozen=True)
class BlockRecord:
    """Per-block log2 terms; ``None`` marks an exactly zero term."""

    j: int
    aw_log2: Log2Value | None
    majorant_log2: Log2Value | None = None
    g_log2: Log2Value | None = None
    dominated: bool | None = None

    def below_floor(self, floor: int = LOG2_FLOOR) -> bool:
        return self.aw_log2 is not None and self.aw_log2.hi() < floor


@dataclass(frozen=True)
class EquivalencePolicy:
    """Verdict knobs: a tail window, an absolute tolerance and a decay margin."""

    window_fraction: float = 0.5
    tolerance: float = 2.0 ** -100
    alpha_margin: float = 0.1
    floor: int = LOG2_FLOOR

    def __post_init__(self):
        if not 0 < self.window_fraction <= 1:
            raise PreconditionError("window_fraction must lie in (0, 1]")
        if not self.tolerance > 0:
            raise PreconditionError("tolerance must be positive")


@dataclass
class EquivalenceReport:
    partial_sums: list[PrecReal]
    cauchy_increments: list[PrecReal]
    verdict: Verdict
    bound_constant: PrecReal | None = None
    blocks: list[BlockRecord] = field(default_factory=list)
    horizon: int = 0
    fit_alpha: float | None = None
    extra: dict = field(default_factory=dict)

    @property
    def total(self) -> PrecReal:
        return self.partial_sums[-1]


def _exponentiate(v: Log2Value | None, floor: int, prec: int) -> PrecReal:
    """Report value of one term; below ``floor`` it is zero plus a bound."""
    if v is None:
        return PrecReal.from_int(0, prec)
    hi = v.hi()
    if hi < floor:
        exponent = max(math.ceil(hi), -_RANGE_LIMIT)
        return PrecReal(mpfr(0), _up().exp2(mpz(exponent)), prec)
    return v.power(prec)


def _decay_alpha(blocks: list[tuple[int, Log2Value]]) -> float | None:
    pts = [(math.log2(j), float(v.exact) + float(v.rounded)) for j, v in blocks]
    if len(pts) < 3:
        return None
    slope, _ = statistics.linear_regression([p[0] for p in pts], [p[1] for p in pts])
    return -slope


def _verdict(records: list[BlockRecord], increments: list[PrecReal], policy: EquivalencePolicy):
    size = max(1, math.ceil(len(records) * policy.window_fraction))
    window = list(zip(records[-size:], increments[-size:]))
    tol = mpfr(policy.tolerance)
    if all(inc.hi() <= tol for _, inc in window):
        return Verdict.FINITENESS, None
    alpha = _decay_alpha([(r.j, r.aw_log2) for r, _ in window if r.aw_log2 is not None])
    if alpha is None:
        return Verdict.INCONCLUSIVE, None
    if alpha > 1 + policy.alpha_margin:
        return Verdict.FINITENESS, alpha
    if alpha <= 1:
        return Verdict.DIVERGENCE, alpha
    return Verdict.INCONCLUSIVE, alpha


def _accumulate(values: list[PrecReal]) -> list[PrecReal]:
    acc = CompensatedSum(_SUM_PREC)
    out = []
    for v in values:
        acc.add(v)
        out.append(acc.value())
    return out


def _build_report(records, policy, prec, **kwargs) -> EquivalenceReport:
    increments = [_exponentiate(r.aw_log2, policy.floor, prec) for r in records]
    verdict, alpha = _verdict(records, increments, policy)
    return EquivalenceReport(
        partial_sums=_accumulate(increments),
        cauchy_increments=increments,
        verdict=verdict,
        blocks=records,
        horizon=len(records),
        fit_alpha=alpha,
        **kwargs,
    )


# -- aw_partial_sum ---------------------------------------------------------------


def _order_key(v: Value, j: int):
    if isinstance(v, Fraction):
        return (v, 0, "")
    return (v.value(DEFAULT_PREC).fraction(), 1, repr(v))


def _delta_between(j: int, base: Value, other: Value, prec: int) -> _Delta:
    """``l_j(other) - l_j(base)``, kept cancellation-free for rational pairs."""
    fact = math.factorial(j)
    ln2 = const_ln2(prec)
    if isinstance(base, Fraction) and isinstance(other, Fraction):
        diff = other - base
        scale = scaled_expm1(base, j, prec) + 1
        value = ln2 * fact * scale * PrecReal.from_fraction(diff / fact, prec).expm1()
    else:
        wp = prec + 2 * fact.bit_length() + 64
        value = ln2.at(wp) * fact * (scaled_expm1(other, j, wp) - scaled_expm1(base, j, wp))
        if not (value.is_positive() or value.is_negative()):
            raise PrecisionExhausted(f"cannot resolve the sign of l_{j} difference")
    sign = 1 if value.mid > 0 else -1
    return _Delta(sign, Log2Value(Fraction(0), abs(value).log2()), value)


def _aw_block(j: int, a: Value, b: Value, prec: int) -> Log2Value | None:
    if a == b:
        return None
    base, other = sorted((a, b), key=lambda v: _order_key(v, j))
    d = _delta_between(j, base, other, prec)
    return _aw_log2(j, base, d, _log2_u(other, j, prec), prec)


def aw_partial_sum(
    x: ParamSequence,
    x_prime: ParamSequence,
    J: int,
    *,
    prec: int = DEFAULT_PREC,
    policy: EquivalencePolicy = EquivalencePolicy(),
    workers: int = 1,
) -> EquivalenceReport:
    """Partial sums of the block-weighted squared root differences up to ``J``.

    Each block sees its two parameters in a canonical order, so swapping the
    arguments gives the same report bit for bit.
    """
    if J < 1:
        raise PreconditionError("J must be at least 1")
    records = [
        BlockRecord(j, aw)
        for j, aw in zip(range(1, J + 1), _map(lambda j: _aw_block(j, x[j], x_prime[j], prec), range(1, J + 1), workers))
    ]
    return _build_report(records, policy, prec)


def _map(fn: Callable, items, workers: int):
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


# -- g norm ---------------------------------------------------------------------


def _g_log2(e: GEntry, prec: int) -> Log2Value:
    exact, rounded = e.log2_weighted_square(prec)
    return Log2Value(exact, rounded)


def g_norm_sq_exact(a: GVector, J: int | None = None) -> Fraction | None:
    """``sum 2**(j!) a(j)**2`` as a rational when every coordinate is exact."""
    coords = a.exact_coordinates()
    if coords is None:
        return None
    total = Fraction(0)
    for j, v in coords.items():
        if J is not None and j > J:
            continue
        if math.factorial(j) > 1 << 16:
            return None
        total += (1 << math.factorial(j)) * v * v
    return total


def g_norm_sq(
    a: GVector,
    J: int,
    *,
    prec: int = DEFAULT_PREC,
    floor: int = LOG2_FLOOR,
) -> PrecReal:
    """Partial sum of ``2**(j!) a(j)**2`` over ``j <= J``, formed term by term in log2."""
    if J < 1:
        raise PreconditionError("J must be at least 1")
    sum_prec = max(_SUM_PREC, prec)
    acc = CompensatedSum(sum_prec)
    for e in a.entries:
        if e.j > J:
            break
        acc.add(_exponentiate(_g_log2(e, prec), floor, sum_prec))
    return acc.value()


# -- orbit bound -------------------------------------------------------------------


def _orbit_delta(j: int, x_j: Value, e: GEntry, prec: int) -> _Delta:
    """``l_j(x + a) - l_j(x) = ln2 * e^{x/j!} * a * phi(a/j!)``."""
    fact = math.factorial(j)
    ln2 = const_ln2(prec)
    scale = scaled_expm1(x_j, j, prec) + 1
    a_val = _entry_real(e, prec)
    phi = _phi(a_val / fact)
    log2_abs = _log2_split_of_entry(e, prec)
    log2_abs = Log2Value(log2_abs.exact, log2_abs.rounded + ln2.log2() + scale.log2() + phi.log2())
    return _Delta(e.sign, log2_abs, ln2 * scale * a_val * phi)


def _log_sum(values: list[Log2Value], prec: int) -> Log2Value | None:
    """``log2 sum 2**v`` keeping the largest exact offset aside."""
    if not values:
        return None
    offset = max(v.exact for v in values)
    acc = CompensatedSum(_SUM_PREC)
    for v in values:
        acc.add(_exponentiate(v.shift(-offset), LOG2_FLOOR, _SUM_PREC))
    return Log2Value(offset, acc.value().log2())


def orbit_bound_check(
    x: ParamSequence,
    a: GVector,
    J: int,
    *,
    prec: int = DEFAULT_PREC,
    policy: EquivalencePolicy = EquivalencePolicy(),
    workers: int = 1,
) -> EquivalenceReport:
    """AW sum between ``x`` and ``x + a`` next to its quadratic majorant.

    The majorant block is ``2 * 2**(j!) * Delta_j**2``; ``bound_constant`` is
    the measured ratio of the majorant partial sum to ``g_norm_sq(a, J)``.
    """
    if J < 1:
        raise PreconditionError("J must be at least 1")

    def block(e: GEntry) -> BlockRecord:
        d = _orbit_delta(e.j, x[e.j], e, prec)
        log2_u = _log2_u(x[e.j], e.j, prec)
        rate = d.value / const_ln2(prec)
        u_prime = Log2Value(log2_u.exact, log2_u.rounded - rate)
        aw = _aw_log2(e.j, x[e.j], d, u_prime, prec)
        majorant = d.log2_abs.scale(2).shift(1 + math.factorial(e.j))
        gap = (aw - majorant).to_real(prec)
        return BlockRecord(e.j, aw, majorant, _g_log2(e, prec), dominated=bool(gap.hi() <= 0))

    active = [e for e in a.entries if e.j <= J]
    by_j = {r.j: r for r in _map(block, active, workers)}
    records = [by_j.get(j, BlockRecord(j, None, dominated=True)) for j in range(1, J + 1)]

    maj = _log_sum([r.majorant_log2 for r in records if r.majorant_log2 is not None], prec)
    g = _log_sum([r.g_log2 for r in records if r.g_log2 is not None], prec)
    if maj is None or g is None:
        k_tilde = None
        majorant_total = g_total = PrecReal.from_int(0, prec)
    else:
        k_tilde = (maj - g).power(prec)
        majorant_total = _exponentiate(maj, policy.floor, prec)
        g_total = _exponentiate(g, policy.floor, prec)
    return _build_report(
        records,
        policy,
        prec,
        bound_constant=k_tilde,
        extra={
            "majorant_total": majorant_total,
            "g_norm_sq": g_total,
            "dominated": all(r.dominated for r in records),
        },
    )
