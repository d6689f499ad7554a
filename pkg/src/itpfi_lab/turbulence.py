"""Finite local-orbit chains for G acting on c0 by addition.

Given ``x`` and ``x + g`` in a sup-norm ball ``U`` and a G-ball ``V`` of
radius ``r``, the chain ``x, x + g/n, ..., x + g`` walks inside ``U`` (balls
are convex) with every step in ``V`` once ``|g|_G / n < r``.  Every claim
about an emitted chain is re-checked coordinate by coordinate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import gmpy2
from gmpy2 import mpfr

from .exceptions import PrecisionExhausted, PreconditionError, TargetOutsideU
from .equivalence import g_norm_sq, g_norm_sq_exact
from .model import GEntry, GVector, ParamSequence, ShiftedEntry, Value, entry_value, parse_rational
from .precision import DEFAULT_CEILING, DEFAULT_PREC, PrecReal

DEFAULT_MAX_POINTS = 10**6

__all__ = [
    "SupBall",
    "ChainWitness",
    "condition_star_n",
    "chain_witness",
    "dense_approximant",
]


@dataclass(frozen=True)
class SupBall:
    """Open ball ``{y : sup_j |y(j) - center(j)| < radius}`` in c0."""

    center: ParamSequence
    radius: Fraction

    def __post_init__(self):
        if self.radius <= 0:
            raise PreconditionError("ball radius must be positive")


def _least_n_exact(q: Fraction, r: Fraction) -> int:
    # n sqrt(...) comparison squared: n > sqrt(q)/r  <=>  n^2 > q / r^2
    ratio = q / (r * r)
    return math.isqrt(ratio.numerator // ratio.denominator) + 1


def condition_star_n(
    g: GVector | Fraction | int | str,
    radius_V,
    *,
    prec: int = DEFAULT_PREC,
    ceiling: int = DEFAULT_CEILING,
) -> int:
    """Least positive ``n`` with ``|g|_G / n < radius_V``.

    ``g`` may be a G-vector or directly the norm ``|g|_G`` as a rational.
    Non-rational norms are settled by interval comparison with precision
    doubling; a norm exactly on a boundary then exhausts the ceiling.
    """
    r = parse_rational(radius_V)
    if r <= 0:
        raise PreconditionError("radius_V must be positive")
    if not isinstance(g, GVector):
        norm = parse_rational(g)
        if norm < 0:
            raise PreconditionError("a norm cannot be negative")
        return _least_n_exact(norm * norm, r)
    if not g.entries:
        return 1
    exact = g_norm_sq_exact(g)
    if exact is not None:
        return _least_n_exact(exact, r)
    while prec <= ceiling:
        ratio = g_norm_sq(g, g.max_index, prec=prec) / PrecReal.from_fraction(r * r, prec)
        # n = isqrt(floor(hi)) + 1 already has n^2 > hi; it is least once (n-1)^2 <= lo
        n = math.isqrt(int(gmpy2.floor(ratio.hi()))) + 1
        if (n - 1) ** 2 <= ratio.lo():
            return n
        prec *= 2
    raise PrecisionExhausted("cannot separate |g|_G / n from radius_V inside the precision ceiling")


# -- chain coordinates -----------------------------------------------------------


def _point_entry(base: Value, coeff: Fraction, e: GEntry | None) -> Value:
    """``base + coeff * a(j)`` exactly, rational when ``a(j)`` is."""
    if e is None or coeff == 0:
        return base
    exact = e.exact_value()
    if exact is not None and isinstance(base, Fraction):
        return base + coeff * exact
    if not isinstance(base, Fraction):
        raise PreconditionError("chains start from a rational point")
    return ShiftedEntry(e.j, base, coeff, e)


def _shift(x: ParamSequence, g: GVector, coeff: Fraction) -> ParamSequence:
    indices = sorted(set(x.support) | set(g.support))
    return ParamSequence.from_mapping({j: _point_entry(x[j], coeff, g[j]) for j in indices})


def _symbolic(v: Value) -> tuple[Fraction, Fraction, GEntry | None]:
    """``(base, coeff, entry)`` with ``v = base + coeff * entry``."""
    if isinstance(v, ShiftedEntry):
        return v.base, v.coeff, v.g
    if isinstance(v, Fraction):
        return v, Fraction(0), None
    raise PreconditionError("unsupported chain coordinate")


def _difference_is(p: Value, q: Value, e: GEntry | None, coeff: Fraction) -> bool:
    """Exact test of ``p - q == coeff * a(j)``."""
    exact = None if e is None else e.exact_value()
    if e is None or exact is not None:
        target = Fraction(0) if e is None else coeff * exact
        if isinstance(p, Fraction) and isinstance(q, Fraction):
            return p - q == target
    pb, pc, pe = _symbolic(p)
    qb, qc, qe = _symbolic(q)
    if pe is None and qe is None:
        return False
    if any(entry is not None and entry != e for entry in (pe, qe)):
        return False
    return pb == qb and pc - qc == coeff


def _strictly_inside(v: Value, c: Value, radius: Fraction, prec: int) -> bool:
    if isinstance(v, Fraction) and isinstance(c, Fraction):
        return abs(v - c) < radius
    gap = entry_value(v, prec) - entry_value(c, prec)
    return bool(gap.abs_hi() < PrecReal.from_fraction(radius, prec).lo())


def _in_ball(p: ParamSequence, ball: SupBall, prec: int) -> bool:
    indices = set(p.support) | set(ball.center.support)
    return all(_strictly_inside(p[j], ball.center[j], ball.radius, prec) for j in indices)


@dataclass
class ChainWitness:
    points: list[ParamSequence]
    step: GVector
    n: int
    ball_U: SupBall
    radius_V: Fraction
    g: GVector
    checks: dict[str, bool] = field(default_factory=dict)

    @property
    def verified(self) -> bool:
        return bool(self.checks) and all(self.checks.values())


def _step_in_V(step: GVector, r: Fraction, prec: int) -> bool:
    if not step.entries:
        return True
    exact = g_norm_sq_exact(step)
    if exact is not None:
        return exact < r * r
    q = g_norm_sq(step, step.max_index, prec=prec)
    return bool(q.hi() < PrecReal.from_fraction(r * r, prec).lo())


def verify_chain(w: ChainWitness, x: ParamSequence, prec: int = DEFAULT_PREC) -> dict[str, bool]:
    """Recompute the four chain invariants from scratch."""
    inv_n = Fraction(1, w.n)
    indices = sorted(set().union(*(set(p.support) for p in w.points)) | set(w.g.support))
    equal_steps = all(
        _difference_is(b[j], a[j], w.g[j], inv_n)
        for a, b in zip(w.points, w.points[1:])
        for j in indices
    )
    step_matches = all(
        (w.g[j] is None and w.step[j] is None)
        or (w.g[j] is not None and w.step[j] is not None and w.step[j] == w.g[j].scaled(inv_n))
        for j in indices
    )
    endpoints = w.points[0] == x and all(_difference_is(w.points[-1][j], x[j], w.g[j], Fraction(1)) for j in indices)
    return {
        "equal_steps": equal_steps and step_matches,
        "step_in_V": _step_in_V(w.step, w.radius_V, prec),
        "points_in_U": all(_in_ball(p, w.ball_U, prec) for p in w.points),
        "endpoints": endpoints,
    }


def chain_witness(
    x: ParamSequence,
    g: GVector,
    ball_U: SupBall,
    radius_V,
    *,
    prec: int = DEFAULT_PREC,
    max_points: int = DEFAULT_MAX_POINTS,
) -> ChainWitness:
    """Build and verify the chain ``x + (i/n) g`` for ``i = 0..n``.

    Chains longer than ``max_points`` steps are refused before any point is
    materialised.
    """
    if not x.is_rational:
        raise PreconditionError("chains start from a rational point")
    r = parse_rational(radius_V)
    if r <= 0:
        raise PreconditionError("radius_V must be positive")
    if not _in_ball(x, ball_U, prec):
        raise PreconditionError("the starting point lies outside U")
    if not _in_ball(_shift(x, g, Fraction(1)), ball_U, prec):
        raise TargetOutsideU("x + g lies outside U")
    n = condition_star_n(g, r, prec=prec)
    if n > max_points:
        raise PreconditionError(f"the chain needs {n} steps, more than max_points = {max_points}")
    # a zero step would only repeat x, so the trivial chain is [x]
    points = [_shift(x, g, Fraction(i, n)) for i in range(n + 1)] if g.entries else [x]
    step = g.scaled(Fraction(1, n))
    w = ChainWitness(points=points, step=step, n=n, ball_U=ball_U, radius_V=r, g=g)
    w.checks = verify_chain(w, x, prec)
    return w


def dense_approximant(x: ParamSequence, y: ParamSequence, eps, *, prec: int = DEFAULT_PREC) -> GVector:
    """Finite-support ``g`` with ``|(x + g) - y|_inf < eps``.

    Rational inputs give ``g = y - x`` exactly.  Closed-form entries are
    replaced by a rational within ``eps / 2`` of the difference.
    """
    eps = parse_rational(eps)
    if eps <= 0:
        raise PreconditionError("eps must be positive")
    coords = {}
    for j in sorted(set(x.support) | set(y.support)):
        xv, yv = x[j], y[j]
        if isinstance(xv, Fraction) and isinstance(yv, Fraction):
            coords[j] = yv - xv
            continue
        diff = entry_value(yv, prec) - entry_value(xv, prec)
        if not diff.err < mpfr(eps / 4):
            raise PrecisionExhausted("difference not resolved to eps / 4")
        coords[j] = diff.fraction().limit_denominator(max(1, math.ceil(4 / eps)))
    g = GVector.from_rationals(coords)
    return g
