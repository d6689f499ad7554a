"""Series bookkeeping shared by the T-set and type III analyses."""

from __future__ import annotations

import enum
import math
import statistics
from dataclasses import dataclass, field
from typing import Any, Sequence

import gmpy2
from gmpy2 import mpfr, mpz

from .precision import Angle, PrecReal, _abs, exp2_log

__all__ = [
    "Verdict",
    "TermRecord",
    "PowerFit",
    "SeriesDiagnostics",
    "CompensatedSum",
    "fit_power_law",
    "log2_sum",
]


class Verdict(str, enum.Enum):
    """Finite-horizon evidence labels; none of them is a proof."""

    CONVERGENCE = "ConvergenceEvidence"
    DIVERGENCE = "DivergenceEvidence"
    FINITENESS = "FinitenessEvidence"
    INCONCLUSIVE = "Inconclusive"


@dataclass(frozen=True)
class TermRecord:
    j: int
    delta: Angle | None
    log2_w: PrecReal
    term: PrecReal
    cos_form: PrecReal | None = None
    identity_ok: bool | None = None


@dataclass(frozen=True)
class PowerFit:
    """Least-squares fit ``|delta_j| ~ c / j**alpha`` in log-log coordinates."""

    alpha: float
    c: float
    n_points: int


@dataclass
class SeriesDiagnostics:
    terms: list[TermRecord]
    partial_sums: list[PrecReal]
    fit: PowerFit | None
    verdict: Verdict
    horizon: int
    heuristic: bool = True
    extra: dict[str, Any] = field(default_factory=dict)

    @property
    def total(self) -> PrecReal:
        return self.partial_sums[-1]


class CompensatedSum:
    """Neumaier summation of enclosures in a fixed order.

    The midpoint is accumulated with a running compensation term; the error
    bound is the sum of input errors plus the standard bound
    ``2u|S| + 2n u^2 sum|x_i|`` for the compensated algorithm.
    """

    def __init__(self, prec: int = 256):
        self.prec = prec
        self._exact = True
        self._s = mpfr(0)
        self._c = mpfr(0)
        self._err = mpfr(0)
        self._abs_total = mpfr(0)
        self._n = 0

    def add(self, x: PrecReal) -> None:
        ctx = gmpy2.context(precision=self.prec)
        t = ctx.add(self._s, x.mid)
        if ctx.inexact:
            self._exact = False
        if _abs(self._s) >= _abs(x.mid):
            self._c = ctx.add(self._c, ctx.add(ctx.sub(self._s, t), x.mid))
        else:
            self._c = ctx.add(self._c, ctx.add(ctx.sub(x.mid, t), self._s))
        self._s = t
        up = gmpy2.context(precision=64, round=gmpy2.RoundUp)
        self._err = up.add(self._err, x.err)
        self._abs_total = up.add(self._abs_total, _abs(x.mid))
        self._n += 1

    def value(self) -> PrecReal:
        ctx = gmpy2.context(precision=self.prec)
        total = ctx.add(self._s, self._c)
        up = gmpy2.context(precision=64, round=gmpy2.RoundUp)
        u = up.exp2(mpz(-self.prec))
        bound = up.add(
            up.mul(up.mul(u, 2), _abs(total)),
            up.mul(up.mul(up.mul(u, u), 2 * max(self._n, 1)), self._abs_total),
        )
        if self._exact and not ctx.inexact:
            bound = mpfr(0)
        return PrecReal(total, up.add(self._err, bound), self.prec)


def fit_power_law(js: Sequence[int], magnitudes: Sequence[float]) -> PowerFit | None:
    """Regress ``log|delta|`` on ``log j``; needs two distinct points."""
    pts = [(math.log(j), math.log(m)) for j, m in zip(js, magnitudes) if m > 0]
    if len(pts) < 2 or len({p[0] for p in pts}) < 2:
        return None
    slope, intercept = statistics.linear_regression([p[0] for p in pts], [p[1] for p in pts])
    return PowerFit(alpha=-slope, c=math.exp(intercept), n_points=len(pts))


def log2_sum(log2_terms: Sequence[PrecReal], prec: int = 256) -> PrecReal:
    """``sum(2**v for v in log2_terms)`` as an enclosure of the sum itself."""
    acc = CompensatedSum(prec)
    for v in log2_terms:
        acc.add(exp2_log(v))
    return acc.value()
