"""Parameter sequences x in c0, the derived per-block quantities, and G-vectors.

The factor M_x is represented only through its block eigenvalue list: block
``j`` repeats the value ``1 / (1 + exp(-l_j))`` exactly ``N_j = 2**(j!)``
times, where ``l_j = ln2 * j! * exp(x(j) / j!)``.  ``N_j`` is never
materialised; blocks carry the exponent ``j!``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from decimal import Decimal
from fractions import Fraction
from typing import Iterable, Mapping, Union

from .precision import (
    DEFAULT_PREC,
    PrecReal,
    RealSource,
    const_ln2,
    exp2_log,
    log2_weight,
    scaled_expm1,
)
from .series import CompensatedSum, SeriesDiagnostics, TermRecord, Verdict

__all__ = [
    "PerturbedEntry",
    "ShiftedEntry",
    "ParamSequence",
    "GEntry",
    "GVector",
    "EigenvalueBlock",
    "parse_rational",
    "l_value",
    "lambda_value",
    "eigenvalue_blocks",
    "type_iii_evidence",
]


def parse_rational(text: str | int | Fraction) -> Fraction:
    """Exact value of ``"3/7"``, ``"0.125"``, ``"-2"`` or an int/Fraction."""
    if isinstance(text, (int, Fraction)):
        return Fraction(text)
    text = str(text).strip()
    if "/" in text:
        return Fraction(text)
    return Fraction(Decimal(text))


@dataclass(frozen=True)
class PerturbedEntry:
    """Closed form ``x(j) = j! * log(1 + a / (t * ln2 * j! * sqrt(j)))``.

    Keeping the formula means ``exp(x(j)/j!) - 1`` is available exactly as
    ``a / (t ln2 j! sqrt(j))`` instead of being re-exponentiated.
    """

    j: int
    a: int
    t: RealSource = field(compare=False)
    t_label: str = ""

    def scaled_expm1(self, prec: int) -> PrecReal:
        if self.a == 0:
            return PrecReal.from_int(0, prec)
        wp = prec + 16
        denom = self.t.at(wp) * const_ln2(wp) * math.factorial(self.j) * PrecReal.from_int(self.j, wp).sqrt()
        return PrecReal.from_int(self.a, wp) / denom

    def value(self, prec: int = DEFAULT_PREC) -> PrecReal:
        return self.scaled_expm1(prec).log1p() * math.factorial(self.j)

    def upper_bound(self, prec: int = DEFAULT_PREC) -> PrecReal:
        """``a / (t ln2 sqrt(j))``, which dominates ``x(j)`` since ``log1p(u) <= u``."""
        return self.scaled_expm1(prec) * math.factorial(self.j)


@dataclass(frozen=True)
class ShiftedEntry:
    """``base + coeff * a(j)`` where ``a(j)`` is a G-coordinate too small to
    expand into a rational.  Chains along G produce these."""

    j: int
    base: Fraction
    coeff: Fraction
    g: "GEntry"

    def value(self, prec: int = DEFAULT_PREC) -> PrecReal:
        return PrecReal.from_fraction(self.base, prec) + self.g.value(prec) * PrecReal.from_fraction(self.coeff, prec)

    def scaled_expm1(self, prec: int) -> PrecReal:
        fact = math.factorial(self.j)
        return (self.value(prec + fact.bit_length()) / fact).expm1()


Value = Union[Fraction, PerturbedEntry, ShiftedEntry]


def entry_value(v: Value, prec: int = DEFAULT_PREC) -> PrecReal:
    if isinstance(v, Fraction):
        return PrecReal.from_fraction(v, prec)
    return v.value(prec)


@dataclass(frozen=True)
class ParamSequence:
    """Finitely supported element of c0; coordinates are 1-based."""

    entries: tuple[tuple[int, Value], ...] = ()

    def __post_init__(self):
        last = 0
        for j, v in self.entries:
            if not isinstance(j, int) or j <= last:
                raise ValueError("indices must be positive and strictly increasing")
            if not isinstance(v, (Fraction, PerturbedEntry, ShiftedEntry)):
                raise TypeError(f"entry {j} must be a Fraction, PerturbedEntry or ShiftedEntry")
            last = j

    @classmethod
    def zero(cls) -> ParamSequence:
        return cls(())

    @classmethod
    def from_mapping(cls, values: Mapping[int, object] | Iterable[tuple[int, object]]) -> ParamSequence:
        items = values.items() if isinstance(values, Mapping) else values
        cleaned = []
        for j, v in sorted(items):
            if isinstance(v, PerturbedEntry):
                if v.a == 0:
                    continue
            elif not isinstance(v, ShiftedEntry):
                v = parse_rational(v)
                if v == 0:
                    continue
            cleaned.append((int(j), v))
        return cls(tuple(cleaned))

    def __getitem__(self, j: int) -> Value:
        for k, v in self.entries:
            if k == j:
                return v
        return Fraction(0)

    def as_dict(self) -> dict[int, Value]:
        return dict(self.entries)

    @property
    def support(self) -> tuple[int, ...]:
        return tuple(j for j, _ in self.entries)

    @property
    def max_index(self) -> int:
        return self.entries[-1][0] if self.entries else 0

    @property
    def is_rational(self) -> bool:
        return all(isinstance(v, Fraction) for _, v in self.entries)

    def value(self, j: int, prec: int = DEFAULT_PREC) -> PrecReal:
        return entry_value(self[j], prec)

    def sup_norm_upper(self) -> float:
        """Float upper bound on ``max_j |x(j)|``."""
        best = 0.0
        for _, v in self.entries:
            bound = abs(v) if isinstance(v, Fraction) else v.value().abs_hi()
            best = max(best, float(bound) * (1 + 1e-12))
        return best

    def __add__(self, other: ParamSequence) -> ParamSequence:
        if not (self.is_rational and other.is_rational):
            raise TypeError("exact addition needs rational entries")
        merged = self.as_dict()
        for j, v in other.entries:
            merged[j] = merged.get(j, Fraction(0)) + v
        return ParamSequence.from_mapping(merged)

    def __sub__(self, other: ParamSequence) -> ParamSequence:
        negated = ParamSequence(tuple((j, -v) for j, v in other.entries)) if other.is_rational else None
        if negated is None:
            raise TypeError("exact subtraction needs rational entries")
        return self + negated


@dataclass(frozen=True)
class GEntry:
    """One coordinate ``sign * |a(j)|`` of a G-vector.

    The magnitude is either an exact rational ``magnitude`` or
    ``factor * 2**log2_magnitude`` with both ``factor`` and the exponent
    exact rationals.  The factor absorbs divisions such as ``g / n``.
    """

    j: int
    sign: int
    log2_magnitude: Fraction | None = None
    magnitude: Fraction | None = None
    factor: Fraction = Fraction(1)

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")
        if (self.log2_magnitude is None) == (self.magnitude is None):
            raise ValueError("give exactly one of log2_magnitude and magnitude")
        if self.magnitude is not None and (self.magnitude <= 0 or self.factor != 1):
            raise ValueError("rational magnitude must be positive and carry no factor")
        if self.factor <= 0:
            raise ValueError("factor must be positive")

    def log2_abs(self, prec: int = DEFAULT_PREC) -> PrecReal:
        if self.log2_magnitude is not None:
            return PrecReal.from_fraction(self.log2_magnitude, prec) + self._log2_factor(prec)
        return PrecReal.from_fraction(self.magnitude, prec).log2()

    def _log2_factor(self, prec: int) -> PrecReal:
        if self.factor == 1:
            return PrecReal.from_int(0, prec)
        return PrecReal.from_fraction(self.factor, prec).log2()

    def exact_value(self) -> Fraction | None:
        if self.magnitude is not None:
            return self.sign * self.magnitude
        q = self.log2_magnitude
        # huge dyadic exponents would build multi-megabyte integers
        if q.denominator == 1 and abs(q) <= 4096:
            return self.sign * self.factor * Fraction(2) ** int(q)
        return None

    def value(self, prec: int = DEFAULT_PREC) -> PrecReal:
        exact = self.exact_value()
        if exact is not None:
            return PrecReal.from_fraction(exact, prec)
        mag = exp2_log(PrecReal.from_fraction(self.log2_magnitude, prec))
        if self.factor != 1:
            mag = mag * PrecReal.from_fraction(self.factor, prec)
        return mag if self.sign > 0 else -mag

    def log2_weighted_square(self, prec: int = DEFAULT_PREC) -> tuple[Fraction, PrecReal]:
        """``log2(2**(j!) * a(j)**2)`` split into an exact part and a rounded part."""
        fact = math.factorial(self.j)
        if self.log2_magnitude is not None:
            return Fraction(fact) + 2 * self.log2_magnitude, self._log2_factor(prec) * 2
        return Fraction(fact), PrecReal.from_fraction(self.magnitude, prec).log2() * 2

    def scaled(self, c: Fraction) -> GEntry:
        c = Fraction(c)
        if c == 0:
            raise ValueError("scaling by zero removes the entry")
        sign = self.sign if c > 0 else -self.sign
        if self.magnitude is not None:
            return GEntry(self.j, sign, magnitude=self.magnitude * abs(c))
        exact = self.exact_value()
        if exact is not None:
            return GEntry(self.j, sign, magnitude=abs(exact * c))
        return GEntry(self.j, sign, log2_magnitude=self.log2_magnitude, factor=self.factor * abs(c))


@dataclass(frozen=True)
class GVector:
    """Finitely supported element of the weighted Hilbert group G."""

    entries: tuple[GEntry, ...] = ()

    def __post_init__(self):
        last = 0
        for e in self.entries:
            if e.j <= last:
                raise ValueError("indices must be positive and strictly increasing")
            last = e.j

    @classmethod
    def zero(cls) -> GVector:
        return cls(())

    @classmethod
    def from_rationals(cls, values: Mapping[int, object]) -> GVector:
        entries = []
        for j, v in sorted(values.items()):
            q = parse_rational(v)
            if q:
                entries.append(GEntry(int(j), 1 if q > 0 else -1, magnitude=abs(q)))
        return cls(tuple(entries))

    @classmethod
    def from_log2(cls, values: Mapping[int, tuple[int, object]]) -> GVector:
        """``{j: (sign, log2|a(j)|)}``."""
        return cls(tuple(GEntry(int(j), int(s), log2_magnitude=parse_rational(q)) for j, (s, q) in sorted(values.items())))

    def __getitem__(self, j: int) -> GEntry | None:
        for e in self.entries:
            if e.j == j:
                return e
        return None

    @property
    def support(self) -> tuple[int, ...]:
        return tuple(e.j for e in self.entries)

    @property
    def max_index(self) -> int:
        return self.entries[-1].j if self.entries else 0

    def scaled(self, c: Fraction) -> GVector:
        if c == 0:
            return GVector.zero()
        return GVector(tuple(e.scaled(c) for e in self.entries))

    def exact_coordinates(self) -> dict[int, Fraction] | None:
        out = {}
        for e in self.entries:
            v = e.exact_value()
            if v is None:
                return None
            out[e.j] = v
        return out


@dataclass(frozen=True)
class EigenvalueBlock:
    j: int
    lam: PrecReal
    log2_multiplicity: int
    l: PrecReal

    @property
    def multiplicity_exponent(self) -> int:
        return self.log2_multiplicity


def l_value(x: ParamSequence, j: int, prec: int = DEFAULT_PREC) -> PrecReal:
    if j < 1:
        raise ValueError("j must be a positive integer")
    em1 = scaled_expm1(x[j], j, prec)
    return const_ln2(prec) * math.factorial(j) * (em1 + 1)


def _neg_l_over_ln2(x: ParamSequence, j: int, prec: int) -> PrecReal:
    """``log2 exp(-l_j)``, i.e. ``-j! * exp(x(j)/j!)``."""
    em1 = scaled_expm1(x[j], j, prec + math.factorial(j).bit_length())
    return -((em1 + 1) * math.factorial(j))


def exp_neg_l(x: ParamSequence, j: int, prec: int = DEFAULT_PREC) -> PrecReal:
    """``exp(-l_j)``; an exact power of two when ``x(j) = 0``."""
    if x[j] == 0:
        return exp2_log(PrecReal.from_int(-math.factorial(j), prec))
    return exp2_log(_neg_l_over_ln2(x, j, prec))


def lambda_value(x: ParamSequence, j: int, prec: int = DEFAULT_PREC) -> PrecReal:
    u = exp_neg_l(x, j, prec)
    return 1 / (u + 1)


def lambda_exact(x: ParamSequence, j: int) -> Fraction | None:
    """``2**(j!) / (2**(j!) + 1)`` when ``x(j) = 0``; ``None`` otherwise."""
    if x[j] != 0:
        return None
    n = 1 << math.factorial(j)
    return Fraction(n, n + 1)


def eigenvalue_blocks(x: ParamSequence, J: int, prec: int = DEFAULT_PREC) -> list[EigenvalueBlock]:
    if J < 1:
        raise ValueError("J must be at least 1")
    return [
        EigenvalueBlock(j, lambda_value(x, j, prec), math.factorial(j), l_value(x, j, prec))
        for j in range(1, J + 1)
    ]


def type_iii_evidence(x: ParamSequence, J: int, prec: int = DEFAULT_PREC) -> SeriesDiagnostics:
    """Partial sums of ``w_j = N_j exp(-l_j)`` and the running minimum of ``l_j``.

    Divergence evidence means ``w_j`` stays above ``2**(-|x|_inf - 1)`` over
    the last half of the horizon; together with ``l_j -> inf`` this is the
    type III condition.
    """
    if J < 1:
        raise ValueError("J must be at least 1")
    acc = CompensatedSum()
    terms, sums = [], []
    min_l = None
    for j in range(1, J + 1):
        lw = log2_weight(j, x[j], prec)
        w = exp2_log(lw)
        terms.append(TermRecord(j=j, delta=None, log2_w=lw, term=w))
        acc.add(w)
        sums.append(acc.value())
        lj = l_value(x, j, prec)
        if min_l is None or lj.mid < min_l.mid:
            min_l = lj
    w_min = 2.0 ** (-x.sup_norm_upper() - 1)
    window = terms[J // 2:] or terms
    bounded_below = all(float(t.term.lo()) >= w_min for t in window)
    tail_l = [l_value(x, j, prec) for j in range(max(1, J - len(window) + 1), J + 1)]
    l_growing = all(b.lo() > a.hi() for a, b in zip(tail_l, tail_l[1:]))
    verdict = Verdict.DIVERGENCE if bounded_below else Verdict.INCONCLUSIVE
    return SeriesDiagnostics(
        terms=terms,
        partial_sums=sums,
        fit=None,
        verdict=verdict,
        horizon=J,
        extra={
            "min_l": min_l,
            "w_min": w_min,
            "divergence_evidence": bounded_below,
            "l_increasing_on_window": l_growing,
        },
    )
