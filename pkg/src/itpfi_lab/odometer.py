"""The odometer on finite truncations of {0,1}^N with product measures.

Coordinate 1 is the least significant digit: a step adds one at coordinate
1 and carries to the right.  The all-ones word wraps to all-zeros and the
step reports ``overflow``; the infinite odometer would instead carry past
the truncation, so wrapped segments are kept apart from cocycle checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Sequence

from .exceptions import BlockOverflow, LengthMismatch, OverflowOnOrbit, PreconditionError
from .model import ParamSequence, lambda_exact, lambda_value
from .precision import DEFAULT_PREC, PrecReal

__all__ = [
    "ASSUMPTIONS",
    "BitWord",
    "ProductMeasure",
    "odometer_step",
    "odometer_step_back",
    "cylinder_mass",
    "rn_cocycle",
    "orbit",
    "eigenvalues_to_measure",
    "block_of",
]

ASSUMPTIONS = (
    "the product measure for z_x is non-atomic and ergodic for the odometer; "
    "this is taken from the literature and not checked by finite computation",
)

DEFAULT_CAP = 1 << 20

Mass = Fraction | PrecReal


@dataclass(frozen=True)
class BitWord:
    bits: tuple[int, ...]

    def __post_init__(self):
        if not self.bits:
            raise PreconditionError("a word needs at least one coordinate")
        if any(b not in (0, 1) for b in self.bits):
            raise PreconditionError("bits must be 0 or 1")

    @classmethod
    def parse(cls, text: str) -> BitWord:
        """``"110"`` has coordinate 1 equal to 1."""
        return cls(tuple(int(c) for c in text.strip()))

    @classmethod
    def from_int(cls, value: int, length: int) -> BitWord:
        return cls(tuple((value >> k) & 1 for k in range(length)))

    @cached_property
    def value(self) -> int:
        return sum(b << k for k, b in enumerate(self.bits))

    def to_int(self) -> int:
        return self.value

    def __len__(self) -> int:
        return len(self.bits)

    def __str__(self) -> str:
        return "".join(map(str, self.bits))


def odometer_step(w: BitWord) -> tuple[BitWord, bool]:
    """Add one with carry; ``overflow`` is true exactly for the all-ones word."""
    bits = list(w.bits)
    for k, b in enumerate(bits):
        if b == 0:
            bits[k] = 1
            return BitWord(tuple(bits)), False
        bits[k] = 0
    return BitWord(tuple(bits)), True


def odometer_step_back(w: BitWord) -> tuple[BitWord, bool]:
    """Inverse step (subtract one with borrow); underflow from all-zeros."""
    bits = list(w.bits)
    for k, b in enumerate(bits):
        if b == 1:
            bits[k] = 0
            return BitWord(tuple(bits)), False
        bits[k] = 1
    return BitWord(tuple(bits)), True


@dataclass(frozen=True)
class ProductMeasure:
    """``z[n-1]`` is the mass of symbol 0 at coordinate ``n``."""

    z: tuple[Mass, ...]

    def __post_init__(self):
        for n, v in enumerate(self.z, start=1):
            if isinstance(v, Fraction):
                ok = 0 < v < 1
            elif isinstance(v, PrecReal):
                ok = v.lo() > 0 and v.hi() < 1
            else:
                raise TypeError(f"z({n}) must be a Fraction or PrecReal")
            if not ok:
                raise PreconditionError(f"z({n}) must lie in (0, 1)")

    @classmethod
    def of(cls, values: Iterable) -> ProductMeasure:
        return cls(tuple(v if isinstance(v, PrecReal) else Fraction(v) for v in values))

    @property
    def is_rational(self) -> bool:
        return all(isinstance(v, Fraction) for v in self.z)

    def __len__(self) -> int:
        return len(self.z)

    @cached_property
    def _up_ratio(self) -> tuple[Mass, ...]:
        # factor picked up when coordinate k flips 0 -> 1
        return tuple((1 - v) / v for v in self.z)

    @cached_property
    def _up_ratio_ints(self) -> tuple[tuple[int, int], ...] | None:
        if not self.is_rational:
            return None
        return tuple((r.numerator, r.denominator) for r in self._up_ratio)


def _words(w) -> tuple[int, ...]:
    if isinstance(w, BitWord):
        return w.bits
    if isinstance(w, str):
        return tuple(int(c) for c in w)
    return tuple(w)


def cylinder_mass(mu: ProductMeasure, w: BitWord | str | Sequence[int]) -> Mass:
    """Mass of the cylinder fixed by ``w``; the empty word gives 1.

    Exact rational when every ``z`` used is rational.
    """
    bits = _words(w)
    if len(bits) > len(mu):
        raise LengthMismatch(f"word of length {len(bits)} against {len(mu)} coordinates")
    mass: Mass = Fraction(1)
    for b, z in zip(bits, mu.z):
        mass = mass * (z if b == 0 else 1 - z)
    return mass


def _flip_product(mu: ProductMeasure, exponents: dict[int, int]) -> Mass:
    pairs = mu._up_ratio_ints
    if pairs is not None:
        num = den = 1
        for k, e in exponents.items():
            if e:
                p, q = pairs[k] if e > 0 else pairs[k][::-1]
                num *= p ** abs(e)
                den *= q ** abs(e)
        return Fraction(num, den)
    ratios = mu._up_ratio
    out: Mass = Fraction(1)
    for k, e in sorted(exponents.items()):
        for _ in range(abs(e)):
            out = out * ratios[k] if e > 0 else out / ratios[k]
    return out


def rn_cocycle(
    mu: ProductMeasure,
    w: BitWord,
    n_steps: int,
    *,
    allow_overflow: bool = False,
) -> Mass:
    """Density ``mu(sigma^n C_w) / mu(C_w)`` as a product over bit flips.

    A ``1 -> 0`` flip at coordinate ``k`` contributes ``z_k / (1 - z_k)`` and
    a ``0 -> 1`` flip the reciprocal.  Flips are tallied per coordinate and
    multiplied once at the end.  Negative ``n_steps`` walk backwards.
    """
    if len(w) > len(mu):
        raise LengthMismatch(f"word of length {len(w)} against {len(mu)} coordinates")
    size = len(w)
    full = (1 << size) - 1
    value = w.value
    exponents: dict[int, int] = {}
    delta = 1 if n_steps >= 0 else -1
    for _ in range(abs(n_steps)):
        nxt = (value + delta) & full
        if (nxt == 0 and delta > 0) or (nxt == full and delta < 0):
            if not allow_overflow:
                raise OverflowOnOrbit(f"orbit of {w} wraps within {abs(n_steps)} steps")
        flipped = value ^ nxt
        while flipped:
            low = flipped & -flipped
            k = low.bit_length() - 1
            exponents[k] = exponents.get(k, 0) + (1 if nxt & low else -1)
            flipped ^= low
        value = nxt
    return _flip_product(mu, exponents)


def orbit(mu: ProductMeasure, w: BitWord, n_steps: int) -> list[dict]:
    """Records ``(step, word, cocycle)`` for ``0..n_steps``; stops before a wrap."""
    records = [{"step": 0, "word": str(w), "cocycle": Fraction(1)}]
    current, rho = w, Fraction(1)
    for step in range(1, n_steps + 1):
        nxt, wrapped = odometer_step(current)
        if wrapped:
            break
        rho = rho * rn_cocycle(mu, current, 1)
        current = nxt
        records.append({"step": step, "word": str(current), "cocycle": rho})
    return records


def block_of(n: int) -> int:
    """Block index ``j`` of coordinate ``n`` (block ``j`` has length ``2**(j!)``)."""
    if n < 1:
        raise PreconditionError("coordinates start at 1")
    j, end = 1, 0
    while True:
        end += 1 << math.factorial(j)
        if n <= end:
            return j
        j += 1


def eigenvalues_to_measure(
    x: ParamSequence,
    n_max: int,
    *,
    cap: int = DEFAULT_CAP,
    prec: int = DEFAULT_PREC,
) -> ProductMeasure:
    """``z(n) = lam_j`` for every coordinate ``n`` of block ``j``, ``n <= n_max``."""
    if n_max < 1:
        raise PreconditionError("n_max must be positive")
    if n_max > cap:
        raise BlockOverflow(f"n_max = {n_max} exceeds the cap {cap}")
    values: list[Mass] = []
    j = 1
    while len(values) < n_max:
        length = min(1 << math.factorial(j), n_max - len(values))
        lam = lambda_exact(x, j)
        if lam is None:
            lam = lambda_value(x, j, prec)
        values.extend([lam] * length)
        j += 1
    return ProductMeasure(tuple(values))
