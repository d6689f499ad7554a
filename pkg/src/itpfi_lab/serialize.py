"""JSON and CSV encodings with every number carrying its error bound.

Midpoints are converted to decimal exactly (via rationals) and then rounded
to a digit count chosen from the error bound; the rounding is folded into
the reported ``err``, which is always rounded upward.
"""

from __future__ import annotations

import csv
import decimal
import io
import json
import math
from decimal import Decimal
from fractions import Fraction
from typing import Any, Iterable, Sequence

import gmpy2
from gmpy2 import mpfr

from .model import GEntry, GVector, ParamSequence, PerturbedEntry, ShiftedEntry, parse_rational
from .precision import E, LN2, PI, TWO_PI_OVER_LN2, Angle, PrecReal, RealSource, as_real

__all__ = [
    "real_json",
    "frac_str",
    "parse_t",
    "param_to_json",
    "param_from_json",
    "gvector_to_json",
    "gvector_from_json",
    "load_json",
    "dump_json",
    "rows_to_csv",
    "fmt_decimal",
]

_EXACT_EXP_LIMIT = 1 << 16
_MAX_DIGITS = 80
_ERR_DIGITS = 3

_WIDE = decimal.Context(prec=_MAX_DIGITS + 8, Emin=decimal.MIN_EMIN, Emax=decimal.MAX_EMAX)

_NAMED = {"pi": PI, "ln2": LN2, "e": E, "2pi/ln2": TWO_PI_OVER_LN2}


def parse_t(text: str) -> RealSource:
    """``pi``, ``ln2``, ``e``, ``2pi/ln2`` (optionally negated), ``p/q`` or a decimal."""
    raw = str(text).strip()
    sign, body = (-1, raw[1:]) if raw.startswith("-") else (1, raw)
    if body in _NAMED:
        return _NAMED[body] if sign > 0 else -_NAMED[body]
    return as_real(raw)


def frac_str(q: Fraction) -> str:
    return str(q.numerator) if q.denominator == 1 else f"{q.numerator}/{q.denominator}"


def _mpfr_fraction(m: mpfr) -> Fraction:
    n, d = m.as_integer_ratio()
    return Fraction(int(n), int(d))


def _decimal_bound(m: mpfr) -> Decimal:
    """A short decimal ``>= m >= 0`` (``m`` may be astronomically small)."""
    if not m:
        return Decimal(0)
    exp = gmpy2.get_exp(m)
    if abs(exp) > _EXACT_EXP_LIMIT:
        # m < 2**exp <= 10**k
        k = math.floor(exp * math.log10(2)) + 1
        return Decimal(f"1E{k}")
    q = _mpfr_fraction(m)
    ctx = decimal.Context(prec=_ERR_DIGITS, rounding=decimal.ROUND_UP, Emin=-10**9, Emax=10**9)
    return ctx.divide(Decimal(q.numerator), Decimal(q.denominator))


def _digits_for(mid: mpfr, err: mpfr, prec: int) -> int:
    if not mid:
        return 1
    if err:
        span = gmpy2.get_exp(mid) - gmpy2.get_exp(err)
        return max(17, min(_MAX_DIGITS, math.ceil(span * math.log10(2)) + 3))
    return max(17, min(_MAX_DIGITS, math.ceil(prec * math.log10(2)) + 1))


def real_parts(p: PrecReal) -> tuple[str, str]:
    """``(value, err)`` strings with ``|true - value| <= err``."""
    mid, err = p.mid, p.err
    up = gmpy2.context(precision=64, round=gmpy2.RoundUp)
    if mid and abs(gmpy2.get_exp(mid)) > _EXACT_EXP_LIMIT:
        # fold an unprintably small midpoint into the error
        err = up.add(err, up.abs(mid))
        return "0", fmt_decimal(_decimal_bound(err))
    if not mid:
        return "0", fmt_decimal(_decimal_bound(err))
    q = _mpfr_fraction(mid)
    ctx = decimal.Context(prec=_digits_for(mid, err, p.prec), rounding=decimal.ROUND_HALF_EVEN, Emin=-10**9, Emax=10**9)
    shown = ctx.divide(Decimal(q.numerator), Decimal(q.denominator))
    gap = abs(Fraction(shown) - q)
    if gap:
        ctx_up = decimal.Context(prec=_ERR_DIGITS, rounding=decimal.ROUND_UP, Emin=-10**9, Emax=10**9)
        err_dec = ctx_up.add(_decimal_bound(err), ctx_up.divide(Decimal(gap.numerator), Decimal(gap.denominator)))
        # one decimal rounding of the sum is again upward
        err_dec = ctx_up.add(err_dec, 0)
    else:
        err_dec = _decimal_bound(err)
    return fmt_decimal(shown), fmt_decimal(err_dec)


def fmt_decimal(d: Decimal) -> str:
    if d.is_zero():
        return "0"
    # normalize() would otherwise round to the 28-digit default context
    return format(d.normalize(_WIDE), "")


def real_json(p: PrecReal) -> dict[str, str]:
    value, err = real_parts(p)
    return {"value": value, "err": err}


def angle_json(a: Angle) -> dict[str, Any]:
    out = real_json(a.value)
    out["boundary_ambiguous"] = a.boundary_ambiguous
    return out


# -- parameter sequences --------------------------------------------------------


def _t_label(t: RealSource) -> str:
    return getattr(t, "label", repr(t))


def gentry_to_json(e: GEntry) -> dict[str, Any]:
    out: dict[str, Any] = {"j": e.j, "sign": e.sign}
    if e.magnitude is not None:
        out["magnitude"] = frac_str(e.magnitude)
    else:
        out["log2_magnitude"] = frac_str(e.log2_magnitude)
        if e.factor != 1:
            out["factor"] = frac_str(e.factor)
    return out


def param_to_json(x: ParamSequence) -> dict[str, Any]:
    entries = []
    for j, v in x.entries:
        if isinstance(v, Fraction):
            entries.append({"j": j, "value": frac_str(v)})
            continue
        item: dict[str, Any] = {"j": j, **real_json(v.value())}
        if isinstance(v, PerturbedEntry):
            item["formula"] = {"kind": "perturbed", "a": v.a, "t": v.t_label or _t_label(v.t)}
        else:
            item["formula"] = {
                "kind": "shifted",
                "base": frac_str(v.base),
                "coeff": frac_str(v.coeff),
                "g": gentry_to_json(v.g),
            }
        entries.append(item)
    return {"entries": entries}


def _entries_of(doc) -> list:
    if isinstance(doc, dict):
        doc = doc.get("entries", doc.get("x"))
    if not isinstance(doc, list):
        raise ValueError("expected an array of entries or an object with 'entries'")
    return doc


def _rational(v) -> Fraction:
    if isinstance(v, bool):
        raise ValueError("booleans are not numbers")
    if isinstance(v, (int, Decimal)):
        return Fraction(v)
    if isinstance(v, str):
        return parse_rational(v)
    raise ValueError(f"cannot read {v!r} as an exact rational")


def gentry_from_json(item: dict) -> GEntry | None:
    j = int(item["j"])
    if "value" in item:
        q = _rational(item["value"])
        return None if q == 0 else GEntry(j, 1 if q > 0 else -1, magnitude=abs(q))
    sign = int(item.get("sign", 1))
    if "magnitude" in item:
        return GEntry(j, sign, magnitude=_rational(item["magnitude"]))
    return GEntry(
        j,
        sign,
        log2_magnitude=_rational(item["log2_magnitude"]),
        factor=_rational(item.get("factor", 1)),
    )


def param_from_json(doc) -> ParamSequence:
    values: dict[int, Any] = {}
    for item in _entries_of(doc):
        j = int(item["j"])
        formula = item.get("formula")
        if formula is None:
            values[j] = _rational(item["value"])
        elif formula.get("kind") == "perturbed":
            t = parse_t(formula["t"])
            values[j] = PerturbedEntry(j, int(formula["a"]), t, formula["t"])
        elif formula.get("kind") == "shifted":
            g = gentry_from_json(formula["g"])
            values[j] = ShiftedEntry(j, _rational(formula["base"]), _rational(formula["coeff"]), g)
        else:
            raise ValueError(f"unknown formula kind {formula.get('kind')!r}")
    return ParamSequence.from_mapping(values)


def gvector_to_json(a: GVector) -> dict[str, Any]:
    return {"entries": [gentry_to_json(e) for e in a.entries]}


def gvector_from_json(doc) -> GVector:
    entries = [gentry_from_json(item) for item in _entries_of(doc)]
    return GVector(tuple(sorted((e for e in entries if e is not None), key=lambda e: e.j)))


# -- files ------------------------------------------------------------------------


def load_json(text: str):
    """Parse JSON with decimals kept exact."""
    return json.loads(text, parse_float=Decimal)


def dump_json(doc) -> str:
    return json.dumps(doc, indent=2, ensure_ascii=True) + "\n"


def rows_to_csv(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(["" if v is None else v for v in row])
    return buf.getvalue()
