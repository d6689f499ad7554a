from __future__ import annotations

from decimal import Decimal
from fractions import Fraction

import gmpy2
import mpmath
from hypothesis import given
from hypothesis import strategies as st

from itpfi_lab import TWO_PI_OVER_LN2, GEntry, GVector, ParamSequence, PrecReal, perturb_for_divergence
from itpfi_lab.precision import const_pi
from itpfi_lab.serialize import (
    dump_json,
    gvector_from_json,
    gvector_to_json,
    load_json,
    param_from_json,
    param_to_json,
    parse_t,
    real_parts,
    rows_to_csv,
)


def _contains(value: str, err: str, true) -> bool:
    return abs(Fraction(Decimal(value)) - true) <= Fraction(Decimal(err))


@given(st.fractions(min_value=-10**9, max_value=10**9, max_denominator=10**12), st.sampled_from([53, 128, 400]))
def test_printed_value_still_encloses(q, prec):
    value, err = real_parts(PrecReal.from_fraction(q, prec))
    assert _contains(value, err, q)


def test_pi_prints_enough_digits():
    value, err = real_parts(const_pi(300))
    mpmath.mp.dps = 100
    assert value.startswith("3.14159265358979323846264338327950288419716939937510")
    assert Decimal(err) < Decimal("1e-80")


def test_tiny_midpoint_folds_into_error():
    tiny = PrecReal(gmpy2.mpfr(2) ** -200000, gmpy2.mpfr(0), 64)
    value, err = real_parts(tiny)
    assert value == "0" and Decimal(err) > 0


def test_parse_t_named_constants():
    assert parse_t("2pi/ln2") is TWO_PI_OVER_LN2
    assert parse_t("-2pi/ln2").turns == -1
    assert parse_t("3/7").at(64).contains(Fraction(3, 7))
    assert parse_t("0.25").at(64).mid == 0.25


@given(st.dictionaries(st.integers(1, 40), st.fractions(max_denominator=10**6).filter(bool), max_size=6))
def test_param_round_trip(values):
    x = ParamSequence.from_mapping(values)
    assert param_from_json(load_json(dump_json(param_to_json(x)))) == x


def test_perturbed_entries_round_trip_by_formula():
    x = perturb_for_divergence(ParamSequence.zero(), TWO_PI_OVER_LN2, Fraction(1, 10), 14).x
    back = param_from_json(load_json(dump_json(param_to_json(x))))
    for j in x.support:
        assert back[j].a == x[j].a and back[j].value().overlaps(x[j].value())


def test_gvector_round_trip_with_dyadic_entries():
    g = GVector((GEntry(1, -1, magnitude=Fraction(1, 3)), GEntry(7, 1, log2_magnitude=Fraction(-2521), factor=Fraction(1, 5))))
    assert gvector_from_json(load_json(dump_json(gvector_to_json(g)))) == g


def test_decimal_input_is_exact():
    x = param_from_json(load_json('{"entries": [{"j": 2, "value": 0.1}]}'))
    assert x[2] == Fraction(1, 10)


def test_csv_rows():
    text = rows_to_csv(["j", "v"], [(1, "0.5"), (2, None)])
    assert text == "j,v\n1,0.5\n2,\n"


def test_json_dump_is_stable():
    doc = {"b": 1, "a": [1, 2]}
    assert dump_json(doc) == dump_json(doc) and dump_json(doc).endswith("\n")
