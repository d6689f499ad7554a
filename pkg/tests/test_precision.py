from __future__ import annotations

import math
from fractions import Fraction

import gmpy2
import mpmath
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from itpfi_lab import (
    PI,
    TWO_PI_OVER_LN2,
    PrecisionExhausted,
    PrecReal,
    as_real,
    factorial_scaled_angle,
    log2_weight,
    signed_mod_2pi,
)
from itpfi_lab.precision import LazyReal, const_e, const_ln2, const_pi, exp2_log, scaled_expm1

from oracle import encloses, mp, reduce_angle

rationals = st.fractions(min_value=-50, max_value=50, max_denominator=10**6)
positive = st.fractions(min_value=Fraction(1, 10**6), max_value=50, max_denominator=10**6)
precisions = st.sampled_from([53, 64, 128, 256, 600])


@pytest.fixture(autouse=True)
def _digits():
    mpmath.mp.dps = 250
    yield


# -- constants and anchors (mpmath values frozen at 21 digits) --------------


def test_constants_enclose_reference_digits():
    assert encloses(const_pi(200), mpmath.pi)
    assert encloses(const_ln2(200), mpmath.log(2))
    assert encloses(const_e(200), mpmath.e)


def test_log2_weight_anchors():
    assert abs(mp(log2_weight(1, Fraction(1, 10)).mid) - mpmath.mpf("-0.105170918075647624812")) < 1e-20
    assert abs(mp(log2_weight(10, Fraction(1, 10)).mid) - mpmath.mpf("-0.100000001377865973856")) < 1e-20


def test_log2_weight_is_exactly_zero_at_zero():
    w = log2_weight(7, 0)
    assert w.mid == 0 and w.err == 0


def test_angle_anchor_j3_t1():
    # 1 * ln2 * 3! = 6 ln2 is past pi, so one turn comes off
    a = factorial_scaled_angle(1, 3)
    assert abs(mp(a.mid) - mpmath.mpf("-2.12430222381991462042")) < 1e-20
    assert not a.boundary_ambiguous


def test_scaled_expm1_small_argument_has_no_cancellation():
    v = scaled_expm1(Fraction(1, 10**30), 5, 128)
    ref = mpmath.expm1(mpmath.mpf(1) / (10**30 * 120))
    assert encloses(v, ref)
    assert mp(v.err) / abs(ref) < mpmath.mpf(2) ** -100


# -- enclosure properties ------------------------------------------------------


@given(rationals, rationals, precisions)
def test_field_operations_enclose(a, b, prec):
    x, y = PrecReal.from_fraction(a, prec), PrecReal.from_fraction(b, prec)
    assert encloses(x + y, mp(a) + mp(b))
    assert encloses(x - y, mp(a) - mp(b))
    assert encloses(x * y, mp(a) * mp(b))
    if b != 0:
        assert encloses(x / y, mp(a) / mp(b))


@given(positive, precisions)
def test_elementary_functions_enclose(a, prec):
    x = PrecReal.from_fraction(a, prec)
    ref = mp(a)
    assert encloses(x.sqrt(), mpmath.sqrt(ref))
    assert encloses(x.log(), mpmath.log(ref))
    assert encloses(x.log2(), mpmath.log(ref, 2))
    assert encloses(x.exp(), mpmath.exp(ref))
    assert encloses(x.log1p(), mpmath.log1p(ref))


@given(rationals, precisions)
def test_trig_and_expm1_enclose(a, prec):
    x = PrecReal.from_fraction(a, prec)
    ref = mp(a)
    assert encloses(x.cos(), mpmath.cos(ref))
    assert encloses(x.sin(), mpmath.sin(ref))
    assert encloses(x.expm1(), mpmath.expm1(ref))
    assert encloses(x.exp2(), mpmath.power(2, ref))


@given(rationals, rationals)
def test_error_propagates_through_operations(a, b):
    # widening the inputs must keep the true result inside
    wide = gmpy2.mpfr("1e-10")
    x = PrecReal(PrecReal.from_fraction(a, 128).mid, wide, 128)
    y = PrecReal(PrecReal.from_fraction(b, 128).mid, wide, 128)
    shifted_a, shifted_b = mp(a) + mpmath.mpf("0.9e-10"), mp(b) - mpmath.mpf("0.9e-10")
    assert encloses(x * y, shifted_a * shifted_b, slack=mpmath.mpf(2) ** -120)
    assert encloses(x + y, shifted_a + shifted_b, slack=mpmath.mpf(2) ** -120)


def test_division_by_enclosure_of_zero_is_refused():
    with pytest.raises(PrecisionExhausted):
        PrecReal.from_int(1) / PrecReal(gmpy2.mpfr(0), gmpy2.mpfr("1e-30"), 128)


def test_negation_keeps_full_precision():
    x = PrecReal.from_fraction(Fraction(1, 3), 400)
    assert mp((-x).mid) == -mp(x.mid)


def test_exp2_log_underflow_becomes_a_bound():
    tiny = exp2_log(PrecReal.from_int(-(1 << 29), 64))
    assert tiny.mid == 0 and tiny.err > 0


# -- reduction modulo 2 pi --------------------------------------------------


@given(st.integers(min_value=-10**40, max_value=10**40), st.integers(min_value=1, max_value=10**6))
@settings(max_examples=200)
def test_signed_mod_2pi_matches_oracle(n, d):
    s = PrecReal.from_fraction(Fraction(n, d), 256)
    a = signed_mod_2pi(s)
    ref = reduce_angle(mp(Fraction(n, d)))
    assert -mpmath.pi < mp(a.mid) <= mpmath.pi
    assert encloses(a.value, ref) or a.boundary_ambiguous


def test_signed_mod_2pi_exact_zero_is_untouched():
    z = signed_mod_2pi(PrecReal.from_int(0))
    assert z.mid == 0 and z.err == 0


def test_signed_mod_2pi_flags_the_branch_cut():
    near_pi = const_pi(256)
    assert signed_mod_2pi(near_pi).boundary_ambiguous


def test_signed_mod_2pi_refuses_hopeless_input():
    with pytest.raises(PrecisionExhausted):
        signed_mod_2pi(PrecReal(gmpy2.mpfr(1), gmpy2.mpfr(4), 64))


@pytest.mark.parametrize("j", [1, 2, 5, 17, 40, 90])
@pytest.mark.parametrize("name", ["1", "pi", "3/7"])
def test_factorial_scaled_angle_matches_oracle(j, name):
    t = PI if name == "pi" else as_real(name)
    t_ref = mpmath.pi if name == "pi" else mp(Fraction(name))
    mpmath.mp.dps = 60 + math.factorial(j).bit_length()
    a = factorial_scaled_angle(t, j, target_err=1e-25)
    assert mp(a.err) < mpmath.mpf("1e-25")
    assert encloses(a.value, reduce_angle(t_ref * mpmath.log(2) * math.factorial(j)))


@pytest.mark.parametrize("x_j", [Fraction(1, 10), Fraction(-7, 3)])
def test_factorial_scaled_angle_with_parameter(x_j):
    j = 6
    mpmath.mp.dps = 80
    ref = reduce_angle(mpmath.log(2) * 720 * mpmath.exp(mp(x_j) / 720))
    assert encloses(factorial_scaled_angle(1, j, x_j).value, ref)


def test_exact_turns_give_exact_zero():
    for j in range(1, 60):
        a = factorial_scaled_angle(TWO_PI_OVER_LN2, j)
        assert a.mid == 0 and a.err == 0


def test_numeric_path_agrees_with_exact_turns():
    for j in (1, 10, 50):
        a = factorial_scaled_angle(TWO_PI_OVER_LN2, j, exact_turns=False)
        assert a.value.contains(0)
        assert a.err < 1e-20


def test_negated_turns_stay_exact():
    a = factorial_scaled_angle(-TWO_PI_OVER_LN2, 4)
    assert a.mid == 0 and a.err == 0


def test_precision_ceiling_is_enforced():
    with pytest.raises(PrecisionExhausted):
        factorial_scaled_angle(PI, 100, ceiling=300)


@pytest.mark.parametrize("bad", [0, 1, -1e-3])
def test_target_err_domain(bad):
    with pytest.raises(ValueError):
        factorial_scaled_angle(PI, 3, target_err=bad)


def test_lazy_real_reruns_at_higher_precision():
    calls = []

    def build(p):
        calls.append(p)
        return const_pi(p)

    t = LazyReal(build, "pi")
    assert t.at(100).prec == 100 and t.at(300).prec == 300
    t.at(100)
    assert calls == [100, 300]


def test_as_real_reads_strings_exactly():
    assert as_real("0.1").at(200).contains(Fraction(1, 10))
    assert as_real("-3/4").at(64).contains(Fraction(-3, 4))
