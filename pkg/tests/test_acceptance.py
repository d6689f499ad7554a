"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Reference numbers were produced once with mpmath and are frozen here; the
mpmath helpers below re-derive the per-instance values that depend on
random draws.
"""

from __future__ import annotations

import math
import random
import subprocess
import sys
import time
from fractions import Fraction

import gmpy2
import mpmath
import pytest

from itpfi_lab import (
    PI,
    TWO_PI_OVER_LN2,
    BitWord,
    GEntry,
    GVector,
    ParamSequence,
    SupBall,
    TargetOutsideU,
    Verdict,
    as_real,
    chain_witness,
    condition_star_n,
    construct_t,
    cylinder_mass,
    delta,
    eigenvalues_to_measure,
    factorial_scaled_angle,
    odometer_step,
    orbit_bound_check,
    perturb_for_divergence,
    rn_cocycle,
    tset_diagnose,
    tset_partial_sums,
)
from itpfi_lab.equivalence import g_norm_sq_exact
from itpfi_lab.precision import const_pi

pytestmark = pytest.mark.acceptance

# (pi + 2 pi (e - 5/2)) / ln 2, mpmath at 40 digits
T_CLOSED_FORM = mpmath.mpf("6.511023859813068715460526161116652483706")
# 2 pi - 2
A2 = mpmath.mpf("4.283185307179586476925286766559005768394")
ANCHOR_MAJORANT = mpmath.mpf("0.0212570132635118444")
ANCHOR_K = mpmath.mpf("1.06285066317559222")


def _mp(v) -> mpmath.mpf:
    """Exact conversion of an mpfr midpoint or error to mpmath."""
    n, d = v.as_integer_ratio()
    return mpmath.mpf(int(n)) / int(d)


def _harmonic(n: int) -> Fraction:
    return sum((Fraction(1, k) for k in range(1, n + 1)), Fraction(0))


# -- 1 ----------------------------------------------------------------------


def test_criterion_1_construct_t(acceptance):
    start = time.perf_counter()
    x = ParamSequence.zero()
    trace = construct_t(x, 40)
    failures = []

    mpmath.mp.dps = 40
    if abs(_mp(trace.t.mid) - T_CLOSED_FORM) + _mp(trace.t.err) >= mpmath.mpf("1e-6"):
        failures.append("t")
    a2 = trace.a[1]
    if abs(_mp(a2.mid) - A2) + _mp(a2.err) >= mpmath.mpf("1e-12"):
        failures.append("a(2)")
    for j in range(3, 41):
        aj = trace.a[j - 1]
        two_pi = const_pi(aj.prec).ldexp(1)
        if not aj.overlaps(two_pi):
            failures.append(f"a({j})")
    t_src = trace.t_source
    for j in range(3, 40):
        d = delta(x, t_src, j)
        if not (d.value.lo() > 0 and d.value.hi() <= 12 * math.pi / j):
            failures.append(f"delta_{j}")
    elapsed = time.perf_counter() - start
    if elapsed >= 10:
        failures.append(f"runtime {elapsed:.1f}s")

    acceptance.record(1, not failures, f"t={float(trace.t.mid):.12f}, {elapsed:.2f}s, failures={failures}")
    assert not failures


# -- 2 ----------------------------------------------------------------------


def test_criterion_2_perturbation(acceptance):
    start = time.perf_counter()
    y = ParamSequence.zero()
    J = 200
    p = perturb_for_divergence(y, TWO_PI_OVER_LN2, Fraction(1, 10), J)
    failures = []

    for j in p.x.support:
        if not p.x.value(j).abs_hi() < Fraction(1, 10):
            failures.append(f"sup at {j}")
    for j in range(p.j0 + 1, J + 1):
        d = delta(p.x, TWO_PI_OVER_LN2, j)
        root = math.sqrt(j)
        if not d.err < gmpy2.mpfr(1 / (8 * root)):
            failures.append(f"err_{j}")
        if not d.value.abs_lo() >= gmpy2.mpfr(1 / (2 * root)) * (1 + 1e-15):
            failures.append(f"delta_{j}")
    total = tset_partial_sums(p.x, TWO_PI_OVER_LN2, J).total
    bound = Fraction(9, 10) * Fraction(1, 4) * (_harmonic(J) - _harmonic(p.j0))
    if not total.lo() >= bound:
        failures.append("harmonic bound")
    if not p.verified:
        failures.append("self-check")
    elapsed = time.perf_counter() - start
    if elapsed >= 60:
        failures.append(f"runtime {elapsed:.1f}s")

    acceptance.record(
        2,
        not failures,
        f"j0={p.j0}, S_200={float(total.mid):.5f} >= {float(bound):.5f}, {elapsed:.2f}s, failures={failures[:5]}",
    )
    assert not failures


# -- 3 ----------------------------------------------------------------------


def _circular_distance(a, b) -> mpmath.mpf:
    two_pi = 2 * mpmath.pi
    d = abs(_mp(a.mid) - _mp(b.mid))
    return min(d, two_pi - d)


def test_criterion_3_precision_soundness(acceptance):
    mpmath.mp.dps = 60
    sources = {"1": as_real(1), "pi": PI, "2pi/ln2": TWO_PI_OVER_LN2}
    checked = passed = 0
    worst = None
    for name, t in sources.items():
        for j in range(1, 201):
            base = factorial_scaled_angle(t, j, exact_turns=False)
            wide = factorial_scaled_angle(t, j, guard_bits=32 + 128, exact_turns=False)
            gap = _circular_distance(base, wide)
            ok = gap <= _mp(base.err) + _mp(wide.err)
            checked += 1
            passed += ok
            if not ok and worst is None:
                worst = (name, j)
    acceptance.record(3, passed == checked, f"{passed}/{checked} (t, j) pairs agree, first failure={worst}")
    assert passed == checked


# -- 4 ----------------------------------------------------------------------


def test_criterion_4_trivial_tset_and_identity(acceptance):
    failures = []
    diag = tset_diagnose(ParamSequence.zero(), TWO_PI_OVER_LN2, 60)
    if not all(r.term.mid == 0 and r.term.err == 0 for r in diag.terms):
        failures.append("nonzero term")
    if diag.verdict is not Verdict.CONVERGENCE:
        failures.append(f"verdict {diag.verdict.value}")

    runs = [
        (ParamSequence.zero(), TWO_PI_OVER_LN2, 60),
        (ParamSequence.zero(), as_real(1), 60),
        (ParamSequence.zero(), PI, 60),
        (ParamSequence.from_mapping({1: Fraction(1, 10), 3: Fraction(-1, 7)}), as_real(Fraction(3, 2)), 40),
        (perturb_for_divergence(ParamSequence.zero(), TWO_PI_OVER_LN2, Fraction(1, 10), 80).x, TWO_PI_OVER_LN2, 80),
    ]
    emitted = list(diag.terms)
    for x, t, J in runs:
        emitted.extend(tset_partial_sums(x, t, J).terms)
    bad = [r.j for r in emitted if r.identity_ok is not True]
    if bad:
        failures.append(f"identity fails at j={bad[:5]}")

    acceptance.record(4, not failures, f"{len(emitted)} terms checked, verdict={diag.verdict.value}, failures={failures}")
    assert not failures


# -- 5 ----------------------------------------------------------------------


def _aw_block_oracle(j: int, x_j: Fraction, a_j) -> mpmath.mpf:
    """``2**(j!) [(sqrt lam - sqrt lam')**2 + (sqrt(1-lam) - sqrt(1-lam'))**2]``."""
    f = math.factorial(j)
    ln2 = mpmath.log(2)

    def lam(v):
        u = mpmath.exp(-ln2 * f * mpmath.exp(v / f))
        return 1 / (1 + u), u / (1 + u)

    l1, m1 = lam(mpmath.mpf(x_j.numerator) / x_j.denominator)
    l2, m2 = lam(mpmath.mpf(x_j.numerator) / x_j.denominator + a_j)
    return mpmath.ldexp((mpmath.sqrt(l1) - mpmath.sqrt(l2)) ** 2 + (mpmath.sqrt(m1) - mpmath.sqrt(m2)) ** 2, f)


def _random_gvector(rng: random.Random) -> GVector:
    entries = []
    for j in sorted(rng.sample(range(1, 7), rng.randint(1, 4))):
        sign = rng.choice((1, -1))
        if j <= 3:
            cap = min(Fraction(1, 10) * math.factorial(j), {1: Fraction(1, 3), 2: Fraction(1, 4), 3: Fraction(1, 16)}[j])
            entries.append(GEntry(j, sign, magnitude=cap * Fraction(rng.randint(1, 1000), 1000)))
        else:
            top = -(Fraction(math.factorial(j), 2) + 1)
            entries.append(GEntry(j, sign, log2_magnitude=top - Fraction(rng.randint(0, 40), 4)))
    return GVector(tuple(entries))


def _entry_mp(e: GEntry) -> mpmath.mpf:
    if e.magnitude is not None:
        return e.sign * mpmath.mpf(e.magnitude.numerator) / e.magnitude.denominator
    q = e.log2_magnitude
    return e.sign * mpmath.power(2, mpmath.mpf(q.numerator) / q.denominator)


def test_criterion_5_orbit_bound(acceptance):
    rng = random.Random(20260501)
    failures = []
    max_rel_change = 0.0
    mpmath.mp.dps = 60
    for trial in range(50):
        a = _random_gvector(rng)
        x = ParamSequence.from_mapping(
            {j: Fraction(rng.randint(-50, 50), 100) for j in rng.sample(range(1, 8), rng.randint(0, 3))}
        )
        J = a.max_index
        near = orbit_bound_check(x, a, J)
        far = orbit_bound_check(x, a, J + 5)
        if not (near.extra["dominated"] and far.extra["dominated"]):
            failures.append(f"trial {trial}: domination")
        k0, k5 = near.bound_constant, far.bound_constant
        rel = abs(float(k5.mid) - float(k0.mid)) / float(k0.mid)
        max_rel_change = max(max_rel_change, rel)
        if rel >= 0.01:
            failures.append(f"trial {trial}: K change {rel:.3g}")
        # the AW block itself against a direct square-root evaluation
        for rec in near.blocks:
            e = a[rec.j]
            if e is None:
                continue
            mpmath.mp.dps = 60 + math.factorial(rec.j)
            oracle = mpmath.log(_aw_block_oracle(rec.j, x.as_dict().get(rec.j, Fraction(0)), _entry_mp(e)), 2)
            got = rec.aw_log2.to_real(256)
            if abs(_mp(got.mid) - oracle) > _mp(got.err) + mpmath.mpf(2) ** -150:
                failures.append(f"trial {trial}: AW block {rec.j}")
            mpmath.mp.dps = 60

    anchor = orbit_bound_check(ParamSequence.zero(), GVector.from_rationals({1: "1/10"}), 1)
    majorant = _mp(anchor.extra["majorant_total"].mid)
    k = _mp(anchor.bound_constant.mid)
    if abs(majorant - ANCHOR_MAJORANT) >= mpmath.mpf("1e-4") or abs(k - ANCHOR_K) >= mpmath.mpf("1e-4"):
        failures.append("anchor")

    acceptance.record(
        5,
        not failures,
        f"50 vectors, max K change {max_rel_change:.2e}, anchor majorant={float(majorant):.6f} K={float(k):.4f}, "
        f"failures={failures[:5]}",
    )
    assert not failures


# -- 6 ----------------------------------------------------------------------


def _brute_least_n(q: Fraction, r: Fraction, limit: int = 10**6) -> int | None:
    """Scan n = 1, 2, ... for ``n**2 r**2 > q`` using integers only."""
    ratio = q / (r * r)
    p, d = ratio.numerator, ratio.denominator
    for n in range(1, limit + 1):
        if n * n * d > p:
            return n
    return None


def _brute_least_n_mp(q: mpmath.mpf, r: Fraction, limit: int = 10**6) -> int | None:
    bound = q / (mpmath.mpf(r.numerator) / r.denominator) ** 2
    for n in range(1, limit + 1):
        if n * n > bound:
            return n
    return None


def _random_instance(rng: random.Random):
    support = rng.sample(range(1, 9), rng.randint(1, 4))
    center = {j: Fraction(rng.randint(-100, 100), 200) for j in support}
    radius_u = Fraction(rng.randint(1, 20), 10)

    def inside(limit: Fraction) -> Fraction:
        # a rational strictly inside (-limit, limit)
        return limit * Fraction(rng.randint(-999, 999), 1000)

    x = {j: center.get(j, Fraction(0)) + inside(radius_u) for j in set(support) | set(rng.sample(range(1, 9), rng.randint(0, 4)))}
    g_entries = []
    for j in sorted(rng.sample(range(1, 9), rng.randint(1, 4))):
        if j >= 4:
            # G-vectors are tiny beyond the first blocks; keep the norm finite and small
            g_entries.append(GEntry(j, rng.choice((1, -1)), log2_magnitude=Fraction(-math.factorial(j) // 2 - rng.randint(1, 30))))
            continue
        target = center.get(j, Fraction(0)) + inside(radius_u)
        diff = target - x.get(j, Fraction(0))
        if diff:
            g_entries.append(GEntry(j, 1 if diff > 0 else -1, magnitude=abs(diff)))
    g = GVector(tuple(g_entries))
    radius_v = Fraction(rng.randint(1, 200), 100)
    return ParamSequence.from_mapping(x), g, SupBall(ParamSequence.from_mapping(center), radius_u), radius_v


def test_criterion_6_chains(acceptance):
    rng = random.Random(6060)
    failures = []
    instances = 0
    mpmath.mp.dps = 80
    while instances < 100:
        x, g, ball, r = _random_instance(rng)
        try:
            w = chain_witness(x, g, ball, r)
        except TargetOutsideU:
            # a dyadic entry can push x + g just past the ball's edge
            continue
        instances += 1
        if not (w.verified and set(w.checks) == {"equal_steps", "step_in_V", "points_in_U", "endpoints"}):
            failures.append(f"instance {instances}: {w.checks}")
        exact = g_norm_sq_exact(g)
        if exact is not None:
            brute = _brute_least_n(exact, r)
        else:
            q = mpmath.mpf(0)
            for e in g.entries:
                q += mpmath.ldexp(_entry_mp(e) ** 2, math.factorial(e.j))
            brute = _brute_least_n_mp(q, r)
        if brute is None or condition_star_n(g, r) != brute or w.n != brute:
            failures.append(f"instance {instances}: n={w.n} brute={brute}")

    acceptance.record(6, not failures, f"{instances} chains, failures={failures[:5]}")
    assert not failures


# -- 7 ----------------------------------------------------------------------


def test_criterion_7_odometer(acceptance):
    start = time.perf_counter()
    mu = eigenvalues_to_measure(ParamSequence.zero(), 12)
    horizon = 8
    failures = []
    words_checked = 0
    for m in range(1, 13):
        size = 1 << m
        words = [BitWord.from_int(v, m) for v in range(size)]
        mass = [cylinder_mass(mu, w) for w in words]
        table = []
        for v, w in enumerate(words):
            row = [rn_cocycle(mu, w, k) for k in range(min(horizon, size - 1 - v) + 1)]
            # sigma^k of the word with value v has value v + k while no wrap occurs
            if any(row[k] != mass[v + k] / mass[v] for k in range(len(row))):
                failures.append(f"brute force at {w}")
            if m <= 8 and rn_cocycle(mu, w, -v) != mass[0] / mass[v]:
                failures.append(f"backward walk at {w}")
            table.append(row)
            words_checked += 1
        for v, row in enumerate(table):
            for k1 in range(len(row)):
                for k2 in range(len(row) - k1):
                    if row[k1 + k2] != row[k1] * table[v + k1][k2]:
                        failures.append(f"cocycle at {words[v]} ({k1}, {k2})")

    w0 = BitWord.from_int(0, 12)
    w, order = w0, 0
    while True:
        w, _ = odometer_step(w)
        order += 1
        if w == w0 or order > 1 << 12:
            break
    if order != 1 << 12:
        failures.append(f"order {order}")
    elapsed = time.perf_counter() - start
    if elapsed >= 10:
        failures.append(f"runtime {elapsed:.1f}s")

    acceptance.record(7, not failures, f"{words_checked} words, order={order}, {elapsed:.2f}s, failures={failures[:5]}")
    assert not failures


# -- 8 ----------------------------------------------------------------------

G_SMALL = '{"entries": [{"j": 1, "value": "1/10"}, {"j": 4, "sign": -1, "log2_magnitude": "-14"}]}'
X_SMALL = '{"entries": [{"j": 1, "value": "1/10"}, {"j": 2, "value": "-3/20"}]}'

CLI_RUNS = [
    ["tset-diagnose", "--t", "2pi/ln2", "--J", "30"],
    ["tset-diagnose", "--x", X_SMALL, "--t", "pi", "--J", "25", "--format", "csv"],
    ["construct-t", "--J", "20"],
    ["perturb", "--t", "2pi/ln2", "--eps", "1/10", "--J", "60"],
    ["aw-equiv", "--x-prime", X_SMALL, "--J", "8"],
    ["g-norm", "--a", G_SMALL, "--J", "5"],
    ["orbit-bound", "--a", G_SMALL, "--J", "8"],
    ["orbit-bound", "--x", X_SMALL, "--a", G_SMALL, "--J", "8", "--format", "csv"],
    ["chain", "--g", '{"entries": [{"j": 1, "value": "1/2"}]}', "--radius-u", "1", "--radius-v", "1/10"],
    ["dense-approx", "--y", X_SMALL, "--eps", "1/100"],
    ["odometer", "--n-max", "12", "--word", "110000000000", "--steps", "9"],
    ["type-iii", "--x", X_SMALL, "--J", "20"],
    ["export-measure", "--n-max", "7"],
]


def _run_cli(args: list[str], workers: int) -> bytes:
    proc = subprocess.run(
        [sys.executable, "-m", "itpfi_lab", *args, "--workers", str(workers)],
        capture_output=True,
        check=False,
    )
    assert proc.returncode == 0, proc.stderr.decode()
    return proc.stdout


def test_criterion_8_determinism(acceptance):
    differing = []
    for args in CLI_RUNS:
        outputs = [_run_cli(args, 1), _run_cli(args, 1), _run_cli(args, 4)]
        if len(set(outputs)) != 1 or not outputs[0]:
            differing.append(args[0])
    acceptance.record(8, not differing, f"{len(CLI_RUNS)} commands x 3 runs, differing={differing}")
    assert not differing
