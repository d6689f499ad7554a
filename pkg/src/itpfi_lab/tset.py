"""The T-set series for M_x and the two explicit constructions around it.

For a time ``t`` the relevant series is

    sum_j w_j * delta_j(t)**2,   w_j = N_j exp(-l_j) = 2**(j!(1 - e^{x(j)/j!})),

where ``delta_j(t)`` is ``t * l_j`` reduced into (-pi, pi].  Finite partial
sums are evidence about convergence, never a decision.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

from gmpy2 import mpfr

from .exceptions import PrecisionExhausted, PreconditionError, WindowTooSmall
from .model import ParamSequence, PerturbedEntry
from .precision import (
    DEFAULT_CEILING,
    Angle,
    LazyReal,
    PrecReal,
    RealSource,
    as_real,
    const_ln2,
    const_pi,
    exp2_log,
    factorial_scaled_angle,
    log2_weight,
    scaled_expm1,
    signed_mod_2pi,
)
from .series import CompensatedSum, PowerFit, SeriesDiagnostics, TermRecord, Verdict, fit_power_law

__all__ = [
    "DiagnosePolicy",
    "ConstructionTrace",
    "Perturbation",
    "delta",
    "tset_partial_sums",
    "tset_diagnose",
    "construct_t",
    "perturb_for_divergence",
]

DEFAULT_TARGET_ERR = 1e-20


def delta(x: ParamSequence, t, j: int, target_err: float = DEFAULT_TARGET_ERR, *, ceiling: int = DEFAULT_CEILING) -> Angle:
    """``delta_j^x(t)``: ``t * l_j^x`` reduced into (-pi, pi]."""
    return factorial_scaled_angle(t, j, x[j], target_err, ceiling=ceiling)


def _term(x: ParamSequence, t: RealSource, j: int, target_err: float, ceiling: int) -> TermRecord:
    d = delta(x, t, j, target_err, ceiling=ceiling)
    lw = log2_weight(j, x[j], max(128, d.value.prec // 8))
    w = exp2_log(lw)
    dv = d.value
    sq = dv.square()
    # 2(1 - cos d) written as 4 sin^2(d/2) to avoid cancellation
    cos_form = dv.ldexp(-1).sin().square().ldexp(2)
    gap = sq - cos_form
    quartic = sq.square() / 12
    identity_ok = gap.lo() <= quartic.hi() and gap.hi() >= -gap.err
    return TermRecord(j=j, delta=d, log2_w=lw, term=w * sq, cos_form=w * cos_form, identity_ok=identity_ok)


def tset_partial_sums(
    x: ParamSequence,
    t,
    J: int,
    target_err: float = DEFAULT_TARGET_ERR,
    *,
    workers: int = 1,
    ceiling: int = DEFAULT_CEILING,
) -> SeriesDiagnostics:
    """Terms ``w_j delta_j**2`` for ``j <= J`` with compensated partial sums.

    Terms are independent and may be evaluated on ``workers`` threads; they
    are always accumulated in increasing ``j``.
    """
    if J < 1:
        raise PreconditionError("J must be at least 1")
    t = as_real(t)
    js = range(1, J + 1)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            terms = list(pool.map(lambda j: _term(x, t, j, target_err, ceiling), js))
    else:
        terms = [_term(x, t, j, target_err, ceiling) for j in js]
    acc = CompensatedSum()
    sums = []
    for rec in terms:
        acc.add(rec.term)
        sums.append(acc.value())
    return SeriesDiagnostics(
        terms=terms,
        partial_sums=sums,
        fit=None,
        verdict=Verdict.INCONCLUSIVE,
        horizon=J,
        extra={"identity_ok": all(r.identity_ok for r in terms)},
    )


@dataclass(frozen=True)
class DiagnosePolicy:
    """Knobs for turning a finite window of terms into a verdict.

    ``w_min=None`` means ``2**(-|x|_inf - 1)``.
    """

    window_fraction: float = 0.5
    alpha_margin: float = 0.1
    w_min: float | None = None
    w_max: float | None = None
    divergence_const: float = 0.5
    divergence_density: float = 0.9

    def __post_init__(self):
        if not 0 < self.window_fraction <= 1:
            raise PreconditionError("window_fraction must lie in (0, 1]")
        if not 0 < self.divergence_density <= 1:
            raise PreconditionError("divergence_density must lie in (0, 1]")


def _window(terms: list[TermRecord], fraction: float) -> list[TermRecord]:
    size = max(1, math.ceil(len(terms) * fraction))
    return terms[len(terms) - size:]


def tset_diagnose(
    x: ParamSequence,
    t,
    J: int,
    policy: DiagnosePolicy | None = None,
    target_err: float = DEFAULT_TARGET_ERR,
    *,
    workers: int = 1,
    ceiling: int = DEFAULT_CEILING,
) -> SeriesDiagnostics:
    """Heuristic verdict on whether ``t`` belongs to T(M_x).

    Convergence evidence: on the tail window every ``|delta_j|`` is zero
    within its error, or a fit ``|delta_j| ~ c/j**alpha`` has
    ``alpha > 1/2 + margin`` while ``w_j`` stays bounded.  Divergence
    evidence: ``|delta_j| >= c/sqrt(j)`` and ``w_j >= w_min`` on at least the
    ``divergence_density`` fraction of the window.
    """
    policy = policy or DiagnosePolicy()
    diag = tset_partial_sums(x, t, J, target_err, workers=workers, ceiling=ceiling)
    norm = x.sup_norm_upper()
    w_min = policy.w_min if policy.w_min is not None else 2.0 ** (-norm - 1)
    w_max = policy.w_max if policy.w_max is not None else 2.0 ** (norm + 1)
    window = _window(diag.terms, policy.window_fraction)

    nonzero = [r for r in window if r.delta.value.abs_lo() > 0]
    fit = fit_power_law([r.j for r in nonzero], [abs(float(r.delta)) for r in nonzero])
    w_bounded = all(float(r.term.lo()) >= 0 and float(exp2_log(r.log2_w).hi()) <= w_max for r in window)

    if not nonzero:
        verdict = Verdict.CONVERGENCE
    elif fit is not None and fit.alpha > 0.5 + policy.alpha_margin and w_bounded:
        verdict = Verdict.CONVERGENCE
    else:
        hits = sum(
            1
            for r in window
            if float(r.delta.value.abs_lo()) >= policy.divergence_const / math.sqrt(r.j)
            and float(exp2_log(r.log2_w).lo()) >= w_min
        )
        if hits >= policy.divergence_density * len(window):
            verdict = Verdict.DIVERGENCE
        else:
            verdict = Verdict.INCONCLUSIVE
    diag.fit = fit
    diag.verdict = verdict
    diag.extra.update(
        {
            "policy": policy,
            "w_min": w_min,
            "w_max": w_max,
            "window": (window[0].j, window[-1].j),
        }
    )
    return diag


# -- construction of a nonzero element of T(M_x) ---------------------------
@dataclass
class ConstructionTrace:
    """The sequence ``a(j)`` and the truncated time ``t`` it defines.

    ``a`` holds enclosures whose midpoints are the exact numbers used to build
    ``t``; each error bound is the distance to the exact recursion value.
    ``t_source`` re-evaluates the truncated series at any precision.
    """

    a: list[PrecReal]
    t: PrecReal
    horizon: int
    t_source: LazyReal = field(repr=False)
    x: ParamSequence = field(repr=False)
    bound_threshold: int = 1
    boundary_flags: list[int] = field(default_factory=list)

    def a_range(self) -> tuple[float, float]:
        tail = self.a[1:] or self.a
        return min(float(v.mid) for v in tail), max(float(v.mid) for v in tail)

    def tail_delta(self, j: int, prec: int | None = None) -> PrecReal:
        """``sum_{j<k<=J} j! E_j a(k) / (k! E_k)``, plus the recursion error of ``a(j)``."""
        if not 1 <= j < self.horizon:
            raise PreconditionError("the tail identity holds only for j < J")
        prec = prec or self.a[0].prec
        fact_j = math.factorial(j)
        e_j = scaled_expm1(self.x[j], j, prec) + 1
        acc = PrecReal.from_int(0, prec)
        for k in range(j + 1, self.horizon + 1):
            e_k = scaled_expm1(self.x[k], k, prec) + 1
            ratio = Fraction(fact_j, math.factorial(k))
            acc = acc + PrecReal.from_mpfr(self.a[k - 1].mid, prec) * PrecReal.from_fraction(ratio, prec) / e_k
        total = acc * e_j
        return PrecReal(total.mid, total.err + self.a[j - 1].err, total.prec)


def _bound_threshold(x: ParamSequence) -> int:
    """Least j with ``1/2 <= exp(x(k)/k!) <= 2`` for every ``k >= j``."""
    start = 1
    ln2 = Fraction(693147, 1000000)  # below ln 2
    for j, v in x.entries:
        val = abs(v) if isinstance(v, Fraction) else abs(v.value().fraction())
        if val / math.factorial(j) > ln2:
            start = j + 1
    return start


def construct_t(
    x: ParamSequence,
    J: int,
    target_err: float = 1e-30,
    *,
    ceiling: int = DEFAULT_CEILING,
) -> ConstructionTrace:
    """Run the recursion ``a(1) = 1``, ``a(j) = [-S_j] mod 2pi + 2pi``.

    ``S_j = j! E_j sum_{k<j} a(k) / (k! E_k)`` with ``E_k = exp(x(k)/k!)``;
    the truncated ``t = (1/ln2) sum_{k<=J} a(k) / (k! E_k)`` makes
    ``delta_j(t)`` equal the tail ``sum_{j<k<=J}`` for every ``j < J``.
    """
    if J < 2:
        raise PreconditionError("J must be at least 2")
    prec = math.factorial(J).bit_length() + math.ceil(-math.log2(target_err)) + 64
    if prec > ceiling:
        raise PrecisionExhausted(f"construct_t needs {prec} bits")
    two_pi = const_pi(prec).ldexp(1)
    a_vals = [PrecReal.from_int(1, prec)]
    e_vals = [scaled_expm1(x[1], 1, prec) + 1]
    running = PrecReal.from_mpfr(a_vals[0].mid, prec) / e_vals[0]
    flags = []
    for j in range(2, J + 1):
        e_j = scaled_expm1(x[j], j, prec) + 1
        s_j = running * math.factorial(j) * e_j
        residue = signed_mod_2pi(-s_j)
        if residue.boundary_ambiguous:
            flags.append(j)
        a_j = residue.value + two_pi
        a_vals.append(PrecReal(a_j.mid, a_j.err, prec))
        e_vals.append(e_j)
        # a(j) enters t through its midpoint, taken as exact
        exact_a = PrecReal.from_mpfr(a_j.mid, prec)
        running = running + exact_a / (e_j * math.factorial(j))

    mids = [v.mid for v in a_vals]

    def build(p: int) -> PrecReal:
        acc = CompensatedSum(p + 32)
        for k, m in enumerate(mids, start=1):
            e_k = scaled_expm1(x[k], k, p + 32) + 1
            acc.add(PrecReal.from_mpfr(m, p + 32) / (e_k * math.factorial(k)))
        return acc.value() / const_ln2(p + 32)

    source = LazyReal(build, f"construct_t(J={J})")
    return ConstructionTrace(
        a=a_vals,
        t=source.at(prec),
        horizon=J,
        t_source=source,
        x=x,
        bound_threshold=_bound_threshold(x),
        boundary_flags=flags,
    )


# -- divergence-forcing perturbation ---------------------------------------
@dataclass
class Perturbation:
    x: ParamSequence
    j0: int
    a: dict[int, int]
    checks: dict[int, Angle]
    verified: bool
    ties: list[int] = field(default_factory=list)
    sup_bound: PrecReal | None = None


def _least_j0(y: ParamSequence, t_ln2: PrecReal, half_eps: Fraction) -> int:
    j0 = 1
    for j, v in y.entries:
        mag = abs(v) if isinstance(v, Fraction) else v.value().abs_hi()
        if mag >= half_eps:
            j0 = max(j0, j)
    # 1/(t ln2 sqrt(j0)) < eps/2  <=>  j0 > (2 / (eps t ln2))**2
    cutoff = float((2 / (PrecReal.from_fraction(half_eps * 2, t_ln2.prec) * t_ln2)).square().mid)
    j0 = max(j0, math.floor(cutoff) - 1, 1)
    while not _bound_below(t_ln2, j0, half_eps):
        j0 += 1
    return j0


def _bound_below(t_ln2: PrecReal, j: int, half_eps: Fraction) -> bool:
    bound = 1 / (t_ln2 * PrecReal.from_int(j, t_ln2.prec).sqrt())
    return bound.hi() < PrecReal.from_fraction(half_eps, t_ln2.prec).lo()


def perturb_for_divergence(
    y: ParamSequence,
    t,
    eps: Fraction | int | str,
    J: int,
    target_err: float = DEFAULT_TARGET_ERR,
    *,
    ceiling: int = DEFAULT_CEILING,
) -> Perturbation:
    """Modify ``y`` past ``j0`` so that ``|delta_j(t)| >= 1/(2 sqrt j)`` on ``(j0, J]``.

    For ``j > j0`` the coordinate becomes ``j! log(1 + a(j)/(t ln2 j! sqrt j))``
    with ``a(j) = 1`` exactly when the unperturbed angle ``t ln2 j!`` is
    within ``1/(2 sqrt j)`` of zero (ties also pick 1).  Coordinates beyond
    ``J`` are left as in ``y``.
    """
    eps = Fraction(eps) if not isinstance(eps, str) else Fraction(eps)
    if eps <= 0:
        raise PreconditionError("eps must be positive")
    t = as_real(t)
    if t.at(64).is_negative():
        # T(M) is a group, so work with -t
        t = -t
    if not t.at(64).is_positive():
        raise PreconditionError("t must be nonzero")
    half_eps = eps / 2
    t_ln2 = t.at(192) * const_ln2(192)
    j0 = _least_j0(y, t_ln2, half_eps)
    if J <= j0:
        raise WindowTooSmall(f"J = {J} does not exceed j0 = {j0}")

    label = getattr(t, "label", "")
    values = y.as_dict()
    choice: dict[int, int] = {}
    ties: list[int] = []
    for j in range(j0 + 1, J + 1):
        threshold = PrecReal.from_int(1, 128) / PrecReal.from_int(4 * j, 128).sqrt()
        a_j = None
        tol = target_err
        while a_j is None:
            ang = factorial_scaled_angle(t, j, 0, tol, ceiling=ceiling)
            mag = abs(ang.value)
            if mag.hi() < threshold.lo():
                a_j = 1
            elif mag.lo() >= threshold.hi():
                a_j = 0
            elif tol < 1e-200:
                a_j = 1
                ties.append(j)
            else:
                tol = tol * 1e-40
        choice[j] = a_j
        values[j] = PerturbedEntry(j, a_j, t, label) if a_j else Fraction(0)
    x = ParamSequence.from_mapping(values)

    checks: dict[int, Angle] = {}
    ok = True
    for j in range(j0 + 1, J + 1):
        limit = 1 / (8 * math.sqrt(j))
        d = delta(x, t, j, min(target_err, limit / 2), ceiling=ceiling)
        checks[j] = d
        need = PrecReal.from_int(1, 128) / PrecReal.from_int(4 * j, 128).sqrt()
        if not (abs(d.value).lo() >= need.hi() and float(d.err) < limit):
            ok = False
    sup_bound = 1 / (t_ln2 * PrecReal.from_int(j0 + 1, t_ln2.prec).sqrt())
    return Perturbation(x=x, j0=j0, a=choice, checks=checks, verified=ok, ties=ties, sup_bound=sup_bound)
