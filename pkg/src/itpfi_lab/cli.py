"""Command-line front end: every analysis as a subcommand with JSON/CSV output.

Exit status: 0 success, 1 usage or malformed input, 2 precondition
violation, 3 precision ceiling exhausted.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable

from .equivalence import EquivalencePolicy, EquivalenceReport, Log2Value, aw_partial_sum, g_norm_sq, g_norm_sq_exact, orbit_bound_check
from .exceptions import OverflowOnOrbit, PrecisionExhausted, PreconditionError
from .model import ParamSequence, eigenvalue_blocks, parse_rational, type_iii_evidence
from .odometer import ASSUMPTIONS, BitWord, ProductMeasure, block_of, cylinder_mass, eigenvalues_to_measure, orbit
from .precision import DEFAULT_CEILING, PrecReal
from .serialize import (
    angle_json,
    dump_json,
    fmt_decimal,
    frac_str,
    gvector_from_json,
    gvector_to_json,
    load_json,
    param_from_json,
    param_to_json,
    parse_t,
    real_json,
    real_parts,
    rows_to_csv,
)
from .series import SeriesDiagnostics
from .tset import DiagnosePolicy, construct_t, delta, perturb_for_divergence, tset_diagnose
from .turbulence import SupBall, chain_witness, dense_approximant

EXIT_OK, EXIT_USAGE, EXIT_PRECONDITION, EXIT_PRECISION = 0, 1, 2, 3


class UsageError(Exception):
    """Malformed command line, config or input file."""


@dataclass
class RunConfig:
    precision_ceiling: int = DEFAULT_CEILING
    target_err: float = 1e-20
    workers: int = 1
    format: str = "json"
    out: str | None = None
    diagnose: dict[str, Any] = field(default_factory=dict)
    equivalence: dict[str, Any] = field(default_factory=dict)

    def validate(self) -> None:
        if self.precision_ceiling < 256:
            raise UsageError("precision ceiling must be at least 256 bits")
        if not 0 < self.target_err < 1:
            raise UsageError("target_err must lie in (0, 1)")
        if self.workers < 1:
            raise UsageError("workers must be positive")
        if self.format not in ("json", "csv"):
            raise UsageError("format must be json or csv")

    def diagnose_policy(self) -> DiagnosePolicy:
        try:
            return DiagnosePolicy(**self.diagnose)
        except TypeError as exc:
            raise UsageError(f"bad diagnose policy: {exc}") from exc

    def equivalence_policy(self) -> EquivalencePolicy:
        try:
            return EquivalencePolicy(**self.equivalence)
        except TypeError as exc:
            raise UsageError(f"bad equivalence policy: {exc}") from exc

    def public(self) -> dict[str, Any]:
        """The parts of the config that shape results (workers never do)."""
        return {
            "precision_ceiling": self.precision_ceiling,
            "target_err": self.target_err,
            "diagnose": dataclasses.asdict(self.diagnose_policy()),
            "equivalence": dataclasses.asdict(self.equivalence_policy()),
        }


def load_config(path: str | None, args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if path:
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise UsageError("config must be a JSON object")
        known = {f.name for f in dataclasses.fields(RunConfig)}
        unknown = set(doc) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg = dataclasses.replace(cfg, **doc)
    for name in ("precision_ceiling", "target_err", "workers", "format", "out"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    cfg.validate()
    return cfg


# -- input helpers ----------------------------------------------------------------


def _read_doc(source: str):
    text = source if source.lstrip().startswith(("[", "{")) else None
    if text is None:
        try:
            text = Path(source).read_text()
        except OSError as exc:
            raise UsageError(f"cannot read {source}: {exc}") from exc
    try:
        return load_json(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"invalid JSON in {source}: {exc}") from exc


def _param(source: str) -> ParamSequence:
    if source == "zero":
        return ParamSequence.zero()
    try:
        return param_from_json(_read_doc(source))
    except PreconditionError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"malformed parameter sequence {source}: {exc}") from exc


def _gvector(source: str):
    if source == "zero":
        return gvector_from_json([])
    try:
        return gvector_from_json(_read_doc(source))
    except PreconditionError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"malformed G-vector {source}: {exc}") from exc


def _rational_arg(text: str) -> Fraction:
    try:
        return parse_rational(text)
    except (ValueError, ArithmeticError) as exc:
        raise UsageError(f"not an exact rational: {text!r}") from exc


def _t_arg(text: str):
    try:
        return parse_t(text)
    except (ValueError, ArithmeticError, TypeError) as exc:
        raise UsageError(f"cannot read t = {text!r}") from exc


# -- output helpers ---------------------------------------------------------------

Table = tuple[list[str], list[list[Any]]]


def _flat(p: PrecReal) -> list[str]:
    return list(real_parts(p))


def _log2_parts(v: Log2Value | None) -> list[str]:
    if v is None:
        return ["-inf", "0"]
    mid, err = v.decimal()
    return [fmt_decimal(mid), fmt_decimal(err)]


def _diagnostics_doc(diag: SeriesDiagnostics, with_delta: bool = True) -> tuple[dict, Table]:
    terms, rows = [], []
    for rec, s in zip(diag.terms, diag.partial_sums):
        item: dict[str, Any] = {"j": rec.j}
        row: list[Any] = [rec.j]
        if with_delta:
            item["delta"] = angle_json(rec.delta)
            row += _flat(rec.delta.value)
        item["log2_w"] = real_json(rec.log2_w)
        item["term"] = real_json(rec.term)
        item["partial_sum"] = real_json(s)
        row += _flat(rec.log2_w) + _flat(rec.term) + _flat(s)
        if rec.identity_ok is not None:
            item["identity_ok"] = rec.identity_ok
            row.append(rec.identity_ok)
        terms.append(item)
        rows.append(row)
    header = ["j"] + (["delta", "delta_err"] if with_delta else [])
    header += ["log2_w", "log2_w_err", "term", "term_err", "partial_sum", "partial_sum_err"]
    if with_delta:
        header.append("identity_ok")
    fit = None if diag.fit is None else dataclasses.asdict(diag.fit)
    doc = {
        "verdict": diag.verdict.value,
        "heuristic": diag.heuristic,
        "horizon": diag.horizon,
        "fit": fit,
        "total": real_json(diag.total),
        "terms": terms,
    }
    return doc, (header, rows)


def _extra_json(extra: dict) -> dict:
    out = {}
    for k, v in extra.items():
        if isinstance(v, PrecReal):
            out[k] = real_json(v)
        elif dataclasses.is_dataclass(v):
            out[k] = dataclasses.asdict(v)
        elif isinstance(v, tuple):
            out[k] = list(v)
        else:
            out[k] = v
    return out


def _equivalence_doc(rep: EquivalenceReport) -> tuple[dict, Table]:
    blocks, rows = [], []
    for rec, inc, s in zip(rep.blocks, rep.cauchy_increments, rep.partial_sums):
        aw, maj, g = _log2_parts(rec.aw_log2), _log2_parts(rec.majorant_log2), _log2_parts(rec.g_log2)
        item = {
            "j": rec.j,
            "aw_term_log2": {"value": aw[0], "err": aw[1]},
            "increment": real_json(inc),
            "partial_sum": real_json(s),
            "below_floor": rec.below_floor(),
        }
        if rec.majorant_log2 is not None or rec.g_log2 is not None:
            item["majorant_term_log2"] = {"value": maj[0], "err": maj[1]}
            item["g_term_log2"] = {"value": g[0], "err": g[1]}
        if rec.dominated is not None:
            item["dominated"] = rec.dominated
        blocks.append(item)
        no_g = rec.majorant_log2 is None and rec.g_log2 is None
        rows.append([rec.j, *aw, *(["", ""] if no_g else maj), *(["", ""] if no_g else g)])
    doc = {
        "verdict": rep.verdict.value,
        "heuristic": True,
        "horizon": rep.horizon,
        "fit_alpha": rep.fit_alpha,
        "total": real_json(rep.total),
        "bound_constant": None if rep.bound_constant is None else real_json(rep.bound_constant),
        "blocks": blocks,
    }
    doc.update(_extra_json(rep.extra))
    header = [
        "j",
        "aw_term_log2",
        "aw_term_log2_err",
        "majorant_term_log2",
        "majorant_term_log2_err",
        "g_term_log2",
        "g_term_log2_err",
    ]
    return doc, (header, rows)


def _mass_json(v) -> Any:
    return frac_str(v) if isinstance(v, Fraction) else real_json(v)


def _mass_cells(v) -> list[str]:
    return [frac_str(v), "0"] if isinstance(v, Fraction) else _flat(v)


# -- subcommands --------------------------------------------------------------------


def cmd_tset_diagnose(args, cfg: RunConfig):
    diag = tset_diagnose(
        _param(args.x),
        _t_arg(args.t),
        args.J,
        cfg.diagnose_policy(),
        cfg.target_err,
        workers=cfg.workers,
        ceiling=cfg.precision_ceiling,
    )
    doc, table = _diagnostics_doc(diag)
    doc["identity_ok"] = diag.extra["identity_ok"]
    doc["window"] = list(diag.extra["window"])
    doc["w_min"], doc["w_max"] = diag.extra["w_min"], diag.extra["w_max"]
    return doc, table


def cmd_construct_t(args, cfg: RunConfig):
    x = _param(args.x)
    trace = construct_t(x, args.J, min(cfg.target_err, 1e-30), ceiling=cfg.precision_ceiling)
    rows, a_items = [], []
    for j, a in enumerate(trace.a, start=1):
        item = {"j": j, "a": real_json(a)}
        row = [j, *_flat(a)]
        if j < trace.horizon:
            d = delta(x, trace.t_source, j, cfg.target_err, ceiling=cfg.precision_ceiling)
            item["delta"] = angle_json(d)
            row += _flat(d.value)
        else:
            row += ["", ""]
        a_items.append(item)
        rows.append(row)
    doc = {
        "t": real_json(trace.t),
        "horizon": trace.horizon,
        "bound_threshold": trace.bound_threshold,
        "boundary_flags": trace.boundary_flags,
        "a_range": list(trace.a_range()),
        "x": param_to_json(x),
        "a": a_items,
    }
    return doc, (["j", "a", "a_err", "delta", "delta_err"], rows)


def cmd_perturb(args, cfg: RunConfig):
    y = _param(args.y)
    t = _t_arg(args.t)
    eps = _rational_arg(args.eps)
    pert = perturb_for_divergence(y, t, eps, args.J, cfg.target_err, ceiling=cfg.precision_ceiling)
    diag = tset_diagnose(
        pert.x, t, args.J, cfg.diagnose_policy(), cfg.target_err, workers=cfg.workers, ceiling=cfg.precision_ceiling
    )
    harmonic = sum(Fraction(1, j) for j in range(pert.j0 + 1, args.J + 1)) / 4
    x_doc = param_to_json(pert.x)
    if args.x_out:
        _write(args.x_out, dump_json(x_doc))
    checks, rows = [], []
    for j, d in pert.checks.items():
        checks.append({"j": j, "a": pert.a[j], "delta": angle_json(d)})
        rows.append([j, pert.a[j], *_flat(d.value)])
    diag_doc, _ = _diagnostics_doc(diag)
    diag_doc.pop("terms")
    doc = {
        "j0": pert.j0,
        "verified": pert.verified,
        "ties": pert.ties,
        "sup_bound": real_json(pert.sup_bound),
        "harmonic_quarter": real_json(PrecReal.from_fraction(harmonic)),
        "x": x_doc,
        "checks": checks,
        "diagnosis": diag_doc,
    }
    return doc, (["j", "a", "delta", "delta_err"], rows)


def cmd_aw_equiv(args, cfg: RunConfig):
    rep = aw_partial_sum(_param(args.x), _param(args.x_prime), args.J, policy=cfg.equivalence_policy(), workers=cfg.workers)
    return _equivalence_doc(rep)


def cmd_g_norm(args, cfg: RunConfig):
    a = _gvector(args.a)
    value = g_norm_sq(a, args.J)
    exact = g_norm_sq_exact(a, args.J)
    doc = {"g_norm_sq": real_json(value), "exact": None if exact is None else frac_str(exact), "a": gvector_to_json(a)}
    return doc, (["J", "g_norm_sq", "g_norm_sq_err"], [[args.J, *_flat(value)]])


def cmd_orbit_bound(args, cfg: RunConfig):
    rep = orbit_bound_check(_param(args.x), _gvector(args.a), args.J, policy=cfg.equivalence_policy(), workers=cfg.workers)
    return _equivalence_doc(rep)


def _points_json(points: list[ParamSequence]) -> list[dict]:
    return [{"i": i, **param_to_json(p)} for i, p in enumerate(points)]


def cmd_chain(args, cfg: RunConfig):
    x = _param(args.x)
    g = _gvector(args.g)
    ball = SupBall(_param(args.center), _rational_arg(args.radius_u))
    w = chain_witness(x, g, ball, _rational_arg(args.radius_v))
    norm_exact = g_norm_sq_exact(g)
    step_exact = g_norm_sq_exact(w.step)
    doc = {
        "n": w.n,
        "verified": w.verified,
        "checks": w.checks,
        "g": gvector_to_json(g),
        "step": gvector_to_json(w.step),
        "g_norm_sq": frac_str(norm_exact) if norm_exact is not None else real_json(g_norm_sq(g, max(g.max_index, 1))),
        "step_norm_sq": frac_str(step_exact)
        if step_exact is not None
        else real_json(g_norm_sq(w.step, max(w.step.max_index, 1))),
        "ball_U": {"center": param_to_json(ball.center), "radius": frac_str(ball.radius)},
        "radius_V": frac_str(w.radius_V),
        "points": _points_json(w.points),
    }
    rows = []
    for i, p in enumerate(w.points):
        for j, v in p.entries:
            rows.append([i, j, frac_str(v) if isinstance(v, Fraction) else real_parts(v.value())[0]])
    return doc, (["i", "j", "value"], rows)


def cmd_dense_approx(args, cfg: RunConfig):
    x, y = _param(args.x), _param(args.y)
    eps = _rational_arg(args.eps)
    g = dense_approximant(x, y, eps)
    exact = x.is_rational and y.is_rational
    doc = {"g": gvector_to_json(g), "exact_difference": exact, "distance": "0" if exact else f"< {frac_str(eps)}"}
    rows = [[e.j, frac_str(e.exact_value())] for e in g.entries]
    return doc, (["j", "g"], rows)


def _measure(args) -> ProductMeasure:
    if args.z:
        doc = _read_doc(args.z)
        if not isinstance(doc, list):
            raise UsageError("z must be a JSON array of rationals")
        try:
            return ProductMeasure.of(parse_rational(str(v)) for v in doc)
        except (ValueError, ArithmeticError) as exc:
            raise UsageError(f"malformed z: {exc}") from exc
    n = args.n_max or len(args.word)
    return eigenvalues_to_measure(_param(args.x), n)


def cmd_odometer(args, cfg: RunConfig):
    mu = _measure(args)
    try:
        w = BitWord.parse(args.word)
    except ValueError as exc:
        raise UsageError(f"bad word {args.word!r}") from exc
    records = orbit(mu, w, args.steps)
    if len(records) <= args.steps and not args.allow_overflow:
        raise OverflowOnOrbit(f"orbit of {w} wraps within {args.steps} steps")
    base = cylinder_mass(mu, w)
    out, rows = [], []
    for rec in records:
        ratio = cylinder_mass(mu, rec["word"]) / base
        matches = ratio == rec["cocycle"] if isinstance(ratio, Fraction) else None
        out.append({"step": rec["step"], "word": rec["word"], "cocycle": _mass_json(rec["cocycle"]), "mass_ratio_matches": matches})
        rows.append([rec["step"], rec["word"], *_mass_cells(rec["cocycle"])])
    doc = {"word": str(w), "steps": len(records) - 1, "truncated_at_wrap": len(records) <= args.steps, "orbit": out, "assumptions": list(ASSUMPTIONS)}
    return doc, (["step", "word", "cocycle", "cocycle_err"], rows)


def cmd_type_iii(args, cfg: RunConfig):
    diag = type_iii_evidence(_param(args.x), args.J)
    doc, table = _diagnostics_doc(diag, with_delta=False)
    doc.update(_extra_json(diag.extra))
    return doc, table


def cmd_export_measure(args, cfg: RunConfig):
    x = _param(args.x)
    mu = eigenvalues_to_measure(x, args.n_max, cap=args.cap)
    items, rows = [], []
    for n, v in enumerate(mu.z, start=1):
        j = block_of(n)
        items.append({"n": n, "block": j, "value": _mass_json(v)})
        rows.append([n, j, *_mass_cells(v)])
    blocks = [{"j": b.j, "lambda": real_json(b.lam), "log2_multiplicity": b.log2_multiplicity} for b in eigenvalue_blocks(x, block_of(args.n_max))]
    doc = {"n_max": args.n_max, "z": items, "blocks": blocks, "assumptions": list(ASSUMPTIONS)}
    return doc, (["n", "block", "value", "err"], rows)


# -- parser -------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    s = argparse.SUPPRESS
    p.add_argument("--precision-ceiling", dest="precision_ceiling", type=int, default=s, help="largest working precision in bits")
    p.add_argument("--target-err", dest="target_err", type=float, default=s, help="error bound requested for each angle")
    p.add_argument("--workers", type=_positive_int, default=s, help="threads for per-term work; output does not depend on it")
    p.add_argument("--format", choices=("json", "csv"), default=s)
    p.add_argument("--out", default=s, help="output path (stdout if omitted)")
    p.add_argument("--config", default=s, help="JSON RunConfig; flags override it")
    return p


def _x_arg(p, name="--x", default="zero"):
    p.add_argument(name, default=default, help="'zero', a JSON file or inline JSON")


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="itpfi-lab", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("tset-diagnose", parents=[common], help="T-set partial sums and a heuristic verdict")
    _x_arg(p)
    p.add_argument("--t", required=True)
    p.add_argument("--J", type=_positive_int, required=True)
    p.set_defaults(func=cmd_tset_diagnose)

    p = sub.add_parser("construct-t", parents=[common], help="build a nonzero element of the T-set")
    _x_arg(p)
    p.add_argument("--J", type=_positive_int, required=True)
    p.set_defaults(func=cmd_construct_t)

    p = sub.add_parser("perturb", parents=[common], help="perturb y so that the T-set series diverges at t")
    _x_arg(p, "--y")
    p.add_argument("--t", required=True)
    p.add_argument("--eps", required=True)
    p.add_argument("--J", type=_positive_int, required=True)
    p.add_argument("--x-out", dest="x_out", default=None, help="also write the perturbed x here")
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("aw-equiv", parents=[common], help="Araki-Woods partial sums between two factors")
    _x_arg(p)
    _x_arg(p, "--x-prime")
    p.add_argument("--J", type=_positive_int, required=True)
    p.set_defaults(func=cmd_aw_equiv)

    p = sub.add_parser("g-norm", parents=[common], help="weighted norm squared of a G-vector")
    p.add_argument("--a", required=True)
    p.add_argument("--J", type=_positive_int, required=True)
    p.set_defaults(func=cmd_g_norm)

    p = sub.add_parser("orbit-bound", parents=[common], help="AW sum between x and x + a against its majorant")
    _x_arg(p)
    p.add_argument("--a", required=True)
    p.add_argument("--J", type=_positive_int, required=True)
    p.set_defaults(func=cmd_orbit_bound)

    p = sub.add_parser("chain", parents=[common], help="chain witness x, x + g/n, ..., x + g")
    _x_arg(p)
    p.add_argument("--g", required=True)
    _x_arg(p, "--center")
    p.add_argument("--radius-u", dest="radius_u", required=True)
    p.add_argument("--radius-v", dest="radius_v", required=True)
    p.set_defaults(func=cmd_chain)

    p = sub.add_parser("dense-approx", parents=[common], help="finite-support g with x + g close to y")
    _x_arg(p)
    _x_arg(p, "--y")
    p.add_argument("--eps", required=True)
    p.set_defaults(func=cmd_dense_approx)

    p = sub.add_parser("odometer", parents=[common], help="odometer orbit with Radon-Nikodym cocycle")
    _x_arg(p)
    p.add_argument("--z", default=None, help="JSON array of rationals; overrides --x")
    p.add_argument("--n-max", dest="n_max", type=_positive_int, default=None)
    p.add_argument("--word", required=True, help="bits, coordinate 1 first")
    p.add_argument("--steps", type=int, default=1)
    p.add_argument("--allow-overflow", dest="allow_overflow", action="store_true", help="stop at the wrap instead of failing")
    p.set_defaults(func=cmd_odometer)

    p = sub.add_parser("type-iii", parents=[common], help="weights N_j exp(-l_j) and the type III evidence")
    _x_arg(p)
    p.add_argument("--J", type=_positive_int, required=True)
    p.set_defaults(func=cmd_type_iii)

    p = sub.add_parser("export-measure", parents=[common], help="product measure z_x on the first n_max coordinates")
    _x_arg(p)
    p.add_argument("--n-max", dest="n_max", type=_positive_int, required=True)
    p.add_argument("--cap", type=_positive_int, default=1 << 20)
    p.set_defaults(func=cmd_export_measure)
    return parser


def _write(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _render(command: str, doc: dict, table: Table, cfg: RunConfig, args) -> str:
    if cfg.format == "csv":
        return rows_to_csv(*table)
    inputs = {
        k: v
        for k, v in sorted(vars(args).items())
        if k not in {"func", "command", "workers", "out", "format", "config", "precision_ceiling", "target_err", "x_out"}
    }
    return dump_json({"command": command, "inputs": inputs, "config": cfg.public(), "result": doc})


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(getattr(args, "config", None), args)
        doc, table = args.func(args, cfg)
        text = _render(args.command, doc, table, cfg, args)
    except UsageError as exc:
        print(f"itpfi-lab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PreconditionError, OverflowOnOrbit) as exc:
        print(f"itpfi-lab: precondition violated: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except PrecisionExhausted as exc:
        print(f"itpfi-lab: precision exhausted: {exc}", file=sys.stderr)
        return EXIT_PRECISION
    if cfg.out:
        _write(cfg.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
