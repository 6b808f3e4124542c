"""Command-line front end: read a TOML spec, run one check, emit a report.

Exit codes: 0 every verdict passed, 1 some verdict failed, 2 error.

JSON report fields, in order: tool, version, command, spec, samples, seed,
tol, status, verdicts (name, outcome, branch, residuals {name: {max, mean}},
details), data.  Errors replace status/verdicts/data with an ``error`` object.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from . import expr as ex
from .carroll import (
    CarrollStructure,
    EhresmannForm,
    boost_to_principal,
    minimal_torsion,
    torsion_trace,
)
from .classify import (
    check_carrollian_torsion_identity,
    check_lemma_26,
    check_minimal,
    classify_pcs,
    classify_scm,
    verify_vorticity_free_killing,
)
from .connection import AffineConnection, build_pcs_connection, build_scm_connection, covariant_derivative, symmetrize_last
from .expr import ParseError
from .geometry import Chart, build_frame, duality_matrix
from .policy import CarrollError, Residual, Verdict, evaluate_components, residual
from .surface import (
    SurfaceEmbedding,
    b_tensor,
    check_curved_case,
    check_flat_case,
    induced_metric,
    pullback_alpha,
    slice_geometry,
    surface_points,
    verify_homothety,
)

TOOL = "carroll-forge"
PRECISION = 12


class SpecError(Exception):
    pass


# ----------------------------------------------------------------------
# spec files
# ----------------------------------------------------------------------


def resolve_spec_path(path: str) -> Path:
    """A path on disk, or the name of a bundled gallery spec ('flat', 'examples/flat.toml')."""
    p = Path(path)
    if p.exists():
        return p
    bundled = resources.files("carroll_forge") / "gallery" / (p.stem + ".toml")
    if bundled.is_file():
        return Path(str(bundled))
    raise SpecError(f"spec file not found: {path}")


class Spec:
    def __init__(self, data: dict, path: str):
        self.data = data
        self.path = path
        chart = data.get("chart", {})
        coords = tuple(chart.get("coords", ("u", "x", "y")))
        domain = chart.get("domain", ((0.0, 2.0), (-1.0, 1.0), (-1.0, 1.0)))
        try:
            self.chart = Chart(coords, tuple((float(lo), float(hi)) for lo, hi in domain))
        except (TypeError, ValueError) as err:
            raise SpecError(f"chart: {err}") from None
        cf = self.block("coframe")
        self.carroll = CarrollStructure(
            self.chart, self.expr("coframe.m11", cf.get("m11", "1")), self.expr("coframe.m21", cf.get("m21", "0")),
            self.expr("coframe.m22", cf.get("m22", "1")),
        )
        eh = self.block("ehresmann")
        role = eh.get("role", "generic")
        try:
            self.ehresmann = EhresmannForm(self.expr("ehresmann.w1", eh.get("w1", "0")), self.expr("ehresmann.w2", eh.get("w2", "0")), role)
        except ValueError as err:
            raise SpecError(f"ehresmann.role: {err}") from None
        run = data.get("run", {})
        self.samples = int(run.get("samples", 64))
        self.tol = float(run.get("tol", 1e-9))
        self.seed = int(run.get("seed", 0))

    @classmethod
    def load(cls, path: str) -> "Spec":
        p = resolve_spec_path(path)
        try:
            with open(p, "rb") as fh:
                data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as err:
            raise SpecError(f"{path}: {err}") from None
        return cls(data, path)

    def block(self, name: str) -> dict:
        if name not in self.data:
            raise SpecError(f"missing [{name}] block")
        return self.data[name]

    def expr(self, where: str, text) -> ex.Expr:
        if isinstance(text, (int, float)):
            return ex.const(float(text))
        try:
            return ex.parse(str(text), self.chart.coords)
        except ParseError as err:
            raise SpecError(f"{where}: {err}") from None

    def spatial_expr(self, where: str, text) -> ex.Expr:
        e = self.expr(where, text)
        if self.chart.fibre in e.free_vars():
            raise SpecError(f"{where}: surface data may not depend on {self.chart.fibre}")
        return e

    def connection(self) -> Optional[AffineConnection]:
        block = self.data.get("connection")
        if block is None:
            return None
        mapping = {k: self.expr(f"connection.{k}", v) for k, v in _flatten(block).items()}
        try:
            return AffineConnection.from_mapping(mapping, self.chart.coords)
        except ValueError as err:
            raise SpecError(f"connection: {err}") from None

    def pair(self, where: str, values) -> list[ex.Expr]:
        if isinstance(values, str):
            values = split_pair(values)
        if len(values) != 2:
            raise SpecError(f"{where}: expected two components")
        return [self.spatial_expr(f"{where}[{i}]", v) for i, v in enumerate(values)]


def _flatten(block: dict, prefix: str = "") -> dict:
    """TOML turns Gamma.u.x.y keys into nested tables; flatten them back."""
    out = {}
    for k, v in block.items():
        key = f"{prefix}.{k}" if prefix else k
        if isinstance(v, dict):
            out.update(_flatten(v, key))
        else:
            out[key] = v
    return out


def split_pair(text: str) -> list[str]:
    """Split 'a,b' at top-level commas, ignoring commas inside parentheses."""
    parts, depth, cur = [], 0, []
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    parts.append("".join(cur))
    return [p.strip().strip('"').strip("'") for p in parts]


# ----------------------------------------------------------------------
# report helpers
# ----------------------------------------------------------------------


def _num(x):
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if not math.isfinite(x):
            return str(x)
        return float(f"{x:.{PRECISION}g}")
    if isinstance(x, dict):
        return {k: _num(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_num(v) for v in x]
    return x


def verdict_json(v: Verdict) -> dict:
    return {
        "name": v.name,
        "outcome": bool(v.outcome),
        "branch": v.branch,
        "residuals": {k: {"max": _num(r.max), "mean": _num(r.mean)} for k, r in v.residuals.items()},
        "details": _num(v.details),
    }


def _strings(arr: np.ndarray, labels) -> dict:
    out = {}
    for idx in np.ndindex(arr.shape):
        e = arr[idx]
        if e is ex.ZERO:
            continue
        out[".".join(labels[i] for i in idx)] = ex.to_string(e)
    return out


def _means(arr: np.ndarray, points) -> list[float]:
    v = evaluate_components([np.asarray(arr, dtype=object)], points)[0]
    return [float(x) for x in v.mean(axis=1)]


# ----------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------


def _principal(spec: Spec, points) -> tuple[EhresmannForm, bool]:
    """The form used as nu: a form tagged principal must be u-independent; others are boosted."""
    ehr = spec.ehresmann
    if ehr.role == "principal":
        ehr.require_principal(spec.chart, points)
        return ehr, False
    return boost_to_principal(ehr, spec.chart), True


def cmd_validate(spec: Spec, args, points):
    c, ehr = spec.carroll, spec.ehresmann
    frame = build_frame(c, ehr, points)
    eye = np.empty((3, 3), dtype=object)
    for i, j in np.ndindex(3, 3):
        eye[i, j] = ex.ONE if i == j else ex.ZERO
    dual = residual([duality_matrix(frame), np.vectorize(ex.neg, otypes=[object])(eye)], points)
    g = c.metric().components
    recon = np.empty((3, 3), dtype=object)
    for a, b in np.ndindex(3, 3):
        recon[a, b] = ex.neg(ex.esum(frame.coframe[I, a] * frame.coframe[I, b] for I in (1, 2)))
    rec = residual([g, recon], points)
    residuals = {"duality": dual, "metric_reconstruction": rec, "ell_null": residual([g[0]], points)}
    details = {"positivity_min": float(c.positivity(points).min()), "role": ehr.role}
    if ehr.role == "principal":
        r = ehr.principal_residual(spec.chart, points)
        residuals["lie_ell_omega"] = Residual.from_points(r)
    ok = all(r.ok(spec_tol(args, spec)) for r in residuals.values())
    return [Verdict("structure", ok, "none", residuals, details)], {}


def cmd_frame(spec: Spec, args, points):
    verdicts, _ = cmd_validate(spec, args, points)
    frame = build_frame(spec.carroll, spec.ehresmann, points)
    labels = ("1", "2", "3")
    coord = spec.chart.coords
    data = {
        "coframe": _matrix_strings(frame.coframe, labels, coord),
        "vectors": _matrix_strings(frame.vectors, labels, coord),
        "structure": _strings(frame.structure, labels),
    }
    return verdicts, data


def _matrix_strings(m: np.ndarray, rows, cols) -> dict:
    return {rows[i]: {cols[j]: ex.to_string(m[i, j]) for j in range(m.shape[1])} for i in range(m.shape[0])}


def cmd_torsion(spec: Spec, args, points):
    c, ehr = spec.carroll, spec.ehresmann
    frame = build_frame(c, ehr, points)
    t = minimal_torsion(c, ehr, frame)
    tol = spec_tol(args, spec)
    v = check_minimal(c, ehr, t, points, tol)
    trace = torsion_trace(t, c, ehr, points)
    data = {
        "frame_components": _strings(t.frame_field.components, ("1", "2", "3")),
        "trace_branch": trace.branch,
        "V_mean": _means(trace.V.components, points),
        "V_on_ell_mean": float(trace.values.mean()),
    }
    verdicts = [v]
    if trace.gamma is not None:
        w = ehr.covector().components
        diff = residual([trace.gamma.components, np.vectorize(ex.neg, otypes=[object])(w)], points)
        data["gamma_mean"] = _means(trace.gamma.components, points)
        verdicts.append(Verdict("gamma_identity", diff.ok(tol), "trace-nonzero", {"gamma_minus_omega": diff}))
    return verdicts, data


def cmd_boost(spec: Spec, args, points):
    nu = boost_to_principal(spec.ehresmann, spec.chart)
    r = Residual.from_points(nu.principal_residual(spec.chart, points))
    data = {"u0": spec.chart.midpoint(0), "nu": {"w1": ex.to_string(nu.w1), "w2": ex.to_string(nu.w2)}}
    return [Verdict("boost", r.ok(spec_tol(args, spec)), "none", {"lie_ell_nu": r})], data


def _build(spec: Spec, kind: str, points):
    c = spec.carroll
    if kind == "scm":
        nu, boosted = _principal(spec, points)
        return build_scm_connection(c, nu, points), nu, boosted
    return build_pcs_connection(c, spec.ehresmann, points), spec.ehresmann, False


def cmd_build(spec: Spec, args, points):
    conn, form, boosted = _build(spec, args.kind, points)
    tol = spec_tol(args, spec)
    v = Verdict(f"build_{args.kind}", all(r.ok(tol) for r in conn.postconditions.values()), "none", dict(conn.postconditions))
    coords = spec.chart.coords
    data = {
        "boosted": boosted,
        "coefficients": {f"Gamma.{k}": s for k, s in _strings(conn.coefficients, coords).items()},
    }
    lemma = check_carrollian_torsion_identity(spec.carroll, conn, points, tol)
    return [v, lemma], data


def _connection_for(spec: Spec, kind: str, points):
    supplied = spec.connection()
    if supplied is not None:
        if kind == "scm":
            nu, boosted = _principal(spec, points)
            return supplied, nu, boosted, "user-supplied"
        return supplied, spec.ehresmann, False, "user-supplied"
    conn, form, boosted = _build(spec, kind, points)
    return conn, form, boosted, conn.provenance


def cmd_classify(spec: Spec, args, points):
    conn, form, boosted, prov = _connection_for(spec, args.kind, points)
    tol = spec_tol(args, spec)
    if args.kind == "scm":
        v = classify_scm(spec.carroll, form, conn, points, tol)
    else:
        v = classify_pcs(spec.carroll, form, conn, points, tol)
    return [v], {"connection": prov, "boosted": boosted}


def cmd_lemma26(spec: Spec, args, points):
    conn, form, boosted, prov = _connection_for(spec, args.build, points)
    block = spec.data.get("lemma26", {}).get("N")
    coords = spec.chart.coords
    if block is not None:
        N = np.empty((3, 3), dtype=object)
        N.fill(ex.ZERO)
        pos = {n: i for i, n in enumerate(coords)}
        for key, val in _flatten(block).items():
            a, _, b = key.partition(".")
            if a not in pos or b not in pos:
                raise SpecError(f"lemma26.N: bad key {key!r}")
            N[pos[a], pos[b]] = spec.expr(f"lemma26.N.{key}", val)
        source = "spec"
    else:
        nabla = covariant_derivative(conn, form.covector()).components
        N = symmetrize_last(nabla)
        source = "connection"
    v = check_lemma_26(spec.carroll, form, conn, N, points, spec_tol(args, spec))
    return [v], {"connection": prov, "N_source": source}


def cmd_killing(spec: Spec, args, points):
    if args.xi is not None:
        xi = spec.pair("--xi", args.xi)
    else:
        xi = spec.pair("killing.xi", spec.block("killing").get("xi", []))
    geo = slice_geometry(spec.carroll, points=surface_points(spec.carroll, spec_samples(args, spec), spec_seed(args, spec)))
    v = verify_vorticity_free_killing(geo, xi, spec_tol(args, spec))
    return [v], {"u0": spec.chart.midpoint(0)}


def cmd_surface(spec: Spec, args, points):
    block = spec.data.get("surface", {})
    c = spec.carroll
    h = spec.spatial_expr("surface.h", block.get("h", "0"))
    level = float(block.get("c", spec.chart.midpoint(0)))
    s = SurfaceEmbedding(h, level, c)
    pts = surface_points(c, spec_samples(args, spec), spec_seed(args, spec))
    geo = induced_metric(c, s, pts)
    tol = spec_tol(args, spec)
    if "alpha_pullback" in block:
        alpha = spec.pair("surface.alpha_pullback", block["alpha_pullback"])
    else:
        alpha = pullback_alpha(c, s, spec.ehresmann)
    data = {"level": level, "scalar_curvature_mean": _means(np.array([geo.scalar], dtype=object), pts)[0]}
    if args.kind == "flat":
        v = check_flat_case(geo, alpha, tol)
    elif args.kind == "curved":
        v = check_curved_case(geo, b_tensor(geo, alpha), tol)
    else:
        if args.theta is not None:
            theta = spec.pair("--theta", args.theta)
        elif "theta" in block:
            theta = spec.pair("surface.theta", block["theta"])
        else:
            raise SpecError("homothety needs --theta or surface.theta")
        v = verify_homothety(geo, theta, tol)
    return [v], data


def spec_tol(args, spec: Spec) -> float:
    return args.tol if args.tol is not None else spec.tol


def spec_samples(args, spec: Spec) -> int:
    return args.samples if args.samples is not None else spec.samples


def spec_seed(args, spec: Spec) -> int:
    return args.seed if args.seed is not None else spec.seed


# ----------------------------------------------------------------------
# argument parsing and dispatch
# ----------------------------------------------------------------------


def _common(p: argparse.ArgumentParser):
    p.add_argument("spec", help="TOML spec file or bundled gallery name")
    p.add_argument("--samples", type=int, help="number of sample points (default from spec, else 64)")
    p.add_argument("--tol", type=float, help="pass threshold on normalized residuals (default 1e-9)")
    p.add_argument("--seed", type=int, help="sampling seed (default 0)")
    p.add_argument("--json", action="store_true", help="print the JSON report to stdout")
    p.add_argument("--out", help="also write the JSON report to this path")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=TOOL, description="Construct and verify 3-d Carrollian connections.")
    parser.add_argument("--version", action="version", version=f"{TOOL} {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, help_text in (
        ("validate", cmd_validate, "check the structure axioms of a spec"),
        ("frame", cmd_frame, "adapted frame, coframe and structure functions"),
        ("torsion", cmd_torsion, "minimal torsion, its trace and gamma"),
        ("boost", cmd_boost, "boost the Ehresmann form to a principal one"),
    ):
        p = sub.add_parser(name, help=help_text)
        _common(p)
        p.set_defaults(func=fn)
    for name, fn, help_text in (
        ("build", cmd_build, "build the scm or pcs connection"),
        ("classify", cmd_classify, "run the scm or pcs characterization"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("kind", choices=("scm", "pcs"))
        _common(p)
        p.set_defaults(func=fn)
    p = sub.add_parser("lemma26", help="symmetric covariant derivative criterion")
    _common(p)
    p.add_argument("--build", choices=("scm", "pcs"), default="pcs", help="connection to build when none is supplied")
    p.set_defaults(func=cmd_lemma26)
    p = sub.add_parser("killing", help="vorticity-free Killing field on the middle slice")
    _common(p)
    p.add_argument("--xi", help='candidate components "a,b"')
    p.set_defaults(func=cmd_killing)
    p = sub.add_parser("surface", help="checks on a horizontal graph surface")
    p.add_argument("kind", choices=("flat", "curved", "homothety"))
    _common(p)
    p.add_argument("--theta", help='candidate 1-form components "a,b" for homothety')
    p.set_defaults(func=cmd_surface)
    return parser


def _command_name(args) -> str:
    kind = getattr(args, "kind", None)
    return f"{args.command} {kind}" if kind else args.command


def run_command(argv=None) -> tuple[int, dict]:
    code, report, _ = _run(argv)
    return code, report


def _run(argv):
    args = make_parser().parse_args(argv)
    report = {
        "tool": TOOL,
        "version": __version__,
        "command": _command_name(args),
        "spec": args.spec,
        "samples": None,
        "seed": None,
        "tol": None,
    }
    try:
        spec = Spec.load(args.spec)
        n, seed = spec_samples(args, spec), spec_seed(args, spec)
        if n < 1:
            raise SpecError("samples must be positive")
        report.update(samples=n, seed=seed, tol=spec_tol(args, spec))
        points = spec.chart.sample(n, seed)
        verdicts, data = args.func(spec, args, points)
    except (SpecError, CarrollError, ex.ExprError, ValueError) as err:
        report["status"] = "error"
        report["error"] = {"type": type(err).__name__, "message": str(err)}
        return 2, report, args
    ok = all(v.outcome for v in verdicts)
    report["status"] = "pass" if ok else "fail"
    report["verdicts"] = [verdict_json(v) for v in verdicts]
    report["data"] = _num(data)
    return (0 if ok else 1), report, args


def human_summary(report: dict) -> str:
    lines = [f"{report['tool']} {report['command']} {report['spec']}"]
    if report.get("status") == "error":
        lines.append(f"error ({report['error']['type']}): {report['error']['message']}")
        return "\n".join(lines)
    lines.append(f"samples={report['samples']} seed={report['seed']} tol={report['tol']:g}")
    for v in report["verdicts"]:
        mark = "PASS" if v["outcome"] else "FAIL"
        lines.append(f"{mark} {v['name']} [{v['branch']}]")
        for name, r in v["residuals"].items():
            lines.append(f"    {name:32s} max={r['max']:.3e} mean={r['mean']:.3e}")
        for key, val in v["details"].items():
            if key == "X":
                continue
            lines.append(f"    {key}: {val}")
    for key, val in report.get("data", {}).items():
        lines.append(f"{key}: {json.dumps(val)}")
    lines.append(f"status: {report['status']}")
    return "\n".join(lines)


def main(argv=None) -> int:
    code, report, args = _run(argv)
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text if args.json else human_summary(report))
    return code


if __name__ == "__main__":
    sys.exit(main())
