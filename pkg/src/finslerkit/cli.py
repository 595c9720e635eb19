"""Config-driven verification runner.

Commands: tensors, identities, divergence (--theorem rund|finsler), energy.
The run configuration is a single TOML document; expressions are strings in
the package's expression language.  Reports are canonical JSON (sorted keys,
17-significant-digit floats) plus a plain-text summary on stdout and, for
convergence runs, a CSV table next to the JSON.

Exit codes: 0 all checks pass, 1 a numeric check failed, 2 config/parse
error, 3 an applicability gate refused (override with --force where
supported).
"""

from __future__ import annotations

import argparse
import sys
import time

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import catalog, expr
from .catalog import build_lagrangian, detect_signature, homogeneity_residual
from .connections import (
    FiberVectorField,
    SectionField,
    connection_difference_residual,
    divergence_oap,
    lemma_chain_residual,
)
from .conservation import SliceSpec, hud_residual, two_slice_drift
from .errors import (
    ConfigError,
    DegenerateMetricError,
    EvalError,
    FinslerError,
    GateRefusedError,
    InadmissiblePointError,
    NewtonConvergenceError,
    ParseError,
)
from .integration import BoxDomain, verify_divergence_finsler, verify_divergence_rund
from .reports import VerificationReport, canonical_json, convergence_csv, text_summary
from .sampling import sample_fiber_points
from .tensors import FiberContext, normalized_max, trace_identity_residual

_SCHEMA = {
    "lagrangian": {"id", "dim", "params"},
    "section": {"components"},
    "field": {"components", "potential"},
    "scalar": {"potential"},
    "points": {"count", "seed", "x_lower", "x_upper", "x", "y"},
    "domain": {"lower", "upper", "orders"},
    "seeds": None,  # free-form face keys
    "slices": {"axis", "level0", "level1", "lower", "upper", "orders", "seed"},
    "checks": {"select"},
    "tolerances": {"identity", "divergence", "drift", "gate"},
}

_IDENTITY_CHECKS = ("homogeneity", "trace_identity", "dos", "lemma", "oap", "hud")


def _check_keys(config: dict):
    for key, sub in config.items():
        if key not in _SCHEMA:
            raise ConfigError(f"unknown config section {key!r}")
        allowed = _SCHEMA[key]
        if allowed is None:
            continue
        if not isinstance(sub, dict):
            raise ConfigError(f"config section {key!r} must be a table")
        for k in sub:
            if k not in allowed:
                raise ConfigError(f"unknown key {key}.{k!r}")


def load_config(path: str) -> dict:
    try:
        with open(path, "rb") as fh:
            config = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config {path!r}: {exc}") from exc
    _check_keys(config)
    if "lagrangian" not in config:
        raise ConfigError("config requires a [lagrangian] section")
    return config


def _build_spec(config: dict):
    lag = config["lagrangian"]
    if "id" not in lag or "dim" not in lag:
        raise ConfigError("[lagrangian] requires id and dim")
    try:
        return build_lagrangian(str(lag["id"]), int(lag["dim"]), lag.get("params", {}))
    except (ValueError, ParseError) as exc:
        raise ConfigError(f"[lagrangian]: {exc}") from exc


def _build_section(config: dict, dim: int) -> SectionField:
    if "section" not in config:
        raise ConfigError("this command requires a [section] table")
    comps = config["section"].get("components")
    if not comps or len(comps) != dim:
        raise ConfigError(f"[section].components must list {dim} expressions")
    try:
        return SectionField.from_exprs(comps, dim)
    except (ParseError, ValueError) as exc:
        raise ConfigError(f"[section]: {exc}") from exc


def _build_field(config: dict, dim: int) -> FiberVectorField:
    if "field" not in config:
        raise ConfigError("this command requires a [field] table")
    fld = config["field"]
    if ("components" in fld) == ("potential" in fld):
        raise ConfigError("[field] requires exactly one of components / potential")
    try:
        if "components" in fld:
            comps = fld["components"]
            if len(comps) != dim:
                raise ConfigError(f"[field].components must list {dim} expressions")
            return FiberVectorField.from_exprs(comps, dim)
        return FiberVectorField.from_potential(fld["potential"], dim)
    except (ParseError, ValueError) as exc:
        raise ConfigError(f"[field]: {exc}") from exc


def _sample_points(config: dict, spec) -> tuple:
    pts = config.get("points", {})
    if "x" in pts or "y" in pts:
        if not ("x" in pts and "y" in pts):
            raise ConfigError("[points] explicit mode requires both x and y")
        x = np.asarray(pts["x"], float)
        y = np.asarray(pts["y"], float)
        if x.ndim != 2 or x.shape != y.shape or x.shape[1] != spec.dim:
            raise ConfigError(f"[points].x/y must be lists of {spec.dim}-vectors")
        return x, y
    count = int(pts.get("count", 20))
    seed = int(pts.get("seed", 20240817))
    rng = np.random.default_rng(seed)
    return sample_fiber_points(
        spec, rng, count, pts.get("x_lower"), pts.get("x_upper")
    )


def _box(config: dict, spec, orders_override=None) -> BoxDomain:
    if "domain" not in config:
        raise ConfigError("this command requires a [domain] table")
    dom = config["domain"]
    for key in ("lower", "upper"):
        if key not in dom:
            raise ConfigError(f"[domain] requires {key}")
    orders = orders_override if orders_override is not None else dom.get("orders", 8)
    try:
        box = BoxDomain(dom["lower"], dom["upper"], orders)
    except ValueError as exc:
        raise ConfigError(f"[domain]: {exc}") from exc
    if box.dim != spec.dim:
        raise ConfigError(f"[domain] must be {spec.dim}-dimensional")
    return box


def _face_seeds(config: dict, spec) -> dict:
    seeds = {}
    for key, val in config.get("seeds", {}).items():
        arr = np.asarray(val, float)
        if arr.shape != (spec.dim,):
            raise ConfigError(f"[seeds].{key} must be a {spec.dim}-vector")
        seeds[key] = arr
    return seeds


def _tol(config: dict, name: str, default: float) -> float:
    return float(config.get("tolerances", {}).get(name, default))


def _emit(report: VerificationReport, args) -> None:
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(canonical_json(report))
        rows = report.payload.get("convergence")
        if rows:
            flat = [{k: v for k, v in r.items() if not isinstance(v, list)} for r in rows]
            with open(args.out + ".csv", "w") as fh:
                fh.write(convergence_csv(flat))
    if not args.quiet:
        sys.stdout.write(text_summary(report))


# -- commands -------------------------------------------------------------------


def cmd_tensors(args) -> int:
    config = load_config(args.config)
    spec = _build_spec(config)
    xs, ys = _sample_points(config, spec)
    gate_tol = _tol(config, "gate", 1e-8)
    t0 = time.time()

    ctx = FiberContext(spec, xs, y=ys, order=4)
    g = ctx.metric_values()
    ginv = ctx.ginv_values()
    C = ctx.cartan_values()
    Icon = ctx.mean_cartan_contract()
    Ild = ctx.mean_cartan_logdet()
    G = ctx.spray_values()
    N = ctx.nonlinear()
    B = ctx.berwald_values()
    gam = ctx.gamma_values()
    Lt = ctx.landsberg_values()
    J = ctx.j_values()

    euler = float(np.max(np.abs(homogeneity_residual(spec, xs, ys))))
    gates = {
        "euler_residual": euler,
        "metric_symmetry": normalized_max(g - np.swapaxes(g, -1, -2), g),
        "cartan_total_symmetry": max(
            normalized_max(C - np.einsum("...abc->...bac", C), C),
            normalized_max(C - np.einsum("...abc->...acb", C), C),
        ),
        "cartan_euler": normalized_max(np.einsum("...a,...abc->...bc", ys, C), C, g),
        "berwald_lower_symmetry": normalized_max(B - np.einsum("...amn->...anm", B), B),
        "chern_rund_lower_symmetry": normalized_max(gam - np.einsum("...amn->...anm", gam), gam),
        "berwald_regularity": normalized_max(
            np.einsum("...amn,...n->...am", B, ys) - N, N, B
        ),
        "mean_torsion_consistency": normalized_max(Icon - Ild, Icon, Ild),
    }
    if spec.expected_signature is not None:
        sig_ok = all(
            detect_signature(g[i]) == tuple(sorted(spec.expected_signature))
            for i in range(min(8, xs.shape[0]))
        )
        gates["signature_match"] = bool(sig_ok)

    failed = [
        k for k, v in gates.items()
        if (isinstance(v, bool) and not v) or (not isinstance(v, bool) and v > gate_tol)
    ]
    points_payload = []
    for i in range(xs.shape[0]):
        points_payload.append(
            {
                "x": xs[i].tolist(),
                "y": ys[i].tolist(),
                "metric": g[i].tolist(),
                "inverse_metric": ginv[i].tolist(),
                "cartan_torsion": C[i].tolist(),
                "mean_cartan_contract": Icon[i].tolist(),
                "mean_cartan_logdet": Ild[i].tolist(),
                "spray": G[i].tolist(),
                "nonlinear_connection": N[i].tolist(),
                "berwald": B[i].tolist(),
                "chern_rund": gam[i].tolist(),
                "landsberg": Lt[i].tolist(),
                "landsberg_trace": J[i].tolist(),
                "abs_I": float(np.max(np.abs(Icon[i]))),
                "abs_J": float(np.max(np.abs(J[i]))),
            }
        )
    report = VerificationReport(
        name="tensors",
        inputs={"lagrangian": spec.id, "dim": spec.dim, "points": int(xs.shape[0])},
        payload={"gates": gates, "failed_gates": failed, "points": points_payload},
        tolerances={"gate": gate_tol},
        passed=not failed,
        wall_seconds=time.time() - t0,
    )
    _emit(report, args)
    return 0 if report.passed else 1


def cmd_identities(args) -> int:
    config = load_config(args.config)
    spec = _build_spec(config)
    tol = _tol(config, "identity", 1e-8)
    select = config.get("checks", {}).get("select", list(_IDENTITY_CHECKS[:-1]))
    for name in select:
        if name not in _IDENTITY_CHECKS:
            raise ConfigError(f"unknown check {name!r}; known: {', '.join(_IDENTITY_CHECKS)}")
    xs, ys = _sample_points(config, spec)
    t0 = time.time()
    results = {}

    if "homogeneity" in select:
        res = np.abs(homogeneity_residual(spec, xs, ys))
        scale = np.maximum(1.0, np.abs(2.0 * spec.eval_direct(xs, ys)))
        results["homogeneity"] = float(np.max(res / scale))
    if "trace_identity" in select:
        results["trace_identity"] = max(
            trace_identity_residual(spec, (xs[i], ys[i])) for i in range(xs.shape[0])
        )

    needs_section = {"dos", "lemma", "oap", "hud"} & set(select)
    if needs_section:
        s = _build_section(config, spec.dim)
        vals = s.values(xs, spec.param_values)
        spec.check_admissible(xs, vals)
    if {"lemma", "oap"} & set(select):
        Z = _build_field(config, spec.dim)
    if "hud" in select:
        if "scalar" not in config or "potential" not in config["scalar"]:
            raise ConfigError("the hud check requires [scalar].potential")
        f_ast = expr.parse(str(config["scalar"]["potential"]), spec.dim)

    if "dos" in select:
        results["dos"] = max(
            connection_difference_residual(spec, s, xs[i]) for i in range(xs.shape[0])
        )
    if "lemma" in select:
        results["lemma"] = max(
            lemma_chain_residual(spec, Z, s, xs[i]) for i in range(xs.shape[0])
        )
    if "oap" in select:
        results["oap"] = max(
            divergence_oap(spec, Z, s, xs[i])[2] for i in range(xs.shape[0])
        )
    if "hud" in select:
        results["hud"] = max(
            hud_residual(spec, f_ast, s, xs[i]) for i in range(xs.shape[0])
        )

    failed = [k for k, v in results.items() if v > tol]
    report = VerificationReport(
        name="identities",
        inputs={
            "lagrangian": spec.id,
            "dim": spec.dim,
            "points": int(xs.shape[0]),
            "checks": sorted(select),
        },
        payload={"max_residuals": results, "failed_checks": failed},
        tolerances={"identity": tol},
        passed=not failed,
        wall_seconds=time.time() - t0,
    )
    _emit(report, args)
    return 0 if report.passed else 1


def _parse_orders(text):
    try:
        return tuple(int(t) for t in str(text).split(","))
    except ValueError as exc:
        raise ConfigError(f"--orders must be a comma list of integers: {exc}") from exc


def cmd_divergence(args) -> int:
    config = load_config(args.config)
    spec = _build_spec(config)
    s = _build_section(config, spec.dim)
    Z = _build_field(config, spec.dim)
    orders = _parse_orders(args.orders) if args.orders else None
    box = _box(config, spec)
    tol = _tol(config, "divergence", 1e-7)
    t0 = time.time()
    if args.theorem == "rund":
        report = verify_divergence_rund(
            spec, Z, s, box, orders=orders or (4, 8, 12), threads=args.threads,
            tolerance=tol,
        )
    else:
        report = verify_divergence_finsler(
            spec, Z, s, box, seeds=_face_seeds(config, spec),
            orders=orders or (4, 8, 12), threads=args.threads, tolerance=tol,
            force=args.force, seed_scale=args.seed_scale,
        )
    report.wall_seconds = time.time() - t0
    _emit(report, args)
    return 0 if report.passed else 1


def cmd_energy(args) -> int:
    config = load_config(args.config)
    spec = _build_spec(config)
    s = _build_section(config, spec.dim)
    Z = _build_field(config, spec.dim)
    if "slices" not in config:
        raise ConfigError("energy requires a [slices] table")
    sl = config["slices"]
    for key in ("level0", "level1", "lower", "upper"):
        if key not in sl:
            raise ConfigError(f"[slices] requires {key}")
    axis = int(sl.get("axis", 0))
    orders = sl.get("orders", 8)
    seed = sl.get("seed")
    try:
        slice0 = SliceSpec(sl["level0"], sl["lower"], sl["upper"], orders, axis, seed)
        slice1 = SliceSpec(sl["level1"], sl["lower"], sl["upper"], orders, axis, seed)
    except ValueError as exc:
        raise ConfigError(f"[slices]: {exc}") from exc
    t0 = time.time()
    report = two_slice_drift(
        spec, Z, s, slice0, slice1, threads=args.threads, force=args.force,
        drift_tolerance=_tol(config, "drift", 1e-7), seed_scale=args.seed_scale,
    )
    report.wall_seconds = time.time() - t0
    _emit(report, args)
    return 0 if report.passed else 1


# -- entry point ------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="finslerkit",
        description="Pseudo-Finsler tensor dumps and divergence-theorem verification",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="TOML run configuration")
        p.add_argument("--out", help="write the canonical JSON report here")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--quiet", action="store_true", help="suppress the text summary")
        p.add_argument("--force", action="store_true",
                       help="override applicability gates (marked in the report)")
        p.add_argument("--seed-scale", type=float, default=1.0, dest="seed_scale",
                       help="scale all Newton seed vectors (robustness runs)")

    p = sub.add_parser("tensors", help="dump tensor objects at sample points")
    common(p)
    p.set_defaults(fn=cmd_tensors)

    p = sub.add_parser("identities", help="pointwise identity residual suites")
    common(p)
    p.set_defaults(fn=cmd_identities)

    p = sub.add_parser("divergence", help="integral divergence theorems")
    common(p)
    p.add_argument("--theorem", choices=("rund", "finsler"), required=True)
    p.add_argument("--orders", help="comma list of quadrature orders, e.g. 4,8,12")
    p.set_defaults(fn=cmd_divergence)

    p = sub.add_parser("energy", help="two-slice conserved-energy experiment")
    common(p)
    p.set_defaults(fn=cmd_energy)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ParseError) as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return 2
    except GateRefusedError as exc:
        sys.stderr.write(f"applicability gate refused: {exc}\n")
        return 3
    except (InadmissiblePointError, DegenerateMetricError, NewtonConvergenceError,
            EvalError) as exc:
        sys.stderr.write(f"numeric check failed: {exc}\n")
        return 1
    except FinslerError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
