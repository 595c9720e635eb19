"""Symmetry-implies-conservation machinery: Killing residuals, pregeodesic
tests, the vertical-slope cancellation identity, and the two-slice
conserved-energy experiment on a coordinate slab.

The conserved quantity is the Finslerian flux of s*Z through a constant-
coordinate slice, computed with the Legendre normal and the induced boundary
volume in the future-flux convention (the slice is treated as the upper face
of the slab below it).  Hypothesis audits are numeric gates: vanishing mean
Cartan torsion, horizontal divergence-freeness, the Killing property at the
support, and the pregeodesic property, each within tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import expr
from .catalog import LagrangianSpec
from .connections import FiberVectorField, SectionField, ginv_jet
from .errors import GateRefusedError, NewtonConvergenceError
from .integration import (
    BoxDomain,
    OrientedFace,
    _conormal,
    default_face_seed,
    divergence_volume_terms,
    face_nodes,
    face_normal,
    field_values_at,
    induced_volume_weight,
)
from .jets import Jet, seed_variables
from .parallel import chunked_map, pairwise_sum
from .reports import VerificationReport
from .tensors import FiberContext, _as_point, normalized_max

__all__ = [
    "SliceSpec",
    "killing_residual",
    "evaluated_killing_residual",
    "pregeodesic_defect",
    "hud_expressions",
    "hud_residual",
    "conserved_energy",
    "two_slice_drift",
    "normalized_killing_is_geodesic",
]

AUDIT_TOL = 1e-7


@dataclass(frozen=True)
class SliceSpec:
    """A constant-coordinate hypersurface piece: x^axis = level over a
    spatial box (the axis entries of lower/upper/orders are ignored)."""

    level: float
    lower: np.ndarray
    upper: np.ndarray
    orders: tuple
    axis: int = 0
    seed: np.ndarray | None = None

    def __init__(self, level, lower, upper, orders, axis=0, seed=None):
        object.__setattr__(self, "level", float(level))
        object.__setattr__(self, "lower", np.asarray(lower, float))
        object.__setattr__(self, "upper", np.asarray(upper, float))
        n = self.lower.size
        if np.isscalar(orders) or isinstance(orders, int):
            orders = (int(orders),) * n
        object.__setattr__(self, "orders", tuple(int(o) for o in orders))
        object.__setattr__(self, "axis", int(axis))
        object.__setattr__(self, "seed", None if seed is None else np.asarray(seed, float))

    def face_box(self) -> BoxDomain:
        """A degenerate-thickness box whose upper `axis` face is the slice."""
        lo = self.lower.copy()
        hi = self.upper.copy()
        lo[self.axis] = self.level - 1.0
        hi[self.axis] = self.level
        return BoxDomain(lo, hi, self.orders)


def _section_jacobian(s: SectionField, x, dim: int, params=None) -> np.ndarray:
    """ds^a/dx^mu of a section at x (plain x-jets, order 1): (..., a, mu)."""
    x = np.asarray(x, float)
    jets = seed_variables(x, list(range(dim)), 1)
    env = {f"x{i}": jets[i] for i in range(dim)}
    out = np.empty(x.shape[:-1] + (dim, dim))
    for a in range(dim):
        j = expr.eval_jet(s.components[a], env, params)
        for mu in range(dim):
            d = j.derivative(mu).value
            out[..., a, mu] = d
    return out


def killing_residual(spec: LagrangianSpec, s: SectionField, p) -> float:
    """Max-entry residual of the Finslerian Killing equation at a fiber
    point, for s lifted to the slit bundle as a y-independent field."""
    p = _as_point(p)
    ctx = FiberContext(spec, p.x, y=p.y, order=4)
    n = ctx.n
    sv = s.values(p.x, spec.param_values)
    ds = _section_jacobian(s, p.x, n, spec.param_values)
    gamma = ctx.gamma_values()
    nabla = ds + np.einsum("...amg,...m->...ag", gamma, sv)
    g = ctx.metric_values()
    C = ctx.cartan_values()
    t = np.einsum("...b,...mb->...m", p.y, nabla)
    K = (
        np.einsum("...db,...bg->...gd", g, nabla)
        + np.einsum("...gb,...bd->...gd", g, nabla)
        + 2.0 * np.einsum("...m,...gdm->...gd", t, C)
    )
    return normalized_max(K, g, nabla)


def _evaluated_killing_tensor(ctx: FiberContext) -> np.ndarray:
    ginv = ctx.ginv_values()
    Ds = ctx.section_D_values()           # D_mu s^a -> [a, mu]
    Dup = np.einsum("...gm,...dm->...gd", ginv, Ds)
    sv = ctx.y
    Dss = np.einsum("...am,...m->...a", Ds, sv)
    C = ctx.cartan_values()
    Cupup = np.einsum("...ga,...db,...abm->...gdm", ginv, ginv, C)
    return Dup + np.einsum("...gd->...dg", Dup) + 2.0 * np.einsum(
        "...m,...gdm->...gd", Dss, Cupup
    )


def evaluated_killing_residual(spec: LagrangianSpec, s: SectionField, x) -> float:
    """Killing equation evaluated at the support vector s(x), written through
    the nonlinear covariant derivative D with indices raised at the support."""
    ctx = FiberContext(spec, np.asarray(x, float), section=s, order=3)
    K = _evaluated_killing_tensor(ctx)
    return normalized_max(K, ctx.section_D_values(), ctx.ginv_values())


def pregeodesic_defect(spec: LagrangianSpec, s: SectionField, x) -> float:
    """min over lambda of |D_s s - lambda s| / (|D_s s| + |s|); zero iff the
    integral curves of s are pregeodesics."""
    ctx = FiberContext(spec, np.asarray(x, float), section=s, order=3)
    sv = ctx.y
    Dss = np.einsum("...am,...m->...a", ctx.section_D_values(), sv)
    ss = np.einsum("...a,...a->...", sv, sv)
    if np.any(ss == 0.0):
        raise ValueError("section vanishes at the evaluation point")
    lam = np.einsum("...a,...a->...", Dss, sv) / ss
    resid = np.linalg.norm(Dss - lam[..., None] * sv, axis=-1)
    denom = np.linalg.norm(Dss, axis=-1) + np.linalg.norm(sv, axis=-1)
    return float(np.max(resid / denom))


def hud_expressions(spec: LagrangianSpec, f, s: SectionField, x):
    """The three forms of the vertical-slope chain term for a vertical-
    gradient field Z (raised gradient of f), pulled back along s:
    (1) dZ^m/dy^d D_m s^d, (2) the lowered form through the support-raised D,
    (3) minus its contraction with the Cartan torsion against D_s s."""
    ast = expr.parse(f, spec.dim) if isinstance(f, str) else f
    ctx = FiberContext(spec, np.asarray(x, float), section=s, order=4)
    n = ctx.n
    fjet = ctx.eval_scalar(ast)
    Z = FiberVectorField(potential=ast)
    zj = Z.jets(ctx, 1)
    Ds = ctx.section_D_values()
    ginv = ctx.ginv_values()
    sv = ctx.y

    vert_z = np.stack(
        [np.stack([ctx.vert(zj.comp(m), b).value for b in range(n)], axis=-1)
         for m in range(n)],
        axis=-2,
    )  # dZ^m/dy^b -> [m, b]
    e1 = np.einsum("...md,...dm->...", vert_z, Ds)

    zlow_hess = np.empty(vert_z.shape)  # dZ_g/dy^d = d^2 f/dy^g dy^d
    for g_ in range(n):
        for d in range(n):
            zlow_hess[..., g_, d] = ctx.vert(ctx.vert(fjet, g_), d).value
    C = ctx.cartan_values()
    zlow = np.stack([ctx.vert(fjet, a).value for a in range(n)], axis=-1)
    cup = np.einsum("...na,...agd->...ngd", ginv, C)
    bracket = zlow_hess - 2.0 * np.einsum("...ngd,...n->...gd", cup, zlow)
    Dup = np.einsum("...gm,...dm->...gd", ginv, Ds)
    e2 = np.einsum("...gd,...gd->...", bracket, Dup)

    Dss = np.einsum("...am,...m->...a", Ds, sv)
    Cupup = np.einsum("...ga,...db,...abm->...gdm", ginv, ginv, C)
    e3 = -np.einsum("...gd,...gdm,...m->...", bracket, Cupup, Dss)
    return float(e1), float(e2), float(e3)


def hud_residual(spec: LagrangianSpec, f, s: SectionField, x,
                 killing_tol: float = 1e-8, pregeodesic_tol: float = 1e-8) -> float:
    """Residual across the three chain-term forms; when s is additionally
    pregeodesic the common value must vanish and is folded into the residual.

    Preconditions (reported, not skipped): Z is the raised vertical gradient
    of f by construction; s must be Killing at the support.
    """
    ekr = evaluated_killing_residual(spec, s, x)
    if ekr > killing_tol:
        raise GateRefusedError(
            f"hud identity requires a Killing section at the support: "
            f"residual {ekr:.3e} > {killing_tol:.1e}"
        )
    e1, e2, e3 = hud_expressions(spec, f, s, x)
    scale = max(1.0, abs(e1), abs(e2), abs(e3))
    resid = max(abs(e1 - e2), abs(e2 - e3)) / scale
    if pregeodesic_defect(spec, s, x) <= pregeodesic_tol:
        resid = max(resid, abs(e1) / scale)
    return resid


# -- conserved energy -----------------------------------------------------------


def _slice_flux(spec, Z, s, slice_spec: SliceSpec, threads: int = 1,
                seed_scale: float = 1.0) -> float:
    """Finslerian flux through the slice in the +axis direction:
    -int g_n(n, s*Z) nu with the upper-face convention."""
    box = slice_spec.face_box()
    face = OrientedFace(slice_spec.axis, "upper")
    nodes, weights = face_nodes(box, face)

    def chunk(lo, hi):
        x = nodes[lo:hi]
        ctx = FiberContext(spec, x, section=s, order=2)
        zs = field_values_at(spec, Z, x, ctx.y)
        m = ctx.sqrt_det_g()
        sd = slice_spec.seed
        if sd is None:
            sd = default_face_seed(spec, face, x)
        n = face_normal(spec, face, x, np.asarray(sd, float) * seed_scale)
        nu = induced_volume_weight(spec, n, x, face, m)
        gctx = FiberContext(spec, x, y=n, order=2, x_active=False)
        g = gctx.metric_values(check=False)
        gnz = np.einsum("...ab,...a,...b->...", g, n, zs)
        return -gnz * nu

    vals = chunked_map(chunk, nodes.shape[0], threads)
    return pairwise_sum(vals * weights)


def conserved_energy(spec: LagrangianSpec, Z: FiberVectorField, s: SectionField,
                     slice_spec: SliceSpec, threads: int = 1,
                     seed_scale: float = 1.0) -> float:
    """E = flux of s*Z through the slice via the Legendre normal and the
    induced volume, oriented toward increasing x^axis."""
    return _slice_flux(spec, Z, s, slice_spec, threads, seed_scale)


def _audit_hypotheses(spec, Z, s, slab: BoxDomain, threads: int) -> dict:
    nodes, _ = _audit_nodes(slab)
    terms = divergence_volume_terms(spec, Z, s, nodes)
    div_max = float(np.max(np.abs(terms["hdiv"])))
    i_max = float(np.max(terms["I_inf"]))
    ekr = evaluated_killing_residual(spec, s, nodes)
    pgd = pregeodesic_defect(spec, s, nodes)
    return {
        "max_mean_torsion": i_max,
        "max_horizontal_div": div_max,
        "evaluated_killing_residual": float(ekr),
        "pregeodesic_defect": float(pgd),
        "vertical_gradient": Z.potential is not None,
    }


def _audit_nodes(slab: BoxDomain):
    from .integration import domain_nodes

    b = slab.with_orders(tuple(min(o, 5) for o in slab.orders))
    return domain_nodes(b)


def two_slice_drift(spec: LagrangianSpec, Z: FiberVectorField, s: SectionField,
                    slice0: SliceSpec, slice1: SliceSpec, threads: int = 1,
                    force: bool = False, drift_tolerance: float = 1e-7,
                    seed_scale: float = 1.0) -> VerificationReport:
    """Conservation experiment: energies on two slices, lateral coordinate
    fluxes on the slab between them, and the divergence-theorem budget
    closing volume against total outward flux.

    Reported alongside the two-slice drift |E1 - E0| is the conservation
    defect |E1 - E0 + lateral_net|: a violated hypothesis in a static
    scenario shows up there (time-translation symmetry can mask the drift by
    pushing the leak into the lateral faces).

    Hypothesis audit (each <= 1e-7, hard error unless force): vanishing mean
    Cartan torsion, horizontal divergence of Z, Killing residual at the
    support, pregeodesic defect; Z must be declared as a vertical gradient.
    """
    if slice0.axis != slice1.axis:
        raise ValueError("slices must share the coordinate axis")
    axis = slice0.axis
    lo_level, hi_level = sorted((slice0.level, slice1.level))
    lower = slice0.lower.copy()
    upper = slice0.upper.copy()
    lower[axis] = lo_level
    upper[axis] = hi_level
    slab = BoxDomain(lower, upper, slice0.orders)

    audits = _audit_hypotheses(spec, Z, s, slab, threads)
    violated = {
        k: v
        for k, v in audits.items()
        if (k == "vertical_gradient" and not v)
        or (isinstance(v, float) and v > AUDIT_TOL)
    }
    if violated and not force:
        raise GateRefusedError(
            "conservation hypotheses violated: "
            + ", ".join(f"{k}={v}" for k, v in violated.items())
        )

    e0 = _slice_flux(spec, Z, s, slice0, threads, seed_scale)
    e1 = _slice_flux(spec, Z, s, slice1, threads, seed_scale)
    if slice1.level < slice0.level:
        e0, e1 = e1, e0

    # lateral outward coordinate fluxes (the Legendre normal need not exist
    # on timelike faces of cone-restricted Lagrangians; the interior-product
    # form is exact and section-independent)
    lateral = {}
    lateral_net = 0.0
    for face in slab.faces():
        if face.axis == axis:
            continue
        nodes, weights = face_nodes(slab, face)

        def chunk(lo, hi, f=face):
            x = nodes[lo:hi]
            ctx = FiberContext(spec, x, section=s, order=2)
            zs = field_values_at(spec, Z, x, ctx.y)
            return f.epsilon * ctx.sqrt_det_g() * zs[..., f.axis]

        flux = pairwise_sum(chunked_map(chunk, nodes.shape[0], threads) * weights)
        lateral[face.key] = flux
        lateral_net += flux

    from .integration import domain_nodes

    nodes, weights = domain_nodes(slab)

    def vchunk(lo, hi):
        terms = divergence_volume_terms(spec, Z, s, nodes[lo:hi])
        return (terms["hdiv"] + terms["iterm"] + terms["chain"]) * terms["sqrtdetg"]

    volume = pairwise_sum(chunked_map(vchunk, nodes.shape[0], threads) * weights)

    drift = abs(e1 - e0)
    defect = abs(e1 - e0 + lateral_net)
    budget = volume - (e1 - e0 + lateral_net)
    scale = max(1.0, abs(volume), abs(e0), abs(e1))
    passed = bool(drift <= drift_tolerance and defect <= drift_tolerance and not violated)
    return VerificationReport(
        name="two_slice_drift",
        inputs={
            "lagrangian": spec.id,
            "dim": spec.dim,
            "axis": axis,
            "levels": [slice0.level, slice1.level],
            "orders": list(slice0.orders),
            "forced": force,
            "seed_scale": seed_scale,
        },
        payload={
            "E0": e0,
            "E1": e1,
            "drift": drift,
            "conservation_defect": defect,
            "lateral": lateral,
            "lateral_net": lateral_net,
            "volume_integral": volume,
            "budget_residual": abs(budget) / scale,
            "audits": audits,
        },
        tolerances={"drift": drift_tolerance, "audit": AUDIT_TOL},
        passed=passed,
    )


def normalized_killing_is_geodesic(spec: LagrangianSpec, s: SectionField,
                                   sample_points) -> VerificationReport:
    """For a normalized section (g_s(s,s) = -1) the pregeodesic assumption is
    superfluous: 2 g_s(D_s s, .) = -d(g_s(s,s)).  Left side through D and the
    support metric; right side through the composed x-derivative of twice the
    Lagrangian along s (independent code path)."""
    x = np.asarray(sample_points, float)
    ctx = FiberContext(spec, x, section=s, order=3)
    g = ctx.metric_values()
    sv = ctx.y
    gss = np.einsum("...ab,...a,...b->...", g, sv, sv)
    norm_resid = float(np.max(np.abs(gss + 1.0)))
    if norm_resid > 1e-10:
        raise GateRefusedError(
            f"section not normalized: max |g_s(s,s) + 1| = {norm_resid:.3e}"
        )
    Ds = ctx.section_D_values()
    Dss = np.einsum("...am,...m->...a", Ds, sv)
    lhs = 2.0 * np.einsum("...ma,...a->...m", g, Dss)
    dphi = 2.0 * ctx.composed_dx_value(ctx.L.truncate(1))
    identity = normalized_max(lhs + dphi, lhs, dphi)
    max_dss = float(np.max(np.linalg.norm(Dss, axis=-1)))
    ekr = evaluated_killing_residual(spec, s, x)
    passed = bool(identity <= 1e-8 and max_dss <= 1e-8)
    return VerificationReport(
        name="normalized_killing_is_geodesic",
        inputs={"lagrangian": spec.id, "dim": spec.dim, "samples": int(np.prod(x.shape[:-1]) or 1)},
        payload={
            "max_normalization_residual": norm_resid,
            "max_D_s_s": max_dss,
            "identity_residual": identity,
            "evaluated_killing_residual": float(ekr),
        },
        tolerances={"identity": 1e-8, "geodesic": 1e-8},
        passed=passed,
    )
