"""Derivatives along sections and fiber fields: covariant derivative of a
section, horizontal divergences, pullback connections, and the pointwise
divergence identities they satisfy.

The identity checkers assemble their left and right sides through disjoint
code paths (composed x-derivatives vs horizontal + chain terms) and return
scale-normalized max-entry residuals.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import expr
from .catalog import LagrangianSpec
from .jets import Jet, jet_inv
from .tensors import FiberContext, FiberPoint, TensorBlock, _as_point, _stack, normalized_max

__all__ = [
    "SectionField",
    "FiberVectorField",
    "section_D",
    "horizontal_div",
    "pullback_connection_coeffs",
    "pullback_metric_christoffels",
    "connection_difference_residual",
    "lemma_chain_residual",
    "divergence_oap",
    "vertical_gradient_div",
]


@dataclass
class SectionField:
    """A section s: M -> TM\\0 given by n component expressions in x."""

    components: list
    name: str = "s"

    @classmethod
    def from_exprs(cls, texts, dim: int, name: str = "s") -> "SectionField":
        comps = [expr.parse(str(t), dim) if isinstance(t, str) else t for t in texts]
        for c in comps:
            bad = {v for v in expr.variables_used(c) if v.startswith("y")}
            if bad:
                raise ValueError(f"section components must not reference fiber variables: {sorted(bad)}")
        return cls(comps, name)

    def values(self, x, params: dict | None = None) -> np.ndarray:
        x = np.asarray(x, float)
        env = {f"x{i}": x[..., i] for i in range(x.shape[-1])}
        return np.stack(
            [np.broadcast_to(expr.eval_float(c, env, params), x.shape[:-1]) for c in self.components],
            axis=-1,
        )


@dataclass
class FiberVectorField:
    """A field Z: TM\\0 -> TM, either by explicit components Z^m(x, y) or as
    the raised vertical gradient of a scalar potential f(x, y)."""

    components: list | None = None
    potential: object = None
    name: str = "Z"

    @classmethod
    def from_exprs(cls, texts, dim: int, name: str = "Z") -> "FiberVectorField":
        comps = [expr.parse(str(t), dim) if isinstance(t, str) else t for t in texts]
        return cls(components=comps, name=name)

    @classmethod
    def from_potential(cls, text, dim: int, name: str = "Z") -> "FiberVectorField":
        ast = expr.parse(str(text), dim) if isinstance(text, str) else text
        return cls(potential=ast, name=name)

    def jets(self, ctx: FiberContext, order: int) -> Jet:
        """Component jets (..., n) in the given context."""
        if self.components is not None:
            return ctx.eval_components(self.components, order=order)
        f = ctx.eval_scalar(self.potential)
        ginv = ginv_jet(ctx, order)
        comps = []
        for m in range(ctx.n):
            acc = None
            for a in range(ctx.n):
                term = ginv.comp(m, a) * ctx.vert(f, a).truncate(order)
                acc = term if acc is None else acc + term
            comps.append(acc)
        return _stack(comps)

    def values(self, x, y, params: dict | None = None) -> np.ndarray:
        if self.components is None:
            raise ValueError("potential-defined fields need a metric; evaluate through a context")
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        n = x.shape[-1]
        env = {f"x{i}": x[..., i] for i in range(n)}
        env.update({f"y{i}": y[..., i] for i in range(n)})
        shape = np.broadcast_shapes(x.shape[:-1], y.shape[:-1])
        return np.stack(
            [np.broadcast_to(expr.eval_float(c, env, params), shape) for c in self.components],
            axis=-1,
        )


def ginv_jet(ctx: FiberContext, order: int) -> Jet:
    """Inverse metric as jets (cached per context and order)."""
    return ctx._cached(("ginv_jet", order), lambda: jet_inv(ctx.g_jet(order)))


# -- operations ---------------------------------------------------------------


def section_D(spec: LagrangianSpec, s: SectionField, x) -> TensorBlock:
    """Covariant derivative of the section for the nonlinear connection:
    D_mu s^a = ds^a/dx^mu + N^a_mu(x, s(x))."""
    ctx = FiberContext(spec, np.asarray(x, float), section=s, order=3)
    p = FiberPoint(ctx.x, ctx.y)
    return TensorBlock(spec.dim, ("up", "down"), ctx.section_D_values(), p)


def _hdiv(ctx: FiberContext, zjets: Jet, connection: str) -> np.ndarray:
    if connection == "chern_rund":
        H = ctx.gamma_values()
    elif connection == "berwald":
        H = ctx.berwald_values()
    else:
        raise ValueError("connection must be 'chern_rund' or 'berwald'")
    div = 0.0
    for a in range(ctx.n):
        div = div + ctx.delta_values(zjets.comp(a))[..., a]
    zvals = zjets.value
    return div + np.einsum("...ama,...m->...", H, zvals)


def horizontal_div(spec: LagrangianSpec, Z: FiberVectorField, p,
                   connection: str = "chern_rund") -> float:
    """Trace of the horizontal covariant derivative:
    delta_a Z^a + H^a_{m a} Z^m with H per the chosen connection."""
    p = _as_point(p)
    ctx = FiberContext(spec, p.x, y=p.y, order=4)
    zjets = Z.jets(ctx, 1)
    out = _hdiv(ctx, zjets, connection)
    return float(out) if out.ndim == 0 else out


def pullback_connection_coeffs(spec: LagrangianSpec, s: SectionField, x,
                               which: str = "chern_rund") -> TensorBlock:
    """Coefficients of the pullback of a Finsler connection along s:
    H^g_{ab}(x, s(x)) + V^g_{bm}(x, s(x)) D_a s^m."""
    ctx = FiberContext(spec, np.asarray(x, float), section=s, order=4)
    p = FiberPoint(ctx.x, ctx.y)
    if which == "chern_rund":
        entries = ctx.gamma_values()
    elif which == "berwald":
        entries = ctx.berwald_values()
    elif which == "cartan":
        cup = np.einsum("...gs,...sbm->...gbm", ctx.ginv_values(), ctx.cartan_values())
        entries = ctx.gamma_values() + np.einsum(
            "...gbm,...ma->...gab", cup, ctx.section_D_values()
        )
    else:
        raise ValueError("which must be 'chern_rund', 'cartan' or 'berwald'")
    return TensorBlock(spec.dim, ("up", "down", "down"), entries, p)


def pullback_metric_christoffels(spec: LagrangianSpec, s: SectionField, x) -> TensorBlock:
    """Levi-Civita coefficients of the pullback metric (s*g)(x)."""
    ctx = FiberContext(spec, np.asarray(x, float), section=s, order=4)
    p = FiberPoint(ctx.x, ctx.y)
    return TensorBlock(spec.dim, ("up", "down", "down"), ctx.pullback_christoffels(), p)


def connection_difference_residual(spec: LagrangianSpec, s: SectionField, x) -> float:
    """Residual of the pullback-connection difference identity
    (Levi-Civita of s*g minus pulled-back Chern-Rund against the Cartan
    torsion and D s terms), as a normalized max over all entries."""
    ctx = FiberContext(spec, np.asarray(x, float), section=s, order=4)
    lhs = ctx.pullback_christoffels() - ctx.gamma_values()
    C = ctx.cartan_values()
    ginv = ctx.ginv_values()
    cup = np.einsum("...as,...smc->...amc", ginv, C)
    Ds = ctx.section_D_values()
    rhs = (
        np.einsum("...amc,...mb->...abc", cup, Ds)
        + np.einsum("...amb,...mc->...abc", cup, Ds)
        - np.einsum("...mbc,...ad,...md->...abc", C, ginv, Ds)
    )
    return normalized_max(lhs - rhs, lhs, rhs)


def lemma_chain_residual(spec: LagrangianSpec, Z: FiberVectorField, s: SectionField, x) -> float:
    """Residual of the chain identity relating the pullback covariant
    derivative of s*Z to the horizontal derivative plus the vertical-slope
    times D s term, maximized over coordinate directions."""
    ctx = FiberContext(spec, np.asarray(x, float), section=s, order=4)
    n = ctx.n
    zjets = Z.jets(ctx, 2)
    gamma = ctx.gamma_values()
    zvals = zjets.value
    Ds = ctx.section_D_values()

    # left: d/dx^g of the composed Z(x, s(x)) plus pulled-back Chern-Rund term
    dcomp = np.stack(
        [ctx.composed_dx_value(zjets.comp(m)) for m in range(n)], axis=-2
    )  # (..., m, gamma)
    lhs = dcomp + np.einsum("...msg,...s->...mg", gamma, zvals)

    # right: horizontal derivative pulled back, plus vertical slope chain term
    delta_z = np.stack(
        [ctx.delta_values(zjets.comp(m)) for m in range(n)], axis=-2
    )  # (..., m, gamma)
    vert_z = np.stack(
        [np.stack([ctx.vert(zjets.comp(m), b).value for b in range(n)], axis=-1)
         for m in range(n)],
        axis=-2,
    )  # (..., m, b)
    rhs = delta_z + np.einsum("...msg,...s->...mg", gamma, zvals)
    rhs = rhs + np.einsum("...mb,...bg->...mg", vert_z, Ds)
    return normalized_max(lhs - rhs, lhs, rhs)


def divergence_oap(spec: LagrangianSpec, Z: FiberVectorField, s: SectionField, x,
                   include_mean_torsion: bool = True):
    """Divergence decomposition: the Levi-Civita divergence of s*Z against
    the pulled-back horizontal divergence, the mean-Cartan-torsion term and
    the vertical-slope chain term.

    Returns (lhs, rhs, residual); the mean-torsion term can be ablated to
    witness that it is exactly the difference.
    """
    ctx = FiberContext(spec, np.asarray(x, float), section=s, order=4)
    n = ctx.n
    zjets = Z.jets(ctx, 2)
    zvals = zjets.value

    # left: classical divergence of the composed field under s*g
    christ = ctx.pullback_christoffels()
    lhs = np.einsum("...mgm,...g->...", christ, zvals)
    for m in range(n):
        lhs = lhs + ctx.composed_dx_value(zjets.comp(m))[..., m]

    # right: horizontal divergence + mean torsion term + chain term
    rhs = _hdiv(ctx, zjets, "chern_rund")
    Ds = ctx.section_D_values()
    if include_mean_torsion:
        I = ctx.mean_cartan_contract()
        rhs = rhs + np.einsum("...a,...am,...m->...", I, Ds, zvals)
    vert_z = np.stack(
        [np.stack([ctx.vert(zjets.comp(m), b).value for b in range(n)], axis=-1)
         for m in range(n)],
        axis=-2,
    )
    rhs = rhs + np.einsum("...mb,...bm->...", vert_z, Ds)
    return lhs, rhs, normalized_max(lhs - rhs, lhs, rhs)


def vertical_gradient_div(spec: LagrangianSpec, f, p):
    """Both elaborations of the horizontal divergence of the raised vertical
    gradient of f: (form_a) the direct horizontal divergence, and (form_b)
    the vertical-divergence-of-horizontal-gradient form plus mean-torsion
    and Landsberg-trace terms.
    """
    p = _as_point(p)
    ctx = FiberContext(spec, p.x, y=p.y, order=4)
    n = ctx.n
    ast = expr.parse(f, spec.dim) if isinstance(f, str) else f
    fjet = ctx.eval_scalar(ast)

    Z = FiberVectorField(potential=ast)
    zjets = Z.jets(ctx, 1)
    form_a = _hdiv(ctx, zjets, "chern_rund")

    # delta f / delta x as order-1 jets
    Njet = ctx.nonlinear_jet(1)
    dfj = []
    for mu in range(n):
        acc = ctx.dx_fixed(fjet, mu).truncate(1)
        for a in range(n):
            acc = acc - Njet.comp(a, mu) * ctx.vert(fjet, a).truncate(1)
        dfj.append(acc)
    ginv1 = ginv_jet(ctx, 1)
    form_b = 0.0
    for nu in range(n):
        W = None
        for mu in range(n):
            term = ginv1.comp(nu, mu) * dfj[mu]
            W = term if W is None else W + term
        form_b = form_b + ctx.vert(W, nu).value
    I_up = np.einsum("...ab,...b->...a", ctx.ginv_values(), ctx.mean_cartan_contract())
    df_vals = np.stack([j.value for j in dfj], axis=-1)
    form_b = form_b + 2.0 * np.einsum("...a,...a->...", I_up, df_vals)
    J_up = np.einsum("...ab,...b->...a", ctx.ginv_values(), ctx.j_values())
    vert_f = np.stack([ctx.vert(fjet, a).value for a in range(n)], axis=-1)
    form_b = form_b + np.einsum("...a,...a->...", J_up, vert_f)

    if np.ndim(form_a) == 0:
        return float(form_a), float(form_b)
    return form_a, form_b
