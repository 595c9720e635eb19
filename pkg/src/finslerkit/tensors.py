"""Pointwise Finsler tensors at a fiber point (x, y).

Everything is read off a single jet of the Lagrangian per evaluation context:
the metric is the vertical Hessian, the Cartan torsion its vertical
derivative, the spray solves a jet-linear system, the nonlinear connection
and Berwald coefficients are further vertical derivatives, and the
Chern-Rund coefficients combine horizontal derivatives through the delta
basis.  A :class:`FiberContext` caches these objects; it also supports a
composed mode where the fiber argument is a section s(x) evaluated through
the same jet variables, so that x-derivatives of pulled-back quantities
(s*g, N(x, s(x)), ...) come out of the very same expansion.

Contexts accept batched points: x and y may carry leading axes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import expr
from .catalog import LagrangianSpec
from .errors import DegenerateMetricError
from .jets import Jet, jet_det, jet_solve, seed_variables
from .multiindex import index_table

__all__ = [
    "FiberPoint",
    "TensorBlock",
    "FiberContext",
    "metric",
    "inverse_metric",
    "cartan_torsion",
    "mean_cartan_torsion",
    "spray",
    "nonlinear_connection",
    "berwald_coeffs",
    "delta_derivative",
    "chern_rund_coeffs",
    "landsberg",
    "trace_identity_residual",
    "normalized_max",
    "DEGENERACY_THRESHOLD",
]

DEGENERACY_THRESHOLD = 1e-12


@dataclass(frozen=True)
class FiberPoint:
    """A point of the slit tangent bundle in chart coordinates."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, float))
        object.__setattr__(self, "y", np.asarray(self.y, float))


@dataclass(frozen=True)
class TensorBlock:
    """Dense multi-index array at a fiber point with declared valences."""

    dim: int
    valence: tuple          # e.g. ("up", "down", "down")
    entries: np.ndarray
    base: FiberPoint

    @property
    def rank(self) -> int:
        return len(self.valence)


def normalized_max(diff, *refs) -> float:
    """Max-entry residual normalized by the largest participating magnitude
    (floored at 1 so that identically-zero identities stay absolute)."""
    scale = 1.0
    for r in refs:
        if np.size(r):
            scale = max(scale, float(np.max(np.abs(r))))
    return float(np.max(np.abs(diff))) / scale


def _as_point(p) -> FiberPoint:
    if isinstance(p, FiberPoint):
        return p
    x, y = p
    return FiberPoint(np.asarray(x, float), np.asarray(y, float))


class FiberContext:
    """Jet evaluation context at (x, y) or along a section (x, s(x)).

    Jet variables: 0..n-1 are the chart coordinates x, n..2n-1 the vertical
    displacements u; the fiber argument of the Lagrangian is y + u (plain
    mode) or s(x) + u (composed mode).  Partial-at-fixed-y derivatives are
    recovered from the composed expansion by subtracting the chain term
    through ds/dx, so every tensor formula below is written once and is
    valid in both modes.
    """

    def __init__(self, spec: LagrangianSpec, x, y=None, section=None, order: int = 4,
                 check_admissible: bool = True, x_active: bool = True):
        if (y is None) == (section is None):
            raise ValueError("provide exactly one of y or section")
        if section is not None and not x_active:
            raise ValueError("section contexts require active x variables")
        self.spec = spec
        self.order = order
        n = spec.dim
        self.n = n
        x = np.asarray(x, float)
        if x.shape[-1] != n:
            raise ValueError(f"x must have {n} components")
        self.x = x
        self.section = section
        self.x_active = x_active
        jet_dim = 2 * n if x_active else n
        self._voff = n if x_active else 0

        if x_active:
            self._xjets = [Jet.variable(x[..., i], i, jet_dim, order) for i in range(n)]
        else:
            self._xjets = [Jet.constant(x[..., i], jet_dim, order) for i in range(n)]
        if section is None:
            y = np.asarray(y, float)
            batch = np.broadcast_shapes(x.shape[:-1], y.shape[:-1])
            self._yjets = [
                Jet.variable(y[..., a], self._voff + a, jet_dim, order) for a in range(n)
            ]
        else:
            env_x = {f"x{i}": self._xjets[i] for i in range(n)}
            svals = [expr.eval_jet(section.components[a], env_x, spec.param_values)
                     for a in range(n)]
            self._yjets = [
                sv + Jet.variable(np.zeros(sv.shape), self._voff + a, jet_dim, order)
                for a, sv in enumerate(svals)
            ]
            batch = x.shape[:-1]

        # constant expressions lose the batch shape; pin it on every seed so
        # all derived tensors carry the full leading axes
        def pin(j: Jet) -> Jet:
            return Jet(j.dim, j.order, np.broadcast_to(j.coeffs, batch + j.coeffs.shape[-1:]))

        self._xjets = [pin(j) for j in self._xjets]
        self._yjets = [pin(j) for j in self._yjets]
        self.x = np.broadcast_to(x, batch + (n,))
        self.y = np.stack([j.value for j in self._yjets], axis=-1)
        if check_admissible:
            spec.check_admissible(self.x, self.y)

        env = {f"x{i}": self._xjets[i] for i in range(n)}
        env.update({f"y{a}": self._yjets[a] for a in range(n)})
        self._env = env
        self.L = expr.eval_jet(spec.ast, env, spec.param_values)
        self._cache = {}

    # -- generic jet helpers -------------------------------------------------

    def eval_scalar(self, ast, order: int | None = None) -> Jet:
        """Evaluate an expression in this context's jet variables."""
        if order is not None and order < self.order:
            env = {k: v.truncate(order) for k, v in self._env.items()}
            return expr.eval_jet(ast, env, self.spec.param_values)
        return expr.eval_jet(ast, self._env, self.spec.param_values)

    def eval_components(self, asts, order: int | None = None) -> Jet:
        """Evaluate a list of expressions into one jet with a trailing
        component axis."""
        jets = [self.eval_scalar(a, order) for a in asts]
        return _stack(jets)

    def vert(self, jet: Jet, a: int) -> Jet:
        """Vertical derivative d/dy^a."""
        return jet.derivative(self._voff + a)

    def dx_fixed(self, jet: Jet, mu: int) -> Jet:
        """Partial d/dx^mu at fixed fiber argument.  In composed mode the
        chain contribution through ds/dx is subtracted; in plain mode the
        fiber jets are x-independent and the correction vanishes."""
        if not self.x_active:
            raise ValueError("x variables are inactive in this context")
        out = jet.derivative(mu)
        if self.section is not None:
            for a in range(self.n):
                ds = self._yjets[a].derivative(mu).truncate(out.order)
                out = out - ds * jet.derivative(self._voff + a).truncate(out.order)
        return out

    def delta_values(self, jet: Jet) -> np.ndarray:
        """delta/delta x^mu of a scalar jet, as values: (..., n)."""
        N = self.nonlinear()
        cols = []
        for mu in range(self.n):
            val = self.dx_fixed(jet, mu).value
            for a in range(self.n):
                val = val - N[..., a, mu] * self.vert(jet, a).value
            cols.append(val)
        return np.stack(cols, axis=-1)

    def restrict_to_section(self, jet: Jet) -> Jet:
        """Zero all coefficients with vertical degree >= 1: the remaining
        x-coefficients expand the composed function x -> Q(x, s(x))."""
        if not self.x_active:
            raise ValueError("x variables are inactive in this context")
        table = index_table(2 * self.n, jet.order)
        mask = (table.indices[:, self.n :].sum(axis=1) == 0).astype(float)
        return Jet(jet.dim, jet.order, jet.coeffs * mask)

    # -- cached tensor objects -------------------------------------------------

    def _cached(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    def g_jet(self, order: int) -> Jet:
        """Metric components as jets: (..., n, n) trailing component axes."""

        def build():
            n = self.n
            rows = []
            for a in range(n):
                row = [None] * n
                for b in range(n):
                    if b < a:
                        row[b] = rows[b][a]
                    else:
                        row[b] = self.L.derivative(self._voff + a).derivative(self._voff + b).truncate(order)
                rows.append(row)
            return _stack([_stack(r) for r in rows], matrix=True)

        if order > self.order - 2:
            raise ValueError("context order too low for the requested metric jet")
        return self._cached(("g_jet", order), build)

    def metric_values(self, check: bool = True) -> np.ndarray:
        g = self._cached("g", lambda: self.g_jet(min(2, self.order - 2)).value)
        if check:
            self.check_nondegenerate()
        return g

    def check_nondegenerate(self):
        def check():
            g = self.metric_values(check=False)
            det = np.linalg.det(g)
            rows = np.sqrt(np.sum(g * g, axis=-1))
            scale = np.prod(np.maximum(rows, 1e-300), axis=-1)
            if np.any(np.abs(det) < DEGENERACY_THRESHOLD * scale):
                raise DegenerateMetricError(
                    f"metric of {self.spec.id!r} degenerate: |det g| below "
                    f"{DEGENERACY_THRESHOLD} relative to row norms"
                )
            return True

        return self._cached("nondegenerate", check)

    def ginv_values(self) -> np.ndarray:
        def build():
            self.check_nondegenerate()
            return np.linalg.inv(self.metric_values(check=False))

        return self._cached("ginv", build)

    def cartan_values(self) -> np.ndarray:
        """C_{abc} = (1/2) d g_{bc} / dy^a, totally symmetric: (..., n, n, n)."""

        def build():
            n = self.n
            g1 = self.g_jet(1)
            out = np.empty(g1.value.shape[:-2] + (n, n, n))
            for a in range(n):
                out[..., a, :, :] = 0.5 * _matrix_values(g1, deriv=self._voff + a)
            return out

        return self._cached("cartan", build)

    def mean_cartan_contract(self) -> np.ndarray:
        return self._cached(
            "I_contract",
            lambda: np.einsum("...ab,...abc->...c", self.ginv_values(), self.cartan_values()),
        )

    def logdet_jet(self, order: int) -> Jet:
        def build():
            det = jet_det(self.g_jet(order))
            return det.absolute().log()

        return self._cached(("logdet", order), build)

    def mean_cartan_logdet(self) -> np.ndarray:
        """I via the y-derivative of log|det g|, with a jet-valued determinant
        (code path disjoint from the g^{ab} C_{abc} contraction)."""

        def build():
            ld = self.logdet_jet(1)
            return 0.5 * np.stack(
                [self.vert(ld, a).value for a in range(self.n)], axis=-1
            )

        return self._cached("I_logdet", build)

    def sqrt_det_g(self) -> np.ndarray:
        return self._cached(
            "sqrtdetg",
            lambda: np.sqrt(np.abs(np.linalg.det(self.metric_values(check=False)))),
        )

    def spray_jet(self, order: int) -> Jet:
        """G^a as jets, (..., n) components: 2 G = g^{-1} (L_{x y} . y - L_x)."""

        def build():
            n = self.n
            self.check_nondegenerate()
            comps = []
            for d in range(n):
                acc = -self.dx_fixed(self.L, d).truncate(order)
                for c in range(n):
                    term = self.dx_fixed(self.L.derivative(self._voff + d), c).truncate(order)
                    acc = acc + term * self._yjets[c].truncate(order)
                comps.append(acc)
            rhs = _stack(comps)
            two_g = jet_solve(self.g_jet(order), rhs)
            return two_g * 0.5

        if order > self.order - 2:
            raise ValueError("context order too low for the requested spray jet")
        return self._cached(("spray", order), build)

    def spray_values(self) -> np.ndarray:
        return self._cached("spray_values", lambda: self.spray_jet(min(1, self.order - 2)).value)

    def nonlinear_jet(self, order: int) -> Jet:
        """N^a_m = dG^a/dy^m as jets: (..., n, n)."""

        def build():
            G = self.spray_jet(order + 1)
            n = self.n
            rows = [_stack([G.comp(a).derivative(self._voff + m) for m in range(n)]) for a in range(n)]
            return _stack(rows, matrix=True)

        return self._cached(("N_jet", order), build)

    def nonlinear(self) -> np.ndarray:
        return self._cached("N", lambda: self.nonlinear_jet(max(0, min(1, self.order - 3))).value)

    def berwald_values(self) -> np.ndarray:
        """Berwald coefficients d N^a_m / dy^c: (..., n, a, m, c) -> (..., n, n, n)."""

        def build():
            N = self.nonlinear_jet(1)
            n = self.n
            out = np.empty(N.value.shape + (n,))
            for c in range(n):
                for a in range(n):
                    for m in range(n):
                        out[..., a, m, c] = N.comp(a, m).derivative(self._voff + c).value
            return out

        return self._cached("berwald", build)

    def dxfix_g_values(self) -> np.ndarray:
        """Partial-at-fixed-y x-derivatives of g: (..., mu, a, b)."""

        def build():
            g1 = self.g_jet(1)
            return np.stack(
                [_matrix_values(g1, dx_fixed=(self, mu)) for mu in range(self.n)],
                axis=-3,
            )

        return self._cached("dxg", build)

    def delta_g_values(self) -> np.ndarray:
        """delta g_{ab} / delta x^mu: (..., mu, a, b)."""

        def build():
            dxg = self.dxfix_g_values()
            C2 = 2.0 * self.cartan_values()
            N = self.nonlinear()
            return dxg - np.einsum("...nm,...nab->...mab", N, C2)

        return self._cached("deltag", build)

    def gamma_values(self) -> np.ndarray:
        """Chern-Rund coefficients (..., a, b, c), symmetric in (b, c)."""

        def build():
            dg = self.delta_g_values()
            ginv = self.ginv_values()
            combo = (
                np.einsum("...bsc->...sbc", dg)
                + np.einsum("...csb->...sbc", dg)
                - np.einsum("...sbc->...sbc", dg)
            )
            return 0.5 * np.einsum("...as,...sbc->...abc", ginv, combo)

        return self._cached("gamma", build)

    def landsberg_values(self) -> np.ndarray:
        return self._cached(
            "landsberg", lambda: self.berwald_values() - self.gamma_values()
        )

    def j_values(self) -> np.ndarray:
        return self._cached(
            "J", lambda: np.einsum("...mam->...a", self.landsberg_values())
        )

    # -- composed-mode extras ---------------------------------------------------

    def _need_section(self):
        if self.section is None:
            raise ValueError("this operation requires a section context")

    def ds_values(self) -> np.ndarray:
        """ds^a/dx^mu: (..., a, mu)."""
        self._need_section()

        def build():
            n = self.n
            out = np.empty(self.x.shape[:-1] + (n, n))
            for a in range(n):
                for mu in range(n):
                    out[..., a, mu] = self._yjets[a].derivative(mu).value
            return out

        return self._cached("ds", build)

    def section_D_values(self) -> np.ndarray:
        """D_mu s^a = ds^a/dx^mu + N^a_mu(x, s(x)): (..., a, mu)."""
        self._need_section()
        return self._cached("Ds", lambda: self.ds_values() + self.nonlinear())

    def pullback_metric_dx(self) -> np.ndarray:
        """Total x-derivative of (s*g)_{ab}: (..., mu, a, b)."""
        self._need_section()

        def build():
            sg = self.restrict_to_section(self.g_jet(1))
            return np.stack(
                [_matrix_values(sg, deriv=mu) for mu in range(self.n)], axis=-3
            )

        return self._cached("dsg", build)

    def pullback_christoffels(self) -> np.ndarray:
        """Levi-Civita coefficients of the pullback metric s*g at x."""
        self._need_section()

        def build():
            dg = self.pullback_metric_dx()
            ginv = self.ginv_values()   # (s*g)^{-1} = g^{-1}(x, s(x))
            combo = (
                np.einsum("...bsc->...sbc", dg)
                + np.einsum("...csb->...sbc", dg)
                - np.einsum("...sbc->...sbc", dg)
            )
            return 0.5 * np.einsum("...as,...sbc->...abc", ginv, combo)

        return self._cached("pullback_christoffel", build)

    def composed_dx_value(self, jet: Jet) -> np.ndarray:
        """Total x-derivative of the composed restriction: (..., n)."""
        self._need_section()
        r = self.restrict_to_section(jet)
        return np.stack([r.derivative(mu).value for mu in range(self.n)], axis=-1)


def _stack(jets, matrix: bool = False) -> Jet:
    """Stack scalar jets into a component jet (rows of rows when matrix)."""
    dim = jets[0].dim
    order = min(j.order for j in jets)
    coeff_list = [np.asarray(j.truncate(order).coeffs) for j in jets]
    shape = np.broadcast_shapes(*[c.shape for c in coeff_list])
    coeff_list = [np.broadcast_to(c, shape) for c in coeff_list]
    coeffs = np.stack(coeff_list, axis=-2 if not matrix else -3)
    return Jet(dim, order, coeffs)


def _matrix_values(g: Jet, deriv: int | None = None, dx_fixed=None) -> np.ndarray:
    """Values of a matrix jet (..., n, n, T), optionally of one derivative."""
    n = g.coeffs.shape[-2]
    out = np.empty(g.coeffs.shape[:-1])
    for a in range(n):
        for b in range(g.coeffs.shape[-3]):
            entry = g.comp(b, a)
            if deriv is not None:
                entry = entry.derivative(deriv)
            if dx_fixed is not None:
                ctx, mu = dx_fixed
                entry = ctx.dx_fixed(entry, mu)
            out[..., b, a] = entry.value
    return out


# -- public single-point operations -------------------------------------------


def _context(spec, p, order=4) -> FiberContext:
    p = _as_point(p)
    return FiberContext(spec, p.x, y=p.y, order=order)


def metric(spec: LagrangianSpec, p, check: bool = True) -> TensorBlock:
    """Fundamental tensor g_{mn}: the vertical Hessian of the Lagrangian."""
    p = _as_point(p)
    ctx = FiberContext(spec, p.x, y=p.y, order=2)
    return TensorBlock(spec.dim, ("down", "down"), ctx.metric_values(check=check), p)


def inverse_metric(spec: LagrangianSpec, p) -> TensorBlock:
    p = _as_point(p)
    ctx = FiberContext(spec, p.x, y=p.y, order=2)
    return TensorBlock(spec.dim, ("up", "up"), ctx.ginv_values(), p)


def cartan_torsion(spec: LagrangianSpec, p) -> TensorBlock:
    p = _as_point(p)
    ctx = FiberContext(spec, p.x, y=p.y, order=3)
    return TensorBlock(spec.dim, ("down", "down", "down"), ctx.cartan_values(), p)


def mean_cartan_torsion(spec: LagrangianSpec, p, method: str = "contract") -> TensorBlock:
    p = _as_point(p)
    ctx = FiberContext(spec, p.x, y=p.y, order=3)
    if method == "contract":
        entries = ctx.mean_cartan_contract()
    elif method == "logdet":
        entries = ctx.mean_cartan_logdet()
    else:
        raise ValueError("method must be 'contract' or 'logdet'")
    return TensorBlock(spec.dim, ("down",), entries, p)


def spray(spec: LagrangianSpec, p) -> TensorBlock:
    p = _as_point(p)
    ctx = FiberContext(spec, p.x, y=p.y, order=3)
    return TensorBlock(spec.dim, ("up",), ctx.spray_values(), p)


def nonlinear_connection(spec: LagrangianSpec, p) -> TensorBlock:
    p = _as_point(p)
    ctx = FiberContext(spec, p.x, y=p.y, order=4)
    return TensorBlock(spec.dim, ("up", "down"), ctx.nonlinear(), p)


def berwald_coeffs(spec: LagrangianSpec, p) -> TensorBlock:
    p = _as_point(p)
    ctx = FiberContext(spec, p.x, y=p.y, order=4)
    return TensorBlock(spec.dim, ("up", "down", "down"), ctx.berwald_values(), p)


def chern_rund_coeffs(spec: LagrangianSpec, p) -> TensorBlock:
    p = _as_point(p)
    ctx = FiberContext(spec, p.x, y=p.y, order=4)
    return TensorBlock(spec.dim, ("up", "down", "down"), ctx.gamma_values(), p)


def landsberg(spec: LagrangianSpec, p):
    """Landsberg tensor (Berwald minus Chern-Rund) and its trace J."""
    p = _as_point(p)
    ctx = FiberContext(spec, p.x, y=p.y, order=4)
    lt = TensorBlock(spec.dim, ("up", "down", "down"), ctx.landsberg_values(), p)
    jt = TensorBlock(spec.dim, ("down",), ctx.j_values(), p)
    return lt, jt


def delta_derivative(spec: LagrangianSpec, field, p, index: int) -> float:
    """delta field / delta x^mu = (d_x - N d_y) field at p."""
    p = _as_point(p)
    ctx = FiberContext(spec, p.x, y=p.y, order=4)
    ast = expr.parse(field, spec.dim) if isinstance(field, str) else field
    j = ctx.eval_scalar(ast)
    return float(ctx.delta_values(j)[..., index])


def trace_identity_residual(spec: LagrangianSpec, p) -> float:
    """max_a | Gamma^m_{am} - delta_a ln sqrt|det g| |, scale-normalized.

    Left side traces the Chern-Rund coefficients; right side differentiates a
    jet-valued log-determinant: independent code paths.
    """
    p = _as_point(p)
    ctx = FiberContext(spec, p.x, y=p.y, order=4)
    lhs = np.einsum("...mam->...a", ctx.gamma_values())
    ld = ctx.logdet_jet(1)
    rhs = 0.5 * ctx.delta_values(ld)
    return normalized_max(lhs - rhs, lhs, rhs)
