"""Built-in parameterized Finsler Lagrangians with admissibility predicates.

Every entry carries the expression tree of its Lagrangian (2-homogeneous in
the fiber variable y), a vectorized admissible-cone predicate, and a
reference vector seeding the intended cone component.  Admissibility is a
hard precondition of every tensor evaluation downstream: evaluation at an
inadmissible point raises, never silently returns NaN.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import expr
from .errors import InadmissiblePointError
from .jets import Jet, seed_variables

__all__ = [
    "LagrangianSpec",
    "build_lagrangian",
    "homogeneity_residual",
    "detect_signature",
    "CATALOG_IDS",
]

CATALOG_IDS = (
    "minkowski",
    "quadratic_metric",
    "affine_sphere_friedmann",
    "quartic",
    "custom_expression",
)


@dataclass
class LagrangianSpec:
    id: str
    dim: int
    params: dict
    ast: object
    admissible: callable              # (x (...,n), y (...,n)) -> bool array
    reference_vector: np.ndarray      # a vector inside the intended cone
    expected_signature: tuple | None = None
    sampling_radius: float = 0.35
    param_values: dict = field(default_factory=dict)  # numeric params for eval

    def eval_direct(self, x, y):
        """Lagrangian value by plain floating-point evaluation (no jets)."""
        env = _float_env(self.dim, x, y)
        return expr.eval_float(self.ast, env, self.param_values)

    def check_admissible(self, x, y):
        ok = np.asarray(self.admissible(np.asarray(x, float), np.asarray(y, float)))
        if not np.all(ok):
            bad = int(np.argmin(ok.reshape(-1)))
            raise InadmissiblePointError(
                f"point outside the admissible cone of {self.id!r} "
                f"(first offender at flat index {bad})"
            )


def _float_env(n, x, y):
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    env = {f"x{i}": x[..., i] for i in range(n)}
    env.update({f"y{i}": y[..., i] for i in range(n)})
    return env


def _norm_inf(v):
    return np.max(np.abs(v), axis=-1)


# -- entry builders -----------------------------------------------------------


def _minkowski(dim, params):
    body = " + ".join(f"y{i}^2" for i in range(1, dim))
    ast = expr.parse(f"0.5*(-(y0^2) + {body})", dim)

    def admissible(x, y):
        return _norm_inf(y) > 0.0

    return LagrangianSpec(
        id="minkowski",
        dim=dim,
        params=dict(params),
        ast=ast,
        admissible=admissible,
        reference_vector=np.array([1.0] + [0.0] * (dim - 1)),
        expected_signature=(-1,) + (1,) * (dim - 1),
        sampling_radius=0.45,
    )


def _quadratic_metric(dim, params):
    matrix = params.get("matrix")
    if matrix is None:
        raise ValueError("quadratic_metric requires params['matrix'] (n x n expressions in x)")
    if len(matrix) != dim or any(len(row) != dim for row in matrix):
        raise ValueError(f"quadratic_metric matrix must be {dim}x{dim}")
    entries = [[expr.parse(str(matrix[i][j]), dim) for j in range(dim)] for i in range(dim)]
    for i in range(dim):
        for j in range(i + 1, dim):
            if entries[i][j] != entries[j][i]:
                raise ValueError(f"quadratic_metric matrix must be symmetric; entry ({i},{j}) differs")
    terms = " + ".join(f"({matrix[i][j]})*y{i}*y{j}" for i in range(dim) for j in range(dim))
    ast = expr.parse(f"0.5*({terms})", dim)

    def admissible(x, y, entries=entries, n=dim):
        env = _float_env(n, x, y)
        with np.errstate(all="ignore"):
            vals = [expr.eval_float(e, env) for row in entries for e in row]
        finite = np.ones(np.shape(_norm_inf(y)), dtype=bool)
        for v in vals:
            finite = finite & np.isfinite(np.asarray(v, dtype=float) + 0.0 * _norm_inf(y))
        return (_norm_inf(y) > 0.0) & finite

    reference = np.asarray(params.get("reference", [1.0] + [0.0] * (dim - 1)), float)
    return LagrangianSpec(
        id="quadratic_metric",
        dim=dim,
        params=dict(params),
        ast=ast,
        admissible=admissible,
        reference_vector=reference,
        expected_signature=tuple(params["signature"]) if "signature" in params else None,
        sampling_radius=0.45,
    )


_AFFINE_TEMPLATE = (
    "-(2/3^(3/4))"
    " * ((0.5*y0 + (3^(1/2)/2)*a*y3)^2)^(1/4)"
    " * (((3^(1/2)/2)*y0 - 0.5*a*y3)^2 - a^2*(y1^2 + y2^2))^(3/4)"
)


def _affine_sphere_friedmann(dim, params):
    if dim != 4:
        raise ValueError("affine_sphere_friedmann requires dim = 4")
    a_text = str(params.get("a", "1"))
    a_ast = expr.parse(a_text, dim)
    bad = expr.variables_used(a_ast) - {"x0"}
    if bad:
        raise ValueError(f"scale factor a(t) may reference x0 only, found {sorted(bad)}")
    ast = expr.substitute_params(expr.parse(_AFFINE_TEMPLATE, dim), {"a": a_ast})

    def admissible(x, y, a_ast=a_ast):
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        with np.errstate(all="ignore"):
            a = np.asarray(expr.eval_float(a_ast, {"x0": x[..., 0]}), float)
        alpha = 0.5 * y[..., 0] + (np.sqrt(3.0) / 2.0) * a * y[..., 3]
        beta = (np.sqrt(3.0) / 2.0) * y[..., 0] - 0.5 * a * y[..., 3]
        rho2 = y[..., 1] ** 2 + y[..., 2] ** 2
        # full smooth domain: alpha != 0 and positive radicand; cone
        # components are selected by seed vectors downstream
        return (
            np.isfinite(a) & (a > 0.0) & (alpha != 0.0)
            & (beta * beta - a * a * rho2 > 0.0)
        )

    return LagrangianSpec(
        id="affine_sphere_friedmann",
        dim=4,
        params=dict(params),
        ast=ast,
        admissible=admissible,
        reference_vector=np.array([1.0, 0.0, 0.0, 0.0]),
        expected_signature=(-1, 1, 1, 1),
        sampling_radius=0.18,
    )


def _quartic(dim, params):
    sign = int(params.get("sign", 1))
    if sign not in (1, -1):
        raise ValueError("quartic sign must be +1 or -1")
    body = " + ".join(f"y{i}^4" for i in range(1, dim))
    ast = expr.substitute_params(
        expr.parse(f"0.5*s*(s*(-(y0^4) + {body}))^(1/2)", dim),
        {"s": expr.Const(float(sign))},
    )

    def admissible(x, y, s=sign, n=dim):
        y = np.asarray(y, float)
        q = -(y[..., 0] ** 4) + np.sum(y[..., 1:] ** 4, axis=-1)
        return s * q > 0.0

    if sign == 1:
        reference = np.array([0.35, 1.0, 0.8, 0.9, 0.7][:dim])
    else:
        reference = np.array([1.0, 0.45, 0.35, 0.3, 0.25][:dim])
    return LagrangianSpec(
        id="quartic",
        dim=dim,
        params=dict(params, sign=sign),
        ast=ast,
        admissible=admissible,
        reference_vector=reference,
        sampling_radius=0.16,
    )


def _custom_expression(dim, params):
    text = params.get("expression")
    if text is None:
        raise ValueError("custom_expression requires params['expression']")
    ast = expr.parse(str(text), dim)
    reference = np.asarray(params.get("reference", [1.0] * dim), float)
    if reference.shape != (dim,):
        raise ValueError(f"reference vector must have length {dim}")

    def admissible(x, y, ast=ast, n=dim):
        env = _float_env(n, x, y)
        with np.errstate(all="ignore"):
            val = expr.eval_float(ast, env)
        val = np.asarray(val, float)
        return (_norm_inf(np.asarray(y, float)) > 0.0) & np.isfinite(val)

    return LagrangianSpec(
        id="custom_expression",
        dim=dim,
        params=dict(params),
        ast=ast,
        admissible=admissible,
        reference_vector=reference,
        sampling_radius=float(params.get("sampling_radius", 0.2)),
    )


_BUILDERS = {
    "minkowski": _minkowski,
    "quadratic_metric": _quadratic_metric,
    "affine_sphere_friedmann": _affine_sphere_friedmann,
    "quartic": _quartic,
    "custom_expression": _custom_expression,
}


def build_lagrangian(id: str, dim: int, params: dict | None = None) -> LagrangianSpec:
    """Instantiate a catalog entry.

    Raises ValueError on an unknown id, malformed params, or dim mismatch.
    """
    if id not in _BUILDERS:
        raise ValueError(f"unknown catalog id {id!r}; known: {', '.join(CATALOG_IDS)}")
    if not 2 <= dim <= 5:
        raise ValueError("dimension must be between 2 and 5")
    return _BUILDERS[id](dim, params or {})


def friedmann_matrix(a_text: str, dim: int = 4) -> list:
    """Convenience matrix for quadratic_metric: diag(-1, a^2, ..., a^2)."""
    out = [["0"] * dim for _ in range(dim)]
    out[0][0] = "-1"
    for i in range(1, dim):
        out[i][i] = f"({a_text})^2"
    return out


# -- operations ----------------------------------------------------------------


def homogeneity_residual(spec: LagrangianSpec, x, y):
    """Euler residual y^mu dL/dy^mu - 2 L; zero for a valid 2-homogeneous L."""
    spec.check_admissible(x, y)
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    n = spec.dim
    point = np.concatenate([x, y], axis=-1)
    jets = seed_variables(point, list(range(n, 2 * n)), 1)
    env = {f"x{i}": jets[i] for i in range(n)}
    env.update({f"y{i}": jets[n + i] for i in range(n)})
    L = expr.eval_jet(spec.ast, env, spec.param_values)
    grad = np.stack([L.derivative(i).value for i in range(n)], axis=-1)
    return np.einsum("...i,...i->...", y, grad) - 2.0 * L.value


def detect_signature(g: np.ndarray) -> tuple:
    """Signature of a symmetric matrix by pivot signs of its LDL^T
    factorization: (-1,...,+1,...) sorted ascending."""
    g = np.asarray(g, float)
    _, d, _ = scipy.linalg.ldl(g)
    eigs = []
    i = 0
    n = g.shape[0]
    while i < n:
        if i + 1 < n and abs(d[i + 1, i]) > 1e-14 * max(1.0, abs(d[i, i])):
            block = d[i : i + 2, i : i + 2]
            eigs.extend(np.linalg.eigvalsh(block))
            i += 2
        else:
            eigs.append(d[i, i])
            i += 1
    return tuple(sorted(1 if e > 0 else -1 for e in eigs))
