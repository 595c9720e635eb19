"""Truncated multivariate Taylor arithmetic (jets) up to total order 4.

A :class:`Jet` stores the Taylor coefficients (partial derivative divided by
the multi-index factorial) of a scalar function of ``dim`` active variables,
densely, keyed by graded-lexicographic rank.  Arbitrary leading axes of the
coefficient array act as a batch: one Jet object can hold a whole grid of
expansion points, or a tensor of component functions, and every operation
broadcasts over those axes.

This is the sole derivative mechanism of the package: every metric, torsion
and connection coefficient downstream is read off a jet of the Lagrangian.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np

from .errors import DegenerateMetricError, JetDomainError
from .multiindex import MAX_ORDER, index_table, n_terms

__all__ = [
    "Jet",
    "seed_variables",
    "jet_apply",
    "extract_partial",
    "jet_solve",
    "jet_det",
    "jet_inv",
]


class Jet:
    __slots__ = ("dim", "order", "coeffs")

    def __init__(self, dim: int, order: int, coeffs: np.ndarray):
        table = index_table(dim, order)
        coeffs = np.asarray(coeffs, dtype=np.float64)
        if coeffs.shape[-1] != table.size:
            raise ValueError(
                f"expected {table.size} coefficients for dim={dim} order={order}, "
                f"got {coeffs.shape[-1]}"
            )
        self.dim = dim
        self.order = order
        self.coeffs = coeffs

    # -- construction -----------------------------------------------------

    @classmethod
    def constant(cls, value, dim: int, order: int) -> "Jet":
        value = np.asarray(value, dtype=np.float64)
        coeffs = np.zeros(value.shape + (n_terms(dim, order),))
        coeffs[..., 0] = value
        return cls(dim, order, coeffs)

    @classmethod
    def variable(cls, value, var: int, dim: int, order: int) -> "Jet":
        """Seed jet of the coordinate function: value plus unit linear term."""
        out = cls.constant(value, dim, order)
        if order >= 1:
            unit = tuple(1 if i == var else 0 for i in range(dim))
            out.coeffs[..., index_table(dim, order).rank[unit]] = 1.0
        return out

    # -- basics ------------------------------------------------------------

    @property
    def shape(self):
        return self.coeffs.shape[:-1]

    @property
    def value(self) -> np.ndarray:
        return self.coeffs[..., 0]

    def __getitem__(self, key) -> "Jet":
        return Jet(self.dim, self.order, self.coeffs[key])

    def comp(self, *idx) -> "Jet":
        """Select component(s) along trailing component axes (before the
        coefficient axis)."""
        return Jet(self.dim, self.order, self.coeffs[(..., *idx, slice(None))])

    def copy(self) -> "Jet":
        return Jet(self.dim, self.order, self.coeffs.copy())

    def truncate(self, order: int) -> "Jet":
        if order > self.order:
            raise ValueError("cannot raise jet order by truncation")
        if order == self.order:
            return self
        return Jet(self.dim, order, self.coeffs[..., : n_terms(self.dim, order)])

    def derivative(self, var: int) -> "Jet":
        """Formal partial derivative; drops one order."""
        if self.order == 0:
            raise ValueError("cannot differentiate an order-0 jet")
        table = index_table(self.dim, self.order)
        src = table.deriv_src[var]
        fac = table.deriv_fac[var]
        return Jet(self.dim, self.order - 1, self.coeffs[..., src] * fac)

    def partial(self, multi_index) -> np.ndarray:
        """Partial derivative value for one multi-index (coefficient times
        the multi-index factorial)."""
        multi_index = tuple(int(k) for k in multi_index)
        if len(multi_index) != self.dim:
            raise ValueError("multi-index length does not match jet dimension")
        if sum(multi_index) > self.order:
            raise ValueError(
                f"multi-index degree {sum(multi_index)} exceeds jet order {self.order}"
            )
        table = index_table(self.dim, self.order)
        r = table.rank[multi_index]
        return self.coeffs[..., r] * table.factorials[r]

    # -- ring operations ----------------------------------------------------

    def _coerce(self, other):
        if isinstance(other, Jet):
            if other.dim != self.dim:
                raise ValueError("jet dimensions differ")
            m = min(self.order, other.order)
            return self.truncate(m), other.truncate(m)
        return self, Jet.constant(other, self.dim, self.order)

    def __add__(self, other):
        a, b = self._coerce(other)
        return Jet(a.dim, a.order, a.coeffs + b.coeffs)

    __radd__ = __add__

    def __sub__(self, other):
        a, b = self._coerce(other)
        return Jet(a.dim, a.order, a.coeffs - b.coeffs)

    def __rsub__(self, other):
        a, b = self._coerce(other)
        return Jet(a.dim, a.order, b.coeffs - a.coeffs)

    def __neg__(self):
        return Jet(self.dim, self.order, -self.coeffs)

    def __mul__(self, other):
        if not isinstance(other, Jet):
            return Jet(self.dim, self.order, self.coeffs * np.asarray(other, dtype=np.float64)[..., None])
        a, b = self._coerce(other)
        table = index_table(a.dim, a.order)
        prod = a.coeffs[..., table.mul_left] * b.coeffs[..., table.mul_right]
        return Jet(a.dim, a.order, np.add.reduceat(prod, table.mul_starts, axis=-1))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, Jet):
            return self * (1.0 / np.asarray(other, dtype=np.float64))
        a, b = self._coerce(other)
        return a * b.reciprocal()

    def __rtruediv__(self, other):
        return Jet.constant(other, self.dim, self.order) / self

    def __pow__(self, exponent):
        if isinstance(exponent, tuple):
            return self.powr(*exponent)
        return self.powr(exponent)

    # -- analytic composition ------------------------------------------------

    def compose(self, derivs: np.ndarray) -> "Jet":
        """Truncated Taylor composition f(self) given the values
        ``derivs[k] = f^(k)(constant term)`` for k = 0..order.

        Writing the jet as c + h with h the degree>=1 part, the truncated
        algebra satisfies h^(order+1) = 0, so the finite sum
        sum_k f^(k)(c) h^k / k! is exact to rounding.
        """
        h = self.copy()
        h.coeffs[..., 0] = 0.0
        out = Jet.constant(np.broadcast_to(derivs[0], self.shape).copy(), self.dim, self.order)
        power = None
        for k in range(1, self.order + 1):
            power = h if power is None else power * h
            out = out + power * (derivs[k] / math.factorial(k))
        return out

    def reciprocal(self) -> "Jet":
        c = self.value
        if np.any(c == 0.0):
            raise JetDomainError("division by a jet with zero constant term")
        derivs = np.stack(
            [((-1.0) ** k) * math.factorial(k) / c ** (k + 1) for k in range(self.order + 1)]
        )
        return self.compose(derivs)

    def sqrt(self) -> "Jet":
        return self.powr(Fraction(1, 2))

    def exp(self) -> "Jet":
        e = np.exp(self.value)
        return self.compose(np.stack([e] * (self.order + 1)))

    def log(self) -> "Jet":
        c = self.value
        if np.any(c <= 0.0):
            raise JetDomainError("log of a jet with non-positive constant term")
        derivs = [np.log(c)]
        for k in range(1, self.order + 1):
            derivs.append(((-1.0) ** (k - 1)) * math.factorial(k - 1) / c**k)
        return self.compose(np.stack(derivs))

    def sin(self) -> "Jet":
        c = self.value
        cycle = [np.sin(c), np.cos(c), -np.sin(c), -np.cos(c)]
        return self.compose(np.stack([cycle[k % 4] for k in range(self.order + 1)]))

    def cos(self) -> "Jet":
        c = self.value
        cycle = [np.cos(c), -np.sin(c), -np.cos(c), np.sin(c)]
        return self.compose(np.stack([cycle[k % 4] for k in range(self.order + 1)]))

    def absolute(self) -> "Jet":
        """Smooth branch of |.|: sign(constant) times the jet; errors at 0."""
        c = self.value
        if np.any(c == 0.0):
            raise JetDomainError("abs of a jet with zero constant term")
        return self * np.sign(c)

    def powr(self, num, den: int = 1) -> "Jet":
        """Rational power.  Integer exponents use a multiplication chain (any
        base); fractional ones go through exp((p/q) log base), base > 0."""
        if isinstance(num, Fraction):
            num, den = num.numerator, num.denominator
        if isinstance(num, float):
            frac = Fraction(num).limit_denominator(10**6)
            num, den = frac.numerator, frac.denominator
        if den == 0:
            raise JetDomainError("power with zero denominator")
        if den < 0:
            num, den = -num, -den
        g = math.gcd(abs(num), den) or 1
        num, den = num // g, den // g
        if den == 1:
            return self._int_pow(num)
        if np.any(self.value <= 0.0):
            raise JetDomainError(
                "fractional power of a jet with non-positive constant term"
            )
        return (self.log() * (num / den)).exp()

    def _int_pow(self, k: int) -> "Jet":
        if k == 0:
            return Jet.constant(np.ones(self.shape), self.dim, self.order)
        base = self if k > 0 else self.reciprocal()
        out = base
        for _ in range(abs(k) - 1):
            out = out * base
        return out

    def __repr__(self):
        return f"Jet(dim={self.dim}, order={self.order}, shape={self.shape})"


# -- public operations -------------------------------------------------------


def seed_variables(point, active, order: int) -> list:
    """One jet per coordinate of ``point``; active coordinates get a unit
    linear term in their own jet variable (in the order listed)."""
    if not 0 <= order <= MAX_ORDER:
        raise ValueError(f"order must be in [0, {MAX_ORDER}], got {order}")
    active = list(active)
    if len(set(active)) != len(active):
        raise ValueError("active indices must be distinct")
    point = np.asarray(point, dtype=np.float64)
    dim = max(len(active), 1)
    jets = []
    for i in range(point.shape[-1]):
        if i in active:
            jets.append(Jet.variable(point[..., i], active.index(i), dim, order))
        else:
            jets.append(Jet.constant(point[..., i], dim, order))
    return jets


_UNARY = {
    "neg": lambda j: -j,
    "sqrt": Jet.sqrt,
    "exp": Jet.exp,
    "log": Jet.log,
    "sin": Jet.sin,
    "cos": Jet.cos,
    "abs": Jet.absolute,
}

_BINARY = {
    "add": Jet.__add__,
    "sub": Jet.__sub__,
    "mul": Jet.__mul__,
    "div": Jet.__truediv__,
}


def jet_apply(op: str, args, exponent=None) -> Jet:
    """Apply one of the supported elementary operations to jets.

    Binary arguments must share dim and order; ``pow_rational`` takes the
    exponent as an (int, int) pair or Fraction.
    """
    args = list(args)
    for a, b in zip(args, args[1:]):
        if a.dim != b.dim or a.order != b.order:
            raise ValueError("jet_apply arguments must share dim and order")
    if op in _UNARY:
        (j,) = args
        return _UNARY[op](j)
    if op in _BINARY:
        a, b = args
        return _BINARY[op](a, b)
    if op == "pow_rational":
        (j,) = args
        if exponent is None:
            raise ValueError("pow_rational requires an exponent")
        return j.powr(exponent) if not isinstance(exponent, tuple) else j.powr(*exponent)
    raise ValueError(f"unknown jet operation {op!r}")


def extract_partial(jet: Jet, multi_index) -> np.ndarray:
    """Partial derivative of the expanded function at the expansion point."""
    return jet.partial(multi_index)


# -- linear algebra over the jet ring -----------------------------------------


def _as_matrix_coeffs(A: Jet):
    if A.coeffs.ndim < 3:
        raise ValueError("expected a jet with two trailing component axes")
    return A.coeffs


def jet_solve(A: Jet, B: Jet) -> Jet:
    """Solve A X = B where A is (..., n, n) and B is (..., n, m) jets.

    LU factorization with partial pivoting on the constant terms, then jet
    forward/back substitution.  Pivoting per batch element.
    """
    acoef = _as_matrix_coeffs(A).copy()
    n = acoef.shape[-2]
    if acoef.shape[-3] != n:
        raise ValueError("matrix of jets must be square")
    squeeze = B.coeffs.ndim == A.coeffs.ndim - 1
    bcoef = B.coeffs[..., None, :] if squeeze else B.coeffs
    bcoef = np.broadcast_to(
        bcoef, acoef.shape[:-3] + bcoef.shape[-3:]
    ).copy()
    m = bcoef.shape[-2]
    dim, order = A.dim, A.order
    batch = acoef.shape[:-3]

    scale = np.max(np.abs(acoef[..., 0]), axis=(-2, -1))

    def jmul(x, y):
        return (Jet(dim, order, x) * Jet(dim, order, y)).coeffs

    for k in range(n):
        # choose the pivot row by largest constant term, per batch element
        col = np.abs(acoef[..., k:, k, 0])
        rel = np.argmax(col, axis=-1)
        if np.any(np.take_along_axis(col, rel[..., None], axis=-1)[..., 0] <= 1e-14 * np.maximum(scale, 1e-300)):
            raise DegenerateMetricError("jet matrix is singular at the constant level")
        p = rel + k
        perm = np.broadcast_to(np.arange(n), batch + (n,)).copy()
        np.put_along_axis(perm, p[..., None], k, axis=-1)
        perm[..., k] = p
        acoef = np.take_along_axis(acoef, perm[..., :, None, None], axis=-3)
        bcoef = np.take_along_axis(bcoef, perm[..., :, None, None], axis=-3)

        inv_piv = Jet(dim, order, acoef[..., k, k, :]).reciprocal().coeffs
        for i in range(k + 1, n):
            factor = jmul(acoef[..., i, k, :], inv_piv)
            for j in range(k + 1, n):
                acoef[..., i, j, :] -= jmul(factor, acoef[..., k, j, :])
            for j in range(m):
                bcoef[..., i, j, :] -= jmul(factor, bcoef[..., k, j, :])
            acoef[..., i, k, :] = 0.0

    xcoef = np.zeros_like(bcoef)
    for i in range(n - 1, -1, -1):
        inv_piv = Jet(dim, order, acoef[..., i, i, :]).reciprocal().coeffs
        for j in range(m):
            acc = bcoef[..., i, j, :].copy()
            for l in range(i + 1, n):
                acc -= jmul(acoef[..., i, l, :], xcoef[..., l, j, :])
            xcoef[..., i, j, :] = jmul(acc, inv_piv)

    if squeeze:
        xcoef = xcoef[..., 0, :]
    return Jet(dim, order, xcoef)


def jet_det(A: Jet) -> Jet:
    """Determinant over the jet ring via the same pivoted elimination."""
    acoef = _as_matrix_coeffs(A).copy()
    n = acoef.shape[-2]
    dim, order = A.dim, A.order
    batch = acoef.shape[:-3]
    sign = np.ones(batch)

    def jmul(x, y):
        return (Jet(dim, order, x) * Jet(dim, order, y)).coeffs

    for k in range(n - 1):
        col = np.abs(acoef[..., k:, k, 0])
        rel = np.argmax(col, axis=-1)
        p = rel + k
        sign = np.where(p != k, -sign, sign)
        perm = np.broadcast_to(np.arange(n), batch + (n,)).copy()
        np.put_along_axis(perm, p[..., None], k, axis=-1)
        perm[..., k] = p
        acoef = np.take_along_axis(acoef, perm[..., :, None, None], axis=-3)

        piv = Jet(dim, order, acoef[..., k, k, :])
        if np.any(np.abs(piv.value) == 0.0):
            return Jet.constant(np.zeros(batch), dim, order)
        inv_piv = piv.reciprocal().coeffs
        for i in range(k + 1, n):
            factor = jmul(acoef[..., i, k, :], inv_piv)
            for j in range(k + 1, n):
                acoef[..., i, j, :] -= jmul(factor, acoef[..., k, j, :])

    det = Jet(dim, order, acoef[..., 0, 0, :])
    for k in range(1, n):
        det = det * Jet(dim, order, acoef[..., k, k, :])
    return det * sign


def jet_inv(A: Jet) -> Jet:
    acoef = _as_matrix_coeffs(A)
    n = acoef.shape[-2]
    eye = np.zeros(acoef.shape[:-1])
    for i in range(n):
        eye[..., i, i] = 1.0
    identity = Jet.constant(eye, A.dim, A.order)
    return jet_solve(A, identity)
