import math

import numpy as np
import pytest

from finslerkit.errors import DegenerateMetricError, JetDomainError
from finslerkit.jets import (
    Jet,
    extract_partial,
    jet_apply,
    jet_det,
    jet_inv,
    jet_solve,
    seed_variables,
)
from finslerkit.multiindex import index_table, n_terms

from oracles import fd_derivatives


def test_identity_seed():
    (u,) = seed_variables([2.0], {0}, 2)
    assert u.coeffs.tolist() == [2.0, 1.0, 0.0]


def test_inactive_seed():
    a, b = seed_variables([0.0, 3.0], {1}, 1)
    assert b.value == 3.0
    assert b.coeffs[1] == 1.0
    assert np.all(a.coeffs == 0.0)


def test_cube_of_seed():
    (u,) = seed_variables([2.0], [0], 2)
    cube = u * u * u
    assert cube.value == 8.0
    assert extract_partial(cube, (1,)) == 12.0
    # second Taylor coefficient 6u/2! = 6, i.e. second derivative 12
    assert extract_partial(cube, (2,)) == 12.0
    assert cube.coeffs[2] == 6.0


def test_mul_of_seeds():
    u, v = seed_variables([1.0, 2.0], [0, 1], 2)
    p = jet_apply("mul", [u, v])
    table = index_table(2, 2)
    coeffs = {tuple(table.indices[i]): p.coeffs[i] for i in range(table.size)}
    assert coeffs[(0, 0)] == 2.0
    assert coeffs[(1, 0)] == 2.0  # d/du = v
    assert coeffs[(0, 1)] == 1.0  # d/dv = u
    assert coeffs[(1, 1)] == 1.0
    assert coeffs[(2, 0)] == 0.0 and coeffs[(0, 2)] == 0.0


def test_pow_rational_derivative():
    (w,) = seed_variables([16.0], [0], 2)
    p = jet_apply("pow_rational", [w], exponent=(3, 4))
    assert abs(p.value - 8.0) < 1e-12
    assert abs(extract_partial(p, (1,)) - 0.375) < 1e-12


def test_exp_sin_against_finite_differences():
    (t,) = seed_variables([0.7], [0], 4)
    j = jet_apply("exp", [jet_apply("sin", [t])])
    expected = fd_derivatives(lambda x: math.exp(math.sin(x)), 0.7)
    for k in range(5):
        got = extract_partial(j, (k,))
        assert abs(got - expected[k]) <= 1e-6 * max(1.0, abs(expected[k]))


def test_extract_partial_examples():
    u, v = seed_variables([3.0, 5.0], [0, 1], 3)
    j = u * u * v
    assert extract_partial(j, (0, 0)) == 45.0
    assert extract_partial(j, (1, 1)) == 6.0
    with pytest.raises(ValueError):
        extract_partial(j, (2, 2))


def test_seed_errors():
    with pytest.raises(ValueError):
        seed_variables([1.0], [0], 5)
    with pytest.raises(ValueError):
        seed_variables([1.0], [0], -1)
    with pytest.raises(ValueError):
        seed_variables([1.0, 2.0], [0, 0], 2)


def test_domain_errors():
    (u,) = seed_variables([-1.0], [0], 2)
    with pytest.raises(JetDomainError):
        u.log()
    with pytest.raises(JetDomainError):
        u.sqrt()
    with pytest.raises(JetDomainError):
        u.powr(1, 3)
    (z,) = seed_variables([0.0], [0], 2)
    with pytest.raises(JetDomainError):
        z.reciprocal()
    with pytest.raises(JetDomainError):
        z.absolute()
    # abs on the smooth branch
    assert u.absolute().value == 1.0
    assert extract_partial(u.absolute(), (1,)) == -1.0


def test_jet_apply_preconditions():
    (a,) = seed_variables([1.0], [0], 2)
    (b,) = seed_variables([1.0], [0], 3)
    with pytest.raises(ValueError):
        jet_apply("add", [a, b])
    with pytest.raises(ValueError):
        jet_apply("frobnicate", [a])
    with pytest.raises(ValueError):
        jet_apply("pow_rational", [a])


def test_polynomial_exactness_8_ulps(rng):
    """Polynomial inputs of degree <= order are reproduced exactly to ulps."""
    for _ in range(20):
        c = rng.uniform(-2, 2, (3, 3))
        x0, y0 = rng.uniform(0.5, 1.5, 2)
        u, v = seed_variables([x0, y0], [0, 1], 4)
        jet = Jet.constant(0.0, 2, 4)
        for i in range(3):
            for j in range(3):
                if i + j > 4:
                    continue
                jet = jet + c[i, j] * u._int_pow(i) * v._int_pow(j)
        for i in range(3):
            for j in range(3):
                if i + j > 4:
                    continue
                exact = c[i, j] * math.factorial(i) * math.factorial(j)
                for p in range(i + 1, 3):
                    if p + j <= 4:
                        pass
                # analytic partial of sum c_ij u^i v^j at (x0, y0)
                val = 0.0
                for a in range(i, 3):
                    for b in range(j, 3):
                        val += (
                            c[a, b]
                            * math.perm(a, i)
                            * math.perm(b, j)
                            * x0 ** (a - i)
                            * y0 ** (b - j)
                        )
                got = extract_partial(jet, (i, j))
                tol = 8 * np.spacing(max(abs(val), 1.0)) * 10
                assert abs(got - val) <= max(tol, 8 * np.spacing(abs(val) + 1e-300))


_SAFE_OPS = [
    ("sin", np.sin, Jet.sin),
    ("cos", np.cos, Jet.cos),
    ("exp", lambda t: np.exp(0.5 * t), lambda j: (j * 0.5).exp()),
    ("log1p2", lambda t: np.log(1.0 + t * t), lambda j: (1.0 + j * j).log()),
    ("sqrt1p2", lambda t: np.sqrt(1.0 + t * t), lambda j: (1.0 + j * j).sqrt()),
    ("recip", lambda t: 1.0 / (2.0 + np.sin(t)), lambda j: 1.0 / (2.0 + j.sin())),
    ("pow34", lambda t: (1.5 + np.sin(t)) ** 0.75, lambda j: (1.5 + j.sin()).powr(3, 4)),
]


def test_random_composites_match_finite_differences(rng):
    """Chain/Leibniz structure on 100 random smooth composites vs the
    finite-difference oracle, relative error < 1e-6."""
    for _ in range(100):
        k1, k2 = rng.integers(0, len(_SAFE_OPS), 2)
        c = rng.uniform(0.4, 1.2)
        x0 = rng.uniform(0.2, 1.0)

        def f(t, k1=k1, k2=k2, c=c):
            inner = _SAFE_OPS[k1][1](t)
            return _SAFE_OPS[k2][1](c * inner) * inner

        (u,) = seed_variables([x0], [0], 4)
        inner = _SAFE_OPS[k1][2](u)
        jet = _SAFE_OPS[k2][2](c * inner) * inner
        expected = fd_derivatives(f, x0)
        scale = np.max(np.abs(expected)) + 1.0
        for k in range(5):
            assert abs(extract_partial(jet, (k,)) - expected[k]) <= 1e-6 * scale


def test_truncation_closure():
    u, v = seed_variables([1.3, 0.7], [0, 1], 2)
    prod = (u * u) * (v * v)  # true degree 4; truncated storage stays order 2
    assert prod.coeffs.shape[-1] == n_terms(2, 2)
    assert prod.order == 2
    # order mixing truncates to the lower order
    assert (u.truncate(1) + v).order == 1


def test_jet_matrix_solve_det_inverse(rng):
    x, y = seed_variables([0.3, 0.8], [0, 1], 2)
    entries = [[1.0 + x * x, x * y], [x * y, 2.0 + y]]
    coeffs = np.empty((2, 2, n_terms(2, 2)))
    for i in range(2):
        for j in range(2):
            coeffs[i, j] = entries[i][j].coeffs
    A = Jet(2, 2, coeffs)
    Ainv = jet_inv(A)
    # A @ Ainv reproduces the identity jet in every coefficient
    for i in range(2):
        for j in range(2):
            acc = Jet.constant(0.0, 2, 2)
            for k in range(2):
                acc = acc + A.comp(i, k) * Ainv.comp(k, j)
            target = 1.0 if i == j else 0.0
            expect = np.zeros(n_terms(2, 2))
            expect[0] = target
            assert np.max(np.abs(acc.coeffs - expect)) < 1e-13
    det = jet_det(A)
    assert abs(det.value - ((1 + 0.09) * 2.8 - 0.24**2)) < 1e-12
    # solve matches inverse action on a vector of jets
    b = Jet(2, 2, np.stack([x.coeffs, y.coeffs], axis=-2))
    sol = jet_solve(A, b)
    recon0 = A.comp(0, 0) * sol.comp(0) + A.comp(0, 1) * sol.comp(1)
    assert np.max(np.abs(recon0.coeffs - x.coeffs)) < 1e-12


def test_jet_solve_singular_raises():
    ones = Jet.constant(np.ones((2, 2)), 2, 2)
    b = Jet.constant(np.ones(2), 2, 2)
    with pytest.raises(DegenerateMetricError):
        jet_solve(ones, b)


def test_batched_matches_scalar(rng):
    pts = rng.uniform(0.5, 1.5, (6, 2))
    jets = seed_variables(pts, [0, 1], 3)
    batched = (jets[0].sin() * jets[1]).exp()
    for i in range(6):
        u, v = seed_variables(pts[i], [0, 1], 3)
        single = (u.sin() * v).exp()
        assert np.allclose(batched.coeffs[i], single.coeffs, rtol=0, atol=1e-15)
