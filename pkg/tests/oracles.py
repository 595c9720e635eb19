"""Independent numerical oracles for the test suite: finite differences,
closed-form Christoffel symbols, and Lie derivatives.  None of these touch
the jet machinery."""

import numpy as np


def fd1(f, x, h=1e-2):
    """5-point central first derivative."""
    return (f(x - 2 * h) - 8 * f(x - h) + 8 * f(x + h) - f(x + 2 * h)) / (12 * h)


def fd2(f, x, h=1e-2):
    """5-point central second derivative."""
    return (
        -f(x - 2 * h) + 16 * f(x - h) - 30 * f(x) + 16 * f(x + h) - f(x + 2 * h)
    ) / (12 * h * h)


def _fd3_plain(f, x, h):
    return (f(x + 2 * h) - 2 * f(x + h) + 2 * f(x - h) - f(x - 2 * h)) / (2 * h**3)


def _fd4_plain(f, x, h):
    return (
        f(x - 2 * h) - 4 * f(x - h) + 6 * f(x) - 4 * f(x + h) + f(x + 2 * h)
    ) / h**4


def fd3(f, x, h=1e-2):
    """Richardson-extrapolated central third derivative (O(h^4))."""
    return (4 * _fd3_plain(f, x, h / 2) - _fd3_plain(f, x, h)) / 3


def fd4(f, x, h=2e-2):
    """Richardson-extrapolated central fourth derivative (O(h^4))."""
    return (4 * _fd4_plain(f, x, h / 2) - _fd4_plain(f, x, h)) / 3


def fd_derivatives(f, x, h=1e-2):
    """Derivatives of orders 0..4 of a univariate function."""
    return np.array([f(x), fd1(f, x, h), fd2(f, x, h), fd3(f, x, h), fd4(f, x, h)])


def fd_gradient(f, x, h=1e-5):
    """Componentwise 5-point gradient of f: R^n -> R."""
    x = np.asarray(x, float)
    out = np.empty(x.size)
    for i in range(x.size):
        def fi(t, i=i):
            xx = x.copy()
            xx[i] = t
            return f(xx)
        out[i] = fd1(fi, x[i], h)
    return out


def fd_hessian(f, x, h=1e-3):
    """Nested 5-point Hessian of f: R^n -> R."""
    x = np.asarray(x, float)
    n = x.size
    out = np.empty((n, n))
    for i in range(n):
        def gi(t, i=i):
            xx = x.copy()
            xx[i] = t
            return f(xx)
        out[i, i] = fd2(gi, x[i], h)
        for j in range(i + 1, n):
            def gij(t, i=i, j=j):
                xx = x.copy()
                xx[j] = t

                def fi(u, xx=xx, i=i):
                    yy = xx.copy()
                    yy[i] = u
                    return f(yy)

                return fd1(fi, xx[i], h)
            out[i, j] = out[j, i] = fd1(gij, x[j], h)
    return out


def friedmann_christoffels(a, adot, dim=4):
    """Levi-Civita symbols of g = diag(-1, a^2, ..., a^2):
    Gamma^0_{ii} = a adot, Gamma^i_{0i} = Gamma^i_{i0} = adot / a."""
    G = np.zeros((dim, dim, dim))
    for i in range(1, dim):
        G[0, i, i] = a * adot
        G[i, 0, i] = G[i, i, 0] = adot / a
    return G


def lie_derivative_metric(gfun, sfun, x, h=1e-5):
    """(L_s g)_{cd} = s^m d_m g_{cd} + g_{md} d_c s^m + g_{cm} d_d s^m for an
    x-dependent metric matrix function and a vector field, by finite
    differences."""
    x = np.asarray(x, float)
    n = x.size
    g = gfun(x)
    s = sfun(x)
    dg = np.empty((n, n, n))
    ds = np.empty((n, n))
    for m in range(n):
        def gm(t, m=m):
            xx = x.copy()
            xx[m] = t
            return gfun(xx)

        def sm(t, m=m):
            xx = x.copy()
            xx[m] = t
            return sfun(xx)

        dg[m] = fd1(gm, x[m], h)
        ds[:, m] = fd1(sm, x[m], h)
    return (
        np.einsum("m,mcd->cd", s, dg)
        + np.einsum("md,cm->cd", g, ds)
        + np.einsum("cm,dm->cd", g, ds)
    )
