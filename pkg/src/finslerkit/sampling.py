"""Random admissible fiber points, sections and fields for verification runs.

Sampling is rejection-based around each entry's reference vector and is
deterministic given the RNG; candidates additionally pass a metric
nondegeneracy margin so downstream tensor evaluation never trips the
degeneracy guard.
"""

from __future__ import annotations

import numpy as np

from .catalog import LagrangianSpec
from .connections import SectionField
from .errors import InadmissiblePointError
from .tensors import DEGENERACY_THRESHOLD, FiberContext

__all__ = ["sample_fiber_points", "sample_section", "perturbed_reference_section"]


def sample_fiber_points(spec: LagrangianSpec, rng: np.random.Generator, count: int,
                        x_lower=None, x_upper=None, det_margin: float = 1e-6):
    """Draw admissible (x, y) pairs: y near the reference vector (with a
    random overall scale), x uniform in the given box (default [-0.5, 0.5]^n).
    """
    n = spec.dim
    x_lower = np.full(n, -0.5) if x_lower is None else np.asarray(x_lower, float)
    x_upper = np.full(n, 0.5) if x_upper is None else np.asarray(x_upper, float)
    ref = spec.reference_vector
    radius = spec.sampling_radius * max(1.0, float(np.max(np.abs(ref))))
    xs = np.empty((count, n))
    ys = np.empty((count, n))
    got = 0
    for _ in range(400):
        m = max(count - got, 8)
        x = rng.uniform(x_lower, x_upper, (m, n))
        y = ref + rng.uniform(-radius, radius, (m, n))
        y = y * rng.uniform(0.7, 1.5, (m, 1))
        ok = np.asarray(spec.admissible(x, y), dtype=bool)
        if np.any(ok):
            x, y = x[ok], y[ok]
            ctx = FiberContext(spec, x, y=y, order=2, x_active=False,
                               check_admissible=False)
            g = ctx.metric_values(check=False)
            det = np.abs(np.linalg.det(g))
            rows = np.sqrt(np.sum(g * g, axis=-1))
            margin = det / np.prod(np.maximum(rows, 1e-300), axis=-1)
            keep = margin > max(det_margin, 10 * DEGENERACY_THRESHOLD)
            x, y = x[keep], y[keep]
            take = min(count - got, x.shape[0])
            xs[got : got + take] = x[:take]
            ys[got : got + take] = y[:take]
            got += take
        if got >= count:
            return xs, ys
    raise InadmissiblePointError(
        f"could not sample {count} admissible points for {spec.id!r}"
    )


def perturbed_reference_section(spec: LagrangianSpec, rng: np.random.Generator,
                                amplitude: float = 0.05) -> SectionField:
    """A smooth section wiggling around the reference vector: component a is
    ref_a + sum of small sin/polynomial terms in the chart coordinates."""
    n = spec.dim
    ref = spec.reference_vector
    comps = []
    for a in range(n):
        c = rng.uniform(-amplitude, amplitude, 3)
        i, j = rng.integers(0, n, 2)
        comps.append(
            f"{ref[a]!r} + {c[0]!r}*sin(x{i}) + {c[1]!r}*x{j} + {c[2]!r}*x{i}*x{j}"
        )
    return SectionField.from_exprs(comps, n)


def sample_section(spec: LagrangianSpec, rng: np.random.Generator, xs,
                   amplitude: float = 0.05, tries: int = 60) -> SectionField:
    """Draw a perturbed-reference section admissible at every given x."""
    xs = np.asarray(xs, float)
    for _ in range(tries):
        s = perturbed_reference_section(spec, rng, amplitude)
        vals = s.values(xs, spec.param_values)
        if np.all(spec.admissible(xs, vals)):
            return s
    raise InadmissiblePointError(
        f"could not sample an admissible section for {spec.id!r}"
    )
