"""Graded-lexicographic multi-index tables for dense truncated Taylor storage.

A jet of dimension ``d`` and order ``m`` stores one coefficient per multi-index
of total degree <= m.  Indices are enumerated by (degree, lexicographic) rank,
so the enumeration for order m-1 is a prefix of the one for order m and
truncation is a slice.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

MAX_ORDER = 4
MAX_DIM = 10


def n_terms(dim: int, order: int) -> int:
    return math.comb(dim + order, order)


@dataclass(frozen=True)
class IndexTable:
    """Enumeration plus multiplication/derivative maps for one (dim, order)."""

    dim: int
    order: int
    indices: np.ndarray        # (T, dim) exponent rows, graded-lex order
    factorials: np.ndarray     # (T,) multi-index factorials
    rank: dict                 # exponent tuple -> position
    mul_left: np.ndarray       # flattened pair table, sorted by output rank
    mul_right: np.ndarray
    mul_starts: np.ndarray     # reduceat offsets, one segment per output rank
    deriv_src: tuple           # per variable: source ranks of d/dx_i
    deriv_fac: tuple           # per variable: multiplicity factors

    @property
    def size(self) -> int:
        return self.indices.shape[0]


def _enumerate(dim: int, order: int) -> np.ndarray:
    rows = []
    for deg in range(order + 1):
        rows.extend(
            idx
            for idx in itertools.product(range(deg + 1), repeat=dim)
            if sum(idx) == deg
        )
    return np.array(rows, dtype=np.int64).reshape(len(rows), dim)


@lru_cache(maxsize=None)
def index_table(dim: int, order: int) -> IndexTable:
    if not 1 <= dim <= MAX_DIM:
        raise ValueError(f"jet dimension must be in [1, {MAX_DIM}], got {dim}")
    if not 0 <= order <= MAX_ORDER:
        raise ValueError(f"jet order must be in [0, {MAX_ORDER}], got {order}")

    indices = _enumerate(dim, order)
    T = indices.shape[0]
    rank = {tuple(row): i for i, row in enumerate(indices)}
    factorials = np.array(
        [math.prod(math.factorial(int(e)) for e in row) for row in indices],
        dtype=np.float64,
    )

    # Dense rank lookup through a mixed-radix encoding of the exponents.
    radix = order + 1
    codes = indices @ (radix ** np.arange(dim))
    code_to_rank = np.full(radix**dim, -1, dtype=np.int64)
    code_to_rank[codes] = np.arange(T)

    # All coefficient pairs whose degrees still fit, grouped by output rank.
    degs = indices.sum(axis=1)
    left, right = np.meshgrid(np.arange(T), np.arange(T), indexing="ij")
    keep = (degs[left] + degs[right]) <= order
    left, right = left[keep], right[keep]
    out = code_to_rank[codes[left] + codes[right]]
    perm = np.lexsort((right, left, out))
    left, right, out = left[perm], right[perm], out[perm]
    starts = np.searchsorted(out, np.arange(T))

    deriv_src = []
    deriv_fac = []
    T_lower = n_terms(dim, order - 1) if order > 0 else 0
    for i in range(dim):
        if order == 0:
            deriv_src.append(np.empty(0, dtype=np.int64))
            deriv_fac.append(np.empty(0))
            continue
        lower = indices[:T_lower]
        src = code_to_rank[(lower @ (radix ** np.arange(dim))) + radix**i]
        deriv_src.append(src)
        deriv_fac.append((lower[:, i] + 1).astype(np.float64))

    return IndexTable(
        dim=dim,
        order=order,
        indices=indices,
        factorials=factorials,
        rank=rank,
        mul_left=left,
        mul_right=right,
        mul_starts=starts,
        deriv_src=tuple(deriv_src),
        deriv_fac=tuple(deriv_fac),
    )
