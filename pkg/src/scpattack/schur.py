"""Hessian blocks over point subsets and the incremental Schur-complement test.

The dense linear algebra here (Cholesky, triangular solves, the smallest
eigenvalue of a symmetric matrix) is implemented directly; the tolerances in
the docstrings are part of the contract.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .pointset import PointCloud

JITTER_FLOOR = 1e-8
MAX_JITTER = 1e-4


class NotPositiveDefinite(ArithmeticError):
    pass


@dataclass
class HessianBlock:
    indices: list
    matrix: np.ndarray

    def __post_init__(self):
        self.indices = [int(i) for i in self.indices]
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (3 * len(self.indices),) * 2:
            raise ValueError(f"block shape {m.shape} does not match {len(self.indices)} points")
        self.matrix = symmetrize(m)


def symmetrize(m):
    return 0.5 * (m + m.T)


def assemble_block(model, cloud, label, spec, indices, method=None):
    """Hessian of the loss w.r.t. the coordinates of ``indices``, evaluated at the clean cloud.

    One HVP per unit direction on the subset; the subset rows of each product
    form a column of the block.
    """
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    idx = [int(i) for i in indices]
    if len(set(idx)) != len(idx):
        raise ValueError("duplicate indices")
    if any(i < 0 or i >= len(pts) for i in idx):
        raise IndexError("index out of range")
    kw = {} if method is None else {"method": method}
    cols = []
    for i in idx:
        for d in range(3):
            v = np.zeros_like(pts)
            v[i, d] = 1.0
            cols.append(model.hvp(pts, label, spec, v, **kw)[idx].reshape(-1))
    return HessianBlock(idx, np.column_stack(cols) if cols else np.zeros((0, 0)))


# -- dense linear algebra ---------------------------------------------------

def cholesky(m):
    """Lower-triangular L with L L^T = m; raises NotPositiveDefinite."""
    m = np.asarray(m, dtype=np.float64)
    n = m.shape[0]
    L = np.zeros_like(m)
    for j in range(n):
        d = m[j, j] - L[j, :j] @ L[j, :j]
        if not d > 0.0:
            raise NotPositiveDefinite(f"pivot {j} is {d}")
        L[j, j] = math.sqrt(d)
        L[j + 1:, j] = (m[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return L


def solve_lower(L, b):
    """Forward substitution for L x = b (b may have several columns)."""
    x = np.array(b, dtype=np.float64, copy=True)
    for i in range(L.shape[0]):
        x[i] = (x[i] - L[i, :i] @ x[:i]) / L[i, i]
    return x


def tridiagonalize(m):
    """Householder reduction of a symmetric matrix; returns (diagonal, off-diagonal)."""
    a = np.array(m, dtype=np.float64, copy=True)
    n = a.shape[0]
    for k in range(n - 2):
        x = a[k + 1:, k]
        norm = math.sqrt(x @ x)
        if norm == 0.0:
            continue
        alpha = -norm if x[0] >= 0 else norm
        v = x.copy()
        v[0] -= alpha
        vn = math.sqrt(v @ v)
        if vn == 0.0:
            continue
        v /= vn
        sub = a[k + 1:, k + 1:]
        p = sub @ v
        w = p - (v @ p) * v
        sub -= 2.0 * (np.outer(v, w) + np.outer(w, v))
        a[k + 1:, k] = 0.0
        a[k, k + 1:] = 0.0
        a[k + 1, k] = a[k, k + 1] = alpha
    return np.diag(a).copy(), np.array([a[i + 1, i] for i in range(n - 1)])


def _count_below(diag, off2, x):
    """Sturm count: eigenvalues of the tridiagonal matrix strictly below ``x``."""
    count = 0
    q = 1.0
    for i, d in enumerate(diag):
        q = d - x - (off2[i - 1] / q if i else 0.0)
        if q == 0.0:
            q = -1e-300
        if q < 0.0:
            count += 1
    return count


def min_eigenvalue(m):
    """Smallest eigenvalue of a symmetric matrix, to about 1e-12 relative to its scale."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("matrix must be square")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    n = m.shape[0]
    if n == 0:
        raise ValueError("empty matrix")
    if n == 1:
        return float(m[0, 0])
    diag, off = tridiagonalize(symmetrize(m))
    diag = diag.tolist()
    absoff = np.abs(off)
    radius = np.concatenate([[0.0], absoff]) + np.concatenate([absoff, [0.0]])
    lo = float(np.min(np.asarray(diag) - radius))
    hi = float(np.max(np.asarray(diag) + radius))
    off2 = (off * off).tolist()
    tol = 4 * np.finfo(float).eps * max(abs(lo), abs(hi), 1e-300)
    for _ in range(200):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        if _count_below(diag, off2, mid) >= 1:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


# -- incremental factor -----------------------------------------------------

@dataclass
class CholeskyState:
    """Factor of ``matrix + jitter * I`` for the block accepted so far."""
    factor: np.ndarray
    jitter: float
    matrix: np.ndarray

    @property
    def dim(self):
        return self.matrix.shape[0]

    @classmethod
    def from_matrix(cls, a, max_jitter=MAX_JITTER):
        a = symmetrize(np.asarray(a, dtype=np.float64))
        return _factor_with_jitter(a, 0.0, max_jitter)


def _factor_with_jitter(raw, jitter, max_jitter):
    lam = min_eigenvalue(raw)
    if lam < JITTER_FLOOR:
        jitter = max(jitter, JITTER_FLOOR - lam)
    eye = np.eye(raw.shape[0])
    while True:
        if jitter > max_jitter:
            raise NotPositiveDefinite(f"jitter {jitter:.3g} exceeds {max_jitter:.3g}")
        try:
            return CholeskyState(cholesky(raw + jitter * eye), jitter, raw)
        except NotPositiveDefinite:
            jitter = 2 * jitter if jitter > 0 else JITTER_FLOOR


def schur_residual(state, b, c):
    y = solve_lower(state.factor, b)
    return symmetrize(np.asarray(c, dtype=np.float64) - y.T @ y)


def schur_surplus(state, b, c):
    """Smallest eigenvalue of C - B^T A^{-1} B, with A^{-1} applied through the factor."""
    s = min_eigenvalue(schur_residual(state, b, c))
    if not math.isfinite(s):
        raise NotPositiveDefinite("non-finite Schur surplus; factor state is broken")
    return s


def cholesky_extend(state, b, c, max_jitter=MAX_JITTER):
    """Border the factor with one more 3x3 block.

    The cheap bordered update is used when the jittered residual stays safely
    positive definite; otherwise the jitter is raised to the minimal shift that
    makes the extended block positive definite (plus a floor) and the factor is
    rebuilt from scratch.
    """
    b = np.asarray(b, dtype=np.float64)
    c = symmetrize(np.asarray(c, dtype=np.float64))
    t = state.dim
    k = c.shape[0]
    raw = np.empty((t + k, t + k))
    raw[:t, :t] = state.matrix
    raw[:t, t:] = b
    raw[t:, :t] = b.T
    raw[t:, t:] = c
    y = solve_lower(state.factor, b)
    resid = symmetrize(c + state.jitter * np.eye(k) - y.T @ y)
    if min_eigenvalue(resid) >= JITTER_FLOOR:
        try:
            l22 = cholesky(resid)
        except NotPositiveDefinite:
            pass
        else:
            factor = np.zeros((t + k, t + k))
            factor[:t, :t] = state.factor
            factor[t:, :t] = y.T
            factor[t:, t:] = l22
            return CholeskyState(factor, state.jitter, raw)
    return _factor_with_jitter(raw, state.jitter, max_jitter)
