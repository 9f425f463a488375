"""Small dense linear programs in standard equality form.

    minimize c @ x  subject to  A @ x = b,  x >= 0

Two solvers are provided: a two-phase tableau simplex with Bland's rule
(terminates on degenerate problems, which transport polytopes always are)
and exhaustive basis enumeration for very small instances. Both are meant
for oracle-sized problems of at most a few hundred variables.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import ConvergenceError, InfeasibleError


@dataclass
class LPResult:
    x: np.ndarray
    value: float
    iterations: int


def _pivot(T, row, col):
    T[row] /= T[row, col]
    colv = T[:, col].copy()
    colv[row] = 0.0
    T -= np.outer(colv, T[row])


def _run(T, basis, ncols, tol, max_iter, it0=0):
    """Bland's-rule pivoting on tableau ``T`` whose last row holds reduced costs."""
    it = it0
    m = T.shape[0] - 1
    while True:
        r = T[-1, :ncols]
        entering = np.flatnonzero(r < -tol)
        if entering.size == 0:
            return it
        j = int(entering[0])
        colv = T[:m, j]
        pos = colv > tol
        if not pos.any():
            raise InfeasibleError("linear program is unbounded")
        ratios = np.full(m, np.inf)
        ratios[pos] = T[:m, -1][pos] / colv[pos]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + tol * max(1.0, abs(best)))
        i = int(min(ties, key=lambda k: basis[k]))
        _pivot(T, i, j)
        basis[i] = j
        it += 1
        if it > max_iter:
            raise ConvergenceError(f"simplex exceeded {max_iter} pivots", iteration=it)


def simplex(c, A, b, tol=1e-10, max_iter=50_000) -> LPResult:
    """Two-phase simplex; redundant equality rows are detected and dropped."""
    c = np.asarray(c, dtype=np.float64).ravel()
    A = np.array(A, dtype=np.float64, ndmin=2)
    b = np.asarray(b, dtype=np.float64).ravel().copy()
    m, n = A.shape
    if c.size != n or b.size != m:
        raise ValueError(f"simplex: inconsistent sizes c={c.size}, A={A.shape}, b={b.size}")
    neg = b < 0
    A[neg] *= -1.0
    b[neg] *= -1.0

    T = np.zeros((m + 1, n + m + 1))
    T[:m, :n] = A
    T[:m, n:n + m] = np.eye(m)
    T[:m, -1] = b
    T[-1, :n] = -A.sum(axis=0)
    T[-1, -1] = -b.sum()
    basis = list(range(n, n + m))

    it = _run(T, basis, n + m, tol, max_iter)
    scale = max(1.0, float(np.abs(b).max(initial=0.0)))
    if -T[-1, -1] > 1e3 * tol * scale:
        raise InfeasibleError(f"linear program is infeasible (phase-one residual {-T[-1, -1]:.3g})")

    # pivot artificials out of the basis; rows where that is impossible are redundant
    keep = []
    for i in range(m):
        if basis[i] >= n:
            cand = np.flatnonzero(np.abs(T[i, :n]) > 1e3 * tol)
            if cand.size:
                _pivot(T, i, int(cand[0]))
                basis[i] = int(cand[0])
                keep.append(i)
        else:
            keep.append(i)
    rows = keep + [m]
    T = np.concatenate([T[rows][:, :n], T[rows][:, -1:]], axis=1)
    basis = [basis[i] for i in keep]

    T[-1, :] = 0.0
    T[-1, :n] = c
    for i, j in enumerate(basis):
        T[-1] -= c[j] * T[i]
    it = _run(T, basis, n, tol, max_iter, it)

    x = np.zeros(n)
    for i, j in enumerate(basis):
        x[j] = T[i, -1]
    x[x < 0] = 0.0
    return LPResult(x=x, value=float(c @ x), iterations=it)


def enumerate_vertices(c, A, b, tol=1e-12) -> LPResult:
    """Minimize by visiting every basic solution of a full-row-rank system."""
    c = np.asarray(c, dtype=np.float64).ravel()
    A = np.array(A, dtype=np.float64, ndmin=2)
    b = np.asarray(b, dtype=np.float64).ravel()
    m, n = A.shape
    if np.linalg.matrix_rank(A) != m:
        raise ValueError("enumerate_vertices: constraint matrix must have full row rank")
    best = None
    visited = 0
    for cols in combinations(range(n), m):
        B = A[:, cols]
        if abs(np.linalg.det(B)) < 1e-12:
            continue
        xb = np.linalg.solve(B, b)
        visited += 1
        if np.any(xb < -tol):
            continue
        x = np.zeros(n)
        x[list(cols)] = np.maximum(xb, 0.0)
        val = float(c @ x)
        if best is None or val < best.value:
            best = LPResult(x=x, value=val, iterations=visited)
    if best is None:
        raise InfeasibleError("no feasible vertex")
    best.iterations = visited
    return best


def transport_constraints(m: int, n: int) -> np.ndarray:
    """Row-sum then column-sum constraint rows for a row-major m×n plan."""
    A = np.zeros((m + n, m * n))
    for i in range(m):
        A[i, i * n:(i + 1) * n] = 1.0
    for j in range(n):
        A[m + j, j::n] = 1.0
    return A
