"""Entropic and exact optimal transport on small discrete measures.

Sinkhorn runs in the log domain with zero-initialised potentials. After ``L``
iterations of

    f_i = -eps * log sum_j b_j exp((g_j - C_ij) / eps)
    g_j = -eps * log sum_i a_i exp((f_i - C_ij) / eps)

the plan is ``pi_ij = a_i b_j exp((f_i + g_j - C_ij) / eps)``. Column marginals
are exact after the final ``g`` update; the reported violation is the larger
L1 deviation of the two marginals. Costs may be signed.

Causal oracles work on finite path measures: ``x_atoms`` of shape
``(n, T)`` or ``(n, T, d)`` with strictly positive weights.
"""

from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass, field

import numpy as np

from . import lp
from . import tensor as tt
from .errors import ConvergenceError, InfeasibleError, NumericalError, ShapeError
from .tensor import Tensor, apply_op, as_tensor, logsumexp, reshape

COST_KINDS = ("sqeuclidean", "l1")

_counter = threading.local()


@contextlib.contextmanager
def count_sinkhorn_calls():
    """Count Sinkhorn solves issued by the current thread inside the block.

    Yields a one-element list holding the running count.
    """
    stack = getattr(_counter, "stack", None)
    if stack is None:
        stack = _counter.stack = []
    box = [0]
    stack.append(box)
    try:
        yield box
    finally:
        stack.remove(box)


def _tick():
    for box in getattr(_counter, "stack", ()):
        box[0] += 1


# ---------------------------------------------------------------- costs


def pairwise_cost(X, Y, kind: str = "sqeuclidean"):
    """Cost matrix ``C_ij = sum_t sum_k |x_i,t,k - y_j,t,k|^p``.

    ``p = 2`` for ``"sqeuclidean"`` and ``p = 1`` for ``"l1"``. Accepts numpy
    arrays with optional leading batch axes, ``(..., m, T, d)``, or tensors of
    shape ``(m, T, d)`` in which case the result is differentiable.
    """
    if kind not in COST_KINDS:
        raise ValueError(f"pairwise_cost: unknown cost kind {kind!r}")
    if isinstance(X, Tensor) or isinstance(Y, Tensor):
        X, Y = as_tensor(X), as_tensor(Y)
        if X.ndim != 3 or Y.ndim != 3 or X.shape[1:] != Y.shape[1:]:
            raise ShapeError(f"pairwise_cost: batches {X.shape} and {Y.shape} must be (m, T, d) with equal T, d")
        m, n, k = X.shape[0], Y.shape[0], X.shape[1] * X.shape[2]
        diff = reshape(X, (m, 1, k)) - reshape(Y, (1, n, k))
        per = tt.square(diff) if kind == "sqeuclidean" else tt.abs(diff)
        return tt.sum(per, axis=-1)
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.ndim < 3 or X.shape[-2:] != Y.shape[-2:] or X.shape[:-3] != Y.shape[:-3]:
        raise ShapeError(f"pairwise_cost: batches {X.shape} and {Y.shape} must share T and d")
    diff = X[..., :, None, :, :] - Y[..., None, :, :, :]
    per = diff * diff if kind == "sqeuclidean" else np.abs(diff)
    return per.sum(axis=(-1, -2))


# ------------------------------------------------------------- sinkhorn


@dataclass
class SinkhornResult:
    f: np.ndarray
    g: np.ndarray
    plan: np.ndarray
    objective: np.ndarray  # <pi, C> - eps * H(pi)
    sharp: np.ndarray  # <pi, C>
    iterations: int
    marginal_violation: float


def _uniform(n):
    return np.full(n, 1.0 / n)


def _check_marginals(C, a, b):
    m, n = C.shape[-2:]
    a = _uniform(m) if a is None else np.asarray(a, dtype=np.float64)
    b = _uniform(n) if b is None else np.asarray(b, dtype=np.float64)
    if a.shape != (m,) or b.shape != (n,):
        raise ShapeError(f"sinkhorn: marginals {a.shape}, {b.shape} do not match cost {C.shape}")
    if np.any(a <= 0) or np.any(b <= 0):
        raise ValueError("sinkhorn: marginals must be strictly positive")
    if abs(a.sum() - 1.0) > 1e-9 or abs(b.sum() - 1.0) > 1e-9:
        raise ValueError("sinkhorn: marginals must each sum to 1")
    return a, b


def _lse(z, axis):
    mx = z.max(axis=axis, keepdims=True)
    return np.log(np.exp(z - mx).sum(axis=axis)) + np.squeeze(mx, axis=axis)


def _f_update(Ce, g, logb, eps):
    return -eps * _lse((g / eps + logb)[..., None, :] - Ce, axis=-1)


def _g_update(Ce, f, loga, eps):
    return -eps * _lse((f / eps + loga)[..., :, None] - Ce, axis=-2)


def _log_plan(Ce, f, g, loga, logb, eps):
    return (f / eps + loga)[..., :, None] + (g / eps + logb)[..., None, :] - Ce


def _violation(plan, a, b):
    row = np.abs(plan.sum(axis=-1) - a).sum(axis=-1)
    col = np.abs(plan.sum(axis=-2) - b).sum(axis=-1)
    return float(max(np.max(row), np.max(col)))


def _iterate(C, a, b, eps, L, tol=None, check_every=10, history=False):
    if not eps > 0:
        raise ValueError(f"sinkhorn: eps must be positive, got {eps}")
    if L < 1:
        raise ValueError(f"sinkhorn: iteration count must be >= 1, got {L}")
    _tick()
    loga, logb = np.log(a), np.log(b)
    Ce = C / eps
    g = np.zeros(C.shape[:-2] + (C.shape[-1],))
    fs, gs = [], []
    it = 0
    for it in range(1, L + 1):
        f = _f_update(Ce, g, logb, eps)
        g = _g_update(Ce, f, loga, eps)
        if not (np.isfinite(f).all() and np.isfinite(g).all()):
            raise NumericalError(f"sinkhorn: non-finite potentials at iteration {it}", iteration=it)
        if history:
            fs.append(f)
            gs.append(g)
        if tol is not None and it % check_every == 0:
            plan = np.exp(_log_plan(Ce, f, g, loga, logb, eps))
            if _violation(plan, a, b) < tol:
                break
    return f, g, it, fs, gs


def sinkhorn(C, a=None, b=None, eps: float = 1.0, L: int = 100, tol: float | None = None,
             check_every: int = 10) -> SinkhornResult:
    """Entropic OT between discrete marginals ``a`` and ``b`` (uniform by default).

    ``C`` may carry leading batch axes, in which case every field of the
    result carries them too. With ``tol`` set, iteration stops early once the
    marginal violation drops below it (diagnostic use; training runs fixed
    ``L``).
    """
    C = np.asarray(C.data if isinstance(C, Tensor) else C, dtype=np.float64)
    if C.ndim < 2:
        raise ShapeError(f"sinkhorn: cost must be at least 2-d, got {C.shape}")
    if not np.isfinite(C).all():
        raise ValueError("sinkhorn: cost matrix contains non-finite entries")
    a, b = _check_marginals(C, a, b)
    f, g, it, _, _ = _iterate(C, a, b, eps, L, tol, check_every)
    logp = _log_plan(C / eps, f, g, np.log(a), np.log(b), eps)
    plan = np.exp(logp)
    sharp = (plan * C).sum(axis=(-1, -2))
    ent = -(np.where(plan > 0, plan * logp, 0.0)).sum(axis=(-1, -2))
    return SinkhornResult(
        f=f, g=g, plan=plan, objective=sharp - eps * ent, sharp=sharp,
        iterations=it, marginal_violation=_violation(plan, a, b),
    )


def sinkhorn_sharp(C, eps: float, L: int, a=None, b=None) -> Tensor:
    """Differentiable sharp value ``<pi_L, C>`` after ``L`` unrolled iterations.

    Fused primitive: the backward pass is the exact reverse sweep through all
    ``L`` iterations (not implicit differentiation), replayed from stored
    potentials. ``C`` is a tensor of shape ``(..., m, n)``.
    """
    C = as_tensor(C)
    Cv = C.data
    if Cv.ndim < 2:
        raise ShapeError(f"sinkhorn: cost must be at least 2-d, got {Cv.shape}")
    a, b = _check_marginals(Cv, a, b)
    loga, logb = np.log(a), np.log(b)
    f, g, _, fs, gs = _iterate(Cv, a, b, eps, L, history=C.tracked)
    Ce = Cv / eps
    plan = np.exp(_log_plan(Ce, f, g, loga, logb, eps))
    value = (plan * Cv).sum(axis=(-1, -2))

    def vjp(gout, needs):
        s = np.asarray(gout)[..., None, None]
        PC = plan * Cv
        Cbar = s * (plan - PC / eps)
        fbar = (s[..., 0] * PC.sum(axis=-1)) / eps
        gbar = (s[..., 0, :] * PC.sum(axis=-2)) / eps
        for l in range(L - 1, -1, -1):
            f_l = fs[l]
            g_l = gs[l]
            g_prev = gs[l - 1] if l > 0 else np.zeros_like(g_l)
            # g_l = G(f_l, C)
            Q = np.exp((f_l / eps + loga)[..., :, None] - Ce + (g_l / eps)[..., None, :])
            Cbar += gbar[..., None, :] * Q
            fbar = fbar - (Q * gbar[..., None, :]).sum(axis=-1)
            # f_l = F(g_{l-1}, C)
            P = np.exp((g_prev / eps + logb)[..., None, :] - Ce + (f_l / eps)[..., :, None])
            Cbar += fbar[..., :, None] * P
            gbar = -(P * fbar[..., :, None]).sum(axis=-2)
            fbar = np.zeros_like(fbar)
        return (Cbar,)

    return apply_op("sinkhorn", value, (C,), vjp)


def sinkhorn_sharp_unrolled(C, eps: float, L: int, a=None, b=None) -> Tensor:
    """Same value as :func:`sinkhorn_sharp`, composed from tape primitives."""
    C = as_tensor(C)
    a, b = _check_marginals(C.data, a, b)
    _tick()
    loga, logb = np.log(a), np.log(b)
    Ce = C / eps
    g = Tensor(np.zeros(C.shape[-1]))
    for _ in range(L):
        f = -eps * logsumexp(reshape(g / eps + logb, (1, -1)) - Ce, axis=-1)
        g = -eps * logsumexp(reshape(f / eps + loga, (-1, 1)) - Ce, axis=-2)
    logp = reshape(f / eps + loga, (-1, 1)) + reshape(g / eps + logb, (1, -1)) - Ce
    return tt.sum(tt.exp(logp) * C)


def entropy(plan) -> float:
    """Shannon entropy ``-sum pi log pi`` (zero entries contribute nothing)."""
    p = np.asarray(plan, dtype=np.float64)
    nz = p > 0
    return float(-(p[nz] * np.log(p[nz])).sum())


def product_coupling(a, b) -> np.ndarray:
    return np.outer(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))


# ------------------------------------------------------------ exact OT


@dataclass
class LPSolution:
    value: float
    plan: np.ndarray


def _marginals_for(C, a, b):
    m, n = C.shape
    a = _uniform(m) if a is None else np.asarray(a, dtype=np.float64)
    b = _uniform(n) if b is None else np.asarray(b, dtype=np.float64)
    if a.shape != (m,) or b.shape != (n,):
        raise ShapeError(f"marginals {a.shape}, {b.shape} do not match cost {C.shape}")
    if np.any(a < 0) or np.any(b < 0):
        raise InfeasibleError("marginals must be nonnegative")
    if abs(a.sum() - b.sum()) > 1e-12:
        raise InfeasibleError(f"marginal masses differ: {a.sum()!r} vs {b.sum()!r}")
    return a, b


def exact_ot_lp(C, a=None, b=None, method: str = "auto") -> LPSolution:
    """Exact discrete OT value and an optimal plan.

    ``method="auto"`` enumerates vertices up to 3×3 and uses the simplex
    otherwise.
    """
    C = np.asarray(C, dtype=np.float64)
    if C.ndim != 2:
        raise ShapeError(f"exact_ot_lp: cost must be 2-d, got {C.shape}")
    a, b = _marginals_for(C, a, b)
    m, n = C.shape
    A = lp.transport_constraints(m, n)
    rhs = np.concatenate([a, b])
    if method == "auto":
        method = "vertices" if m <= 3 and n <= 3 else "simplex"
    if method == "vertices":
        # the last column-sum row is implied by the others
        res = lp.enumerate_vertices(C.ravel(), A[:-1], rhs[:-1])
    elif method == "simplex":
        res = lp.simplex(C.ravel(), A, rhs)
    else:
        raise ValueError(f"exact_ot_lp: unknown method {method!r}")
    return LPSolution(value=res.value, plan=res.x.reshape(m, n))


# ---------------------------------------------------------- causality


def _as_paths(atoms) -> np.ndarray:
    arr = np.asarray(atoms, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ShapeError(f"path atoms must be (n, T) or (n, T, d), got {arr.shape}")
    return arr


def _prefix_labels(paths, t):
    """Integer label per atom identifying its prefix of length ``t``."""
    keys = [paths[i, :t].tobytes() for i in range(paths.shape[0])]
    table = {}
    return np.array([table.setdefault(k, len(table)) for k in keys])


@dataclass
class CausalConstraintSet:
    """Linear functionals ``pi -> sum_ij pi_ij coef_ij`` that vanish on causal plans.

    Functional ``k`` pairs the indicator of a y-prefix of length ``times[k]``
    with the martingale increment ``1_G(x_{<=t+1}) - E_mu[1_G | x_{<=t}]`` of an
    x-prefix atom ``G`` of length ``times[k] + 1``.
    """

    coefficients: np.ndarray  # (K, nx, ny)
    times: np.ndarray  # (K,), 1-based t
    y_groups: np.ndarray  # (K,) label of the y-prefix atom
    x_groups: np.ndarray  # (K,) label of the x-prefix atom G
    mu: np.ndarray
    x_paths: np.ndarray = field(repr=False)
    y_paths: np.ndarray = field(repr=False)

    def __len__(self):
        return self.coefficients.shape[0]

    @property
    def grid(self) -> tuple:
        return self.coefficients.shape[1:]

    def matrix(self) -> np.ndarray:
        return self.coefficients.reshape(len(self), -1)

    def evaluate(self, plan) -> np.ndarray:
        plan = np.asarray(plan, dtype=np.float64)
        if plan.shape != self.grid:
            raise ShapeError(f"plan shape {plan.shape} does not match constraint grid {self.grid}")
        return np.tensordot(self.coefficients, plan, axes=([1, 2], [0, 1]))

    def subset(self, idx) -> "CausalConstraintSet":
        idx = np.asarray(idx, dtype=int)
        return CausalConstraintSet(
            self.coefficients[idx], self.times[idx], self.y_groups[idx], self.x_groups[idx],
            self.mu, self.x_paths, self.y_paths,
        )

    def traces(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Test-function pair ``(h, M)`` realising functional ``k`` as traces.

        ``h`` has shape ``(ny, T)`` and is nonzero only at time ``t``; ``M`` has
        shape ``(nx, T)`` and is the Doob martingale ``E_mu[1_G | x_{<=s}]``.
        Then ``sum_s h_s(y_j) (M_{s+1} - M_s)(x_i) == coefficients[k, i, j]``.
        """
        t = int(self.times[k])
        T = self.x_paths.shape[1]
        ylab = _prefix_labels(self.y_paths, t)
        h = np.zeros((self.y_paths.shape[0], T))
        h[:, t - 1] = ylab == self.y_groups[k]
        in_g = _prefix_labels(self.x_paths, t + 1) == self.x_groups[k]
        M = np.zeros((self.x_paths.shape[0], T))
        for s in range(1, T + 1):
            if s >= t + 1:
                M[:, s - 1] = in_g
                continue
            lab = _prefix_labels(self.x_paths, s)
            for v in np.unique(lab):
                sel = lab == v
                M[sel, s - 1] = self.mu[sel & in_g].sum() / self.mu[sel].sum()
        return h, M


def causal_constraints(x_atoms, mu, y_atoms, T: int | None = None) -> CausalConstraintSet:
    """Prefix-indicator basis of the causality test functions on finite supports."""
    X = _as_paths(x_atoms)
    Y = _as_paths(y_atoms)
    mu = np.asarray(mu, dtype=np.float64)
    T = X.shape[1] if T is None else T
    if X.shape[1] != T or Y.shape[1] != T:
        raise ShapeError(f"causal_constraints: path lengths {X.shape[1]}, {Y.shape[1]} differ from T={T}")
    if mu.shape != (X.shape[0],):
        raise ShapeError(f"causal_constraints: weights {mu.shape} do not match {X.shape[0]} atoms")
    if np.any(mu <= 0):
        raise ValueError("causal_constraints: source weights must be strictly positive")
    coefs, times, yg, xg = [], [], [], []
    for t in range(1, T):
        ylab = _prefix_labels(Y, t)
        xlab_t = _prefix_labels(X, t)
        xlab_next = _prefix_labels(X, t + 1)
        prefix_mass = {v: mu[xlab_t == v].sum() for v in np.unique(xlab_t)}
        for G in np.unique(xlab_next):
            in_g = xlab_next == G
            parent = xlab_t[np.flatnonzero(in_g)[0]]
            pmass = prefix_mass[parent]
            if pmass <= 0:
                continue
            cond = np.where(xlab_t == parent, mu[in_g].sum() / pmass, 0.0)
            incr = in_g.astype(np.float64) - cond
            for Yv in np.unique(ylab):
                coefs.append(np.outer(incr, (ylab == Yv).astype(np.float64)))
                times.append(t)
                yg.append(Yv)
                xg.append(G)
    K = len(coefs)
    coefficients = np.array(coefs) if K else np.zeros((0, X.shape[0], Y.shape[0]))
    return CausalConstraintSet(
        coefficients, np.array(times, dtype=int), np.array(yg, dtype=int),
        np.array(xg, dtype=int), mu, X, Y,
    )


@dataclass
class CausalityCheck:
    causal: bool
    max_violation: float

    def __bool__(self):
        return self.causal


def is_causal(plan, constraints: CausalConstraintSet, tol: float = 1e-10) -> CausalityCheck:
    vals = constraints.evaluate(plan)
    worst = float(np.max(np.abs(vals))) if vals.size else 0.0
    return CausalityCheck(worst <= tol, worst)


def _causal_system(C, mu, nu, constraints):
    nx, ny = C.shape
    if constraints.grid != (nx, ny):
        raise ShapeError(f"constraint grid {constraints.grid} does not match cost {C.shape}")
    A = np.vstack([lp.transport_constraints(nx, ny), constraints.matrix()])
    rhs = np.concatenate([mu, nu, np.zeros(len(constraints))])
    return A, rhs


def exact_causal_lp(C, x_atoms, mu, y_atoms, nu, constraints: CausalConstraintSet | None = None) -> LPSolution:
    """Causal OT value: the transport LP restricted by the causality functionals."""
    C = np.asarray(C, dtype=np.float64)
    mu, nu = _marginals_for(C, mu, nu)
    if constraints is None:
        constraints = causal_constraints(x_atoms, mu, y_atoms)
    A, rhs = _causal_system(C, mu, nu, constraints)
    try:
        res = lp.simplex(C.ravel(), A, rhs)
    except InfeasibleError as exc:
        # the independent coupling is always feasible
        raise RuntimeError(f"exact_causal_lp: solver reported infeasibility: {exc}") from exc
    return LPSolution(value=res.value, plan=res.x.reshape(C.shape))


@dataclass
class EntropicCausalResult:
    value: float  # sharp value E^pi[c]
    objective: float  # E^pi[c] - eps H(pi)
    plan: np.ndarray
    multipliers: np.ndarray
    iterations: int
    violation: float


def entropic_causal_solve(C, x_atoms, mu, y_atoms, nu, eps: float, max_iters: int = 2000,
                          tol: float = 1e-10, constraints: CausalConstraintSet | None = None,
                          ) -> EntropicCausalResult:
    """Entropy-regularised causal OT on a finite grid.

    The optimal plan is the KL projection of the Gibbs kernel onto the causal
    transport polytope, ``pi = exp((A^T u - c) / eps - 1)``. The multipliers
    ``u`` (marginal and causality constraints together) are found by damped
    Newton ascent on the concave dual, with eps annealed geometrically from
    the cost scale down to the target and warm starts between stages.
    """
    if not eps > 0:
        raise ValueError(f"entropic_causal_solve: eps must be positive, got {eps}")
    C = np.asarray(C, dtype=np.float64)
    mu, nu = _marginals_for(C, mu, nu)
    if constraints is None:
        constraints = causal_constraints(x_atoms, mu, y_atoms)
    A, rhs = _causal_system(C, mu, nu, constraints)
    c = C.ravel()
    scale = max(float(np.mean(np.abs(C))), 1e-12)
    stages = []
    e = max(eps, scale)
    while e > eps:
        stages.append(e)
        e *= 0.5
    stages.append(eps)

    u = np.zeros(A.shape[0])
    it = 0
    viol = np.inf
    for k, e in enumerate(stages):
        final = k == len(stages) - 1
        stage_tol = tol if final else max(tol, 1e-8)
        u, it, viol = _dual_newton(A, rhs, c, e, u, stage_tol, max_iters, it)
    z = (A.T @ u - c) / eps - 1.0
    plan = np.exp(z).reshape(C.shape)
    value = float((plan * C).sum())
    return EntropicCausalResult(
        value=value, objective=value - eps * entropy(plan), plan=plan,
        multipliers=u, iterations=it, violation=viol,
    )


def _dual_value(A, rhs, c, e, u):
    z = (A.T @ u - c) / e - 1.0
    if z.max() > 700:
        return -np.inf, None
    p = np.exp(z)
    return float(rhs @ u - e * p.sum()), p


def _dual_newton(A, rhs, c, e, u, tol, max_iters, it):
    val, p = _dual_value(A, rhs, c, e, u)
    while p is None:
        # warm start overflowed at this eps; shift toward feasibility
        u = u * 0.5
        val, p = _dual_value(A, rhs, c, e, u)
    while True:
        grad = rhs - A @ p
        viol = float(np.max(np.abs(grad)))
        H = (A * p) @ A.T
        step = np.linalg.lstsq(H, e * grad, rcond=1e-14)[0]
        slope = float(grad @ step)
        t = 1.0
        while True:
            cand = u + t * step
            nval, np_ = _dual_value(A, rhs, c, e, cand)
            # near the optimum dual gains drop below float resolution; the
            # residual norm still certifies progress there
            if np_ is not None and (
                nval >= val + 1e-4 * t * slope
                or np.abs(rhs - A @ np_).max() < (1.0 - 1e-4 * t) * viol
            ):
                break
            t *= 0.5
            if t < 1e-12:
                cand, nval, np_ = u, val, p
                break
        gain = nval - val
        u, val, p = cand, nval, np_
        it += 1
        if viol < tol and abs(gain) < tol:
            return u, it, float(np.max(np.abs(rhs - A @ p)))
        if t < 1e-12 and viol < tol:
            return u, it, viol
        if it >= max_iters:
            raise ConvergenceError(
                f"entropic_causal_solve: no convergence in {max_iters} iterations "
                f"(constraint violation {viol:.3g})", iteration=it, violation=viol,
            )
