"""Small random instances and self-checks against exact solvers.

Used by the ``oracle-check`` command; every check returns ``(name, passed,
detail)``.
"""

from __future__ import annotations

import numpy as np

from . import divergences as dv
from . import ot


def random_path_instance(rng: np.random.Generator, max_atoms: int = 4, T: int = 2):
    """Two finite path measures on ``T`` steps with at most ``max_atoms`` atoms each,
    plus their squared-distance cost."""
    while True:
        nx, ny = rng.integers(2, max_atoms + 1, size=2)
        X = np.unique(rng.integers(0, 3, (nx, T)).astype(float), axis=0)
        Y = np.unique(rng.normal(size=(ny, T)).round(1), axis=0)
        if len(X) >= 2 and len(Y) >= 2:
            break
    mu = rng.random(len(X)) + 0.1
    nu = rng.random(len(Y)) + 0.1
    mu /= mu.sum()
    nu = nu / nu.sum() * mu.sum()
    C = ((X[:, None, :] - Y[None, :, :]) ** 2).sum(-1)
    return X, mu, Y, nu, C


def anticipating_instance():
    """Binary two-step source and the coupling ``y = (x_2, x_1)``, which reads the future."""
    X = np.array([[a, b] for a in (0.0, 1.0) for b in (0.0, 1.0)])
    mu = np.full(4, 0.25)
    Y = X.copy()
    plan = np.zeros((4, 4))
    for i, (a, b) in enumerate(X):
        j = int(np.flatnonzero((Y[:, 0] == b) & (Y[:, 1] == a))[0])
        plan[i, j] = mu[i]
    return X, mu, Y, mu.copy(), plan


def check_sinkhorn_feasibility(rng, n=32, trials=5):
    worst = 0.0
    for _ in range(trials):
        C = rng.random((n, n))
        res = ot.sinkhorn(C, eps=0.1 * C.mean(), L=100)
        worst = max(worst, float(res.marginal_violation))
    return "sinkhorn feasibility", worst < 1e-6, f"max marginal violation {worst:.2e}"


def check_lp_limit(rng, sizes=(3, 5, 8)):
    worst = 0.0
    for n in sizes:
        C = rng.random((n, n))
        exact = ot.exact_ot_lp(C).value
        approx = float(ot.sinkhorn(C, eps=1e-3 * C.mean(), L=5000).sharp)
        worst = max(worst, abs(approx - exact) / abs(exact))
    return "small-eps LP limit", worst < 1e-3, f"max relative error {worst:.2e}"


def check_product_limit(rng, n=6):
    a = rng.random(n) + 0.1
    b = rng.random(n + 1) + 0.1
    a /= a.sum()
    b /= b.sum()
    C = rng.random((n, n + 1))
    res = ot.sinkhorn(C, a, b, eps=1e4 * C.mean(), L=100)
    P = ot.product_coupling(a, b)
    plan_err = float(np.abs(res.plan - P).max())
    expect = float((P * C).sum())
    val_err = abs(float(res.sharp) - expect) / abs(expect)
    ok = plan_err < 1e-4 and val_err < 1e-4
    return "large-eps product limit", ok, f"plan error {plan_err:.2e}, value error {val_err:.2e}"


def check_causal_sandwich(rng, trials=20):
    bad = 0
    for _ in range(trials):
        X, mu, Y, nu, C = random_path_instance(rng)
        W = ot.exact_ot_lp(C, mu, nu).value
        K = ot.exact_causal_lp(C, X, mu, Y, nu).value
        E = float((ot.product_coupling(mu, nu) * C).sum())
        bad += not (W <= K + 1e-9 and K <= E + 1e-9)
    return "causal sandwich", bad == 0, f"{bad} of {trials} instances out of order"


def check_causality_detection():
    X, mu, Y, nu, plan = anticipating_instance()
    cs = ot.causal_constraints(X, mu, Y)
    indep = ot.is_causal(ot.product_coupling(mu, nu), cs, tol=1e-10)
    antic = ot.is_causal(plan, cs, tol=1e-10)
    ok = indep.causal and not antic.causal and antic.max_violation > 0.01
    return "causality detection", ok, (f"independent violation {indep.max_violation:.1e}, "
                                       f"anticipating violation {antic.max_violation:.3f}")


def check_mmd_limit(rng, m=8, T=5):
    x, x2, y, y2 = (rng.normal(size=(m, T, 1)) for _ in range(4))
    scale = float(ot.pairwise_cost(x, y).mean())
    mixed = float(dv.divergence("mixed", x, x2, y, y2, eps=1e4 * scale, L=100))
    mmd = float(dv.mmd_estimate("mmd_unbiased", x, y, x2, y2))
    err = abs(mixed - mmd)
    return "large-eps MMD limit", err < 1e-3, f"|mixed - mmd| = {err:.2e}"


def run_all(seed: int = 0):
    rng = np.random.default_rng(seed)
    return [
        check_sinkhorn_feasibility(rng),
        check_lp_limit(rng),
        check_product_limit(rng),
        check_causal_sandwich(rng),
        check_causality_detection(),
        check_mmd_limit(rng),
    ]
