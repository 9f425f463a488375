import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cotgan import ot, oracles
from cotgan import tensor as tt
from cotgan.errors import InfeasibleError, NumericalError, ShapeError
from cotgan.tensor import Tape, Tensor

seeds = st.integers(0, 2**31 - 1)


def loop_cost(X, Y, p):
    C = np.zeros((len(X), len(Y)))
    for i in range(len(X)):
        for j in range(len(Y)):
            for t in range(X.shape[1]):
                for k in range(X.shape[2]):
                    C[i, j] += abs(X[i, t, k] - Y[j, t, k]) ** p
    return C


# ---------------------------------------------------------------- costs


def test_pairwise_cost_single_sequence_is_zero():
    x = np.ones((1, 3, 2))
    np.testing.assert_array_equal(ot.pairwise_cost(x, x), [[0.0]])


def test_pairwise_cost_unit_example():
    assert ot.pairwise_cost(np.zeros((1, 2, 1)), np.ones((1, 2, 1)))[0, 0] == 2.0


@pytest.mark.parametrize("kind,p", [("sqeuclidean", 2), ("l1", 1)])
def test_pairwise_cost_matches_loop(kind, p):
    rng = np.random.default_rng(0)
    X, Y = rng.normal(size=(4, 3, 2)), rng.normal(size=(4, 3, 2))
    np.testing.assert_allclose(ot.pairwise_cost(X, Y, kind), loop_cost(X, Y, p), rtol=1e-14)
    np.testing.assert_allclose(ot.pairwise_cost(Tensor(X), Tensor(Y), kind).numpy(), loop_cost(X, Y, p), rtol=1e-14)


def test_pairwise_cost_self_is_symmetric_with_zero_diagonal():
    X = np.random.default_rng(1).normal(size=(5, 4, 3))
    C = ot.pairwise_cost(X, X)
    np.testing.assert_array_equal(C, C.T)
    np.testing.assert_array_equal(np.diag(C), 0.0)


def test_pairwise_cost_shape_mismatch():
    with pytest.raises(ShapeError):
        ot.pairwise_cost(np.zeros((2, 3, 1)), np.zeros((2, 4, 1)))


# ------------------------------------------------------------- sinkhorn


def test_sinkhorn_rejects_bad_eps():
    with pytest.raises(ValueError):
        ot.sinkhorn(np.ones((2, 2)), eps=0.0)


def test_sinkhorn_rejects_non_finite_cost():
    C = np.array([[0.0, np.nan], [1.0, 0.0]])
    with pytest.raises(ValueError, match="non-finite"):
        ot.sinkhorn(C, eps=1.0, L=10)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_sinkhorn_overflow_reports_iteration():
    C = np.full((2, 2), 1e308)
    with pytest.raises(NumericalError) as exc:
        ot.sinkhorn(C, eps=1e-300, L=10)
    assert exc.value.iteration == 1


def test_sinkhorn_plan_reconstruction_from_potentials():
    rng = np.random.default_rng(2)
    C = rng.random((4, 5))
    a = np.full(4, 0.25)
    b = np.full(5, 0.2)
    res = ot.sinkhorn(C, a, b, eps=0.3, L=50)
    plan = np.exp((res.f[:, None] + res.g[None, :] - C) / 0.3) * np.outer(a, b)
    np.testing.assert_allclose(res.plan, plan, rtol=1e-12)


def test_sinkhorn_large_eps_two_point():
    res = ot.sinkhorn(np.array([[0.0, 1.0], [1.0, 0.0]]), eps=1e6, L=10)
    np.testing.assert_allclose(res.plan, 0.25, atol=1e-6)
    assert float(res.sharp) == pytest.approx(0.5, abs=1e-6)


def test_sinkhorn_self_transport_concentrates_on_diagonal():
    X = np.random.default_rng(3).normal(size=(6, 2, 1))
    C = ot.pairwise_cost(X, X)
    diag_mass = []
    for eps in (10.0, 1.0, 0.1, 0.01, 0.001):
        res = ot.sinkhorn(C, eps=eps * C.mean(), L=20000, tol=1e-12)
        assert float(res.sharp) >= 0
        diag_mass.append(np.trace(res.plan))
    assert np.all(np.diff(diag_mass) > 0)
    assert diag_mass[-1] > 0.99


def test_sinkhorn_accepts_signed_costs():
    C = np.random.default_rng(4).normal(size=(5, 5)) * 3.0
    res = ot.sinkhorn(C, eps=0.5, L=3000)
    assert res.marginal_violation < 1e-8
    shifted = ot.sinkhorn(C + 7.0, eps=0.5, L=3000)
    np.testing.assert_allclose(res.plan, shifted.plan, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(seeds, st.floats(0.05, 2.0))
def test_sinkhorn_feasibility_on_random_costs(seed, scale):
    C = np.random.default_rng(seed).random((32, 32))
    res = ot.sinkhorn(C, eps=scale * C.mean(), L=100)
    assert res.marginal_violation < 1e-6
    assert abs(res.plan.sum() - 1.0) < 1e-9


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_sharp_value_monotone_in_eps_toward_lp(seed):
    C = np.random.default_rng(seed).random((5, 5))
    lp_value = ot.exact_ot_lp(C).value
    vals = [float(ot.sinkhorn(C, eps=e * C.mean(), L=3000, tol=1e-13).sharp) for e in (3.0, 1.0, 0.3, 0.1, 0.03)]
    assert np.all(np.diff(vals) <= 1e-9)
    assert lp_value <= vals[-1] + 1e-9


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_entropic_objective_beats_independent_coupling(seed):
    rng = np.random.default_rng(seed)
    C = rng.random((6, 4))
    eps = 0.2
    res = ot.sinkhorn(C, eps=eps, L=500, tol=1e-12)
    P = ot.product_coupling(np.full(6, 1 / 6), np.full(4, 1 / 4))
    assert float(res.objective) <= (P * C).sum() - eps * ot.entropy(P) + 1e-9


def test_batched_sinkhorn_matches_individual_runs():
    C = np.random.default_rng(5).random((3, 4, 4))
    batched = ot.sinkhorn(C, eps=0.1, L=50)
    for k in range(3):
        single = ot.sinkhorn(C[k], eps=0.1, L=50)
        np.testing.assert_allclose(batched.plan[k], single.plan, rtol=1e-13)
        assert batched.sharp[k] == pytest.approx(float(single.sharp), rel=1e-13)


def test_count_sinkhorn_calls():
    with ot.count_sinkhorn_calls() as n:
        ot.sinkhorn(np.ones((2, 2)), L=3)
        ot.sinkhorn_sharp(Tensor(np.ones((2, 2))), 1.0, 3)
    assert n[0] == 2


@pytest.mark.parametrize("L", [1, 3, 25])
def test_fused_sinkhorn_gradient_matches_unrolled_and_fd(L):
    rng = np.random.default_rng(6)
    C0 = rng.random((3, 4))
    tape = Tape()
    C = tape.watch(C0)
    (g_fused,) = tape.gradient(ot.sinkhorn_sharp(C, 0.2, L), [C])
    tape2 = Tape()
    C2 = tape2.watch(C0)
    (g_unrolled,) = tape2.gradient(ot.sinkhorn_sharp_unrolled(C2, 0.2, L), [C2])
    fd = tt.numeric_grad(lambda c: ot.sinkhorn_sharp(Tensor(c), 0.2, L).item(), C0)
    np.testing.assert_allclose(g_fused, g_unrolled, atol=1e-12)
    np.testing.assert_allclose(g_fused, fd, atol=1e-8)


def test_sinkhorn_gradient_wrt_batch_through_cost():
    rng = np.random.default_rng(7)
    x0, y0 = rng.normal(size=(2, 3, 1)), rng.normal(size=(2, 3, 1))

    def value(x):
        return ot.sinkhorn_sharp(ot.pairwise_cost(x, Tensor(y0)), 0.5, 20)

    tape = Tape()
    x = tape.watch(x0)
    (g,) = tape.gradient(value(x), [x])
    fd = tt.numeric_grad(lambda v: value(Tensor(v)).item(), x0)
    assert np.abs(g - fd).max() / np.abs(fd).max() < 1e-4


# -------------------------------------------------------------- exact OT


def test_exact_ot_two_point_identity():
    sol = ot.exact_ot_lp(np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert sol.value == pytest.approx(0.0)
    np.testing.assert_allclose(sol.plan, np.eye(2) / 2)


def test_exact_ot_single_atom():
    assert ot.exact_ot_lp(np.array([[3.5]]), [1.0], [1.0]).value == 3.5


def test_exact_ot_rejects_unequal_masses():
    with pytest.raises(InfeasibleError):
        ot.exact_ot_lp(np.ones((2, 2)), [0.5, 0.5], [0.5, 0.6])


@settings(max_examples=20, deadline=None)
@given(seeds, st.floats(0.01, 10.0))
def test_lp_lower_bounds_sinkhorn_sharp_value(seed, eps):
    C = np.random.default_rng(seed).random((3, 3))
    sol = ot.exact_ot_lp(C)
    res = ot.sinkhorn(C, eps=eps, L=200)
    # an unconverged plan misses its marginals by delta; a feasible plan lies
    # within 2 delta in L1, so the sharp cost can undercut the LP by at most that
    slack = 2 * np.abs(C).max() * res.marginal_violation
    assert sol.value <= float(res.sharp) + slack + 1e-9
    assert sol.value == pytest.approx(ot.exact_ot_lp(C, method="simplex").value, abs=1e-12)


# ------------------------------------------------------------ causality


def test_independent_coupling_satisfies_every_constraint():
    rng = np.random.default_rng(8)
    for _ in range(20):
        X, mu, Y, nu, _ = oracles.random_path_instance(rng, T=3)
        cs = ot.causal_constraints(X, mu, Y)
        assert np.abs(cs.evaluate(ot.product_coupling(mu, nu))).max() < 1e-12


def test_anticipating_coupling_is_detected():
    X, mu, Y, nu, plan = oracles.anticipating_instance()
    cs = ot.causal_constraints(X, mu, Y)
    chk = ot.is_causal(plan, cs)
    assert not chk and chk.max_violation > 0.01
    assert ot.is_causal(ot.product_coupling(mu, nu), cs, tol=1e-12)


def test_y1_equal_x2_anticipation_with_binary_y1():
    X = np.array([[a, b] for a in (0.0, 1.0) for b in (0.0, 1.0)])
    mu = np.full(4, 0.25)
    Y = np.array([[0.0, 0.0], [1.0, 0.0]])
    plan = np.zeros((4, 2))
    for i, (_, x2) in enumerate(X):
        plan[i, int(x2)] = 0.25
    assert ot.is_causal(plan, ot.causal_constraints(X, mu, Y)).max_violation > 0.01


def test_adapted_map_coupling_is_causal():
    # y_1 = x_1, y_2 = x_1 + 2 x_2 only uses the past
    X = np.array([[a, b] for a in (0.0, 1.0) for b in (0.0, 1.0, 2.0)])
    mu = np.random.default_rng(9).random(6) + 0.1
    mu /= mu.sum()
    Y = np.stack([X[:, 0], X[:, 0] + 2 * X[:, 1]], axis=1)
    plan = np.diag(mu)
    assert ot.is_causal(plan, ot.causal_constraints(X, mu, Y), tol=1e-12)


def test_constraint_traces_realise_coefficients():
    rng = np.random.default_rng(10)
    X, mu, Y, nu, _ = oracles.random_path_instance(rng, T=3)
    cs = ot.causal_constraints(X, mu, Y)
    for k in range(len(cs)):
        h, M = cs.traces(k)
        coef = (np.diff(M, axis=1)[:, None, :] * h[None, :, :-1]).sum(-1)
        np.testing.assert_allclose(coef, cs.coefficients[k], atol=1e-14)
        # M is a martingale under mu: the mu-mean of every increment given the prefix is 0
        assert abs(mu @ np.diff(M, axis=1)).max() < 1e-14


def test_is_causal_grid_mismatch():
    X, mu, Y, nu, plan = oracles.anticipating_instance()
    with pytest.raises(ShapeError):
        ot.is_causal(np.ones((3, 3)) / 9, ot.causal_constraints(X, mu, Y))


def test_causal_lp_equals_ot_when_optimal_plan_is_causal():
    # identical source and target: the identity plan is optimal and adapted
    X = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
    mu = np.array([0.2, 0.3, 0.5])
    C = ((X[:, None] - X[None]) ** 2).sum(-1)
    assert ot.exact_causal_lp(C, X, mu, X, mu).value == pytest.approx(ot.exact_ot_lp(C, mu, mu).value, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_causal_sandwich_and_causal_optimum(seed):
    X, mu, Y, nu, C = oracles.random_path_instance(np.random.default_rng(seed))
    W = ot.exact_ot_lp(C, mu, nu).value
    K = ot.exact_causal_lp(C, X, mu, Y, nu)
    E = (ot.product_coupling(mu, nu) * C).sum()
    assert W <= K.value + 1e-9 <= E + 2e-9
    assert ot.is_causal(K.plan, ot.causal_constraints(X, mu, Y), tol=1e-8)


@settings(max_examples=15, deadline=None)
@given(seeds)
def test_entropic_causal_plan_entropy_bounds(seed):
    X, mu, Y, nu, C = oracles.random_path_instance(np.random.default_rng(seed))
    res = ot.entropic_causal_solve(C, X, mu, Y, nu, eps=0.1 * C.mean())
    H = ot.entropy(res.plan)
    assert 0 <= H <= np.log(len(X) * len(Y)) + 1e-12
    assert res.violation < 1e-9
    assert ot.is_causal(res.plan, ot.causal_constraints(X, mu, Y), tol=1e-8)


def test_entropic_causal_rejects_bad_eps():
    X, mu, Y, nu, C = oracles.random_path_instance(np.random.default_rng(0))
    with pytest.raises(ValueError):
        ot.entropic_causal_solve(C, X, mu, Y, nu, eps=-1.0)
