import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cotgan import data as dat
from cotgan import evaluation as ev


@pytest.fixture(scope="module")
def ar1_long():
    spec = dat.Ar1Spec(d=3, a_diag=[0.2, 0.5, 0.8], sigma=0.5 * np.eye(3) + 0.5, T=400, burn_in=100)
    return spec, dat.gen_ar1(spec, 200, np.random.default_rng(0))


def test_autocorrelation_of_ar1(ar1_long):
    spec, x = ar1_long
    acf = ev.autocorrelation(x)
    assert acf.shape == (400, 3)
    np.testing.assert_allclose(acf[0], 1.0)
    # the biased estimator shrinks lag k by (T - k) / T
    np.testing.assert_allclose(acf[1], spec.a_diag * 399 / 400, atol=0.01)
    np.testing.assert_allclose(acf[2], spec.a_diag ** 2 * 398 / 400, atol=0.01)


def test_channel_correlation_of_ar1(ar1_long):
    spec, x = ar1_long
    cc, deg = ev.channel_correlation(x)
    assert not deg
    np.testing.assert_allclose(cc, spec.stationary_corr(), atol=0.02)


def test_constant_channel_is_flagged():
    x = np.random.default_rng(0).normal(size=(5, 4, 2))
    x[..., 1] = 3.0
    cc, deg = ev.channel_correlation(x)
    assert deg and cc[0, 1] == 0.0 and cc[1, 1] == 1.0
    np.testing.assert_array_equal(ev.autocorrelation(x)[:, 1], 0.0)
    assert ev.correlation_stats(x, x).degenerate


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_mismatch_is_a_symmetric_distance(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(6, 5, 3)), rng.normal(size=(8, 5, 3))
    assert ev.correlation_stats(a, a).channel_mismatch == 0.0
    ab, ba = ev.correlation_stats(a, b), ev.correlation_stats(b, a)
    assert ab.channel_mismatch == pytest.approx(ba.channel_mismatch)
    assert ab.autocorr_mismatch == pytest.approx(ba.autocorr_mismatch)
    assert np.abs(ab.channel_corr).max() <= 1.0


def test_mismatch_rejects_shape_change():
    with pytest.raises(ValueError):
        ev.correlation_stats(np.ones((2, 3, 1)), np.ones((2, 4, 1)))


def test_report_rows_cover_every_entry():
    x = np.random.default_rng(0).normal(size=(4, 3, 2))
    rows = list(ev.correlation_stats(x, x).rows())
    assert len(rows) == 3 * 2 + 2 * 2 + 2


def test_distribution_stats_counts():
    x = np.random.default_rng(1).random((3, 5, 4))
    ds = ev.distribution_stats(x)
    assert ds.histogram.sum() == x.size and len(ds.edges) == 51
    assert ds.joint.sum() == 3 * 4


def test_location_ties_go_to_lower_index():
    x = np.zeros((1, 2, 3))
    x[0, 0, [1, 2]] = 1.0
    x[0, 1, [0, 2]] = 1.0
    assert ev.distribution_stats(x).joint[1, 0] == 1


def test_bias_curve_rows_and_output(tmp_path):
    rows = ev.bias_curve(["mixed", "sinkhorn"], thetas=(0.6, 0.8), ms=(4,), replicates=5,
                         rng=np.random.default_rng(0))
    assert len(rows) == 4
    assert {(r.kind, r.theta) for r in rows} == {("mixed", 0.6), ("mixed", 0.8), ("sinkhorn", 0.6), ("sinkhorn", 0.8)}
    assert all(r.sem > 0 and r.replicates == 5 for r in rows)
    again = ev.bias_curve(["mixed", "sinkhorn"], thetas=(0.6, 0.8), ms=(4,), replicates=5,
                          rng=np.random.default_rng(0))
    assert [r.mean for r in rows] == [r.mean for r in again]
    assert ev.bias_argmin(rows, "mixed", 4) in (0.6, 0.8)
    ev.write_bias_csv(tmp_path / "b.csv", rows)
    with open(tmp_path / "b.csv") as fh:
        back = list(csv.DictReader(fh))
    assert float(back[0]["mean"]) == rows[0].mean


def test_bias_thetas_grid():
    assert ev.BIAS_THETAS == (0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.1, 1.2)


def test_white_noise_autocorrelation_is_small():
    m = 400
    x = np.random.default_rng(3).normal(size=(m, 30, 2))
    acf = ev.autocorrelation(x)
    assert np.abs(acf[1:]).max() < 3 / np.sqrt(m)


def test_zero_batch_distribution():
    ds = ev.distribution_stats(np.zeros((2, 3, 4)))
    assert ds.histogram[0] == 24 and ds.histogram[1:].sum() == 0
    assert ds.joint[0, 0] == 2 * 2 and ds.joint.sum() == 4


def test_oscillation_bumps_move_locally():
    # consecutive locations are much closer than two independent frames would be
    x = dat.gen_noisy_oscillation(200, np.random.default_rng(0))
    joint = ev.distribution_stats(x).joint.astype(float)
    joint /= joint.sum()
    i, j = np.indices(joint.shape)
    step = (np.abs(i - j) * joint).sum()
    indep = (np.abs(i - j) * np.outer(joint.sum(1), joint.sum(0))).sum()
    assert step < 0.6 * indep
    assert joint[np.abs(i - j) <= 6].sum() > 0.85


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_statistics_are_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.random((7, 5, 3)), rng.random((6, 5, 3))
    p = rng.permutation(7)
    r1, r2 = ev.correlation_stats(a, b), ev.correlation_stats(a[p], b)
    assert r1.channel_mismatch == pytest.approx(r2.channel_mismatch, abs=1e-12)
    assert r1.autocorr_mismatch == pytest.approx(r2.autocorr_mismatch, abs=1e-12)
    np.testing.assert_array_equal(ev.distribution_stats(a).joint, ev.distribution_stats(a[p]).joint)


def test_channel_correlation_is_symmetric_with_unit_diagonal():
    cc, _ = ev.channel_correlation(np.random.default_rng(2).normal(size=(9, 4, 3)))
    np.testing.assert_allclose(cc, cc.T)
    np.testing.assert_array_equal(np.diag(cc), 1.0)


def test_sem_shrinks_with_replicates():
    kw = dict(thetas=(0.6,), ms=(8,), eps=1.0, L=50)
    few = ev.bias_curve(["mixed"], replicates=75, rng=np.random.default_rng(1), **kw)[0]
    many = ev.bias_curve(["mixed"], replicates=300, rng=np.random.default_rng(2), **kw)[0]
    assert 1.6 <= few.sem / many.sem <= 2.4


def test_true_theta_is_near_the_minimum_of_mixed_curve():
    rows = ev.bias_curve(["mixed"], ms=(8,), replicates=100, rng=np.random.default_rng(3))
    best = min(rows, key=lambda r: r.mean)
    at = next(r for r in rows if r.theta == 0.8)
    assert at.mean - best.mean <= 2 * at.sem
