"""Evaluation statistics for generated sequences and the mini-batch bias experiment."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import divergences as dv
from .data import check_batch


# ----------------------------------------------------------- correlations


def autocorrelation(batch) -> np.ndarray:
    """Per-channel autocorrelation at lags ``0..T-1``, shape ``(T, d)``.

    Each sequence is centred by the pooled channel mean; lag-``k`` products
    are summed over the batch and over ``T - k`` start times and divided by
    ``m T`` (the biased estimator, stable at high lags). Zero-variance
    channels give zeros.
    """
    x = check_batch(batch)
    m, T, d = x.shape
    z = x - x.mean(axis=(0, 1))
    var = (z * z).sum(axis=(0, 1))
    acf = np.zeros((T, d))
    for k in range(T):
        acf[k] = (z[:, k:] * z[:, :T - k]).sum(axis=(0, 1))
    ok = var > 1e-12
    acf[:, ok] /= var[ok]
    acf[:, ~ok] = 0.0
    return acf


def channel_correlation(batch):
    """Channel correlation computed across the batch at each t, averaged over t.

    Returns ``(matrix, degenerate)`` where ``degenerate`` flags any
    zero-variance channel at some time step; those entries count as 0 off the
    diagonal and 1 on it.
    """
    x = check_batch(batch)
    m, T, d = x.shape
    z = x - x.mean(axis=0)
    cov = np.einsum("mti,mtj->tij", z, z) / m
    sd = np.sqrt(np.einsum("tii->ti", cov))
    ok = sd > 1e-12
    denom = np.where(ok[:, :, None] & ok[:, None, :], sd[:, :, None] * sd[:, None, :], np.inf)
    corr = cov / denom
    idx = np.arange(d)
    corr[:, idx, idx] = 1.0
    return np.clip(corr.mean(axis=0), -1.0, 1.0), bool((~ok).any())


@dataclass
class CorrReport:
    autocorr: np.ndarray
    channel_corr: np.ndarray
    autocorr_mismatch: float
    channel_mismatch: float
    degenerate: bool

    def rows(self):
        """Long-format rows ``(statistic, i, j, value)``."""
        T, d = self.autocorr.shape
        for k in range(T):
            for c in range(d):
                yield ("autocorr", k, c, self.autocorr[k, c])
        for i in range(d):
            for j in range(d):
                yield ("channel_corr", i, j, self.channel_corr[i, j])
        yield ("autocorr_mismatch", -1, -1, self.autocorr_mismatch)
        yield ("channel_mismatch", -1, -1, self.channel_mismatch)


def correlation_stats(batch, reference) -> CorrReport:
    """Correlation structure of ``batch`` and its absolute mismatch to ``reference``."""
    x, r = check_batch(batch), check_batch(reference)
    if x.shape[1:] != r.shape[1:]:
        raise ValueError(f"batch {x.shape} and reference {r.shape} must share T and d")
    acf, acf_ref = autocorrelation(x), autocorrelation(r)
    cc, deg = channel_correlation(x)
    cc_ref, deg_ref = channel_correlation(r)
    return CorrReport(
        autocorr=acf,
        channel_corr=cc,
        autocorr_mismatch=float(np.abs(acf - acf_ref).sum()),
        channel_mismatch=float(np.abs(cc - cc_ref).sum()),
        degenerate=deg or deg_ref,
    )


# ------------------------------------------------------ oscillation stats


@dataclass
class DistributionStats:
    histogram: np.ndarray  # 50 counts over [0, 1]
    edges: np.ndarray
    joint: np.ndarray  # (d, d) counts of (loc_t, loc_{t+1})


def distribution_stats(batch, bins: int = 50) -> DistributionStats:
    x = check_batch(batch)
    d = x.shape[2]
    hist, edges = np.histogram(np.clip(x, 0.0, 1.0), bins=bins, range=(0.0, 1.0))
    loc = np.argmax(x, axis=2)  # first maximum, i.e. ties go to the lower index
    joint = np.zeros((d, d), dtype=np.int64)
    np.add.at(joint, (loc[:, :-1].ravel(), loc[:, 1:].ravel()), 1)
    return DistributionStats(histogram=hist, edges=edges, joint=joint)


# ---------------------------------------------------------- bias curves


BIAS_THETAS = tuple(np.round(np.arange(0.4, 1.21, 0.1), 1))


@dataclass
class BiasRow:
    kind: str
    m: int
    theta: float
    mean: float
    sem: float
    replicates: int


def _sinusoids(amp, freq, phase, T):
    t = np.arange(1, T + 1)
    return (amp[..., None] * np.sin(2 * np.pi * freq[..., None] * t / T + phase[..., None]))[..., None]


def bias_curve(kinds, thetas=BIAS_THETAS, ms=(8, 16, 32, 64), replicates: int = 300,
               eps: float = 1.0, L: int = 100, T: int = 20, theta_true: float = 0.8,
               cost="sqeuclidean", rng: np.random.Generator | None = None,
               freq_band=(1.0, 2.0), min_amp: float = 0.3) -> list[BiasRow]:
    """Mean and sem of each divergence between ``nu_theta_true`` and ``nu_theta``.

    Every replicate draws fresh batches. Within a replicate the same uniform
    variates drive all ``theta`` values (amplitude ``min_amp + u (theta -
    min_amp)``), so the curves over ``theta`` are compared on common random
    numbers; the marginal law of each batch is exactly ``nu_theta``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    kinds = [dv.DivergenceKind(k) for k in kinds]
    out = []
    for m in ms:
        shape = (replicates, m)

        def draw():
            return rng.uniform(size=shape), rng.uniform(*freq_band, shape), rng.uniform(0, 2 * np.pi, shape)

        def batch(theta, u, f, p):
            return _sinusoids(min_amp + u * (theta - min_amp), f, p, T)

        ux, ux2, uy, uy2 = draw(), draw(), draw(), draw()
        x, x2 = batch(theta_true, *ux), batch(theta_true, *ux2)
        for theta in thetas:
            y, y2 = batch(theta, *uy), batch(theta, *uy2)
            for kind in kinds:
                v = np.asarray(dv.divergence(kind, x, x2, y, y2, cost=cost, eps=eps, L=L))
                out.append(BiasRow(kind.value, m, float(theta), float(v.mean()),
                                   float(v.std(ddof=1) / np.sqrt(replicates)), replicates))
    return out


def bias_argmin(rows, kind, m) -> float:
    sel = [r for r in rows if r.kind == dv.DivergenceKind(kind).value and r.m == m]
    return min(sel, key=lambda r: r.mean).theta


def write_bias_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "m", "theta", "mean", "sem", "replicates"])
        for r in rows:
            w.writerow([r.kind, r.m, f"{r.theta:.1f}", repr(r.mean), repr(r.sem), r.replicates])


def write_rows_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
