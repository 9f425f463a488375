"""Synthetic sequence datasets and CSV ingestion.

A batch of sequences is a float64 array of shape ``(m, T, d)``. All
generators are pure functions of their arguments and the supplied
``numpy.random.Generator``.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ShapeError


def check_batch(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeError(f"sequence batch must be (m, T, d), got {x.shape}")
    if not np.isfinite(x).all():
        raise ValueError("sequence batch contains non-finite values")
    return x


# ------------------------------------------------------------------ AR-1


def _default_a(d=10):
    return np.linspace(0.1, 0.9, d)


def _default_sigma(d=10):
    return 0.5 * np.eye(d) + 0.5


@dataclass
class Ar1Spec:
    """Multivariate AR-1: ``x_t = A x_{t-1} + N(0, Sigma)`` with diagonal ``A``."""

    d: int = 10
    a_diag: np.ndarray | None = None  # None: linspace(0.1, 0.9, d)
    sigma: np.ndarray | None = None  # None: 0.5 I + 0.5
    burn_in: int = 10
    T: int = 32

    def __post_init__(self):
        if self.a_diag is None:
            self.a_diag = _default_a(self.d)
        if self.sigma is None:
            self.sigma = _default_sigma(self.d)
        self.a_diag = np.asarray(self.a_diag, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        if self.a_diag.shape != (self.d,) or self.sigma.shape != (self.d, self.d):
            raise ShapeError(f"Ar1Spec: A diagonal {self.a_diag.shape} / Sigma {self.sigma.shape} do not match d={self.d}")
        if np.max(np.abs(self.a_diag)) >= 1:
            raise ValueError("Ar1Spec: spectral radius of A must be < 1")

    def noise_factor(self) -> np.ndarray:
        """Lower Cholesky factor of Sigma."""
        try:
            return np.linalg.cholesky(self.sigma)
        except np.linalg.LinAlgError:
            raise ValueError("Ar1Spec: Sigma is not positive definite") from None

    def stationary_cov(self) -> np.ndarray:
        a = self.a_diag
        return self.sigma / (1.0 - np.outer(a, a))

    def stationary_corr(self) -> np.ndarray:
        S = self.stationary_cov()
        s = np.sqrt(np.diag(S))
        return S / np.outer(s, s)


def gen_ar1(spec: Ar1Spec, m: int, rng: np.random.Generator) -> np.ndarray:
    """Sample ``m`` sequences of length ``spec.T`` after discarding the burn-in."""
    Lf = spec.noise_factor()
    x = rng.standard_normal((m, spec.d))
    out = np.empty((m, spec.T, spec.d))
    for t in range(spec.burn_in + spec.T):
        x = x * spec.a_diag + rng.standard_normal((m, spec.d)) @ Lf.T
        if t >= spec.burn_in:
            out[:, t - spec.burn_in] = x
    return out


# ----------------------------------------------------- noisy oscillation


@dataclass
class OscillationSpec:
    T: int = 48
    d: int = 20
    omega: float = 2 * np.pi / 12
    noise_var: float = 0.1
    loc_range: tuple = (-1.0, 1.0)
    width: float = 0.3
    # "sigmoid": c = 1 / (|s| (exp(-4(|s| - 0.3)) + 1)), a stable limit cycle
    # "shifted_exp": c = 1 / (|s| exp(-4(|s| - 0.3) + 1)), diverges within a few steps
    radial: str = "sigmoid"

    def rotation(self) -> np.ndarray:
        c, s = np.cos(self.omega), np.sin(self.omega)
        return np.array([[c, -s], [s, c]])

    def locations(self) -> np.ndarray:
        return np.linspace(self.loc_range[0], self.loc_range[1], self.d)


def oscillation_radial(r, form="sigmoid"):
    if form == "sigmoid":
        return 1.0 / (r * (np.exp(-4.0 * (r - 0.3)) + 1.0))
    if form == "shifted_exp":
        return 1.0 / (r * np.exp(-4.0 * (r - 0.3) + 1.0))
    raise ValueError(f"unknown radial form {form!r}")


def oscillation_states(spec: OscillationSpec, m: int, rng: np.random.Generator, s0=None) -> np.ndarray:
    """Particle states ``s_1..s_T`` of shape ``(m, T, 2)``."""
    if s0 is None:
        phi = rng.uniform(0.0, 2 * np.pi, m)
        s = np.stack([np.cos(phi), np.sin(phi)], axis=1)
    else:
        s = np.array(s0, dtype=np.float64).reshape(m, 2)
    A = spec.rotation()
    sd = np.sqrt(spec.noise_var)
    out = np.empty((m, spec.T, 2))
    for t in range(spec.T):
        r = np.linalg.norm(s, axis=1, keepdims=True)
        s = oscillation_radial(r, spec.radial) * (s @ A.T)
        if sd > 0:
            s = s + sd * rng.standard_normal((m, 2))
        out[:, t] = s
    return out


def render_bumps(positions, spec: OscillationSpec) -> np.ndarray:
    """Gaussian bump images ``exp(-(loc_i - p)^2 / (2 width^2))``."""
    loc = spec.locations()
    diff = loc[None, None, :] - positions[..., None]
    return np.exp(-diff * diff / (2.0 * spec.width ** 2))


def gen_noisy_oscillation(m: int, rng: np.random.Generator, spec: OscillationSpec | None = None) -> np.ndarray:
    spec = OscillationSpec() if spec is None else spec
    states = oscillation_states(spec, m, rng)
    return render_bumps(states[..., 0], spec)


# ------------------------------------------------------- sinusoid family


def gen_sinusoid_family(theta_max: float, m, T: int, rng: np.random.Generator,
                        freq_band=(1.0, 2.0), min_amp: float = 0.3) -> np.ndarray:
    """Sinusoids ``a sin(2 pi f t / T + phase)`` with ``a ~ U[min_amp, theta_max]``.

    The phase is uniform on ``[0, 2 pi)`` and ``f`` uniform on ``freq_band``
    (cycles per window). ``m`` may be a tuple to draw several batches at once;
    the result has shape ``(*m, T, 1)``.
    """
    if theta_max < min_amp:
        raise ValueError(f"theta_max must be >= {min_amp}, got {theta_max}")
    shape = (m,) if np.isscalar(m) else tuple(m)
    amp = rng.uniform(min_amp, theta_max, shape)
    freq = rng.uniform(freq_band[0], freq_band[1], shape)
    phase = rng.uniform(0.0, 2 * np.pi, shape)
    t = np.arange(1, T + 1)
    wave = np.sin(2 * np.pi * freq[..., None] * t / T + phase[..., None])
    return (amp[..., None] * wave)[..., None]


# ------------------------------------------------------------------- CSV


def save_csv_sequences(path, batch) -> None:
    """Write sequences as CSV rows (time steps), one blank line between sequences."""
    batch = check_batch(batch)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for k, seq in enumerate(batch):
            if k:
                fh.write("\n")
            for row in seq:
                w.writerow([repr(float(v)) for v in row])


def _read_blocks(path):
    blocks, cur = [], []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                if cur:
                    blocks.append(cur)
                    cur = []
                continue
            cur.append((lineno, row))
    if cur:
        blocks.append(cur)
    return blocks


def load_csv_sequences(path, T: int, d: int) -> np.ndarray:
    """Load sequences from a CSV file (blank-line separated) or a directory of
    CSV files (one sequence per file, read in sorted name order)."""
    path = Path(path)
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix == ".csv")
        blocks = [(p, b) for p in files for b in _read_blocks(p)]
    else:
        blocks = [(path, b) for b in _read_blocks(path)]
    if not blocks:
        raise ValueError(f"{path}: no sequences found")
    out = np.empty((len(blocks), T, d))
    for k, (src, block) in enumerate(blocks):
        if len(block) != T:
            raise ValueError(f"{src}:{block[0][0]}: sequence has {len(block)} rows, expected T={T}")
        for t, (lineno, row) in enumerate(block):
            if len(row) != d:
                raise ValueError(f"{src}:{lineno}: row has {len(row)} columns, expected d={d}")
            try:
                out[k, t] = [float(c) for c in row]
            except ValueError:
                raise ValueError(f"{src}:{lineno}: non-numeric cell in {row!r}") from None
    return out


def preprocess_standardize_tanh(batch, delta: float = 1e-12) -> np.ndarray:
    """Subtract the channel mean, divide by three channel standard deviations, apply tanh.

    Channels whose standard deviation is at most ``delta`` map to zeros.
    """
    x = check_batch(batch)
    mean = x.mean(axis=(0, 1))
    std = x.std(axis=(0, 1))
    flat = std <= delta
    z = (x - mean) / (3.0 * np.where(flat, 1.0, std))
    z[..., flat] = 0.0
    return np.tanh(z)


class DataSource:
    """Draws training batches, either freshly simulated or from a fixed array."""

    def __init__(self, sampler=None, data=None):
        if (sampler is None) == (data is None):
            raise ValueError("DataSource needs exactly one of sampler or data")
        self.sampler = sampler
        self.data = None if data is None else check_batch(data)

    @property
    def shape(self):
        probe = self.data[:1] if self.data is not None else None
        return probe.shape[1:] if probe is not None else None

    def sample(self, m: int, rng: np.random.Generator) -> np.ndarray:
        if self.data is not None:
            idx = rng.choice(self.data.shape[0], size=m, replace=self.data.shape[0] < m)
            return self.data[idx]
        return self.sampler(m, rng)


def make_source(name: str, T: int | None = None, path: os.PathLike | None = None, d: int | None = None) -> DataSource:
    if name == "ar1":
        spec = Ar1Spec(T=T or 32, d=d or 10)
        return DataSource(lambda m, rng: gen_ar1(spec, m, rng))
    if name == "oscillation":
        spec = OscillationSpec(T=T or 48, d=d or 20)
        return DataSource(lambda m, rng: gen_noisy_oscillation(m, rng, spec))
    if name == "sinusoid":
        return DataSource(lambda m, rng: gen_sinusoid_family(0.8, m, T or 20, rng))
    if name == "csv":
        if path is None or T is None or d is None:
            raise ValueError("csv dataset needs path, T and d")
        return DataSource(data=preprocess_standardize_tanh(load_csv_sequences(path, T, d)))
    raise ValueError(f"unknown dataset {name!r}")
