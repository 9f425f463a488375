"""Alternating adversarial training of a sequence generator against a causal cost.

Each outer iteration makes one ascent step on the cost networks
``phi = (h, M)`` for

    mixed divergence under c_K  -  lam * martingale penalty(real batch)

followed by one descent step on the generator ``theta`` for the mixed
divergence alone. Both half-steps draw fresh real and latent batches, and
each evaluates four Sinkhorn terms.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import ot
from .causal import CausalConvNet, CausalCost, martingale_penalty
from .data import DataSource, make_source
from .errors import ConfigError, NumericalError
from .nets import Generator, LatentSpec, flatten_params, load_params, nest_params, sample_latent, save_params
from .tensor import Tape


@dataclass
class TrainConfig:
    m: int = 32
    eps: float = 10.0
    L: int = 100
    lr: float = 1e-3
    lam: float = 10.0
    J: int = 16
    iters: int = 2000
    seed: int = 0
    lr_decay_rate: float = 0.98
    lr_decay_every: float = 500.0
    optimizer: str = "adam"
    dataset: str = "ar1"
    data_path: str = ""
    T: int = 32
    d: int = 10
    cost: str = "sqeuclidean"
    eta: float = 1e-6
    disc_hidden: int = 32
    kernel: int = 5
    disc_head: str = "tanh"
    gen_state: int = 32
    gen_fc: int = 32
    gen_head: str = "linear"
    gen_init: str = "data"  # "data" rescales the output layer to the data scale, "plain" keeps the uniform init
    step_latent: int = 10
    static_latent: int = 10
    log_every: int = 10

    def validate(self) -> None:
        if self.m < 2:
            raise ConfigError(f"m must be >= 2, got {self.m}")
        if not self.eps > 0:
            raise ConfigError(f"eps must be positive, got {self.eps}")
        if self.L < 1:
            raise ConfigError(f"L must be >= 1, got {self.L}")
        if self.lam < 0:
            raise ConfigError(f"lam must be >= 0, got {self.lam}")
        if not 0 < self.lr_decay_rate <= 1 or not self.lr_decay_every > 0:
            raise ConfigError("lr decay needs rate in (0, 1] and a positive interval")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be adam or sgd, got {self.optimizer!r}")
        if self.gen_init not in ("data", "plain"):
            raise ConfigError(f"gen_init must be data or plain, got {self.gen_init!r}")
        if self.J < 1 or self.T < 1 or self.d < 1:
            raise ConfigError("J, T and d must be positive")


def lr_schedule(eta0: float, r: float, s: float, c: float) -> float:
    """Exponential decay ``eta0 * r ** (s / c)``."""
    return eta0 * r ** (s / c)


# --------------------------------------------------------------- optimizer


def init_moments(params: dict) -> dict:
    flat = dict(flatten_params(params))
    return {"m": {k: np.zeros_like(v) for k, v in flat.items()},
            "v": {k: np.zeros_like(v) for k, v in flat.items()}, "t": 0}


def adam_update(params: dict, grads: dict, moments: dict, lr: float, sign: float = -1.0,
                beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """Bias-corrected Adam step on flat or nested parameter dicts.

    ``sign=-1`` descends, ``sign=+1`` ascends. Returns new ``(params, moments)``.
    """
    flat = dict(flatten_params(params))
    gflat = dict(flatten_params(grads))
    t = moments["t"] + 1
    new_m, new_v, out = {}, {}, {}
    for k, p in flat.items():
        g = gflat[k]
        mk = beta1 * moments["m"][k] + (1 - beta1) * g
        vk = beta2 * moments["v"][k] + (1 - beta2) * g * g
        mhat = mk / (1 - beta1 ** t)
        vhat = vk / (1 - beta2 ** t)
        out[k] = p + sign * lr * mhat / (np.sqrt(vhat) + eps)
        new_m[k], new_v[k] = mk, vk
    nested = out if all("." not in k for k in out) else nest_params(out)
    return nested, {"m": new_m, "v": new_v, "t": t}


def sgd_update(params: dict, grads: dict, lr: float, sign: float = -1.0) -> dict:
    flat = dict(flatten_params(params))
    gflat = dict(flatten_params(grads))
    out = {k: p + sign * lr * gflat[k] for k, p in flat.items()}
    return out if all("." not in k for k in out) else nest_params(out)


# --------------------------------------------------------------- objective


def _watch(tape: Tape, params: dict):
    flat = dict(flatten_params(params))
    watched = {k: tape.watch(v) for k, v in flat.items()}
    nested = watched if all("." not in k for k in watched) else nest_params(watched)
    return nested, watched


def mixed_objective(cost: CausalCost, phi, x, x2, y, y2, eps, L):
    """Mixed divergence under ``c_K`` plus the M traces of ``x`` (for the penalty)."""
    tr = [cost.traces(phi, b) for b in (x, x2, y, y2)]
    batches = (x, x2, y, y2)

    def W(i, j):
        C = cost.matrix(batches[i], batches[j], tr[i], tr[j])
        return ot.sinkhorn_sharp(C, eps, L)

    mixed = W(0, 2) + W(1, 3) - W(0, 1) - W(2, 3)
    return mixed, tr[0][1]


def discriminator_objective(cost, phi, x, x2, y, y2, eps, L, lam, eta=1e-6):
    mixed, Mx = mixed_objective(cost, phi, x, x2, y, y2, eps, L)
    pen = martingale_penalty(Mx, eta)
    return mixed - lam * pen.tensor, mixed, pen


# ------------------------------------------------------------------ state


@dataclass
class TrainState:
    theta: dict
    phi: dict
    opt_theta: dict
    opt_phi: dict
    iteration: int = 0
    history: list = field(default_factory=list)


class Trainer:
    def __init__(self, config: TrainConfig, source: DataSource | None = None):
        config.validate()
        self.config = c = config
        self.source = source if source is not None else make_source(
            c.dataset, T=c.T, path=c.data_path or None, d=c.d)
        self.latent = LatentSpec(c.step_latent, c.static_latent, c.T)
        self.gen = Generator(self.latent, c.d, c.gen_state, c.gen_fc, c.gen_head)
        h_net = CausalConvNet(c.d, c.J, c.disc_hidden, c.kernel, c.disc_head)
        M_net = CausalConvNet(c.d, c.J, c.disc_hidden, c.kernel, c.disc_head)
        self.cost = CausalCost(h_net, M_net, c.cost)
        self.rng = np.random.default_rng(c.seed)
        theta = self.gen.init(self.rng)
        if c.gen_init == "data":
            theta = self._match_scale(theta, np.random.default_rng([c.seed, 1]))
        phi = {"h": h_net.init(self.rng), "M": M_net.init(self.rng)}
        self.state = TrainState(theta, phi, init_moments(theta), init_moments(phi))

    def _match_scale(self, theta, rng, n=256):
        """Scale the output layer so initial samples have the spread of the data.

        The uniform init leaves generated paths an order of magnitude smaller
        than the data, and the generator then spends its early updates on the
        overall scale while collapsing the channels onto a common factor.
        Only a linear head is rescaled; bounded heads already match [0, 1]-type data.
        """
        if self.gen.head != "linear":
            return theta
        fake = self.gen.forward(theta, sample_latent(self.latent, n, rng)).data
        real = self.source.sample(n, rng)
        s_fake, s_real = fake.std(), real.std()
        if not (s_fake > 0 and s_real > 0):
            return theta
        r = s_real / s_fake
        out = dict(theta)
        out["u2"] = theta["u2"] * r
        out["c2"] = theta["c2"] * r
        return out

    # -- batches
    def real(self):
        return self.source.sample(self.config.m, self.rng)

    def fake(self, theta, tape=None):
        z = sample_latent(self.latent, self.config.m, self.rng)
        return self.gen.forward(theta, z)

    def lr(self, s=None):
        c = self.config
        s = self.state.iteration if s is None else s
        return lr_schedule(c.lr, c.lr_decay_rate, s, c.lr_decay_every)

    def _apply(self, params, grads, moments, sign):
        lr = self.lr()
        if self.config.optimizer == "adam":
            return adam_update(params, grads, moments, lr, sign)
        return sgd_update(params, grads, lr, sign), moments

    def _check(self, value, what):
        if not np.isfinite(value):
            raise NumericalError(f"{what} objective is not finite at iteration {self.state.iteration}",
                                 iteration=self.state.iteration)

    # -- half-steps
    def discriminator_step(self):
        c, st = self.config, self.state
        x, x2 = self.real(), self.real()
        y, y2 = self.fake(st.theta).numpy(), self.fake(st.theta).numpy()
        tape = Tape()
        phi_t, watched = _watch(tape, st.phi)
        obj, mixed, pen = discriminator_objective(self.cost, phi_t, x, x2, y, y2, c.eps, c.L, c.lam, c.eta)
        self._check(obj.item(), "discriminator")
        grads = dict(zip(watched, tape.gradient(obj, list(watched.values()))))
        st.phi, st.opt_phi = self._apply(st.phi, nest_params(grads), st.opt_phi, +1.0)
        return mixed.item(), pen.value

    def generator_step(self):
        c, st = self.config, self.state
        x, x2 = self.real(), self.real()
        tape = Tape()
        theta_t, watched = _watch(tape, st.theta)
        y, y2 = self.fake(theta_t), self.fake(theta_t)
        mixed, _ = mixed_objective(self.cost, st.phi, x, x2, y, y2, c.eps, c.L)
        self._check(mixed.item(), "generator")
        grads = dict(zip(watched, tape.gradient(mixed, list(watched.values()))))
        st.theta, st.opt_theta = self._apply(st.theta, grads, st.opt_theta, -1.0)
        return mixed.item()

    def step(self) -> dict:
        t0 = time.perf_counter()
        lr = self.lr()
        mixed, pen = self.discriminator_step()
        self.generator_step()
        self.state.iteration += 1
        row = {"iteration": self.state.iteration, "mixed_divergence": mixed, "penalty": pen,
               "lr": lr, "wall_ms": 1e3 * (time.perf_counter() - t0)}
        self.state.history.append(row)
        return row

    def train(self, iters: int | None = None, log_path=None, checkpoint_dir=None,
              checkpoint_every: int = 0, callback=None):
        iters = self.config.iters if iters is None else iters
        writer = _MetricLog(log_path, self.config.log_every) if log_path else None
        try:
            for _ in range(iters):
                row = self.step()
                if writer:
                    writer.append(row)
                if callback:
                    callback(self, row)
                if checkpoint_dir and checkpoint_every and self.state.iteration % checkpoint_every == 0:
                    self.save(checkpoint_dir)
        finally:
            if writer:
                writer.close()
        if checkpoint_dir:
            self.save(checkpoint_dir)
        return self.state

    def sample(self, n: int, rng: np.random.Generator | None = None) -> np.ndarray:
        rng = self.rng if rng is None else rng
        z = sample_latent(self.latent, n, rng)
        return self.gen.forward(self.state.theta, z).numpy().copy()

    # -- checkpoints
    def save(self, directory) -> None:
        st = self.state
        params = {"theta": st.theta, "phi": st.phi}
        for tag, mo in (("opt_theta", st.opt_theta), ("opt_phi", st.opt_phi)):
            params[tag] = {"m": nest_params(mo["m"]), "v": nest_params(mo["v"])}
        extra = {
            "config": asdict(self.config), "iteration": st.iteration, "version": __version__,
            "adam_t": [st.opt_theta["t"], st.opt_phi["t"]],
            "rng": self.rng.bit_generator.state,
        }
        save_params(directory, params, extra)

    @classmethod
    def load(cls, directory, source: DataSource | None = None) -> "Trainer":
        params, extra = load_params(directory)
        tr = cls(TrainConfig(**extra["config"]), source)
        st = tr.state
        st.theta, st.phi = params["theta"], params["phi"]
        for tag, t in zip(("opt_theta", "opt_phi"), extra["adam_t"]):
            p = params[tag]
            setattr(st, tag, {"m": dict(flatten_params(p["m"])), "v": dict(flatten_params(p["v"])), "t": t})
        st.iteration = extra["iteration"]
        tr.rng.bit_generator.state = extra["rng"]
        return tr


class _MetricLog:
    """Append-only CSV of per-iteration metrics, flushed every ``every`` rows."""

    FIELDS = ("iteration", "mixed_divergence", "penalty", "lr", "wall_ms")

    def __init__(self, path, every=10):
        path = Path(path)
        new = not path.exists() or path.stat().st_size == 0
        self.fh = open(path, "a", newline="")
        self.w = csv.writer(self.fh)
        if new:
            self.w.writerow(self.FIELDS)
        self.every = max(1, int(every))
        self.n = 0

    def append(self, row):
        self.w.writerow([row[k] for k in self.FIELDS])
        self.n += 1
        if self.n % self.every == 0:
            self.fh.flush()

    def close(self):
        self.fh.close()


def config_json(config: TrainConfig) -> str:
    return json.dumps(asdict(config), indent=2, sort_keys=True)


def median_step_seconds(trainer: Trainer, iters: int = 20, warmup: int = 2) -> float:
    """Median wall time of ``iters`` training iterations after ``warmup`` untimed ones."""
    for _ in range(warmup):
        trainer.step()
    times = []
    for _ in range(iters):
        t0 = time.perf_counter()
        trainer.step()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def interleaved_step_seconds(trainers, iters: int = 20, warmup: int = 2) -> list:
    """Median step times of several trainers timed round-robin.

    Alternating the trainers within each round spreads slow drifts in machine
    load evenly over all of them, so their ratios are steadier than separate runs.
    """
    for tr in trainers:
        for _ in range(warmup):
            tr.step()
    times = [[] for _ in trainers]
    for _ in range(iters):
        for k, tr in enumerate(trainers):
            t0 = time.perf_counter()
            tr.step()
            times[k].append(time.perf_counter() - t0)
    return [float(np.median(t)) for t in times]
