"""Recurrent generator, clipped feature network and parameter checkpoints.

Parameters are plain ``dict[str, np.ndarray]`` (nested one level for
multi-network models). Forward passes accept the same dicts with values
replaced by watched tensors, which is how gradients are taken.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from . import tensor as tt
from .causal import HEADS, CausalConvNet, apply_head, init_uniform
from .ot import pairwise_cost
from .tensor import Tensor, as_tensor


@dataclass
class LatentSpec:
    step_dim: int = 10
    static_dim: int = 10
    T: int = 32

    def __post_init__(self):
        if min(self.step_dim, self.static_dim, self.T) < 1:
            raise ValueError(f"latent dimensions must be positive, got {self}")

    @property
    def width(self) -> int:
        return self.step_dim + self.static_dim


def sample_latent(spec: LatentSpec, m: int, rng: np.random.Generator) -> np.ndarray:
    """``(m, T, step_dim + static_dim)``: fresh normals per step, then one static
    normal vector per sequence repeated over time."""
    step = rng.standard_normal((m, spec.T, spec.step_dim))
    static = rng.standard_normal((m, 1, spec.static_dim))
    return np.concatenate([step, np.broadcast_to(static, (m, spec.T, spec.static_dim))], axis=2)


@dataclass
class Generator:
    """One-layer LSTM over the latent sequence, then FC-relu, FC and an output head.

    With input ``z_t`` and state ``(h, c)``, the pre-activations are
    ``a = z_t W_x + h W_h + b`` split into four blocks ``(i, f, o, g)`` and

        i, f, o = sigmoid(a_i), sigmoid(a_f), sigmoid(a_o)
        g = tanh(a_g)
        c' = f * c + i * g
        h' = o * tanh(c')

    starting from ``h = c = 0``. Output ``x_t = head(relu(h_t U_1 + u_1) U_2 + u_2)``.
    """

    latent: LatentSpec
    d: int
    state: int = 32
    fc: int = 32
    head: str = "linear"

    def __post_init__(self):
        if self.head not in HEADS:
            raise ValueError(f"unknown output head {self.head!r}; expected one of {HEADS}")

    def param_shapes(self) -> dict:
        H, n = self.state, self.latent.width
        return {
            "wx": (n, 4 * H), "wh": (H, 4 * H), "b": (4 * H,),
            "u1": (H, self.fc), "c1": (self.fc,),
            "u2": (self.fc, self.d), "c2": (self.d,),
        }

    def init(self, rng: np.random.Generator) -> dict:
        H, n = self.state, self.latent.width
        fan = {"wx": n + H, "wh": n + H, "b": n + H, "u1": H, "c1": H, "u2": self.fc, "c2": self.fc}
        return {k: init_uniform(rng, fan[k], s) for k, s in self.param_shapes().items()}

    def forward(self, params: dict, z):
        z = as_tensor(z)
        m, T, _ = z.shape
        H = self.state
        wx, wh, b = params["wx"], params["wh"], params["b"]
        xs = z @ wx + b  # input contributions for all steps at once
        h = Tensor(np.zeros((m, H)))
        c = Tensor(np.zeros((m, H)))
        outs = []
        for t in range(T):
            a = xs[:, t, :] + h @ wh
            i = tt.sigmoid(a[:, :H])
            f = tt.sigmoid(a[:, H:2 * H])
            o = tt.sigmoid(a[:, 2 * H:3 * H])
            g = tt.tanh(a[:, 3 * H:])
            c = f * c + i * g
            h = o * tt.tanh(c)
            outs.append(h.reshape(m, 1, H))
        hs = tt.concatenate(outs, axis=1)
        y = tt.relu(hs @ params["u1"] + params["c1"]) @ params["u2"] + params["c2"]
        return apply_head(y, self.head)


def generator_forward(gen: Generator, params: dict, latents):
    return gen.forward(params, latents)


# ------------------------------------------------------- feature network


def clip_weights(params: dict, clip: float = 0.01) -> dict:
    if not clip > 0:
        raise ValueError(f"clip must be positive, got {clip}")
    return {k: np.clip(v, -clip, clip) for k, v in params.items()}


def feature_net_forward_clipped(net: CausalConvNet, params: dict, batch, clip: float = 0.01):
    """Features from weights clipped to ``[-clip, clip]``."""
    return net.forward(clip_weights(params, clip), batch)


def feature_cost(net: CausalConvNet, params: dict, x, y, kind: str = "sqeuclidean"):
    """Baseline cost ``c(f(x), f(y))`` on learned features."""
    return pairwise_cost(net.forward(params, x), net.forward(params, y), kind)


def identity_feature_params(net: CausalConvNet) -> dict:
    """Weights making a linear-head ``net`` with ``hidden >= 2d, out == d`` the identity.

    The first layer keeps ``[x_t, -x_t]`` from the newest frame of the window,
    the rectifier passes their positive parts and the second layer recombines
    them as ``relu(x) - relu(-x) = x``.
    """
    d, k = net.d, net.kernel
    if net.hidden < 2 * d or net.out != d or net.head != "linear":
        raise ValueError("identity construction needs hidden >= 2d, out == d and a linear head")
    p = {n: np.zeros(s) for n, s in net.param_shapes().items()}
    newest = (k - 1) * d
    p["w1"][newest:newest + d, :d] = np.eye(d)
    p["w1"][newest:newest + d, d:2 * d] = -np.eye(d)
    newest = (k - 1) * net.hidden
    p["w2"][newest:newest + d, :] = np.eye(d)
    p["w2"][newest + d:newest + 2 * d, :] = -np.eye(d)
    return p


# ----------------------------------------------------------- checkpoints


def flatten_params(params: dict, prefix=""):
    for k, v in params.items():
        name = f"{prefix}{k}"
        if isinstance(v, dict):
            yield from flatten_params(v, name + ".")
        else:
            yield name, np.asarray(v.data if isinstance(v, Tensor) else v, dtype=np.float64)


def nest_params(flat: dict) -> dict:
    out: dict = {}
    for name, v in flat.items():
        *path, leaf = name.split(".")
        node = out
        for p in path:
            node = node.setdefault(p, {})
        node[leaf] = v
    return out


def save_params(directory, params: dict, extra: dict | None = None) -> None:
    """One ``.cott`` file per array plus ``manifest.json`` listing names and shapes."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for name, arr in flatten_params(params):
        fname = f"{name}.cott"
        tt.save_tensor(directory / fname, arr)
        entries.append({"name": name, "shape": list(arr.shape), "file": fname})
    manifest = {"version": __version__, "params": entries, "extra": extra or {}}
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))


def load_params(directory):
    """Inverse of :func:`save_params`; returns ``(params, extra)``."""
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    flat = {}
    for e in manifest["params"]:
        arr = tt.load_tensor(directory / e["file"]).numpy().copy()
        if list(arr.shape) != e["shape"]:
            raise ValueError(f"{e['file']}: shape {arr.shape} does not match manifest {e['shape']}")
        flat[e["name"]] = arr
    return nest_params(flat), manifest.get("extra", {})
