"""Learned causal cost family.

The cost between paths ``x`` and ``y`` is augmented by martingale test
functions,

    c_K(x, y) = c(x, y) + sum_j sum_{t<T} h^j_t(y) (M^j_{t+1}(x) - M^j_t(x)),

where ``h`` and ``M`` are adapted networks: two left-padded causal
convolutions with a rectifier in between. A penalty pushes the ``M``
outputs toward the martingale property on the real batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tt
from .errors import ShapeError
from .ot import pairwise_cost
from .tensor import Tensor, as_tensor

HEADS = ("linear", "sigmoid", "tanh")


def apply_head(z, head: str):
    if head == "linear":
        return z
    if head == "sigmoid":
        return tt.sigmoid(z)
    if head == "tanh":
        return tt.tanh(z)
    raise ValueError(f"unknown output head {head!r}; expected one of {HEADS}")


def init_uniform(rng, fan_in, shape):
    s = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-s, s, shape)


def causal_conv(x, w, b, k: int):
    """Causal 1-D convolution of ``x`` (m, T, c_in) with ``w`` (k * c_in, c_out).

    The input is left-padded with ``k - 1`` zero frames, so output ``t`` reads
    inputs ``t - k + 1 .. t`` only. Window rows are ordered oldest first.
    """
    x = as_tensor(x)
    m, T, c = x.shape
    pad = tt.concatenate([Tensor(np.zeros((m, k - 1, c))), x], axis=1) if k > 1 else x
    cols = tt.concatenate([pad[:, o:o + T, :] for o in range(k)], axis=2)
    return cols @ w + b


@dataclass
class CausalConvNet:
    """Two causal convolution layers: ``d -> hidden`` (relu) then ``hidden -> out`` (head)."""

    d: int
    out: int
    hidden: int = 32
    kernel: int = 5
    head: str = "linear"

    def __post_init__(self):
        if self.head not in HEADS:
            raise ValueError(f"unknown output head {self.head!r}; expected one of {HEADS}")

    def param_shapes(self) -> dict:
        k = self.kernel
        return {
            "w1": (k * self.d, self.hidden), "b1": (self.hidden,),
            "w2": (k * self.hidden, self.out), "b2": (self.out,),
        }

    def init(self, rng: np.random.Generator) -> dict:
        shapes = self.param_shapes()
        # biases share the fan-in of their layer's weight
        return {name: init_uniform(rng, shapes["w" + name[1:]][0], shape) for name, shape in shapes.items()}

    def forward(self, params: dict, x):
        x = as_tensor(x)
        if x.ndim != 3 or x.shape[2] != self.d:
            raise ShapeError(f"causal net expects (m, T, {self.d}) input, got {x.shape}")
        z = tt.relu(causal_conv(x, params["w1"], params["b1"], self.kernel))
        z = causal_conv(z, params["w2"], params["b2"], self.kernel)
        return apply_head(z, self.head)


def causal_forward(net: CausalConvNet, params: dict, batch):
    """Traces of shape ``(m, T, J)``; output ``t`` depends on inputs ``<= t`` only."""
    batch = as_tensor(batch)
    if batch.ndim != 3 or batch.shape[1] < 1:
        raise ShapeError(f"causal_forward needs a (m, T, d) batch with T >= 1, got {batch.shape}")
    return net.forward(params, batch)


def _increments(M):
    return M[:, 1:, :] - M[:, :-1, :]


def assemble_causal_cost(base, h_traces, M_traces):
    """``base_ij + sum_{j', t<T} h_t(y_j) (M_{t+1}(x_i) - M_t(x_i))``.

    ``M_traces`` come from the row batch and ``h_traces`` from the column
    batch. Works on arrays or tensors; entries may be negative.
    """
    h, M = as_tensor(h_traces), as_tensor(M_traces)
    if h.ndim != 3 or M.ndim != 3 or h.shape[1:] != M.shape[1:]:
        raise ShapeError(f"h traces {h.shape} and M traces {M.shape} must be (n, T, J) with shared T, J")
    base = as_tensor(base)
    if base.shape != (M.shape[0], h.shape[0]):
        raise ShapeError(f"base cost {base.shape} does not match ({M.shape[0]}, {h.shape[0]})")
    if M.shape[1] < 2:
        return base
    dM = _increments(M).reshape(M.shape[0], -1)
    hv = h[:, :-1, :].reshape(h.shape[0], -1)
    return base + dM @ hv.T


@dataclass
class PenaltyReport:
    value: float
    contributions: np.ndarray  # (T-1, J); sums to value
    variance: np.ndarray  # (J,) pooled over batch and time
    tensor: Tensor | None = None


def martingale_penalty(M_traces, eta: float = 1e-6) -> PenaltyReport:
    """``(1/(mT)) sum_j sum_{t<T} |sum_i dM^j_t(x_i)| / (sqrt(Var M^j) + eta)``.

    ``Var M^j`` is the population variance over all ``m T`` values of network
    ``j``. Differentiable when ``M_traces`` is a tracked tensor.
    """
    if not eta > 0:
        raise ValueError(f"eta must be positive, got {eta}")
    M = as_tensor(M_traces)
    if M.ndim != 3:
        raise ShapeError(f"M traces must be (m, T, J), got {M.shape}")
    m, T, J = M.shape
    centred = M - M.mean(axis=(0, 1), keepdims=True)
    var = (centred * centred).mean(axis=(0, 1))
    sd = tt.sqrt(var) + eta
    if T < 2:
        zero = (M * 0.0).sum()
        return PenaltyReport(0.0, np.zeros((0, J)), var.numpy().copy(), zero)
    scaled = tt.abs(_increments(M).sum(axis=0)) / sd
    terms = scaled / (m * T)
    total = terms.sum()
    return PenaltyReport(total.item(), terms.numpy().copy(), var.numpy().copy(), total)


def causality_violation(plan, h_traces, M_traces):
    """``sum_ij pi_ij sum_{j', t} h_t(y_j) dM_t(x_i)``, i.e. ``<pi, C_K - C>``."""
    plan = as_tensor(plan)
    zero = np.zeros(plan.shape)
    extra = assemble_causal_cost(zero, h_traces, M_traces)
    if extra.shape != plan.shape:
        raise ShapeError(f"plan {plan.shape} does not match traces {extra.shape}")
    out = (plan * extra).sum()
    return out if out.tracked else out.item()


@dataclass
class CausalCost:
    """Differentiable cost ``c_K`` for a pair of networks ``(h, M)``."""

    h_net: CausalConvNet
    M_net: CausalConvNet
    base: str = "sqeuclidean"

    def traces(self, params, batch):
        return causal_forward(self.h_net, params["h"], batch), causal_forward(self.M_net, params["M"], batch)

    def matrix(self, x, y, tx=None, ty=None, params=None):
        """Cost between batches ``x`` (rows) and ``y``; precomputed traces may be passed."""
        tx = self.traces(params, x) if tx is None else tx
        ty = self.traces(params, y) if ty is None else ty
        return assemble_causal_cost(pairwise_cost(as_tensor(x), as_tensor(y), self.base), ty[0], tx[1])
