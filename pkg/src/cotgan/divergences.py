"""Mini-batch divergences assembled from sharp Sinkhorn values.

Every transport term ``W(a, b)`` is the sharp value ``<pi, C(a, b)>`` of a
Sinkhorn run sharing one ``eps`` and ``L``. Batches are numpy arrays of shape
``(..., m, T, d)`` (leading axes vectorise over replicates) or tensors of
shape ``(m, T, d)`` for differentiable evaluation.

``cost`` is either a base cost kind understood by :func:`ot.pairwise_cost`
or a callable ``cost(a, b) -> matrix`` with rows indexed by ``a``.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from . import ot
from .errors import ShapeError
from .tensor import Tensor


class DivergenceKind(str, Enum):
    SHARP = "sharp"
    SINKHORN_2TERM = "sinkhorn"
    VARIANT_3 = "w3"
    MIXED_4 = "mixed"
    VARIANT_6 = "w6"
    VARIANT_8 = "w8"
    MMD_BIASED = "mmd_biased"
    MMD_UNBIASED = "mmd_unbiased"

    @property
    def paired(self) -> bool:
        """Whether the estimator needs a second batch from each distribution."""
        return self in _PAIRED


_PAIRED = {
    DivergenceKind.VARIANT_3, DivergenceKind.MIXED_4, DivergenceKind.VARIANT_6,
    DivergenceKind.VARIANT_8, DivergenceKind.MMD_UNBIASED,
}


def _cost_matrix(cost, a, b):
    if callable(cost):
        return cost(a, b)
    return ot.pairwise_cost(a, b, cost)


def _check_pair(a, b):
    sa, sb = a.shape, b.shape
    if sa != sb:
        raise ShapeError(f"batches must have equal shapes, got {sa} and {sb}")


def sharp_distance(x, y, cost="sqeuclidean", eps: float = 1.0, L: int = 100):
    """Sharp entropic distance ``W_{c,eps}(x, y)`` between two batches of equal size."""
    _check_pair(x, y)
    C = _cost_matrix(cost, x, y)
    if isinstance(C, Tensor):
        return ot.sinkhorn_sharp(C, eps, L)
    return ot.sinkhorn(C, eps=eps, L=L).sharp


def _terms(kind, W, x, x2, y, y2):
    K = DivergenceKind
    if kind is K.SHARP:
        return W(x, y)
    if kind is K.SINKHORN_2TERM:
        return 2.0 * W(x, y) - W(x, x) - W(y, y)
    if kind is K.VARIANT_3:
        return 2.0 * W(x, y) - W(x, x2) - W(y, y2)
    if kind is K.MIXED_4:
        return W(x, y) + W(x2, y2) - W(x, x2) - W(y, y2)
    if kind is K.VARIANT_6:
        return (W(x, y) + W(x, y2) + W(x2, y) + W(x2, y2)
                - 2.0 * W(x, x2) - 2.0 * W(y, y2))
    if kind is K.VARIANT_8:
        return (W(x, y) + W(x, y2) + W(x2, y) + W(x2, y2)
                - W(x, x2) - W(y, y2) - W(x, x) - W(y, y))
    raise ValueError(f"{kind} is not a transport divergence")


def divergence(kind, x, x2=None, y=None, y2=None, cost="sqeuclidean", eps: float = 1.0, L: int = 100):
    """Evaluate divergence ``kind`` between batches from two distributions.

    ``x``/``x2`` come from the first distribution, ``y``/``y2`` from the
    second; the primed batches are only read by paired kinds. MMD kinds are
    forwarded to :func:`mmd_estimate`.
    """
    kind = DivergenceKind(kind)
    if y is None:
        raise ValueError("divergence: batch y is required")
    if kind.paired and (x2 is None or y2 is None):
        raise ValueError(f"divergence: {kind.name} needs second batches x2 and y2")
    for other in (y, x2, y2) if kind.paired else (y,):
        _check_pair(x, other)
    if kind in (DivergenceKind.MMD_BIASED, DivergenceKind.MMD_UNBIASED):
        return mmd_estimate(kind, x, y, x2, y2, cost)

    def W(a, b):
        return sharp_distance(a, b, cost, eps, L)

    return _terms(kind, W, x, x2, y, y2)


def mmd_estimate(kind, x, y, x2=None, y2=None, cost="sqeuclidean"):
    """MMD under the kernel ``-c``: the eps -> infinity limits of the divergences.

    ``MMD_BIASED`` uses one batch per distribution (the within-batch averages
    include the zero diagonal); ``MMD_UNBIASED`` uses independent second
    batches for the within-distribution terms.
    """
    kind = DivergenceKind(kind)

    def E(a, b):
        C = _cost_matrix(cost, a, b)
        if isinstance(C, Tensor):
            return C.mean()
        return np.asarray(C).mean(axis=(-1, -2))

    _check_pair(x, y)
    if kind is DivergenceKind.MMD_BIASED:
        return 2.0 * E(x, y) - E(x, x) - E(y, y)
    if kind is DivergenceKind.MMD_UNBIASED:
        if x2 is None or y2 is None:
            raise ValueError("mmd_estimate: MMD_UNBIASED needs second batches x2 and y2")
        _check_pair(x, x2)
        _check_pair(y, y2)
        return E(x, y) + E(x2, y2) - E(x, x2) - E(y, y2)
    raise ValueError(f"mmd_estimate: {kind} is not an MMD kind")
