"""Pixel feature maps.

Each intensity ``x`` in [0, 1] is lifted to the unit vector
``[cos(pi x / 2), sin(pi x / 2)]``.  A site with several channels
concatenates the per-channel vectors and divides by ``sqrt(C)``, so every
site vector, and therefore their implicit tensor product, has unit norm.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, UsageError
from .tensor_core import Tensor, as_tensor, clip, cos, reshape, scale, sin, stack

HALF_PI = np.pi / 2


def local_phi(x: float) -> np.ndarray:
    """Feature vector of a single intensity; out-of-range values are clamped."""
    x = min(max(float(x), 0.0), 1.0)
    return np.array([np.cos(HALF_PI * x), np.sin(HALF_PI * x)])


def phi(values) -> Tensor:
    """Differentiable elementwise feature map; appends an axis of length 2."""
    t = clip(as_tensor(values), 0.0, 1.0)
    angle = scale(t, HALF_PI)
    return stack([cos(angle), sin(angle)], axis=-1)


def embed(values) -> Tensor:
    """Embed the trailing channel axis: ``(..., C) -> (..., 2C)`` unit vectors."""
    t = as_tensor(values)
    if t.ndim < 1 or t.shape[-1] < 1:
        raise ShapeError(f"embed needs a trailing channel axis, got shape {t.shape}")
    channels = t.shape[-1]
    pairs = phi(t)
    flat = reshape(pairs, t.shape[:-1] + (2 * channels,))
    return scale(flat, 1.0 / np.sqrt(channels))


@dataclass(frozen=True)
class EmbeddedPatch:
    """Site vectors of one patch (or a batch of patches).

    ``sites`` has shape ``(..., site_count, site_dim)``; the joint feature
    vector of dimension ``site_dim ** site_count`` is never formed.
    """

    sites: Tensor

    def __post_init__(self):
        if self.sites.ndim < 2:
            raise ShapeError(f"sites must have shape (..., N, d), got {self.sites.shape}")
        if self.site_dim % 2:
            raise ShapeError(f"site dimension must be even, got {self.site_dim}")

    @property
    def site_count(self) -> int:
        return self.sites.shape[-2]

    @property
    def site_dim(self) -> int:
        return self.sites.shape[-1]


def embed_sites(patch) -> EmbeddedPatch:
    """Embed a flattened patch of shape ``(n, C)`` (or ``(..., n, C)``)."""
    t = as_tensor(patch)
    if t.ndim == 1:
        t = reshape(t, (t.shape[0], 1))
    if t.size == 0:
        raise UsageError("cannot embed an empty patch")
    return EmbeddedPatch(embed(t))
