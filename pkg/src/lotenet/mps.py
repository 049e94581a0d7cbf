"""Matrix-product-state blocks.

A block stores ``N`` cores.  Core ``j`` has axes ``(left?, site, out?, right?)``:
the left bond is absent on the first core, the right bond on the last, and
exactly one core (at ``N // 2``) carries the output axis of length ``out_dim``.

Contraction first absorbs each site vector into its core, leaving a chain of
``beta x beta`` matrices (``beta x out x beta`` at the output core).  The
matrices left and right of the output core are then multiplied pairwise in
rounds until each side is a single bond vector, and both vectors are finally
absorbed into the output element.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ShapeError, UsageError
from .feature_map import EmbeddedPatch
from .tensor_core import WIDE, Tensor, as_tensor, contract, matmul, reshape, take

SCHEDULES = ("pairwise", "sequential")


@dataclass
class MpsBlock:
    cores: list[Tensor]
    n_sites: int
    site_dim: int
    bond_dim: int
    out_dim: int
    out_position: int = field(default=-1)

    def __post_init__(self):
        if self.out_position < 0:
            self.out_position = self.n_sites // 2
        if len(self.cores) != self.n_sites:
            raise ShapeError(f"expected {self.n_sites} cores, got {len(self.cores)}")
        for j, core in enumerate(self.cores):
            expected = core_shape(j, self.n_sites, self.site_dim, self.bond_dim, self.out_dim, self.out_position)
            if core.shape != expected:
                raise ShapeError(f"core {j} has shape {core.shape}, expected {expected}")

    @property
    def param_count(self) -> int:
        return sum(c.size for c in self.cores)

    @property
    def dtype(self) -> np.dtype:
        return self.cores[0].dtype

    def parameters(self) -> list[Tensor]:
        return list(self.cores)


def core_shape(j: int, n_sites: int, site_dim: int, bond_dim: int, out_dim: int, out_position: int) -> tuple:
    shape = []
    if j > 0:
        shape.append(bond_dim)
    shape.append(site_dim)
    if j == out_position:
        shape.append(out_dim)
    if j < n_sites - 1:
        shape.append(bond_dim)
    return tuple(shape)


def expected_param_count(n_sites: int, site_dim: int, bond_dim: int, out_dim: int) -> int:
    """Closed-form parameter count of a block with the output core at ``N // 2``."""
    if n_sites == 1:
        return site_dim * out_dim
    pos = n_sites // 2
    borders = 2 * site_dim * bond_dim
    interior = (n_sites - 2) * bond_dim * site_dim * bond_dim
    # the output core multiplies its plain size by out_dim
    if pos in (0, n_sites - 1):
        extra = site_dim * bond_dim * (out_dim - 1)
    else:
        extra = bond_dim * site_dim * bond_dim * (out_dim - 1)
    return borders + interior + extra


def init_block(
    n_sites: int,
    site_dim: int,
    bond_dim: int,
    out_dim: int,
    seed=None,
    noise: float = 1e-2,
    dtype=WIDE,
) -> MpsBlock:
    """Near-identity initialisation.

    Bond-to-bond identity slices are repeated along the site axis and scaled
    by ``1/sqrt(d)``; at the output core the site and output axes get a padded
    identity instead.  Gaussian noise of standard deviation
    ``noise / sqrt(d * beta)`` is added everywhere.  ``seed`` may be an int,
    a ``SeedSequence`` or a ``Generator``.
    """
    if min(n_sites, site_dim, bond_dim, out_dim) < 1:
        raise ShapeError("all block dimensions must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    pos = n_sites // 2
    sigma = noise / np.sqrt(site_dim * bond_dim)
    eye_bond = np.eye(bond_dim)
    first = np.zeros(bond_dim)
    first[0] = 1.0
    cores = []
    for j in range(n_sites):
        left, right = j > 0, j < n_sites - 1
        if left and right:
            bonds = eye_bond
        elif left or right:
            bonds = first
        else:
            bonds = np.ones(())
        if j == pos:
            site_out = np.eye(site_dim, out_dim)
            base = _arrange(np.multiply.outer(bonds, site_out), left, right, out=True)
        else:
            base = np.multiply.outer(bonds, np.full(site_dim, 1.0 / np.sqrt(site_dim)))
            base = _arrange(base, left, right, out=False)
        shape = core_shape(j, n_sites, site_dim, bond_dim, out_dim, pos)
        values = base + sigma * rng.standard_normal(shape) if sigma > 0 else base
        cores.append(Tensor(values, dtype=dtype))
    return MpsBlock(cores, n_sites, site_dim, bond_dim, out_dim, pos)


def _arrange(base: np.ndarray, left: bool, right: bool, out: bool) -> np.ndarray:
    """Reorder ``outer(bonds, site[, out])`` into ``(left?, site, out?, right?)``."""
    tail = 2 if out else 1
    if left and right:
        # (l, r, site[, out]) -> (l, site[, out], r)
        return np.moveaxis(base, 1, -1)
    if right:
        # (r, site[, out]) -> (site[, out], r)
        return np.moveaxis(base, 0, -1)
    if left:
        return base
    return base.reshape(base.shape[-tail:])


# --------------------------------------------------------------------------
# contraction


def _reduce(items: list, combine: Callable, schedule: str):
    if schedule == "sequential":
        acc = items[0]
        for nxt in items[1:]:
            acc = combine(acc, nxt)
        return acc
    if schedule != "pairwise":
        raise UsageError(f"unknown schedule {schedule!r}; expected one of {SCHEDULES}")
    while len(items) > 1:
        merged = [combine(items[i], items[i + 1]) for i in range(0, len(items) - 1, 2)]
        if len(items) % 2:
            merged.append(items[-1])
        items = merged
    return items[0]


def _reduce_around_output(items: list, out_position: int, combine: Callable, schedule: str):
    """Reduce each side of the output element, then attach left and right.

    With the sequential schedule the whole chain is folded left to right.
    """
    if schedule == "sequential":
        return _reduce(items, combine, schedule)
    left, out, right = items[:out_position], items[out_position], items[out_position + 1:]
    if left:
        out = combine(_reduce(left, combine, schedule), out)
    if right:
        out = combine(out, _reduce(right, combine, schedule))
    return out


def _combine(x: tuple[Tensor, bool], y: tuple[Tensor, bool]) -> tuple[Tensor, bool]:
    (tx, ox), (ty, oy) = x, y
    b = tx.shape[0]
    if ox:
        # (B, a, out, k) @ (B, k, c)
        _, a, nu, k = tx.shape
        prod = matmul(reshape(tx, (b, a * nu, k)), ty)
        return reshape(prod, (b, a, nu, ty.shape[-1])), True
    if oy:
        _, k, nu, c = ty.shape
        prod = matmul(tx, reshape(ty, (b, k, nu * c)))
        return reshape(prod, (b, tx.shape[1], nu, c)), True
    return matmul(tx, ty), False


def contract_block(block: MpsBlock, patch, schedule: str = "pairwise") -> Tensor:
    """Contract ``block`` with embedded site vectors, returning ``W . Phi(x)``.

    ``patch`` is an :class:`EmbeddedPatch` or a tensor of shape
    ``(..., n_sites, site_dim)``; leading batch axes are preserved and the
    result has shape ``(..., out_dim)``.
    """
    sites = patch.sites if isinstance(patch, EmbeddedPatch) else as_tensor(patch)
    if sites.ndim < 2 or sites.shape[-2:] != (block.n_sites, block.site_dim):
        raise ShapeError(
            f"patch has sites {sites.shape[-2:] if sites.ndim >= 2 else sites.shape}, "
            f"block expects ({block.n_sites}, {block.site_dim})"
        )
    batch_shape = sites.shape[:-2]
    b = math.prod(batch_shape)
    flat = reshape(sites, (b, block.n_sites, block.site_dim))

    elements = []
    last = block.n_sites - 1
    for j, core in enumerate(block.cores):
        left, right = j > 0, j < last
        is_out = j == block.out_position
        site = take(flat, (slice(None), j))
        absorbed = contract(site, core, [1], [1 if left else 0])
        shape = [b, block.bond_dim if left else 1]
        if is_out:
            shape.append(block.out_dim)
        shape.append(block.bond_dim if right else 1)
        elements.append((reshape(absorbed, shape), is_out))

    result, _ = _reduce_around_output(elements, block.out_position, _combine, schedule)
    return reshape(result, batch_shape + (block.out_dim,))


def cost_estimate(block: MpsBlock, schedule: str = "pairwise") -> int:
    """Multiply-accumulate count of one :func:`contract_block` call per sample."""
    last = block.n_sites - 1
    beta, d, nu = block.bond_dim, block.site_dim, block.out_dim
    total = 0
    items = []
    for j in range(block.n_sites):
        rows = beta if j > 0 else 1
        cols = beta if j < last else 1
        extra = nu if j == block.out_position else 1
        total += rows * d * extra * cols
        items.append((rows, extra, cols))

    def combine(x, y):
        nonlocal total
        (ra, ea, ca), (rb, eb, cb) = x, y
        total += ra * ea * ca * eb * cb
        return ra, ea * eb, cb

    _reduce_around_output(items, block.out_position, combine, schedule)
    return total


def param_count(block: MpsBlock) -> int:
    return block.param_count


def clone_block(block: MpsBlock, cores: Sequence | None = None) -> MpsBlock:
    cores = block.cores if cores is None else [as_tensor(c) for c in cores]
    return MpsBlock(list(cores), block.n_sites, block.site_dim, block.bond_dim, block.out_dim, block.out_position)
