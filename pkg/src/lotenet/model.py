"""The layered LoTeNet model.

Feature grids are tensors of shape ``(batch, height, width, channels)``.  A
layer cuts its input into ``k^2 x k^2`` patches, squeezes each patch into
``k^2`` sites of ``C k^2`` channels, embeds and contracts it with an MPS
block, and reassembles the block outputs into a grid reduced by ``k^2`` per
axis.  Outputs pass through a logistic squash so the next layer can embed
them again.  A final block maps the last grid to class logits.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError, UsageError
from .feature_map import embed
from .mps import MpsBlock, clone_block, contract_block, init_block
from .tensor_core import tensor as tensor_module
from .tensor_core import WIDE, Tensor, as_tensor, permute, reshape, sigmoid, stack, take


@dataclass(frozen=True)
class LoTeNetConfig:
    height: int
    width: int
    channels: int = 1
    layers: int = 3
    kernel: int = 2
    bond_dim: int = 5
    classes: int = 2
    shared: bool = False

    @property
    def out_dim(self) -> int:
        # block output length equals the bond dimension
        return self.bond_dim

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return (self.height, self.width, self.channels)


@dataclass(frozen=True)
class LayerPlan:
    index: int
    in_shape: tuple[int, int, int]
    patch_grid: tuple[int, int]
    n_sites: int
    site_dim: int
    out_shape: tuple[int, int, int]


@dataclass(frozen=True)
class FinalPlan:
    in_shape: tuple[int, int, int]
    squeezed: bool
    n_sites: int
    site_dim: int
    classes: int


@dataclass(frozen=True)
class ShapePlan:
    layers: tuple[LayerPlan, ...]
    final: FinalPlan

    def chain(self) -> list[int]:
        """Spatial height after the input and after every layer."""
        heights = [self.layers[0].in_shape[0]] if self.layers else [self.final.in_shape[0]]
        heights += [lp.out_shape[0] for lp in self.layers]
        return heights

    def describe(self) -> str:
        lines = ["chain " + "→".join(str(h) for h in self.chain())]
        for lp in self.layers:
            h, w, c = lp.in_shape
            oh, ow, oc = lp.out_shape
            lines.append(
                f"layer {lp.index}: input {h}x{w}x{c}, patches {lp.patch_grid[0]}x{lp.patch_grid[1]}, "
                f"n_sites={lp.n_sites}, site_dim={lp.site_dim}, output {oh}x{ow}x{oc}"
            )
        f = self.final
        h, w, c = f.in_shape
        lines.append(
            f"final: input {h}x{w}x{c}, {'squeezed' if f.squeezed else 'flattened'}, "
            f"n_sites={f.n_sites}, site_dim={f.site_dim}, classes={f.classes}"
        )
        return "\n".join(lines)


def shape_plan(config: LoTeNetConfig) -> ShapePlan:
    """Per-layer geometry; raises :class:`ConfigError` naming the first bad layer."""
    k = config.kernel
    for name in ("height", "width", "channels", "kernel", "bond_dim", "classes"):
        if getattr(config, name) < 1:
            raise ConfigError(f"{name} must be >= 1, got {getattr(config, name)}")
    if config.layers < 0:
        raise ConfigError(f"layers must be >= 0, got {config.layers}")
    h, w, c = config.input_shape
    step = k * k
    layers = []
    for index in range(1, config.layers + 1):
        for axis, extent in (("height", h), ("width", w)):
            if extent % step:
                raise ConfigError(
                    f"layer {index}: {axis} {extent} is not divisible by k^2={step} (kernel k={k})"
                )
        out = (h // step, w // step, config.out_dim)
        layers.append(LayerPlan(index, (h, w, c), (h // step, w // step), step, 2 * c * step, out))
        h, w, c = out
    squeezed = h % k == 0 and w % k == 0
    if squeezed:
        n_sites, site_channels = (h // k) * (w // k), c * k * k
    else:
        n_sites, site_channels = h * w, c
    final = FinalPlan((h, w, c), squeezed, n_sites, 2 * site_channels, config.classes)
    return ShapePlan(tuple(layers), final)


# --------------------------------------------------------------------------
# squeeze


def squeeze(grid, k: int) -> Tensor:
    """Move each ``k x k`` spatial block into the channel axis.

    Accepts ``(H, W, C)`` or ``(B, H, W, C)``.  The new channel vector lists
    the block's pixels channel-major, then row-major.
    """
    t = as_tensor(grid)
    single = t.ndim == 3
    if single:
        t = reshape(t, (1,) + t.shape)
    if t.ndim != 4:
        raise ShapeError(f"squeeze needs (H, W, C) or (B, H, W, C), got {t.shape}")
    b, h, w, c = t.shape
    for axis, extent in (("height", h), ("width", w)):
        if extent % k:
            raise ShapeError(f"{axis} {extent} is not divisible by k={k}")
    t = reshape(t, (b, h // k, k, w // k, k, c))
    t = permute(t, (0, 1, 3, 5, 2, 4))
    t = reshape(t, (b, h // k, w // k, c * k * k))
    return reshape(t, t.shape[1:]) if single else t


def unsqueeze(grid, k: int) -> Tensor:
    """Inverse of :func:`squeeze`."""
    t = as_tensor(grid)
    single = t.ndim == 3
    if single:
        t = reshape(t, (1,) + t.shape)
    b, h, w, ck = t.shape
    if ck % (k * k):
        raise ShapeError(f"channel count {ck} is not divisible by k^2={k * k}")
    c = ck // (k * k)
    t = reshape(t, (b, h, w, c, k, k))
    t = permute(t, (0, 1, 4, 2, 5, 3))
    t = reshape(t, (b, h * k, w * k, c))
    return reshape(t, t.shape[1:]) if single else t


# --------------------------------------------------------------------------
# model


@dataclass
class LoTeNetModel:
    config: LoTeNetConfig
    layer_blocks: list[list[list[MpsBlock]]]
    final_block: MpsBlock
    plan: ShapePlan = field(init=False)

    def __post_init__(self):
        self.plan = shape_plan(self.config)
        if len(self.layer_blocks) != len(self.plan.layers):
            raise ShapeError(f"model has {len(self.layer_blocks)} layers, plan has {len(self.plan.layers)}")
        for lp, grid in zip(self.plan.layers, self.layer_blocks):
            rows, cols = lp.patch_grid
            if len(grid) != rows or any(len(r) != cols for r in grid):
                raise ShapeError(f"layer {lp.index}: block grid does not match {rows}x{cols} patches")
            for row in grid:
                for blk in row:
                    _check_block(blk, lp.n_sites, lp.site_dim, self.config.out_dim, f"layer {lp.index}")
        f = self.plan.final
        _check_block(self.final_block, f.n_sites, f.site_dim, self.config.classes, "final block")

    @property
    def dtype(self) -> np.dtype:
        return self.final_block.dtype

    def blocks(self) -> list[MpsBlock]:
        """Distinct blocks in checkpoint order: layer-major, patches row-major, final last."""
        seen, out = set(), []
        for grid in self.layer_blocks:
            for row in grid:
                for blk in row:
                    if id(blk) not in seen:
                        seen.add(id(blk))
                        out.append(blk)
        out.append(self.final_block)
        return out

    def parameters(self) -> list[Tensor]:
        return [core for blk in self.blocks() for core in blk.cores]

    @property
    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def with_parameters(self, values, copy: bool = True) -> "LoTeNetModel":
        """New model with the same structure and the given parameter values.

        With ``copy=False`` the cores are read-only views of the given arrays,
        so later in-place edits of those arrays show through (used by the
        finite-difference checker).
        """
        values = list(values)
        params = self.parameters()
        if len(values) != len(params):
            raise UsageError(f"expected {len(params)} parameter tensors, got {len(values)}")
        replaced: dict[int, MpsBlock] = {}
        pos = 0
        for blk in self.blocks():
            n = len(blk.cores)
            cores = []
            for old, new in zip(blk.cores, values[pos:pos + n]):
                arr = np.asarray(new.data if isinstance(new, Tensor) else new, dtype=self.dtype)
                if arr.shape != old.shape:
                    raise ShapeError(f"parameter shape {arr.shape} does not match {old.shape}")
                if copy:
                    cores.append(Tensor(arr))
                else:
                    view = arr.view()
                    view.flags.writeable = False
                    cores.append(Tensor._wrap(view))
            replaced[id(blk)] = clone_block(blk, cores)
            pos += n
        grids = [[[replaced[id(b)] for b in row] for row in grid] for grid in self.layer_blocks]
        return LoTeNetModel(self.config, grids, replaced[id(self.final_block)])


def _check_block(blk: MpsBlock, n_sites: int, site_dim: int, out_dim: int, where: str) -> None:
    if (blk.n_sites, blk.site_dim, blk.out_dim) != (n_sites, site_dim, out_dim):
        raise ShapeError(
            f"{where}: block has (n_sites, site_dim, out_dim)=({blk.n_sites}, {blk.site_dim}, {blk.out_dim}), "
            f"plan requires ({n_sites}, {site_dim}, {out_dim})"
        )


def init_model(config: LoTeNetConfig, seed: int = 0, dtype=WIDE, noise: float = 1e-2) -> LoTeNetModel:
    """Build a model with near-identity blocks; every block gets its own
    child seed so the result depends only on ``seed``."""
    plan = shape_plan(config)
    root = np.random.SeedSequence(seed)
    children = iter(root.spawn(1 + sum(lp.patch_grid[0] * lp.patch_grid[1] for lp in plan.layers)))
    grids = []
    for lp in plan.layers:
        rows, cols = lp.patch_grid
        if config.shared:
            blk = init_block(lp.n_sites, lp.site_dim, config.bond_dim, config.out_dim, next(children), noise, dtype)
            grid = [[blk] * cols for _ in range(rows)]
            for _ in range(rows * cols - 1):
                next(children)
        else:
            grid = [
                [init_block(lp.n_sites, lp.site_dim, config.bond_dim, config.out_dim, next(children), noise, dtype)
                 for _ in range(cols)]
                for _ in range(rows)
            ]
        grids.append(grid)
    f = plan.final
    final = init_block(f.n_sites, f.site_dim, config.bond_dim, config.classes, next(children), noise, dtype)
    return LoTeNetModel(config, grids, final)


def layer_forward(grid, blocks: list[list[MpsBlock]], k: int) -> Tensor:
    """One layer: ``(B, H, W, C) -> (B, H/k^2, W/k^2, out_dim)`` in (0, 1)."""
    t = as_tensor(grid)
    if t.ndim != 4:
        raise ShapeError(f"layer input must be (B, H, W, C), got {t.shape}")
    b, h, w, _ = t.shape
    step = k * k
    if h % step or w % step:
        raise ShapeError(f"grid {h}x{w} is not divisible by k^2={step}")
    rows, cols = h // step, w // step
    if len(blocks) != rows or any(len(r) != cols for r in blocks):
        raise UsageError(f"block grid does not match the {rows}x{cols} patch grid")

    sites = embed(squeeze(t, k))
    d = sites.shape[-1]
    # group the squeezed grid into k x k site neighbourhoods, row-major
    sites = reshape(sites, (b, rows, k, cols, k, d))
    sites = permute(sites, (0, 1, 3, 2, 4, 5))
    sites = reshape(sites, (b, rows, cols, k * k, d))

    outputs = []
    for r in range(rows):
        for c in range(cols):
            outputs.append(contract_block(blocks[r][c], take(sites, (slice(None), r, c))))
    out = stack(outputs, axis=1)
    out = reshape(out, (b, rows, cols, out.shape[-1]))
    return sigmoid(out)


def final_sites(grid, k: int) -> Tensor:
    """Sites fed to the decision block: ``(B, n_sites, site_dim)``."""
    t = as_tensor(grid)
    b, h, w, _ = t.shape
    if h % k == 0 and w % k == 0:
        t = squeeze(t, k)
    return embed(reshape(t, (b, -1, t.shape[-1])))


def forward_batch(model: LoTeNetModel, images) -> Tensor:
    """Logits ``(B, M)`` for a batch of images ``(B, H, W, C)``."""
    t = as_tensor(images, dtype=model.dtype)
    if t.ndim != 4 or t.shape[1:] != model.config.input_shape:
        raise ShapeError(f"expected images of shape (B, {model.config.input_shape}), got {t.shape}")
    k = model.config.kernel
    for lp, grid in zip(model.plan.layers, model.layer_blocks):
        t = layer_forward(t, grid, k)
        if tensor_module.DEBUG:
            assert t.shape[1:] == lp.out_shape, f"layer {lp.index}: built {t.shape[1:]}, plan says {lp.out_shape}"
    sites = final_sites(t, k)
    if tensor_module.DEBUG:
        f = model.plan.final
        assert sites.shape[1:] == (f.n_sites, f.site_dim), f"final sites {sites.shape[1:]} disagree with plan"
    return contract_block(model.final_block, sites)


def forward(model: LoTeNetModel, image) -> Tensor:
    """Logits of length ``M`` for one ``(H, W, C)`` image."""
    t = as_tensor(image, dtype=model.dtype)
    if t.shape != model.config.input_shape:
        raise ShapeError(f"expected an image of shape {model.config.input_shape}, got {t.shape}")
    return reshape(forward_batch(model, reshape(t, (1,) + t.shape)), (model.config.classes,))


def predict_from_logits(logits) -> int:
    # np.argmax returns the first maximum, i.e. ties go to the smaller index
    return int(np.argmax(np.asarray(logits.data if isinstance(logits, Tensor) else logits)))


def predict(model: LoTeNetModel, image) -> int:
    return predict_from_logits(forward(model, image))
