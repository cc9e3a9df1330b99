"""The NeRV++ network: time encoding, MLP stem, NeRV++ blocks and conv head.

A frame index ``t`` in [0, 1] is lifted by sinusoidal positional encoding,
mapped by a two-layer MLP to a small feature grid, and grown to full
resolution by a stack of blocks::

    y = SCRB_post(UB(SCRB_pre(x))) + PwConv_skip(bilinear(x, s))

where SCRB is a ConvNeXt-style separable residual block and UB is a
3x3 conv, pixel shuffle and GELU. The head is a conv followed by
``(tanh + 1) / 2`` so pixels land in [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterator, Mapping, NamedTuple, Optional, Sequence

import numpy as np

from . import tensor as tn
from .errors import ShapeError
from .tensor import Tensor


@dataclass(frozen=True)
class BlockSpec:
    stride: int
    out_channels: int
    dw_kernel: int = 7
    expansion: int = 4

    def __post_init__(self) -> None:
        if self.stride < 1:
            raise ValueError(f"block stride must be >= 1, got {self.stride}")
        if self.out_channels < 1:
            raise ValueError(f"block channels must be >= 1, got {self.out_channels}")
        if self.dw_kernel < 1 or self.dw_kernel % 2 == 0:
            raise ValueError(f"depthwise kernel must be odd, got {self.dw_kernel}")
        if self.expansion < 1:
            raise ValueError(f"expansion must be >= 1, got {self.expansion}")


@dataclass(frozen=True)
class ArchConfig:
    base_grid: tuple[int, int]
    base_channels: int
    blocks: tuple[BlockSpec, ...]
    pe_base: float = 1.25
    pe_levels: int = 40
    stem_hidden: int = 128
    head_kernel: int = 3
    variant_star: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "base_grid", tuple(int(v) for v in self.base_grid))
        object.__setattr__(self, "blocks", tuple(self.blocks))
        # the bitstream stores pe_base as float32; keep encoder and decoder in step
        object.__setattr__(self, "pe_base", float(np.float32(self.pe_base)))
        if len(self.base_grid) != 2 or min(self.base_grid) < 1:
            raise ValueError(f"base grid must be two positive ints, got {self.base_grid}")
        if self.base_channels < 1 or self.stem_hidden < 1 or self.pe_levels < 1:
            raise ValueError("base_channels, stem_hidden and pe_levels must be positive")
        if not self.pe_base > 1:
            raise ValueError(f"pe_base must exceed 1, got {self.pe_base}")
        if self.head_kernel < 1 or self.head_kernel % 2 == 0:
            raise ValueError(f"head kernel must be odd, got {self.head_kernel}")

    @property
    def upscale(self) -> int:
        return math.prod(b.stride for b in self.blocks)

    @property
    def frame_size(self) -> tuple[int, int]:
        h0, w0 = self.base_grid
        return h0 * self.upscale, w0 * self.upscale

    def post_expansion(self, block: BlockSpec) -> int:
        # the starred variant widens the post-upsample SCRB
        return 2 * block.expansion if self.variant_star else block.expansion

    def check_frame(self, height: int, width: int) -> None:
        if self.frame_size != (height, width):
            raise ShapeError(
                f"architecture produces {self.frame_size[0]}x{self.frame_size[1]} frames, "
                f"video is {height}x{width}"
            )


# Desk-scale presets for 64x64 content; other sizes keep the schedule and
# derive the base grid from the frame geometry.
SIZE_PRESETS: dict[str, tuple[int, tuple[int, ...]]] = {
    "xsmall": (24, (16, 12, 8, 6)),
    "small": (48, (32, 24, 16, 8)),
    "medium": (72, (48, 32, 24, 12)),
    "large": (96, (64, 48, 32, 16)),
}
PRESET_STRIDES = (2, 2, 2, 2)


def preset_config(size: str, height: int, width: int, variant_star: bool = False, **overrides) -> ArchConfig:
    if size not in SIZE_PRESETS:
        raise ValueError(f"unknown size {size!r}; choose from {', '.join(SIZE_PRESETS)}")
    c0, channels = SIZE_PRESETS[size]
    up = math.prod(PRESET_STRIDES)
    if height % up or width % up:
        raise ShapeError(f"frame {height}x{width} is not divisible by the total stride {up}")
    blocks = tuple(BlockSpec(s, c) for s, c in zip(PRESET_STRIDES, channels))
    cfg = ArchConfig(
        base_grid=(height // up, width // up),
        base_channels=c0,
        blocks=blocks,
        variant_star=variant_star,
    )
    return replace(cfg, **overrides) if overrides else cfg


# -- topology ----------------------------------------------------------------


class Layer(NamedTuple):
    """One weighted layer, enough to derive parameter shapes and MAC counts."""

    name: str
    kind: str  # "linear" or "conv"
    in_ch: int
    out_ch: int
    kernel: int
    groups: int
    out_h: int
    out_w: int

    @property
    def weight_shape(self) -> tuple[int, ...]:
        if self.kind == "linear":
            return (self.out_ch, self.in_ch)
        return (self.out_ch, self.in_ch // self.groups, self.kernel, self.kernel)

    @property
    def macs(self) -> int:
        return self.kernel * self.kernel * (self.in_ch // self.groups) * self.out_ch * self.out_h * self.out_w


def _scrb_layers(prefix: str, ch: int, k: int, e: int, h: int, w: int) -> list[Layer]:
    return [
        Layer(f"{prefix}.dw", "conv", ch, ch, k, ch, h, w),
        Layer(f"{prefix}.pw1", "conv", ch, e * ch, 1, 1, h, w),
        Layer(f"{prefix}.pw2", "conv", e * ch, ch, 1, 1, h, w),
    ]


def layers(config: ArchConfig) -> list[Layer]:
    """Weighted layers in canonical order: stem, blocks in order, head."""
    h, w = config.base_grid
    c = config.base_channels
    out: list[Layer] = [
        Layer("stem.0", "linear", 2 * config.pe_levels, config.stem_hidden, 1, 1, 1, 1),
        Layer("stem.1", "linear", config.stem_hidden, c * h * w, 1, 1, 1, 1),
    ]
    for i, blk in enumerate(config.blocks):
        s, co = blk.stride, blk.out_channels
        p = f"blocks.{i}"
        out += _scrb_layers(f"{p}.pre", c, blk.dw_kernel, blk.expansion, h, w)
        out.append(Layer(f"{p}.ub", "conv", c, co * s * s, 3, 1, h, w))
        out += _scrb_layers(f"{p}.post", co, blk.dw_kernel, config.post_expansion(blk), h * s, w * s)
        out.append(Layer(f"{p}.skip", "conv", c, co, 1, 1, h * s, w * s))
        h, w, c = h * s, w * s, co
    out.append(Layer("head", "conv", c, 3, config.head_kernel, 1, h, w))
    return out


def param_shapes(config: ArchConfig) -> list[tuple[str, tuple[int, ...]]]:
    shapes = []
    for layer in layers(config):
        shapes.append((f"{layer.name}.weight", layer.weight_shape))
        shapes.append((f"{layer.name}.bias", (layer.out_ch,)))
    return shapes


def is_conv_weight(name: str, shape: Sequence[int]) -> bool:
    return name.endswith(".weight") and len(shape) == 4


def count_params(config: ArchConfig) -> int:
    return sum(math.prod(shape) for _, shape in param_shapes(config))


def count_macs_per_pixel(config: ArchConfig) -> float:
    h, w = config.frame_size
    return sum(layer.macs for layer in layers(config)) / (h * w)


# -- parameters ----------------------------------------------------------------


class ParameterStore:
    """Named parameter tensors in the fixed topological order of the config."""

    def __init__(self, items: Sequence[tuple[str, Tensor]]) -> None:
        self._items = list(items)
        self._index = {name: i for i, (name, _) in enumerate(self._items)}
        if len(self._index) != len(self._items):
            raise ValueError("duplicate parameter names")

    def __getitem__(self, name: str) -> Tensor:
        return self._items[self._index[name]][1]

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def __iter__(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def names(self) -> list[str]:
        return [n for n, _ in self._items]

    def tensors(self) -> list[Tensor]:
        return [t for _, t in self._items]

    def arrays(self) -> list[np.ndarray]:
        return [t.data for _, t in self._items]

    def copy(self, requires_grad: Optional[bool] = None) -> "ParameterStore":
        return ParameterStore(
            [
                (n, Tensor(t.data.copy(), requires_grad=t.requires_grad if requires_grad is None else requires_grad))
                for n, t in self._items
            ]
        )

    def zero_grad(self) -> None:
        for _, t in self._items:
            t.grad = None

    def num_scalars(self) -> int:
        return sum(t.size for _, t in self._items)

    def equals(self, other: "ParameterStore") -> bool:
        return self.names() == other.names() and all(
            np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays())
        )

    @classmethod
    def from_arrays(
        cls, config: ArchConfig, arrays: Sequence[np.ndarray], requires_grad: bool = False
    ) -> "ParameterStore":
        shapes = param_shapes(config)
        if len(arrays) != len(shapes):
            raise ShapeError(f"expected {len(shapes)} parameter tensors, got {len(arrays)}")
        items = []
        for (name, shape), arr in zip(shapes, arrays):
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != shape:
                raise ShapeError(f"{name}: expected shape {shape}, got {arr.shape}")
            items.append((name, Tensor(arr, requires_grad=requires_grad)))
        return cls(items)


def init_params(config: ArchConfig, seed: int) -> ParameterStore:
    """Kaiming-uniform (fan-in) weights in U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases."""
    rng = np.random.default_rng(seed)
    arrays = []
    for name, shape in param_shapes(config):
        if name.endswith(".bias"):
            arrays.append(np.zeros(shape))
        else:
            fan_in = math.prod(shape[1:])
            bound = 1.0 / math.sqrt(fan_in)
            arrays.append(rng.uniform(-bound, bound, size=shape))
    return ParameterStore.from_arrays(config, arrays, requires_grad=True)


def zero_params(config: ArchConfig, requires_grad: bool = False) -> ParameterStore:
    return ParameterStore.from_arrays(
        config, [np.zeros(shape) for _, shape in param_shapes(config)], requires_grad=requires_grad
    )


# -- forward -----------------------------------------------------------------


def time_coord(index: int, frames: int) -> float:
    """Normalised time of frame ``index`` in a clip of ``frames`` frames."""
    if frames < 1 or not 0 <= index < frames:
        raise ValueError(f"frame index {index} outside clip of {frames} frames")
    return 0.0 if frames == 1 else index / (frames - 1)


def positional_encode(t: float, b: float, levels: int) -> np.ndarray:
    """``[sin(b^0 pi t), cos(b^0 pi t), ..., sin(b^(l-1) pi t), cos(b^(l-1) pi t)]``."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"time coordinate must lie in [0, 1], got {t}")
    if levels < 1 or not b > 1:
        raise ValueError("positional encoding needs levels >= 1 and base > 1")
    angles = (b ** np.arange(levels)) * math.pi * t
    out = np.empty(2 * levels)
    out[0::2] = np.sin(angles)
    out[1::2] = np.cos(angles)
    return out


def stem_forward(pe: np.ndarray, params: Mapping[str, Tensor] | ParameterStore, grid: tuple[int, int, int]) -> Tensor:
    """Linear -> GELU -> linear, reshaped to ``(1, C0, h0, w0)``."""
    x = Tensor(np.asarray(pe, dtype=np.float64).reshape(1, -1))
    x = tn.gelu(tn.linear(x, params["stem.0.weight"], params["stem.0.bias"]))
    x = tn.linear(x, params["stem.1.weight"], params["stem.1.bias"])
    return tn.reshape(x, (1, *grid))


def _pw(x: Tensor, params, name: str) -> Tensor:
    return tn.conv2d(x, params[f"{name}.weight"], params[f"{name}.bias"])


def scrb_forward(x: Tensor, params, prefix: str) -> Tensor:
    """``x + pw2(gelu(pw1(dw(x))))``."""
    w = params[f"{prefix}.dw.weight"]
    c = x.shape[1]
    if w.shape[0] != c:
        raise ShapeError(f"{prefix}: block built for {w.shape[0]} channels, input has {c}")
    k = w.shape[-1]
    y = tn.conv2d(x, w, params[f"{prefix}.dw.bias"], padding=k // 2, groups=c)
    y = tn.gelu(_pw(y, params, f"{prefix}.pw1"))
    y = _pw(y, params, f"{prefix}.pw2")
    return x + y


def ub_forward(x: Tensor, params, prefix: str, stride: int) -> Tensor:
    """3x3 conv, pixel shuffle by ``stride``, GELU."""
    y = tn.conv2d(x, params[f"{prefix}.weight"], params[f"{prefix}.bias"], padding=1)
    return tn.gelu(tn.pixel_shuffle(y, stride))


def nervpp_block_forward(x: Tensor, params, prefix: str, stride: int) -> Tensor:
    main = scrb_forward(x, params, f"{prefix}.pre")
    main = ub_forward(main, params, f"{prefix}.ub", stride)
    main = scrb_forward(main, params, f"{prefix}.post")
    skip = _pw(tn.bilinear_resize(x, stride), params, f"{prefix}.skip")
    return main + skip


def head_forward(x: Tensor, params, prefix: str = "head") -> Tensor:
    w = params[f"{prefix}.weight"]
    y = tn.conv2d(x, w, params[f"{prefix}.bias"], padding=w.shape[-1] // 2)
    return (tn.tanh(y) + 1.0) * 0.5


def check_params(config: ArchConfig, params: ParameterStore) -> None:
    expected = param_shapes(config)
    got = [(n, t.shape) for n, t in params]
    if got != expected:
        raise ShapeError("parameter store does not match the architecture config")


def model_forward(t: float, config: ArchConfig, params: ParameterStore, check: bool = True) -> Tensor:
    """Decode the frame at normalised time ``t``; returns ``(1, 3, H, W)`` in [0, 1]."""
    if check:
        check_params(config, params)
    pe = positional_encode(t, config.pe_base, config.pe_levels)
    x = stem_forward(pe, params, (config.base_channels, *config.base_grid))
    for i, blk in enumerate(config.blocks):
        x = nervpp_block_forward(x, params, f"blocks.{i}", blk.stride)
    return head_forward(x, params)


def render_video(config: ArchConfig, params: ParameterStore, frames: int) -> np.ndarray:
    """Decode every frame of a clip; returns a (T, 3, H, W) array."""
    check_params(config, params)
    with tn.no_grad():
        return np.stack(
            [model_forward(time_coord(i, frames), config, params, check=False).data[0] for i in range(frames)]
        )
