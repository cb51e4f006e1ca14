"""
LDSeg - Network Blocks
Layer objects that register their parameters in a shared ParamStore under a
dotted prefix and apply the functional layers from src.numerics.
"""

import math
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.errors import DimensionError
from src.numerics.layers import attention2d, conv2d, group_norm, layer_norm, linear, upsample_nearest
from src.numerics.params import ParamStore
from src.numerics.random import RngStream
from src.numerics.tensor import Tensor, as_tensor


LATENT_NORM_EPS = 1e-6


def norm_groups(channels: int, preferred: int) -> int:
    """Largest group count <= preferred that divides the channel count."""
    return math.gcd(channels, preferred) or 1


class Block:
    """Parameters of one layer, looked up by name in the owning store."""

    def __init__(self, store: ParamStore, name: str):
        self.store = store
        self.name = name

    def param(self, key: str) -> Tensor:
        return self.store[f"{self.name}.{key}"]


class Conv2d(Block):
    def __init__(self, store, name, rng: RngStream, cin: int, cout: int,
                 kernel: int = 3, stride: int = 1, zero: bool = False):
        super().__init__(store, name)
        store.conv(name, rng, cout, cin, kernel, zero=zero)
        self.cin, self.cout, self.kernel, self.stride = cin, cout, kernel, stride

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.param("weight"), self.param("bias"), stride=self.stride)


class Linear(Block):
    def __init__(self, store, name, rng: RngStream, fin: int, fout: int):
        super().__init__(store, name)
        store.linear(name, rng, fin, fout)

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.param("weight"), self.param("bias"))


class GroupNorm(Block):
    def __init__(self, store, name, channels: int, groups: int):
        super().__init__(store, name)
        store.norm(name, channels)
        self.groups = norm_groups(channels, groups)

    def __call__(self, x: Tensor) -> Tensor:
        return group_norm(x, self.groups, self.param("gamma"), self.param("beta"))


class ResBlock:
    """
    norm -> silu -> conv -> (+ time projection) -> norm -> silu -> conv, plus
    a 1x1 projection on the residual path when the width changes.
    """

    def __init__(self, store, name, rng: RngStream, cin: int, cout: int,
                 groups: int, temb_dim: Optional[int] = None):
        self.cin, self.cout = cin, cout
        self.norm1 = GroupNorm(store, f"{name}.norm1", cin, groups)
        self.conv1 = Conv2d(store, f"{name}.conv1", rng.child(0), cin, cout)
        self.norm2 = GroupNorm(store, f"{name}.norm2", cout, groups)
        self.conv2 = Conv2d(store, f"{name}.conv2", rng.child(1), cout, cout)
        self.time_proj = Linear(store, f"{name}.time", rng.child(2), temb_dim, cout) if temb_dim else None
        self.shortcut = Conv2d(store, f"{name}.skip", rng.child(3), cin, cout, kernel=1) if cin != cout else None

    def __call__(self, x: Tensor, temb: Optional[Tensor] = None) -> Tensor:
        h = self.conv1(self.norm1(x).silu())
        if self.time_proj is not None and temb is not None:
            shift = self.time_proj(temb.silu())
            h = h + shift.reshape(shift.shape[0], self.cout, 1, 1)
        h = self.conv2(self.norm2(h).silu())
        residual = self.shortcut(x) if self.shortcut is not None else x
        return residual + h


class SelfAttention(Block):
    """Multi-head spatial self-attention with residual (query/key/value/output projections)."""

    def __init__(self, store, name, rng: RngStream, channels: int, heads: int):
        super().__init__(store, name)
        if channels % heads:
            raise DimensionError(f"{channels} channels not divisible by {heads} heads")
        for i, proj in enumerate(("q", "k", "v", "out")):
            store.linear(f"{name}.{proj}", rng.child(i), channels, channels)
        self.heads = heads

    def __call__(self, x: Tensor) -> Tensor:
        p = self.param
        return attention2d(
            x,
            p("q.weight"), p("q.bias"),
            p("k.weight"), p("k.bias"),
            p("v.weight"), p("v.bias"),
            p("out.weight"), p("out.bias"),
            heads=self.heads,
        )


class Upsample:
    """Nearest-neighbour x2 followed by a 3x3 convolution."""

    def __init__(self, store, name, rng: RngStream, cin: int, cout: int):
        self.conv = Conv2d(store, f"{name}.conv", rng, cin, cout)

    def __call__(self, x: Tensor) -> Tensor:
        return self.conv(upsample_nearest(x, 2))


def level_channels(base: int, mults: Sequence[int]) -> List[int]:
    return [base * m for m in mults]


def check_divisible(shape: Tuple[int, ...], depth: int) -> None:
    """Spatial dims (last two) must be divisible by 2^depth."""
    factor = 2 ** depth
    h, w = shape[-2], shape[-1]
    if h % factor or w % factor:
        raise DimensionError(f"spatial size {h}x{w} not divisible by 2^{depth} = {factor}")


def as_batch(images) -> Tensor:
    """(H, W) / (N, H, W) / (N, 1, H, W) arrays -> (N, 1, H, W) tensor."""
    t = as_tensor(images)
    if t.ndim == 2:
        return t.reshape(1, 1, *t.shape)
    if t.ndim == 3:
        return t.reshape(t.shape[0], 1, t.shape[1], t.shape[2])
    if t.ndim == 4:
        return t
    raise DimensionError(f"expected an image or image batch, got shape {t.shape}")


# ============ Shared Encoder ============

class ResEncoder:
    """
    Down-sampling residual encoder shared by the mask and image encoders:
    stem conv, then per level a ResBlock and a stride-2 conv, a bottom
    ResBlock and an output conv to one channel. With final_norm=True a
    parameter-free layer normalization closes the encoder.
    """

    def __init__(self, store: ParamStore, prefix: str, rng: RngStream, in_channels: int,
                 base: int, mults: Sequence[int], groups: int, final_norm: bool):
        self.depth = len(mults)
        self.final_norm = final_norm
        chans = level_channels(base, mults)
        self.layers: List[Tuple[str, str]] = []

        self.stem = Conv2d(store, f"{prefix}.stem", rng.child(0), in_channels, chans[0])
        self.layers.append(("conv", f"{prefix}.stem"))
        self.blocks, self.downs = [], []
        cin = chans[0]
        for i, cout in enumerate(chans):
            self.blocks.append(ResBlock(store, f"{prefix}.down{i}.res", rng.child(1, i), cin, cout, groups))
            self.downs.append(Conv2d(store, f"{prefix}.down{i}.pool", rng.child(2, i), cout, cout, stride=2))
            self.layers += [("res", f"{prefix}.down{i}.res"), ("downsample", f"{prefix}.down{i}.pool")]
            cin = cout
        self.bottom = ResBlock(store, f"{prefix}.bottom", rng.child(3), cin, cin, groups)
        self.out_norm = GroupNorm(store, f"{prefix}.out_norm", cin, groups)
        self.out = Conv2d(store, f"{prefix}.out", rng.child(4), cin, 1)
        self.layers += [("res", f"{prefix}.bottom"), ("conv", f"{prefix}.out")]
        if final_norm:
            self.layers.append(("layer_norm", f"{prefix}.final"))

    def __call__(self, x: Tensor) -> Tensor:
        check_divisible(x.shape, self.depth)
        h = self.stem(x)
        for block, down in zip(self.blocks, self.downs):
            h = down(block(h))
        h = self.out(self.out_norm(self.bottom(h)).silu())
        return layer_norm(h, eps=LATENT_NORM_EPS) if self.final_norm else h


def argmax_labels(probs: np.ndarray) -> np.ndarray:
    """Per-pixel class index over axis 1; ties resolve to the lowest index."""
    return np.argmax(np.asarray(probs), axis=1).astype(np.int64)
