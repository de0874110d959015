"""Translators, patch discriminators and projection heads.

Both translators share one encoder/decoder layout: a 3x3 stem, four stride-2
convolutions (the feature tap points used by the contrastive losses), a
residual trunk, and an upsampling decoder with encoder skip connections.
The label-to-image translator uses weight-demodulated decoder convolutions
with per-layer noise injection and a linear output; the image-to-label
translator uses plain convolutions and a sigmoid output.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .errors import ModelError, NumericError

DEMOD_EPS = 1e-8


def demodulate(weight: Tensor | np.ndarray, scales: Tensor | np.ndarray | None = None,
               eps: float = DEMOD_EPS) -> Tensor:
    """Scale then normalise convolution weights per output channel.

    ``weight`` has layout ``[out, in, *kernel]``; ``scales`` multiplies the
    input channels (defaults to ones). Each output filter is divided by
    ``sqrt(sum of its squared scaled taps + eps)``.
    """
    weight = torch.as_tensor(weight)
    if not torch.isfinite(weight).all():
        raise NumericError("non-finite convolution weights")
    if eps <= 0:
        raise ValueError("eps must be positive")
    if scales is not None:
        scales = torch.as_tensor(scales, dtype=weight.dtype)
        weight = weight * scales.reshape(1, -1, *([1] * (weight.ndim - 2)))
    dims = tuple(range(1, weight.ndim))
    return weight * torch.rsqrt(weight.pow(2).sum(dim=dims, keepdim=True) + eps)


def inject_noise(feature: Tensor, weight: Tensor | float, generator: torch.Generator | None = None,
                 noise: Tensor | None = None) -> Tensor:
    """Add a single-channel Gaussian noise image, scaled by ``weight``, to every channel."""
    if noise is None:
        n, _, h, w = feature.shape
        noise = torch.randn((n, 1, h, w), generator=generator, dtype=feature.dtype, device=feature.device)
    return feature + weight * noise


def _init_(module: nn.Module, gain: float = math.sqrt(2.0)) -> None:
    fan_in = module.weight[0].numel()
    nn.init.normal_(module.weight, 0.0, gain / math.sqrt(fan_in))
    if getattr(module, "bias", None) is not None:
        nn.init.zeros_(module.bias)


def conv(cin: int, cout: int, k: int = 3, stride: int = 1, bias: bool = True) -> nn.Conv2d:
    layer = nn.Conv2d(cin, cout, k, stride, padding=k // 2, bias=bias)
    _init_(layer)
    return layer


class DemodConv2d(nn.Module):
    def __init__(self, cin: int, cout: int, k: int = 3):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(cout, cin, k, k))
        self.bias = nn.Parameter(torch.zeros(cout))
        self.padding = k // 2

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, demodulate(self.weight), self.bias, padding=self.padding)


class NoiseInjection(nn.Module):
    def __init__(self):
        super().__init__()
        self.weight = nn.Parameter(torch.zeros(()))

    def forward(self, x: Tensor, generator: torch.Generator | None = None) -> Tensor:
        return inject_noise(x, self.weight, generator)


class ResBlock(nn.Module):
    def __init__(self, width: int):
        super().__init__()
        self.conv1 = conv(width, width)
        self.conv2 = conv(width, width)
        _init_(self.conv2, gain=0.5)

    def forward(self, x: Tensor) -> Tensor:
        return x + self.conv2(F.relu(self.conv1(x)))


@dataclass
class GeneratorConfig:
    in_channels: int
    out_channels: int
    base_width: int = 64
    max_width: int | None = None
    num_scales: int = 4
    num_resblocks: int = 6
    noise_injection: bool = False
    demodulated: bool = False
    output_activation: str = "linear"
    image_stem_channels: int | None = None

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1 or self.base_width < 1:
            raise ModelError("channel counts and widths must be positive")
        if self.output_activation not in ("linear", "sigmoid"):
            raise ModelError(f"unknown output activation {self.output_activation!r}")

    @property
    def widths(self) -> list[int]:
        cap = self.max_width or 4 * self.base_width
        return [min(self.base_width * 2**i, cap) for i in range(self.num_scales + 1)]

    def to_dict(self) -> dict:
        return asdict(self)


def label_to_image_config(num_classes: int, image_channels: int = 3, base_width: int = 64,
                          **kw) -> GeneratorConfig:
    opts = dict(noise_injection=True, demodulated=True, output_activation="linear",
                image_stem_channels=image_channels)
    return GeneratorConfig(num_classes, image_channels, base_width, **{**opts, **kw})


def image_to_label_config(num_classes: int, image_channels: int = 3, base_width: int = 64,
                          **kw) -> GeneratorConfig:
    return GeneratorConfig(image_channels, num_classes, base_width, output_activation="sigmoid", **kw)


class Generator(nn.Module):
    """Encoder/decoder translator.

    ``stem="image"`` routes a 3-channel (or grayscale) image through the
    auxiliary 1x1 stem into the same trunk; it only exists when
    ``image_stem_channels`` is set and is used for feature extraction.
    """

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        w = cfg.widths
        self.stem = conv(cfg.in_channels, w[0])
        self.image_stem = conv(cfg.image_stem_channels, w[0], k=1) if cfg.image_stem_channels else None
        self.down = nn.ModuleList(conv(w[i], w[i + 1], stride=2) for i in range(cfg.num_scales))
        self.trunk = nn.Sequential(*(ResBlock(w[-1]) for _ in range(cfg.num_resblocks)))
        up = []
        for i in reversed(range(cfg.num_scales)):
            cin = w[i + 1] + w[i]
            up.append(DemodConv2d(cin, w[i]) if cfg.demodulated else conv(cin, w[i]))
        self.up = nn.ModuleList(up)
        self.noise = nn.ModuleList(NoiseInjection() for _ in up) if cfg.noise_injection else None
        self.head = conv(w[0], cfg.out_channels, k=1)
        _init_(self.head, gain=1.0)

    @property
    def num_taps(self) -> int:
        return self.cfg.num_scales

    @property
    def tap_channels(self) -> list[int]:
        return self.cfg.widths[1:]

    def _check(self, x: Tensor, stem: str) -> Tensor:
        if x.ndim != 4:
            raise ModelError(f"expected [N,C,H,W] input, got shape {tuple(x.shape)}")
        if stem == "main":
            want = self.cfg.in_channels
        elif stem == "image":
            if self.image_stem is None:
                raise ModelError("this generator has no image stem")
            want = self.cfg.image_stem_channels
        else:
            raise ModelError(f"unknown stem {stem!r}")
        if x.shape[1] != want:
            raise ModelError(f"expected {want} input channels, got {x.shape[1]}")
        f = 2**self.cfg.num_scales
        if x.shape[2] % f or x.shape[3] % f:
            raise ModelError(f"spatial size {tuple(x.shape[2:])} not divisible by {f}")
        # permuted (channels-last) inputs crash some CPU conv backward kernels
        return x.contiguous()

    def _stem(self, x: Tensor, stem: str) -> Tensor:
        x = self._check(x, stem)
        return self.stem(x) if stem == "main" else self.image_stem(x)

    def taps(self, x: Tensor, layer_ids: Sequence[int] | None = None, stem: str = "main") -> list[Tensor]:
        """Pre-activation outputs of the stride-2 convolutions (tap ``j`` is 0-based)."""
        layer_ids = list(range(self.num_taps)) if layer_ids is None else list(layer_ids)
        if any(not 0 <= j < self.num_taps for j in layer_ids):
            raise ModelError(f"tap ids must lie in [0, {self.num_taps}), got {layer_ids}")
        h = F.relu(self._stem(x, stem))
        out = {}
        for j, layer in enumerate(self.down[: max(layer_ids) + 1]):
            t = layer(h)
            out[j] = t
            h = F.relu(t)
        return [out[j] for j in layer_ids]

    def encode(self, x: Tensor, stem: str = "main") -> tuple[Tensor, list[Tensor]]:
        h = F.relu(self._stem(x, stem))
        skips = [h]
        for layer in self.down:
            h = F.relu(layer(h))
            skips.append(h)
        return self.trunk(skips.pop()), skips

    def decode(self, h: Tensor, skips: list[Tensor], generator: torch.Generator | None = None) -> Tensor:
        for i, layer in enumerate(self.up):
            h = F.interpolate(h, scale_factor=2.0, mode="nearest")
            h = layer(torch.cat([h, skips[-1 - i]], dim=1))
            if self.noise is not None:
                h = self.noise[i](h, generator)
            h = F.relu(h)
        out = self.head(h)
        return torch.sigmoid(out) if self.cfg.output_activation == "sigmoid" else out

    def forward(self, x: Tensor, generator: torch.Generator | None = None) -> Tensor:
        h, skips = self.encode(x)
        return self.decode(h, skips, generator)


def generator_forward(gen: Generator, x: Tensor | np.ndarray,
                      generator: torch.Generator | None = None) -> Tensor:
    """Run a translator on a single ``[C,H,W]`` or batched ``[N,C,H,W]`` input."""
    x = torch.as_tensor(x, dtype=next(gen.parameters()).dtype)
    single = x.ndim == 3
    out = gen(x[None] if single else x, generator)
    return out[0] if single else out


# --------------------------------------------------------------------------
# Feature sampling


@dataclass
class FeatureStack:
    """Per-layer features gathered at sampled locations.

    ``samples[j]`` is ``[N, S_j, D_j]``; ``locations[j]`` holds the flat
    spatial indices (shared across the batch) they were gathered from.
    """

    samples: list[Tensor]
    locations: list[Tensor]

    def __len__(self) -> int:
        return len(self.samples)


def sample_locations(hw: int, num: int, generator: torch.Generator | None = None) -> Tensor:
    """Distinct flat indices, ``min(num, hw)`` of them."""
    return torch.randperm(hw, generator=generator)[: min(num, hw)]


def gather_features(fmap: Tensor, locations: Tensor) -> Tensor:
    n, d, h, w = fmap.shape
    if locations.numel() and (locations.min() < 0 or locations.max() >= h * w):
        raise ModelError(f"location index out of range for a {h}x{w} feature map")
    return fmap.flatten(2)[:, :, locations].transpose(1, 2)


def encoder_features(gen: Generator, x: Tensor, layer_ids: Sequence[int] | None = None,
                     locations: Sequence[Tensor] | None = None, num_locations: int = 256,
                     generator: torch.Generator | None = None, stem: str = "main") -> FeatureStack:
    """Sample encoder tap features; pass ``locations`` to reuse another stack's indices."""
    maps = gen.taps(x, layer_ids, stem)
    if locations is None:
        locations = [sample_locations(m.shape[2] * m.shape[3], num_locations, generator) for m in maps]
    elif len(locations) != len(maps):
        raise ModelError(f"{len(locations)} location sets for {len(maps)} layers")
    return FeatureStack([gather_features(m, loc) for m, loc in zip(maps, locations)], list(locations))


# --------------------------------------------------------------------------
# Projection heads


class MLPHead(nn.Module):
    def __init__(self, in_dim: int, hidden: int = 256):
        super().__init__()
        self.fc1 = nn.Linear(in_dim, hidden)
        self.fc2 = nn.Linear(hidden, hidden)
        _init_(self.fc1)
        _init_(self.fc2, gain=1.0)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(F.relu(self.fc1(x)))


class ProjectionHeads(nn.Module):
    """One head per tap layer; ``dims=None`` gives the parameter-free identity."""

    def __init__(self, dims: Sequence[int] | None = None, hidden: int = 256):
        super().__init__()
        self.heads = nn.ModuleList(MLPHead(d, hidden) for d in dims) if dims else None

    def forward(self, j: int, x: Tensor) -> Tensor:
        return x if self.heads is None else self.heads[j](x)


# --------------------------------------------------------------------------
# Discriminator


class _DownBlock(nn.Module):
    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.conv1 = conv(cin, cin)
        self.conv2 = conv(cin, cout, stride=2)
        self.skip = conv(cin, cout, k=1, stride=2, bias=False)
        _init_(self.skip, gain=1.0)

    def forward(self, x: Tensor) -> Tensor:
        h = F.leaky_relu(self.conv1(x), 0.2)
        h = F.leaky_relu(self.conv2(h), 0.2)
        return (h + self.skip(x)) / math.sqrt(2.0)


class Discriminator(nn.Module):
    """Residual feedforward patch discriminator.

    Every output cell sees a 61x61 input window; the per-sample logit is the
    mean over cells.
    """

    min_size = 64

    def __init__(self, in_channels: int, base_width: int = 64, num_blocks: int = 4,
                 max_width: int | None = None):
        super().__init__()
        cap = max_width or 4 * base_width
        w = [min(base_width * 2**i, cap) for i in range(num_blocks + 1)]
        self.in_channels = in_channels
        self.from_input = conv(in_channels, w[0], k=1)
        self.blocks = nn.ModuleList(_DownBlock(w[i], w[i + 1]) for i in range(num_blocks))
        self.out = conv(w[-1], 1, k=1)
        _init_(self.out, gain=1.0)

    def receptive_field(self) -> tuple[int, int, int]:
        """``(size, stride, offset)``: cell ``i`` sees input rows ``[offset + i*stride, ... + size)``."""
        size, jump, start = 1, 1, 0
        layers = [self.from_input]
        for b in self.blocks:
            layers += [b.conv1, b.conv2]
        layers.append(self.out)
        for layer in layers:
            k, s, p = layer.kernel_size[0], layer.stride[0], layer.padding[0]
            size += (k - 1) * jump
            start -= p * jump
            jump *= s
        return size, jump, start

    def cell_logits(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ModelError(f"expected [N,{self.in_channels},H,W], got {tuple(x.shape)}")
        if min(x.shape[2:]) < self.min_size:
            raise ModelError(f"input {tuple(x.shape[2:])} smaller than {self.min_size}x{self.min_size}")
        h = F.leaky_relu(self.from_input(x.contiguous()), 0.2)
        for b in self.blocks:
            h = b(h)
        return self.out(h)

    def forward(self, x: Tensor) -> Tensor:
        return self.cell_logits(x).mean(dim=(1, 2, 3))


def discriminator_forward(d: Discriminator, x: Tensor | np.ndarray) -> Tensor:
    x = torch.as_tensor(x, dtype=next(d.parameters()).dtype)
    single = x.ndim == 3
    out = d(x[None] if single else x)
    return out[0] if single else out
