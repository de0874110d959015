"""Adaptive discriminator augmentation.

A reduced pipeline: horizontal flip, 90-degree rotation, integer
translation (replicate padding, at most 1/8 of the size), brightness and
contrast. Each op fires independently per sample with probability ``p``.
Colour ops are convex blends, so inputs in [0, 1] stay in [0, 1] without
clamping and gradients pass through unchanged.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor

GEOMETRIC_OPS = ("hflip", "rot90", "translate")
COLOR_OPS = ("brightness", "contrast")
ALL_OPS = GEOMETRIC_OPS + COLOR_OPS


@dataclass(frozen=True)
class AdaState:
    p: float = 0.0
    target_rt: float = 0.6
    adjustment_speed: float = 5e-4
    rt_estimate: float = 0.0
    ema: float = 0.9

    def __post_init__(self):
        object.__setattr__(self, "p", min(max(float(self.p), 0.0), 1.0))
        object.__setattr__(self, "rt_estimate", min(max(float(self.rt_estimate), -1.0), 1.0))


def update_ada(state: AdaState, d_real_logits: Tensor) -> AdaState:
    """Track ``E[sign(D(real))]`` and nudge ``p`` towards the target overfitting level."""
    rt = float(torch.sign(d_real_logits.detach()).double().mean())
    est = state.ema * state.rt_estimate + (1.0 - state.ema) * rt
    diff = est - state.target_rt
    step = 0.0 if abs(diff) < 1e-9 else state.adjustment_speed * (1.0 if diff > 0 else -1.0)
    return dataclasses.replace(state, p=state.p + step, rt_estimate=est)


def _translate(x: Tensor, dy: Tensor, dx: Tensor, pad: int) -> Tensor:
    n, _, h, w = x.shape
    padded = F.pad(x, (pad, pad, pad, pad), mode="replicate")
    out = [padded[i, :, pad - int(dy[i]) : pad - int(dy[i]) + h, pad - int(dx[i]) : pad - int(dx[i]) + w]
           for i in range(n)]
    return torch.stack(out)


def apply_ada(x: Tensor, p: float, generator: torch.Generator | None = None,
              ops: tuple[str, ...] = ALL_OPS, return_params: bool = False):
    """Augment a ``[N, C, H, W]`` batch; with ``return_params`` also return the per-op masks.

    All random draws happen regardless of ``ops`` so that the stream of
    draws depends only on the batch size.
    """
    unknown = set(ops) - set(ALL_OPS)
    if unknown:
        raise ValueError(f"unknown augmentations: {sorted(unknown)}")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    if p == 0.0 and not return_params:
        return x
    n, _, h, w = x.shape
    g = dict(generator=generator, device=x.device)
    masks = {name: torch.rand(n, **g) < p for name in ALL_OPS}
    rot_k = torch.randint(1, 4, (n,), **g) if h == w else torch.full((n,), 2, device=x.device)
    shift = max(1, min(h, w) // 8)
    dy = torch.randint(-shift, shift + 1, (n,), **g)
    dx = torch.randint(-shift, shift + 1, (n,), **g)
    bright = (torch.rand(n, **g) * 0.4 - 0.2).to(x.dtype)
    contrast = (0.6 + 0.4 * torch.rand(n, **g)).to(x.dtype)
    masks = {k: (v if k in ops else torch.zeros_like(v)) for k, v in masks.items()}

    def sel(name: str, new: Tensor, old: Tensor) -> Tensor:
        return torch.where(masks[name].view(-1, 1, 1, 1), new, old)

    out = x
    if masks["hflip"].any():
        out = sel("hflip", out.flip(-1), out)
    if masks["rot90"].any():
        rotated = torch.stack([torch.rot90(out[i], int(rot_k[i]), (-2, -1)) for i in range(n)])
        out = sel("rot90", rotated, out)
    if masks["translate"].any():
        out = sel("translate", _translate(out, dy * masks["translate"], dx * masks["translate"], shift), out)
    if masks["brightness"].any():
        b = bright.view(-1, 1, 1, 1)
        out = sel("brightness", torch.where(b > 0, out + b * (1 - out), out * (1 + b)), out)
    if masks["contrast"].any():
        m = out.mean(dim=(1, 2, 3), keepdim=True)
        out = sel("contrast", m + contrast.view(-1, 1, 1, 1) * (out - m), out)
    if return_params:
        return out, masks
    return out
