"""Training objectives.

Contrastive terms compare encoder features of a source and a translated
image at shared spatial locations: the feature at the same location is the
positive, features at the other sampled locations of the same image are
negatives. Keys (source side) are always detached; gradients reach the
translator through the query side only.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterator

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .errors import ConfigError, DataError, NumericError
from .nets import Generator, ProjectionHeads, encoder_features

Augment = Callable[[Tensor], Tensor]


@dataclass
class NCEConfig:
    tau: float = 0.07
    num_locations: int = 256
    num_layers: int = 4
    reduction: str = "sum"

    def __post_init__(self):
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        if self.num_locations < 1:
            raise ConfigError("num_locations must be >= 1")
        if self.reduction not in ("sum", "mean"):
            raise ConfigError(f"reduction must be 'sum' or 'mean', got {self.reduction!r}")

    @property
    def layer_ids(self) -> list[int]:
        return list(range(self.num_layers))


@dataclass
class LossWeights:
    lambda_G: float = 5.0
    lambda_F: float = 1.0
    gamma_I: float = 0.01
    gamma_L: float = 1.0

    def __post_init__(self):
        for name in ("lambda_G", "lambda_F", "gamma_I", "gamma_L"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")


@contextmanager
def frozen(*modules: nn.Module | None) -> Iterator[None]:
    """Temporarily stop parameter gradients; inputs still propagate gradients."""
    params = [p for m in modules if m is not None for p in m.parameters()]
    flags = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad_(False)
    try:
        yield
    finally:
        for p, f in zip(params, flags):
            p.requires_grad_(f)


def _check_finite(name: str, value: Tensor) -> Tensor:
    if not torch.isfinite(value).all():
        raise NumericError(f"non-finite {name}")
    return value


# --------------------------------------------------------------------------
# Contrastive


def cosine_similarity(a: Tensor, b: Tensor) -> Tensor:
    """Cosine similarity along the last axis; zero vectors are an error."""
    na, nb = a.norm(dim=-1), b.norm(dim=-1)
    if (na == 0).any() or (nb == 0).any():
        raise NumericError("cosine similarity of a zero vector")
    return (a * b).sum(-1) / (na * nb)


def ce_contrast(query: Tensor, positive: Tensor, negatives: Tensor, tau: float = 0.07) -> Tensor:
    """Cross-entropy of picking ``positive`` among ``[positive, *negatives]`` for ``query``.

    Similarities are cosine similarities divided by ``tau``.
    """
    if tau <= 0:
        raise ConfigError("tau must be positive")
    negatives = negatives.reshape(-1, query.shape[-1])
    logits = torch.cat([cosine_similarity(query, positive)[None], cosine_similarity(query[None], negatives)])
    return -torch.log_softmax(logits / tau, dim=0)[0]


def patch_nce_layer(z: Tensor, zhat: Tensor, head: Callable[[Tensor], Tensor] | None = None,
                    tau: float = 0.07, reduction: str = "sum", detach_keys: bool = False,
                    eps: float = 1e-12) -> Tensor:
    """Patch NCE for one layer.

    ``z`` (keys) and ``zhat`` (queries) are ``[N, S, D]`` (or ``[S, D]``)
    features gathered at the same ``S`` locations. Returns the sum (or mean)
    over locations of :func:`ce_contrast`, averaged over the batch.
    """
    if z.shape != zhat.shape:
        raise DataError(f"feature shapes differ: {tuple(z.shape)} vs {tuple(zhat.shape)}")
    if z.ndim == 2:
        z, zhat = z[None], zhat[None]
    s = z.shape[1]
    if s < 2:
        raise ConfigError("patch NCE needs at least 2 locations (no negatives otherwise)")
    if head is not None:
        z, zhat = head(z), head(zhat)
    if detach_keys:
        z = z.detach()
    k = F.normalize(z, dim=-1, eps=eps)
    q = F.normalize(zhat, dim=-1, eps=eps)
    logits = torch.bmm(q, k.transpose(1, 2)) / tau
    target = torch.arange(s, device=logits.device).expand(logits.shape[0], s)
    per_loc = F.cross_entropy(logits.flatten(0, 1), target.flatten(), reduction="none").view(-1, s)
    per_image = per_loc.sum(1) if reduction == "sum" else per_loc.mean(1)
    return per_image.mean()


def contrastive_content_loss(source: Tensor, translated: Tensor, encoder: Generator,
                             heads: ProjectionHeads, cfg: NCEConfig,
                             generator: torch.Generator | None = None,
                             source_stem: str = "main", target_stem: str = "main") -> tuple[Tensor, list[Tensor]]:
    """Sum over encoder taps of patch NCE between source and translated features.

    Returns the total and the per-layer terms. Keys are computed without
    gradient; callers freeze ``encoder`` when it must not be updated.
    """
    if source.shape[0] != translated.shape[0] or source.shape[2:] != translated.shape[2:]:
        raise DataError(
            f"unpaired inputs: source {tuple(source.shape)} vs translated {tuple(translated.shape)}"
        )
    with torch.no_grad():
        keys = encoder_features(encoder, source, cfg.layer_ids, num_locations=cfg.num_locations,
                                generator=generator, stem=source_stem)
    queries = encoder_features(encoder, translated, cfg.layer_ids, locations=keys.locations,
                               stem=target_stem)
    terms = [
        patch_nce_layer(k, q, lambda x, j=j: heads(j, x), cfg.tau, cfg.reduction, detach_keys=True)
        for j, (k, q) in enumerate(zip(keys.samples, queries.samples))
    ]
    return torch.stack(terms).sum(), terms


def cycle_nce_loss(real: Tensor, reconstructed: Tensor, encoder: Generator, cfg: NCEConfig,
                   heads: ProjectionHeads | None = None,
                   generator: torch.Generator | None = None) -> tuple[Tensor, list[Tensor]]:
    """Patch NCE between a real image and its reconstruction through both translators."""
    return contrastive_content_loss(real, reconstructed, encoder, heads or ProjectionHeads(), cfg, generator)


# --------------------------------------------------------------------------
# Adversarial


def r1_penalty(d: nn.Module, real: Tensor, gamma: float,
               augment: Augment | None = None) -> tuple[Tensor, Tensor]:
    """``gamma/2 * E ||grad_x D(x)||^2`` at real samples; also returns the logits."""
    real = real.detach().requires_grad_(True)
    logits = d(augment(real) if augment else real)
    _check_finite("discriminator logits", logits)
    if gamma == 0:
        return logits.new_zeros(()), logits
    (grad,) = torch.autograd.grad(logits.sum(), real, create_graph=True)
    return 0.5 * gamma * grad.pow(2).flatten(1).sum(1).mean(), logits


def discriminator_loss(d: nn.Module, real: Tensor, fake: Tensor, gamma: float,
                       augment: Augment | None = None) -> tuple[Tensor, Tensor, Tensor]:
    """Non-saturating discriminator loss with R1; returns ``(loss, r1, real_logits)``."""
    r1, real_logits = r1_penalty(d, real, gamma, augment)
    fake = fake.detach()
    fake_logits = _check_finite("discriminator logits", d(augment(fake) if augment else fake))
    loss = F.softplus(fake_logits).mean() + F.softplus(-real_logits).mean() + r1
    return loss, r1, real_logits.detach()


def generator_adv_loss(d: nn.Module, fake: Tensor, augment: Augment | None = None) -> Tensor:
    logits = _check_finite("discriminator logits", d(augment(fake) if augment else fake))
    return F.softplus(-logits).mean()


def gan_losses(d: nn.Module, real: Tensor, fake: Tensor, gamma: float,
               augment: Augment | None = None) -> tuple[Tensor, Tensor, Tensor]:
    """``(d_loss, g_loss, r1)`` for one discriminator; ``r1`` already carries ``gamma/2``."""
    d_loss, r1, _ = discriminator_loss(d, real, fake, gamma, augment)
    return d_loss, generator_adv_loss(d, fake, augment), r1


# --------------------------------------------------------------------------
# Totals


def straight_through_onehot(scores: Tensor) -> Tensor:
    """Hard one-hot of the channel argmax in the forward pass, identity gradient backward."""
    hard = F.one_hot(scores.argmax(1), scores.shape[1]).permute(0, 3, 1, 2).to(scores.dtype)
    return hard + scores - scores.detach()


def total_G(nets, labels: Tensor, weights: LossWeights, nce: NCEConfig, variant: str,
            sim: Tensor | Callable[[], Tensor] | None = None, generator: torch.Generator | None = None,
            augment: Augment | None = None) -> tuple[Tensor, dict[str, Tensor]]:
    """Label-to-image objective: adversarial term plus ``lambda_G`` times the content term.

    ``sim`` may be a zero-argument callable so that variants which never
    contrast against simulated images never materialise them.
    """
    fake = nets.G(labels, generator)
    gan = generator_adv_loss(nets.D_I, fake, augment)
    terms = {"gan_G": gan}
    cl = fake.new_zeros(())
    if weights.lambda_G > 0:
        if variant == "simit-cs":
            cl, layers = contrastive_content_loss(labels, fake, nets.G, nets.H_G, nce, generator,
                                                  source_stem="main", target_stem="image")
        else:
            sim = sim() if callable(sim) else sim
            if sim is None:
                raise ConfigError(f"variant {variant!r} with lambda_G > 0 needs simulated images")
            if variant == "simit":
                with frozen(nets.F):
                    cl, layers = contrastive_content_loss(sim, fake, nets.F, nets.H_G, nce, generator)
            else:
                cl, layers = contrastive_content_loss(sim, fake, nets.G, nets.H_G, nce, generator,
                                                      source_stem="image", target_stem="image")
        for j, t in enumerate(layers):
            terms[f"cl_{j}"] = t
    terms["cl"] = cl
    total = gan + weights.lambda_G * cl
    terms["total_G"] = total
    return total, terms


def total_F(nets, real: Tensor, weights: LossWeights, nce: NCEConfig,
            generator: torch.Generator | None = None, augment: Augment | None = None,
            ) -> tuple[Tensor, dict[str, Tensor]]:
    """Image-to-label objective: adversarial term plus ``lambda_F`` times cycle NCE.

    The reconstruction runs through the label-to-image translator with its
    parameters frozen.
    """
    scores = nets.F(real)
    gan = generator_adv_loss(nets.D_L, scores, augment)
    terms = {"gan_F": gan}
    cyc = gan.new_zeros(())
    if weights.lambda_F > 0:
        with frozen(nets.G):
            recon = nets.G(straight_through_onehot(scores), generator)
        cyc, layers = cycle_nce_loss(real, recon, nets.F, nce, generator=generator)
        for j, t in enumerate(layers):
            terms[f"cyc_{j}"] = t
    terms["cyc"] = cyc
    total = gan + weights.lambda_F * cyc
    terms["total_F"] = total
    return total, terms
