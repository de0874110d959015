"""Alternating training of the two translators, checkpointing and inference.

One global step runs, in order: discriminator D_I, label-to-image
translator G (+ its projection heads), then, for the full variant only,
discriminator D_L and image-to-label translator F. All randomness inside a
step (noise injection, location sampling, augmentation) comes from a
generator seeded by ``(seed, step)``, and batches are a pure function of
``(seed, epoch, index)``, so resuming from a checkpoint replays the
uninterrupted run exactly.
"""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np
import torch
from torch import Tensor, nn

from . import augment as ada
from .config import TrainConfig
from .datagen import Batch, BatchLoader, DatasetManifest, SplitArrays, read_split, _write_png
from .errors import ConfigError, NumericError, UsageError
from .losses import discriminator_loss, frozen, total_F, total_G
from .metrics import ssim
from .nets import (Discriminator, Generator, ProjectionHeads, image_to_label_config,
                   label_to_image_config)

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass
class Nets:
    G: Generator
    D_I: Discriminator
    H_G: ProjectionHeads
    F: Generator | None = None
    D_L: Discriminator | None = None

    def modules(self) -> dict[str, nn.Module]:
        named = {"G": self.G, "D_I": self.D_I, "H_G": self.H_G, "F": self.F, "D_L": self.D_L}
        return {k: v for k, v in named.items() if v is not None}


def build_nets(cfg: TrainConfig, num_classes: int, channels: int = 3) -> Nets:
    """Instantiate the networks a variant needs (F and D_L only for the full variant)."""
    torch.manual_seed(cfg.seed)
    g = Generator(label_to_image_config(num_classes, channels, cfg.base_width,
                                       num_resblocks=cfg.num_resblocks))
    d_i = Discriminator(channels, cfg.d_base_width)
    f = d_l = None
    if cfg.trains_F:
        f = Generator(image_to_label_config(num_classes, channels, cfg.base_width,
                                            num_resblocks=cfg.num_resblocks))
        d_l = Discriminator(num_classes, cfg.d_base_width)
    # the content loss reads F's encoder for the full variant, G's otherwise
    encoder = f if f is not None else g
    heads = ProjectionHeads(encoder.tap_channels[: cfg.num_layers])
    return Nets(g, d_i, heads, f, d_l)


def step_generator(seed: int, step: int) -> torch.Generator:
    state = np.random.SeedSequence([seed, step]).generate_state(2, dtype=np.uint32)
    return torch.Generator().manual_seed(int(state[0]) << 32 | int(state[1]))


@dataclass
class WiringStats:
    """Counts of data reads and computations, used to verify variant wiring."""

    sim_reads: int = 0
    reconstructions: int = 0
    steps_G: int = 0
    steps_F: int = 0


class _StepBatch:
    """Torch view of a :class:`Batch`; simulated images are materialised on demand and counted."""

    def __init__(self, batch: Batch, stats: WiringStats):
        self._batch = batch
        self._stats = stats
        self.labels = torch.from_numpy(batch.labels)
        self.real = torch.from_numpy(batch.real)

    def sim(self) -> Tensor:
        self._stats.sim_reads += 1
        return torch.from_numpy(self._batch.sim)


class Trainer:
    def __init__(self, cfg: TrainConfig, num_classes: int, channels: int = 3):
        self.cfg = cfg
        self.num_classes = num_classes
        self.channels = channels
        self.nets = build_nets(cfg, num_classes, channels)
        betas = cfg.adam_betas
        self.opt_G = torch.optim.Adam(
            list(self.nets.G.parameters()) + list(self.nets.H_G.parameters()), lr=cfg.lr_G, betas=betas)
        self.opt_D_I = torch.optim.Adam(self.nets.D_I.parameters(), lr=cfg.lr_G, betas=betas)
        self.opt_F = self.opt_D_L = None
        if cfg.trains_F:
            self.opt_F = torch.optim.Adam(self.nets.F.parameters(), lr=cfg.lr_F, betas=betas)
            self.opt_D_L = torch.optim.Adam(self.nets.D_L.parameters(), lr=cfg.lr_F, betas=betas)
        self.ada_I = ada.AdaState(target_rt=cfg.ada_target, adjustment_speed=cfg.ada_speed)
        self.ada_L = ada.AdaState(target_rt=cfg.ada_target, adjustment_speed=cfg.ada_speed)
        self.step = 0
        self.best_score = -np.inf
        self.history: list[dict[str, float]] = []
        self.stats = WiringStats()

    # -- steps ------------------------------------------------------------

    def _augmenter(self, p: float, gen: torch.Generator, ops) -> Callable[[Tensor], Tensor] | None:
        if not self.cfg.ada or p == 0.0:
            return None
        return lambda x: ada.apply_ada(x, p, gen, ops)

    def _optimizers(self) -> list[torch.optim.Optimizer]:
        return [o for o in (self.opt_D_I, self.opt_G, self.opt_D_L, self.opt_F) if o is not None]

    def _snapshot(self) -> dict[str, Any]:
        return {
            "nets": {k: copy.deepcopy(m.state_dict()) for k, m in self.nets.modules().items()},
            "optim": [copy.deepcopy(o.state_dict()) for o in self._optimizers()],
        }

    def _restore(self, snap: dict[str, Any]) -> None:
        for k, m in self.nets.modules().items():
            m.load_state_dict(snap["nets"][k])
        for o, s in zip(self._optimizers(), snap["optim"]):
            o.load_state_dict(s)

    @staticmethod
    def _apply(opt: torch.optim.Optimizer, loss: Tensor, name: str) -> None:
        if not torch.isfinite(loss):
            raise NumericError(f"non-finite {name}")
        opt.zero_grad(set_to_none=True)
        loss.backward()
        for group in opt.param_groups:
            for p in group["params"]:
                if p.grad is not None and not torch.isfinite(p.grad).all():
                    raise NumericError(f"non-finite gradient in {name}")
        opt.step()

    def train_step_G(self, batch: _StepBatch, gen: torch.Generator) -> dict[str, float]:
        """Update D_I on real vs translated images, then G and its heads."""
        n = self.nets
        aug = self._augmenter(self.ada_I.p, gen, ada.ALL_OPS)
        with torch.no_grad():
            fake = n.G(batch.labels, gen)
        d_loss, r1, real_logits = discriminator_loss(n.D_I, batch.real, fake, self.cfg.gamma_I, aug)
        self._apply(self.opt_D_I, d_loss, "D_I loss")
        with frozen(n.D_I):
            g_total, terms = total_G(n, batch.labels, self.cfg.weights, self.cfg.nce, self.cfg.variant,
                                     sim=batch.sim, generator=gen, augment=aug)
        self._apply(self.opt_G, g_total, "G loss")
        self.ada_I = ada.update_ada(self.ada_I, real_logits)
        self.stats.steps_G += 1
        out = {"d_I": float(d_loss.detach()), "r1_I": float(r1.detach()), "ada_p_I": self.ada_I.p}
        out.update({k: float(v.detach()) for k, v in terms.items()})
        return out

    def train_step_F(self, batch: _StepBatch, gen: torch.Generator) -> dict[str, float]:
        """Update D_L on simulated label maps vs predicted ones, then F. No-op for ablations."""
        if not self.cfg.trains_F:
            return {}
        n = self.nets
        aug = self._augmenter(self.ada_L.p, gen, ada.GEOMETRIC_OPS)
        with torch.no_grad():
            scores = n.F(batch.real)
        d_loss, r1, real_logits = discriminator_loss(n.D_L, batch.labels, scores, self.cfg.gamma_L, aug)
        self._apply(self.opt_D_L, d_loss, "D_L loss")
        with frozen(n.D_L):
            f_total, terms = total_F(n, batch.real, self.cfg.weights, self.cfg.nce, gen, aug)
        if self.cfg.lambda_F > 0:
            self.stats.reconstructions += 1
        self._apply(self.opt_F, f_total, "F loss")
        self.ada_L = ada.update_ada(self.ada_L, real_logits)
        self.stats.steps_F += 1
        out = {"d_L": float(d_loss.detach()), "r1_L": float(r1.detach()), "ada_p_L": self.ada_L.p}
        out.update({k: float(v.detach()) for k, v in terms.items()})
        return out

    def train_step(self, batch: Batch) -> dict[str, float]:
        """One global step; a non-finite loss or gradient rolls every update of the step back."""
        gen = step_generator(self.cfg.seed, self.step)
        sb = _StepBatch(batch, self.stats)
        snap = self._snapshot()
        ada_before = (self.ada_I, self.ada_L)
        try:
            record = self.train_step_G(sb, gen)
            record.update(self.train_step_F(sb, gen))
        except NumericError as exc:
            log.warning("step %d aborted and rolled back: %s", self.step, exc)
            self._restore(snap)
            self.ada_I, self.ada_L = ada_before
            record = {"aborted": 1.0}
        record["step"] = float(self.step)
        self.step += 1
        self.history.append(record)
        return record

    # -- inference --------------------------------------------------------

    @torch.no_grad()
    def translate_labels(self, labels: np.ndarray, seed: int = 0, batch_size: int = 16) -> np.ndarray:
        """Label maps ``[N, H, W]`` to images ``[N, ch, H, W]`` (unclipped linear output)."""
        eye = np.eye(self.num_classes, dtype=np.float32)
        gen = torch.Generator().manual_seed(seed)
        self.nets.G.eval()
        out = []
        for i in range(0, len(labels), batch_size):
            x = torch.from_numpy(eye[labels[i : i + batch_size]].transpose(0, 3, 1, 2))
            out.append(self.nets.G(x, gen).numpy())
        self.nets.G.train()
        return np.concatenate(out)

    @torch.no_grad()
    def translate_images(self, images: np.ndarray, batch_size: int = 16) -> np.ndarray:
        """Images ``[N, ch, H, W]`` to label maps ``[N, H, W]`` via the class-score argmax."""
        if self.nets.F is None:
            raise UsageError(f"image-to-label translation needs variant 'simit', not {self.cfg.variant!r}")
        self.nets.F.eval()
        out = [self.nets.F(torch.from_numpy(np.ascontiguousarray(images[i : i + batch_size], np.float32)))
               .argmax(1).numpy() for i in range(0, len(images), batch_size)]
        self.nets.F.train()
        return np.concatenate(out)

    # -- checkpoints ------------------------------------------------------

    def state_dict(self) -> dict[str, Any]:
        return {
            "format_version": CHECKPOINT_VERSION,
            "config": self.cfg.to_dict(),
            "num_classes": self.num_classes,
            "channels": self.channels,
            "nets": {k: m.state_dict() for k, m in self.nets.modules().items()},
            "optim": {k: o.state_dict() for k, o in
                      (("G", self.opt_G), ("D_I", self.opt_D_I), ("F", self.opt_F), ("D_L", self.opt_D_L))
                      if o is not None},
            "ada": {"I": vars(self.ada_I).copy(), "L": vars(self.ada_L).copy()},
            "step": self.step,
            "best_score": self.best_score,
            "history": self.history,
            "stats": vars(self.stats).copy(),
        }

    def load_state_dict(self, state: dict[str, Any]) -> None:
        for k, m in self.nets.modules().items():
            m.load_state_dict(state["nets"][k])
        for k, o in (("G", self.opt_G), ("D_I", self.opt_D_I), ("F", self.opt_F), ("D_L", self.opt_D_L)):
            if o is not None:
                o.load_state_dict(state["optim"][k])
        self.ada_I = ada.AdaState(**state["ada"]["I"])
        self.ada_L = ada.AdaState(**state["ada"]["L"])
        self.step = state["step"]
        self.best_score = state["best_score"]
        self.history = list(state["history"])
        self.stats = WiringStats(**state["stats"])

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        torch.save(self.state_dict(), tmp)
        tmp.replace(path)
        return path

    @classmethod
    def load(cls, path: str | Path, cfg: TrainConfig | None = None) -> "Trainer":
        state = torch.load(Path(path), map_location="cpu", weights_only=False)
        if state.get("format_version") != CHECKPOINT_VERSION:
            raise ConfigError(f"{path}: unsupported checkpoint version {state.get('format_version')}")
        trainer = cls(cfg or TrainConfig.from_dict(state["config"]), state["num_classes"], state["channels"])
        trainer.load_state_dict(state)
        return trainer


# --------------------------------------------------------------------------
# Fitting


@dataclass
class FitResult:
    trainer: Trainer
    history: list[dict[str, float]]
    validation: list[dict[str, float]] = field(default_factory=list)
    final_checkpoint: Path | None = None
    best_checkpoint: Path | None = None

    @property
    def state(self) -> dict[str, Any]:
        return self.trainer.state_dict()


def validate(trainer: Trainer, data: SplitArrays, limit: int | None = None, seed: int = 0) -> dict[str, Any]:
    """Translate held-out label maps; mean SSIM against their simulated images."""
    n = len(data.labels) if limit is None else min(limit, len(data.labels))
    fake = trainer.translate_labels(data.labels[:n], seed=seed)
    scores = [ssim(np.clip(f, 0, 1), s) for f, s in zip(fake, data.sim[:n])]
    return {"ssim": float(np.mean(scores)), "images": fake}


def _dump_grid(path: Path, data: SplitArrays, fake: np.ndarray) -> None:
    n = len(fake)
    rows = [np.concatenate([data.sim[i], np.clip(fake[i], 0, 1)], axis=2) for i in range(n)]
    _write_png(path, np.concatenate(rows, axis=1))


def fit(manifest: DatasetManifest | str | Path, cfg: TrainConfig, out_dir: str | Path | None = None,
        resume: str | Path | None = None, max_steps: int | None = None,
        on_step: Callable[[dict[str, float]], None] | None = None) -> FitResult:
    """Train for ``cfg.epochs`` epochs (stopping early after ``max_steps`` global steps).

    With ``out_dir`` set, writes ``log.jsonl`` (one record per loss term per
    step), per-epoch validation grids under ``val/``, and the checkpoints
    ``last.pt`` (periodic and at exit), ``best.pt`` (highest validation
    SSIM) and ``final.pt`` (after the last epoch).
    """
    if not isinstance(manifest, DatasetManifest):
        manifest = DatasetManifest.load(manifest)
    train = read_split(manifest, "train")
    val = read_split(manifest, "val") if manifest.ids("val", "paired") and manifest.ids("val", "real") else None
    loader = BatchLoader(train, cfg.batch_size, cfg.crop, cfg.seed, cfg.num_workers)
    trainer = Trainer.load(resume, cfg) if resume else Trainer(cfg, manifest.num_classes, manifest.channels)
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    result = FitResult(trainer, trainer.history)
    steps_per_epoch = len(loader)
    total = cfg.epochs * steps_per_epoch
    stop = total if max_steps is None else min(total, max_steps)
    logf = open(out / "log.jsonl", "a") if out else None
    try:
        while trainer.step < stop:
            epoch, index = divmod(trainer.step, steps_per_epoch)
            for batch in loader.epoch(epoch, index):
                record = trainer.train_step(batch)
                if logf:
                    for k, v in record.items():
                        if k != "step":
                            logf.write(json.dumps({"step": trainer.step - 1, "term": k, "value": v}) + "\n")
                if on_step:
                    on_step(record)
                if out and cfg.ckpt_every and trainer.step % cfg.ckpt_every == 0:
                    trainer.save(out / "last.pt")
                if trainer.step >= stop:
                    break
            if trainer.step % steps_per_epoch == 0 and val is not None:
                done = trainer.step // steps_per_epoch
                if cfg.val_every and done % cfg.val_every == 0:
                    v = validate(trainer, val, cfg.val_samples, seed=cfg.seed)
                    result.validation.append({"epoch": done, "ssim": v["ssim"]})
                    log.info("epoch %d validation ssim %.4f", done, v["ssim"])
                    if out:
                        _dump_grid(out / "val" / f"epoch_{done:04d}.png", val, v["images"])
                        if logf:
                            logf.write(json.dumps({"step": trainer.step - 1, "term": "val_ssim",
                                                   "value": v["ssim"]}) + "\n")
                    if v["ssim"] > trainer.best_score:
                        trainer.best_score = v["ssim"]
                        if out:
                            result.best_checkpoint = trainer.save(out / "best.pt")
    finally:
        if logf:
            logf.close()
    if out:
        trainer.save(out / "last.pt")
        if trainer.step >= total:
            result.final_checkpoint = trainer.save(out / "final.pt")
    result.history = trainer.history
    return result


def translate(checkpoint: str | Path | Trainer, inputs: np.ndarray, direction: str,
              seed: int = 0) -> np.ndarray:
    """Batch inference from a checkpoint.

    ``label2image`` maps ``[N, H, W]`` class ids to ``[N, ch, H, W]`` images;
    ``image2label`` maps ``[N, ch, H, W]`` images to ``[N, H, W]`` class ids.
    """
    trainer = checkpoint if isinstance(checkpoint, Trainer) else Trainer.load(checkpoint)
    if direction == "label2image":
        return trainer.translate_labels(np.asarray(inputs, dtype=np.int64), seed=seed)
    if direction == "image2label":
        return trainer.translate_images(np.asarray(inputs, dtype=np.float32))
    raise UsageError(f"direction must be 'label2image' or 'image2label', got {direction!r}")
