"""Evaluation metrics.

Content preservation (SSIM, bone-surface IoU via log-Gabor phase
symmetry), image realism over embedded feature sets (KID, FID), and
confusion-matrix scores for predicted label maps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np
from scipy import linalg, ndimage, stats

from .errors import DataError, NumericError


def _as_array(x) -> np.ndarray:
    return np.asarray(getattr(x, "pixels", x), dtype=np.float64)


# --------------------------------------------------------------------------
# SSIM


@dataclass(frozen=True)
class SsimParams:
    win_size: int = 7
    data_range: float = 1.0
    k1: float = 0.01
    k2: float = 0.03

    def __post_init__(self):
        if self.win_size < 3 or self.win_size % 2 == 0:
            raise ValueError("win_size must be odd and >= 3")
        if self.data_range <= 0 or self.k1 <= 0 or self.k2 <= 0:
            raise ValueError("data_range, k1 and k2 must be positive")

    @property
    def c1(self) -> float:
        return (self.k1 * self.data_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.data_range) ** 2


def _ssim_2d(x: np.ndarray, y: np.ndarray, p: SsimParams) -> float:
    w = p.win_size
    n = w * w
    cov_norm = n / (n - 1)
    ux = ndimage.uniform_filter(x, w)
    uy = ndimage.uniform_filter(y, w)
    vx = cov_norm * (ndimage.uniform_filter(x * x, w) - ux * ux)
    vy = cov_norm * (ndimage.uniform_filter(y * y, w) - uy * uy)
    vxy = cov_norm * (ndimage.uniform_filter(x * y, w) - ux * uy)
    num = (2 * ux * uy + p.c1) * (2 * vxy + p.c2)
    den = (ux * ux + uy * uy + p.c1) * (vx + vy + p.c2)
    pad = (w - 1) // 2
    return float((num / den)[pad:-pad, pad:-pad].mean())


def ssim(x, y, params: SsimParams | None = None) -> float:
    """Mean structural similarity over sliding windows.

    Accepts ``[H, W]`` or channel-first ``[C, H, W]`` inputs; multi-channel
    scores are averaged over channels. Local statistics use a uniform
    window with unbiased (sample) variances, and a border of half the
    window is excluded from the mean.
    """
    p = params or SsimParams()
    x, y = _as_array(x), _as_array(y)
    if x.shape != y.shape:
        raise DataError(f"shape mismatch: {x.shape} vs {y.shape}")
    if x.ndim == 2:
        x, y = x[None], y[None]
    if x.ndim != 3 or min(x.shape[1:]) < p.win_size:
        raise DataError(f"expected [C,H,W] with H,W >= {p.win_size}, got {x.shape}")
    return float(np.mean([_ssim_2d(a, b, p) for a, b in zip(x, y)]))


# --------------------------------------------------------------------------
# Feature-distribution distances


def _feats(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise DataError(f"features must be [N, D], got {a.shape}")
    return a


def polynomial_kernel(x: np.ndarray, y: np.ndarray, degree: int = 3, coef0: float = 1.0) -> np.ndarray:
    return (x @ y.T / x.shape[1] + coef0) ** degree


def kid(real_feats, fake_feats, degree: int = 3, coef0: float = 1.0) -> float:
    """Unbiased squared MMD with the kernel ``(x.y / d + 1)^3``.

    For equal set sizes the paired U-statistic over ``i != j`` is used,
    which is exactly zero when both sets are the same sequence; otherwise
    the general two-sample unbiased estimator.
    """
    x, y = _feats(real_feats), _feats(fake_feats)
    if x.shape[1] != y.shape[1]:
        raise DataError(f"feature dims differ: {x.shape[1]} vs {y.shape[1]}")
    m, n = len(x), len(y)
    if m < 2 or n < 2:
        raise DataError("KID needs at least 2 samples per set")
    kxx = polynomial_kernel(x, x, degree, coef0)
    kyy = polynomial_kernel(y, y, degree, coef0)
    kxy = polynomial_kernel(x, y, degree, coef0)
    if m == n:
        h = kxx + kyy - kxy - kxy.T
        return float((h.sum() - np.trace(h)) / (m * (m - 1)))
    sxx = (kxx.sum() - np.trace(kxx)) / (m * (m - 1))
    syy = (kyy.sum() - np.trace(kyy)) / (n * (n - 1))
    return float(sxx + syy - 2.0 * kxy.mean())


def fid(real_feats, fake_feats, eps: float = 1e-6) -> float:
    """Frechet distance between Gaussians fitted to two feature sets.

    ``eps`` is added to both covariance diagonals before the matrix square
    root.
    """
    x, y = _feats(real_feats), _feats(fake_feats)
    if x.shape[1] != y.shape[1]:
        raise DataError(f"feature dims differ: {x.shape[1]} vs {y.shape[1]}")
    if len(x) < 2 or len(y) < 2:
        raise DataError("FID needs at least 2 samples per set")
    d = x.shape[1]
    mu1, mu2 = x.mean(0), y.mean(0)
    s1 = np.atleast_2d(np.cov(x, rowvar=False)) + eps * np.eye(d)
    s2 = np.atleast_2d(np.cov(y, rowvar=False)) + eps * np.eye(d)
    for s in (s1, s2):
        if np.linalg.eigvalsh((s + s.T) / 2).min() < 0:
            raise NumericError("covariance not positive semi-definite after jitter")
    covmean = linalg.sqrtm(s1 @ s2)
    if np.iscomplexobj(covmean):
        if np.abs(covmean.imag).max() > 1e-3 * max(1.0, np.abs(covmean.real).max()):
            raise NumericError("matrix square root has a significant imaginary part")
        covmean = covmean.real
    if not np.all(np.isfinite(covmean)):
        raise NumericError("non-finite matrix square root")
    diff = mu1 - mu2
    return float(max(diff @ diff + np.trace(s1 + s2 - 2.0 * covmean), 0.0))


class Embedder(Protocol):
    name: str
    dim: int

    def __call__(self, images: np.ndarray) -> np.ndarray: ...


class RandomProjectionEmbedder:
    """Fixed-seed random features of a downsampled image; deterministic and download-free."""

    name = "random-projection"

    def __init__(self, dim: int = 64, size: int = 16, seed: int = 0):
        self.dim = dim
        self.size = size
        rng = np.random.default_rng(seed)
        n_in = 3 * size * size
        self.w1 = rng.standard_normal((n_in, 4 * dim)) / math.sqrt(n_in)
        self.w2 = rng.standard_normal((4 * dim, dim)) / math.sqrt(4 * dim)

    def _resize(self, images: np.ndarray) -> np.ndarray:
        n, c, h, w = images.shape
        if c == 1:
            images = np.repeat(images, 3, axis=1)
        zoom = (1, 1, self.size / h, self.size / w)
        return ndimage.zoom(images, zoom, order=1, grid_mode=True, mode="nearest")

    def __call__(self, images: np.ndarray) -> np.ndarray:
        images = np.asarray(images, dtype=np.float64)
        if images.ndim == 3:
            images = images[None]
        x = self._resize(images).reshape(len(images), -1) - 0.5
        return np.tanh(np.maximum(x @ self.w1, 0.0) @ self.w2)


class InceptionEmbedder:
    """Pool features of torchvision's ImageNet Inception-v3 (weights must be obtainable)."""

    name = "inception"
    dim = 2048

    def __init__(self):
        import torch
        from torchvision.models import Inception_V3_Weights, inception_v3

        self._torch = torch
        self.model = inception_v3(weights=Inception_V3_Weights.IMAGENET1K_V1, aux_logits=True)
        self.model.fc = torch.nn.Identity()
        self.model.eval()

    def __call__(self, images: np.ndarray) -> np.ndarray:
        torch = self._torch
        x = torch.as_tensor(np.asarray(images, dtype=np.float32))
        if x.shape[1] == 1:
            x = x.repeat(1, 3, 1, 1)
        x = torch.nn.functional.interpolate(x, size=(299, 299), mode="bilinear", align_corners=False)
        mean = torch.tensor([0.485, 0.456, 0.406]).view(1, 3, 1, 1)
        std = torch.tensor([0.229, 0.224, 0.225]).view(1, 3, 1, 1)
        with torch.no_grad():
            return self.model((x - mean) / std).numpy().astype(np.float64)


def get_embedder(name: str = "random-projection") -> Embedder:
    if name == "random-projection":
        return RandomProjectionEmbedder()
    if name == "inception":
        return InceptionEmbedder()
    raise ValueError(f"unknown embedder {name!r}")


# --------------------------------------------------------------------------
# Log-Gabor phase symmetry


@dataclass(frozen=True)
class LogGaborBank:
    """Filter bank: one centre frequency per scale (cycles/pixel), shared bandwidth ratio."""

    wavelengths: tuple[float, ...] = (4.0, 8.0, 16.0)
    ratio: float = 0.25
    orientations: tuple[float, ...] = (math.pi / 6, 3 * math.pi / 6, 5 * math.pi / 6)
    sigma_phi: float = math.pi / 3 / 1.2

    def __post_init__(self):
        if not 0 < self.ratio < 1:
            raise ValueError("ratio must lie in (0, 1)")
        if any(not 0 <= o < math.pi for o in self.orientations):
            raise ValueError("orientations must lie in [0, pi)")

    @property
    def omegas(self) -> list[float]:
        return [1.0 / wl for wl in self.wavelengths]


def log_gabor_kernel(omega, phi, omega0: float, phi_r: float, ratio: float = 0.25,
                     sigma_phi: float = math.pi / 3 / 1.2) -> np.ndarray:
    """Frequency response of one log-Gabor filter; zero at ``omega == 0``.

    The angular difference is wrapped to ``(-pi, pi]``.
    """
    omega = np.asarray(omega, dtype=np.float64)
    dphi = np.angle(np.exp(1j * (np.asarray(phi, dtype=np.float64) - phi_r)))
    with np.errstate(divide="ignore"):
        radial = np.exp(-np.log(omega / omega0) ** 2 / (2 * math.log(ratio) ** 2))
    radial = np.where(omega > 0, radial, 0.0)
    return radial * np.exp(-dphi**2 / (2 * sigma_phi**2))


def _frequency_grid(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    return np.hypot(fx, fy), np.arctan2(-fy, fx) * np.ones_like(fx)


def phase_symmetry(image, bank: LogGaborBank | None = None, percentile: float = 95.0,
                   floor: float = 1e-6, eps: float = 1e-4) -> np.ndarray:
    """Bright-feature phase symmetry in ``[0, 1]``.

    Per orientation, even responses minus odd magnitudes are summed over
    scales; the noise threshold is the given percentile of that energy
    (never below ``floor``). The thresholded energies are summed over
    orientations and normalised by the total filter amplitude.
    """
    bank = bank or LogGaborBank()
    img = _as_array(image)
    if img.ndim == 3:
        img = img.mean(0)
    h, w = img.shape
    radius, theta = _frequency_grid(h, w)
    lowpass = 1.0 / (1.0 + (radius / 0.45) ** 30)
    spectrum = np.fft.fft2(img)
    energies, amplitude = [], np.zeros((h, w))
    for phi_r in bank.orientations:
        energy = np.zeros((h, w))
        for omega0 in bank.omegas:
            filt = log_gabor_kernel(radius, theta, omega0, phi_r, bank.ratio, bank.sigma_phi) * lowpass
            eo = np.fft.ifft2(spectrum * filt)
            energy += eo.real - np.abs(eo.imag)
            amplitude += np.abs(eo)
        energies.append(energy)
    energies = np.stack(energies)
    t = max(float(np.percentile(energies, percentile)), floor)
    return np.clip(energies - t, 0.0, None).sum(0) / (amplitude + eps)


def bone_mask(us_image, bank: LogGaborBank | None = None, percentile: float = 95.0,
              exclude_top: int = 25) -> np.ndarray:
    """Binary bone-surface mask; the top ``exclude_top`` rows are always empty."""
    img = _as_array(us_image)
    h = img.shape[-2]
    if h <= exclude_top:
        raise DataError(f"image height {h} must exceed the {exclude_top} excluded rows")
    mask = phase_symmetry(img, bank, percentile) > 0
    mask[:exclude_top] = False
    return mask


def bone_iou(mask_a, mask_b) -> float:
    """Intersection over union; two empty masks score 1."""
    a, b = np.asarray(mask_a, dtype=bool), np.asarray(mask_b, dtype=bool)
    if a.shape != b.shape:
        raise DataError(f"shape mismatch: {a.shape} vs {b.shape}")
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


# --------------------------------------------------------------------------
# Segmentation


@dataclass
class SegmentationScores:
    pix_acc: float
    class_acc: np.ndarray  # per-class recall, nan for classes absent from gt
    precision: np.ndarray  # per-class precision, nan for never-predicted classes
    confusion: np.ndarray = field(repr=False)

    @property
    def mean_class_acc(self) -> float:
        return float(np.nanmean(self.class_acc))

    @property
    def mean_precision(self) -> float:
        return float(np.nanmean(self.precision))


def toy_segmentation_accuracy(pred, gt, num_classes: int) -> SegmentationScores:
    pred = np.asarray(getattr(pred, "classes", pred))
    gt = np.asarray(getattr(gt, "classes", gt))
    if pred.shape != gt.shape:
        raise DataError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    for name, a in (("prediction", pred), ("ground truth", gt)):
        if a.size and (a.min() < 0 or a.max() >= num_classes):
            raise DataError(f"{name} has class ids outside [0, {num_classes})")
    cm = np.bincount(gt.ravel() * num_classes + pred.ravel(), minlength=num_classes**2)
    cm = cm.reshape(num_classes, num_classes).astype(np.int64)
    tp = np.diag(cm).astype(np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        recall = np.where(cm.sum(1) > 0, tp / cm.sum(1), np.nan)
        precision = np.where(cm.sum(0) > 0, tp / cm.sum(0), np.nan)
    return SegmentationScores(float(tp.sum() / max(cm.sum(), 1)), recall, precision, cm)


# --------------------------------------------------------------------------
# Reporting helpers


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    return float(v.mean()), float(v.std(ddof=1)) if len(v) > 1 else 0.0


def format_mean_std(values: Sequence[float], scale: float = 1.0, digits: int = 2) -> str:
    m, s = mean_std(values)
    return f"{m * scale:.{digits}f}({s * scale:.{digits}f})"


def paired_wilcoxon(a: Sequence[float], b: Sequence[float]) -> float:
    """Two-sided p-value of the Wilcoxon signed-rank test on paired scores."""
    return float(stats.wilcoxon(a, b).pvalue)
