"""Losses and fidelity metrics on torch tensors (images are NCHW in [0, 1])."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .kernels import SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW, gaussian_window

PSNR_CAP_DB = 100.0


@dataclass(frozen=True)
class LossWeights:
    w_sem: float = 1.0
    w_mse: float = 5.0
    w_ssim: float = 1.0
    w_P: float = 0.0

    def __post_init__(self):
        vals = (self.w_sem, self.w_mse, self.w_ssim, self.w_P)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("loss weights must be finite")
        if self.w_P < 0:
            raise ValueError("privacy weight must be >= 0")

    @classmethod
    def from_config(cls, cfg) -> "LossWeights":
        return cls(cfg.w_sem, cfg.w_mse, cfg.w_ssim, cfg.privacy_weight)


def cce(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean categorical cross entropy over the batch."""
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise ValueError(f"logits must be [B, K] with K >= 2, got {tuple(logits.shape)}")
    if labels.numel() and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ValueError("label out of range")
    return F.cross_entropy(logits, labels)


def accuracy(logits: torch.Tensor, labels: torch.Tensor) -> float:
    return float((logits.argmax(dim=1) == labels).float().mean())


def _window(channels: int, dtype, device) -> torch.Tensor:
    win = torch.as_tensor(gaussian_window(SSIM_WINDOW, SSIM_SIGMA), dtype=dtype, device=device)
    return win.expand(channels, 1, SSIM_WINDOW, SSIM_WINDOW).contiguous()


def ssim_per_image(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """SSIM per image, averaged over channels and valid window positions."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    if a.ndim != 4:
        raise ValueError("expected NCHW image batches")
    C = a.shape[1]
    win = _window(C, a.dtype, a.device)

    def blur(t):
        return F.conv2d(t, win, groups=C)

    mu_a, mu_b = blur(a), blur(b)
    var_a = blur(a * a) - mu_a**2
    var_b = blur(b * b) - mu_b**2
    cov = blur(a * b) - mu_a * mu_b
    smap = ((2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)) / (
        (mu_a**2 + mu_b**2 + SSIM_C1) * (var_a + var_b + SSIM_C2))
    # rounding in the variance form can overshoot the [-1, 1] range by ~1e-16
    return smap.mean(dim=(1, 2, 3)).clamp(-1.0, 1.0)


def ssim(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Mean SSIM (11x11 Gaussian window, sigma 1.5, dynamic range 1)."""
    return ssim_per_image(a, b).mean()


def mse(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return F.mse_loss(a, b)


def psnr_from_mse(m: float) -> float:
    if m < 1e-10:
        return PSNR_CAP_DB
    return 10.0 * math.log10(1.0 / m)


def psnr(a: torch.Tensor, b: torch.Tensor) -> float:
    """PSNR in dB of the batch MSE, capped at 100 dB."""
    return psnr_from_mse(float(F.mse_loss(a.double(), b.double())))


def psnr_per_image(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    m = (a.double() - b.double()).pow(2).flatten(1).mean(dim=1)
    out = 10.0 * torch.log10(1.0 / m.clamp_min(1e-300))
    return torch.where(m < 1e-10, torch.full_like(out, PSNR_CAP_DB), out)


def bob_loss(logits, labels, recon, target, w: LossWeights) -> torch.Tensor:
    """``w_sem*CCE + w_mse*MSE + w_ssim*(1 - SSIM)``."""
    return (w.w_sem * cce(logits, labels) + w.w_mse * mse(recon, target)
            + w.w_ssim * (1.0 - ssim(recon, target)))


def legitimate_objective(bob, eve_cce, w_P: float):
    """Objective minimized by Alice and Bob: Bob's loss minus ``w_P`` times Eve's CCE."""
    return bob - w_P * eve_cce
