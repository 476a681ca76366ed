"""Cooperative-jammer perturbations: untargeted FGSM and PGD against Eve.

The jammer adds ``delta`` (element-wise budget ``epsilon`` on I/Q values) to
the air.  Eve receives ``h_e * x + g_e * delta + n_e``; gradients of Eve's
cross entropy with respect to ``delta`` are averaged over ``m`` channel
draws.  With ``fading_known`` the jammer crafts against the block-fading
coefficients of the current Eve link and only the noise is resampled;
otherwise the fading is resampled too.
"""

from __future__ import annotations

from typing import Callable

import torch
import torch.nn.functional as F

from .channel import ChannelRealization, LatentSignal, sample_fading, transmit_superposed
from .config import PerturbationConfig

PerturbationSpec = PerturbationConfig

DeltaFn = Callable[[LatentSignal, torch.Tensor, float, ChannelRealization, ChannelRealization], torch.Tensor]


def _eve_grad(eve_model, x: LatentSignal, labels: torch.Tensor, delta: torch.Tensor,
              spec: PerturbationSpec, gen: torch.Generator, eve_snr_db,
              ch_src: ChannelRealization | None, ch_jam: ChannelRealization | None,
              jam_gain: float) -> torch.Tensor:
    """Gradient of Eve's summed CCE w.r.t. ``delta``, averaged over ``spec.m`` draws."""
    B = x.iq.shape[0]
    known = spec.fading_known and ch_src is not None and ch_jam is not None
    delta = delta.detach().requires_grad_(True)
    x = LatentSignal(x.iq.detach(), normalized=True)
    total = torch.zeros_like(delta)
    for _ in range(spec.m):
        if known:
            src, jam = ch_src.with_snr(eve_snr_db), ch_jam
        else:
            src = ChannelRealization(sample_fading(B, gen, dtype=x.iq.dtype), eve_snr_db)
            jam = ChannelRealization(sample_fading(B, gen, dtype=x.iq.dtype), eve_snr_db)
        y = transmit_superposed(x, delta, src, jam, gen, jam_gain=jam_gain)
        loss = F.cross_entropy(eve_model(y), labels, reduction="sum")
        (g,) = torch.autograd.grad(loss, delta)
        total += g
    return total / spec.m


def fgsm_perturb(eve_model, x: LatentSignal, labels: torch.Tensor, spec: PerturbationSpec,
                 gen: torch.Generator | None = None, *, eve_snr_db=10.0,
                 ch_src: ChannelRealization | None = None, ch_jam: ChannelRealization | None = None,
                 jam_gain: float = 1.0) -> torch.Tensor:
    """``epsilon * sign(g)`` with ``g`` Eve's loss gradient at zero perturbation."""
    gen = gen if gen is not None else torch.Generator().manual_seed(0)
    zero = torch.zeros_like(x.iq)
    g = _eve_grad(eve_model, x, labels, zero, spec, gen, eve_snr_db, ch_src, ch_jam, jam_gain)
    return spec.epsilon * torch.sign(g)


def pgd_perturb(eve_model, x: LatentSignal, labels: torch.Tensor, spec: PerturbationSpec,
                gen: torch.Generator | None = None, *, eve_snr_db=10.0,
                ch_src: ChannelRealization | None = None, ch_jam: ChannelRealization | None = None,
                jam_gain: float = 1.0, on_step: Callable[[int, torch.Tensor], None] | None = None
                ) -> torch.Tensor:
    """Sign-gradient ascent on Eve's loss, clipped to the epsilon box after every step."""
    gen = gen if gen is not None else torch.Generator().manual_seed(0)
    eps, alpha = spec.epsilon, spec.step_size
    if spec.random_start:
        delta = (torch.rand(x.iq.shape, generator=gen, dtype=x.iq.dtype) * 2 - 1) * eps
    else:
        delta = torch.zeros_like(x.iq)
    for t in range(spec.steps):
        g = _eve_grad(eve_model, x, labels, delta, spec, gen, eve_snr_db, ch_src, ch_jam, jam_gain)
        delta = (delta + alpha * torch.sign(g)).clamp(-eps, eps)
        if on_step is not None:
            on_step(t, delta)
    return delta


def craft(eve_model, x, labels, spec: PerturbationSpec, gen=None, **kw) -> torch.Tensor:
    if spec.method == "fgsm":
        kw.pop("on_step", None)
        return fgsm_perturb(eve_model, x, labels, spec, gen, **kw)
    return pgd_perturb(eve_model, x, labels, spec, gen, **kw)


def zero_delta(x: LatentSignal, labels, eve_snr_db, ch_src, ch_jam) -> torch.Tensor:
    return torch.zeros_like(x.iq)


def make_delta_fn(eve_model, spec: PerturbationSpec, seed: int = 0,
                  jam_gain: float = 1.0) -> DeltaFn:
    """Bind a crafting routine to Eve's model for ``evaluate_with_jammer``."""
    gen = torch.Generator().manual_seed(seed)
    eve_model.eval()

    def delta_fn(x, labels, eve_snr_db, ch_src, ch_jam):
        return craft(eve_model, x, labels, spec, gen, eve_snr_db=eve_snr_db,
                     ch_src=ch_src, ch_jam=ch_jam, jam_gain=jam_gain).detach()

    delta_fn.tag = f"{spec.method}{spec.steps if spec.method == 'pgd' else ''}"
    return delta_fn


def spec_tag(spec: PerturbationSpec | None) -> str:
    if spec is None:
        return "none"
    return "fgsm" if spec.method == "fgsm" else f"pgd{spec.steps}"
