"""Complex baseband signal plane on paired I/Q tensors.

Canonical layout is ``[B, 2, d]``: plane 0 holds the in-phase values, plane 1
the quadrature values, ``d`` is the number of complex channel uses.  Complex
products are written as the real 2x2 rotation-scaling on each (I, Q) pair so
autograd sees only real arithmetic.

SNR is referenced to unit average transmit power: total complex noise
variance is ``10 ** (-snr_db / 10)`` independent of the fading draw.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch


class DegenerateSignalError(ValueError):
    """A latent row has zero energy and cannot be power normalized."""


class ContractError(ValueError):
    """A channel input breaks its documented precondition."""


@dataclass
class LatentSignal:
    iq: torch.Tensor  # [B, 2, d]
    normalized: bool = False

    def __post_init__(self):
        if self.iq.ndim != 3 or self.iq.shape[1] != 2:
            raise ContractError(f"I/Q tensor must be [B, 2, d], got {tuple(self.iq.shape)}")

    @property
    def i_part(self) -> torch.Tensor:
        return self.iq[:, 0]

    @property
    def q_part(self) -> torch.Tensor:
        return self.iq[:, 1]

    @property
    def latent_dim(self) -> int:
        return self.iq.shape[2]

    def power(self) -> torch.Tensor:
        """Mean complex power per channel use, one value per row."""
        return self.iq.pow(2).sum(dim=(1, 2)) / self.latent_dim


@dataclass
class ChannelRealization:
    """Block fading coefficients plus the noise level of one link.

    ``h`` is ``[B, 2]`` (real, imag).  ``snr_db`` is a float or a ``[B]``
    tensor when every block gets its own SNR.
    """

    h: torch.Tensor
    snr_db: float | torch.Tensor

    @property
    def noise_sigma2(self) -> float | torch.Tensor:
        return noise_variance(self.snr_db)

    def with_snr(self, snr_db) -> "ChannelRealization":
        return ChannelRealization(self.h, snr_db)


def noise_variance(snr_db):
    if isinstance(snr_db, torch.Tensor):
        return torch.pow(10.0, -snr_db / 10)
    return 10.0 ** (-float(snr_db) / 10)


def power_normalize(z: LatentSignal | torch.Tensor) -> LatentSignal:
    """Scale each row to mean power 1 per complex use: ``z * sqrt(d) / ||z||``."""
    iq = z.iq if isinstance(z, LatentSignal) else z
    if iq.ndim != 3 or iq.shape[1] != 2:
        raise ContractError(f"I/Q tensor must be [B, 2, d], got {tuple(iq.shape)}")
    norm = iq.pow(2).sum(dim=(1, 2), keepdim=True).sqrt()
    if bool((norm == 0).any()):
        raise DegenerateSignalError("cannot normalize a zero-energy latent row")
    return LatentSignal(iq * (iq.shape[2] ** 0.5 / norm), normalized=True)


def sample_fading(batch: int, gen: torch.Generator | None = None, *,
                  dtype=torch.float32) -> torch.Tensor:
    """i.i.d. CN(0, 1) block-fading coefficients as a ``[B, 2]`` real tensor."""
    if batch < 1:
        raise ValueError(f"batch must be >= 1, got {batch}")
    return torch.randn(batch, 2, generator=gen, dtype=dtype) * (0.5**0.5)


def draw_realization(batch: int, snr_db, gen: torch.Generator | None = None, *,
                     dtype=torch.float32) -> ChannelRealization:
    return ChannelRealization(sample_fading(batch, gen, dtype=dtype), snr_db)


def unit_fading(batch: int, *, dtype=torch.float32) -> torch.Tensor:
    h = torch.zeros(batch, 2, dtype=dtype)
    h[:, 0] = 1.0
    return h


def complex_scale(h: torch.Tensor, iq: torch.Tensor) -> torch.Tensor:
    """Multiply each row of ``iq`` [B, 2, d] by the complex scalar ``h`` [B, 2]."""
    hr = h[:, 0, None]
    hi = h[:, 1, None]
    xi, xq = iq[:, 0], iq[:, 1]
    return torch.stack((hr * xi - hi * xq, hi * xi + hr * xq), dim=1)


def sample_noise(shape, snr_db, gen: torch.Generator | None = None, *,
                 dtype=torch.float32) -> torch.Tensor:
    """Complex AWGN with total variance ``10**(-snr/10)`` split over I and Q."""
    sigma2 = noise_variance(snr_db)
    n = torch.randn(*shape, generator=gen, dtype=dtype)
    if isinstance(sigma2, torch.Tensor):
        std = (sigma2.to(dtype) / 2).sqrt().reshape(-1, *([1] * (len(shape) - 1)))
    else:
        std = (sigma2 / 2) ** 0.5
    return n * std


def transmit(x: LatentSignal, ch: ChannelRealization, gen: torch.Generator | None = None, *,
             noise: torch.Tensor | None = None) -> LatentSignal:
    """``y = h * x + n`` per complex use.  Pass ``noise`` to freeze the draw."""
    if not x.normalized:
        raise ContractError("transmit expects a power-normalized signal")
    y = complex_scale(ch.h.to(x.iq.dtype), x.iq)
    if noise is None:
        noise = sample_noise(x.iq.shape, ch.snr_db, gen, dtype=x.iq.dtype)
    return LatentSignal(y + noise, normalized=False)


def transmit_superposed(x: LatentSignal, delta: torch.Tensor | LatentSignal,
                        ch_src: ChannelRealization, ch_jam: ChannelRealization,
                        gen: torch.Generator | None = None, *, jam_gain: float = 1.0,
                        noise: torch.Tensor | None = None) -> LatentSignal:
    """Receive Alice's block plus the jammer's: ``h*x + gain*g*delta + n``.

    ``delta`` is sent as-is (no power normalization); its budget is the
    caller's business.  Noise level comes from ``ch_src``.
    """
    d_iq = delta.iq if isinstance(delta, LatentSignal) else delta
    if d_iq.shape != x.iq.shape:
        raise ContractError(f"perturbation shape {tuple(d_iq.shape)} != signal shape {tuple(x.iq.shape)}")
    if not x.normalized:
        raise ContractError("transmit_superposed expects a power-normalized signal")
    y = complex_scale(ch_src.h.to(x.iq.dtype), x.iq)
    y = y + jam_gain * complex_scale(ch_jam.h.to(x.iq.dtype), d_iq)
    if noise is None:
        noise = sample_noise(x.iq.shape, ch_src.snr_db, gen, dtype=x.iq.dtype)
    return LatentSignal(y + noise, normalized=False)
