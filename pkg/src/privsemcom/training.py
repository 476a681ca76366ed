"""Baseline multi-task training, alternating min-max training, Eve-only training.

Randomness is split into named streams (see ``config.RandomStreams``) so
the legitimate link consumes exactly the same draws whether or not an
eavesdropper is trained alongside it.  Eve's dropout runs on its own copy of
torch's global RNG state, swapped in and out around each Eve step.
"""

from __future__ import annotations

import csv
import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
import torch

from .channel import ChannelRealization, LatentSignal, sample_fading, transmit
from .config import ExperimentConfig, RandomStreams
from .data import LabeledImageSet, iterate_batches
from .metrics import LossWeights, bob_loss, cce, legitimate_objective, psnr, ssim
from .models import ModelBundle, build_bundle, build_semantic_classifier

log = logging.getLogger(__name__)

CURVE_COLUMNS = ("epoch", "phase", "snr_db", "bob_acc", "eve_acc", "bob_loss", "eve_cce", "psnr", "ssim")


class TrainingDivergence(RuntimeError):
    """A loss became NaN or infinite."""


@dataclass
class TrainingCurve:
    records: list[dict] = field(default_factory=list)

    def add(self, **row) -> None:
        self.records.append({k: row.get(k) for k in CURVE_COLUMNS})

    def eval_rows(self) -> list[dict]:
        return [r for r in self.records if r["phase"] == "eval"]

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=CURVE_COLUMNS)
            writer.writeheader()
            for r in self.records:
                writer.writerow({k: "" if v is None else (repr(v) if isinstance(v, float) else v)
                                 for k, v in r.items()})
        return path


class _RngSlot:
    """A private torch global-RNG state that can be swapped in temporarily."""

    def __init__(self, seed: int):
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            self.state = torch.get_rng_state()

    @contextmanager
    def active(self):
        outer = torch.get_rng_state()
        torch.set_rng_state(self.state)
        try:
            yield
        finally:
            self.state = torch.get_rng_state()
            torch.set_rng_state(outer)


def _uniform_snr(batch: int, snr_range, gen: torch.Generator) -> torch.Tensor:
    low, high = snr_range
    return low + (high - low) * torch.rand(batch, generator=gen)


def _check_finite(value: torch.Tensor, what: str, epoch: int) -> None:
    if not torch.isfinite(value):
        raise TrainingDivergence(f"{what} became {float(value)} in epoch {epoch}; "
                                 "lower the learning rate or the privacy weight")


def _eve_batches(n: int, batch_size: int, seed: int) -> Iterator[np.ndarray]:
    epoch = 0
    while True:
        yield from iterate_batches(n, batch_size, seed, epoch)
        epoch += 1


def _adam(params, lr: float) -> torch.optim.Optimizer:
    return torch.optim.Adam(params, lr=lr)


def legit_parameters(bundle: ModelBundle):
    return [*bundle.encoder.parameters(), *bundle.recon.parameters(), *bundle.bob_cls.parameters()]


class _Trainer:
    """Shared machinery of the three procedures."""

    def __init__(self, cfg: ExperimentConfig, train: LabeledImageSet, streams: RandomStreams,
                 bundle: ModelBundle | None = None):
        self.cfg = cfg
        self.train = train
        self.streams = streams
        if bundle is None:
            with torch.random.fork_rng():
                torch.manual_seed(streams.int_seed("init"))
                bundle = build_bundle(cfg, train.num_classes)
        self.bundle = bundle
        self.weights = LossWeights.from_config(cfg)
        self.data_seed = streams.int_seed("data")
        self.eve_data_seed = streams.int_seed("eve_data")
        self.legit_rng = _RngSlot(streams.int_seed("dropout"))
        self.eve_rng = _RngSlot(streams.int_seed("eve_dropout"))
        self._eve_iter = None

    # -- Eve ---------------------------------------------------------------
    def eve_channel(self, batch: int) -> ChannelRealization:
        gen = self.streams.torch("eve_channel")
        snr = _uniform_snr(batch, self.cfg.eve_train_snr_range_db, gen)
        return ChannelRealization(sample_fading(batch, gen), snr)

    def eve_step(self, opt: torch.optim.Optimizer, z: LatentSignal | None = None,
                 labels: torch.Tensor | None = None) -> float:
        """One Eve update against the frozen (eval-mode) encoder."""
        b = self.bundle
        if z is None:
            if self._eve_iter is None:
                self._eve_iter = _eve_batches(len(self.train), self.cfg.batch_size, self.eve_data_seed)
            x, labels = self.train.tensors(next(self._eve_iter))
            was_training = b.encoder.training
            b.encoder.eval()
            with torch.no_grad():
                z = b.encoder.encode(x)
            b.encoder.train(was_training)
        y = transmit(z, self.eve_channel(len(labels)), self.streams.torch("eve_channel"))
        with self.eve_rng.active():
            b.eve_cls.train()
            loss = cce(b.eve_cls(y), labels)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
        return float(loss.detach())

    # -- Alice/Bob ---------------------------------------------------------
    def legit_step(self, opt: torch.optim.Optimizer, idx: np.ndarray, w_P: float,
                   with_eve: bool, epoch: int) -> tuple[float, float | None]:
        b, cfg, s = self.bundle, self.cfg, self.streams
        x, labels = self.train.tensors(idx)
        B = len(labels)
        with self.legit_rng.active():
            b.encoder.train(), b.recon.train(), b.bob_cls.train()
            z = b.encoder.encode(x)
            snr = _uniform_snr(B, cfg.train_snr_range_db, s.torch("snr"))
            ch = ChannelRealization(sample_fading(B, s.torch("fading")), snr)
            y = transmit(z, ch, s.torch("noise"))
            loss = bob_loss(b.bob_cls(y), labels, b.recon(y), x, self.weights)
            eve_loss = None
            objective = loss
            if with_eve:
                b.eve_cls.eval()
                y_eve = transmit(z, self.eve_channel(B), s.torch("eve_channel"))
                if w_P > 0:
                    eve_loss = cce(b.eve_cls(y_eve), labels)
                    objective = legitimate_objective(loss, eve_loss, w_P)
                else:
                    with torch.no_grad():
                        eve_loss = cce(b.eve_cls(y_eve), labels)
            _check_finite(objective, "legitimate objective", epoch)
            opt.zero_grad(set_to_none=True)
            objective.backward()
            opt.step()
        return float(loss.detach()), None if eve_loss is None else float(eve_loss.detach())


@contextmanager
def _frozen(module: torch.nn.Module):
    flags = [p.requires_grad for p in module.parameters()]
    for p in module.parameters():
        p.requires_grad_(False)
    try:
        yield
    finally:
        for p, f in zip(module.parameters(), flags):
            p.requires_grad_(f)


# --- logging evaluation -----------------------------------------------------

@torch.no_grad()
def _log_eval(bundle: ModelBundle, test: LabeledImageSet, cfg: ExperimentConfig, epoch: int,
              curve: TrainingCurve, with_eve: bool, losses: dict) -> None:
    gen = torch.Generator().manual_seed(int(cfg.seed) * 1_000_003 + epoch)
    modes = {name: m.training for name, m in bundle.modules().items()}
    bundle.eval()
    try:
        x, labels = test.tensors()
        z = bundle.encoder.encode(x)
        B = len(labels)
        ch_b = ChannelRealization(sample_fading(B, gen), cfg.bob_snr_db)
        y_b = transmit(z, ch_b, gen)
        bob_acc = float((bundle.bob_cls(y_b).argmax(1) == labels).float().mean())
        rec = bundle.recon(y_b)
        p, s_ = psnr(rec, x), float(ssim(rec, x))
        snrs = cfg.eval_snr_list_db if with_eve else (cfg.bob_snr_db,)
        for snr in snrs:
            eve_acc = None
            if with_eve:
                y_e = transmit(z, ChannelRealization(sample_fading(B, gen), snr), gen)
                eve_acc = float((bundle.eve_cls(y_e).argmax(1) == labels).float().mean())
            curve.add(epoch=epoch, phase="eval", snr_db=float(snr), bob_acc=bob_acc,
                      eve_acc=eve_acc, psnr=p, ssim=s_, **losses)
    finally:
        for name, m in bundle.modules().items():
            m.train(modes[name])


def _streams(cfg: ExperimentConfig, streams: RandomStreams | None) -> RandomStreams:
    return streams if streams is not None else RandomStreams(cfg.seed)


# --- public procedures ------------------------------------------------------

def train_baseline(cfg: ExperimentConfig, train: LabeledImageSet, test: LabeledImageSet | None = None,
                   streams: RandomStreams | None = None, *, max_steps: int | None = None
                   ) -> tuple[ModelBundle, TrainingCurve]:
    """Alice+Bob multi-task training over randomized-SNR Rayleigh channels.

    ``max_steps`` truncates training after that many optimizer steps (used
    by trajectory checks).
    """
    return _run(cfg, train, test, _streams(cfg, streams), with_eve=False, w_P=0.0, max_steps=max_steps)


def train_minmax(cfg: ExperimentConfig, train: LabeledImageSet, test: LabeledImageSet | None = None,
                 streams: RandomStreams | None = None, *, max_steps: int | None = None,
                 on_phase=None) -> tuple[ModelBundle, TrainingCurve]:
    """Alternate Eve best-response steps with privacy-penalized legitimate steps.

    Each round runs ``eve_steps_per_round`` Eve updates (encoder frozen) and
    then ``legit_steps_per_round`` updates of encoder+Bob minimizing
    ``bob_loss - w_P * eve_cce`` with Eve frozen.  ``on_phase(name, bundle)``
    is called after every phase, for isolation checks.
    """
    if cfg.privacy_weight < 0:
        raise ValueError("privacy weight must be >= 0")
    return _run(cfg, train, test, _streams(cfg, streams), with_eve=True, w_P=cfg.privacy_weight,
                max_steps=max_steps, on_phase=on_phase)


def _run(cfg, train, test, streams, *, with_eve, w_P, max_steps=None, on_phase=None):
    tr = _Trainer(cfg, train, streams)
    b = tr.bundle
    curve = TrainingCurve()
    legit_opt = _adam(legit_parameters(b), cfg.learning_rate)
    eve_opt = _adam(b.eve_cls.parameters(), cfg.lr_eve) if with_eve else None
    steps = 0
    for epoch in range(cfg.epochs):
        legit_losses, eve_losses = [], []
        batches = list(iterate_batches(len(train), cfg.batch_size, tr.data_seed, epoch))
        for start in range(0, len(batches), cfg.legit_steps_per_round):
            if with_eve:
                with _frozen(b.encoder), _frozen(b.recon), _frozen(b.bob_cls):
                    for _ in range(cfg.eve_steps_per_round):
                        eve_losses.append(tr.eve_step(eve_opt))
                if on_phase:
                    on_phase("eve", b)
            with _frozen(b.eve_cls):
                for idx in batches[start:start + cfg.legit_steps_per_round]:
                    loss, eve_cce = tr.legit_step(legit_opt, idx, w_P, with_eve, epoch)
                    legit_losses.append(loss)
                    steps += 1
                    if max_steps is not None and steps >= max_steps:
                        break
            if on_phase:
                on_phase("legit", b)
            if max_steps is not None and steps >= max_steps:
                break
        losses = {"bob_loss": float(np.mean(legit_losses)) if legit_losses else None,
                  "eve_cce": float(np.mean(eve_losses)) if eve_losses else None}
        curve.add(epoch=epoch, phase="train", **losses)
        log.info("epoch %d bob_loss=%s eve_cce=%s", epoch, losses["bob_loss"], losses["eve_cce"])
        if test is not None and (epoch + 1) % cfg.log_every == 0:
            _log_eval(b, test, cfg, epoch, curve, with_eve, losses)
        if max_steps is not None and steps >= max_steps:
            break
    b.eval()
    b.training_mode = "minmax" if with_eve else "baseline"
    b.eve_trained = with_eve
    b.history.append(b.training_mode)
    return b, curve


@torch.no_grad()
def encode_dataset(bundle: ModelBundle, data: LabeledImageSet, chunk: int = 256) -> LatentSignal:
    """Eval-mode encoder output for every image, concatenated."""
    was = bundle.encoder.training
    bundle.encoder.eval()
    parts = []
    for start in range(0, len(data), chunk):
        x, _ = data.tensors(slice(start, start + chunk))
        parts.append(bundle.encoder.encode(x).iq)
    bundle.encoder.train(was)
    return LatentSignal(torch.cat(parts), normalized=True)


def train_eve(bundle: ModelBundle, cfg: ExperimentConfig, train: LabeledImageSet,
              streams: RandomStreams | None = None, *, epochs: int | None = None,
              reset: bool = True) -> ModelBundle:
    """Fit Eve's classifier against the bundle's frozen encoder, in place.

    With ``reset`` Eve starts from fresh weights, so the result is a best
    response to the current encoder rather than a continuation.
    """
    streams = _streams(cfg, streams)
    tr = _Trainer(cfg, train, streams, bundle=bundle)
    if reset:
        with torch.random.fork_rng():
            torch.manual_seed(streams.int_seed("eve_dropout"))
            fresh = build_semantic_classifier(cfg.latent_dim, train.num_classes, cfg.cls_hidden, cfg.cls_dropout)
        bundle.eve_cls.load_state_dict(fresh.state_dict())
    z_all = encode_dataset(bundle, train)
    labels_all = torch.from_numpy(train.labels.astype(np.int64))
    opt = _adam(bundle.eve_cls.parameters(), cfg.lr_eve)
    n_epochs = cfg.eve_epoch_budget if epochs is None else epochs
    for epoch in range(n_epochs):
        losses = []
        for idx in iterate_batches(len(train), cfg.batch_size, tr.eve_data_seed, epoch):
            idx_t = torch.from_numpy(idx)
            z = LatentSignal(z_all.iq[idx_t], normalized=True)
            losses.append(tr.eve_step(opt, z, labels_all[idx_t]))
            if not np.isfinite(losses[-1]):
                raise TrainingDivergence(f"Eve loss became {losses[-1]} in epoch {epoch}")
        log.info("eve epoch %d cce=%.4f", epoch, float(np.mean(losses)) if losses else float("nan"))
    bundle.eve_cls.eval()
    bundle.eve_trained = True
    if bundle.training_mode == "untrained":
        bundle.training_mode = "eve_only"
    bundle.history.append("eve")
    return bundle
