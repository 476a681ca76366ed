"""Monte Carlo evaluation over channel draws, sweeps, and CSV/plot export."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .channel import ChannelRealization, LatentSignal, sample_fading, transmit_superposed, unit_fading
from .data import LabeledImageSet
from .metrics import psnr_per_image, ssim_per_image
from .models import ModelBundle
from .perturbation import DeltaFn, zero_delta
from .training import encode_dataset

CSV_COLUMNS = ("dataset", "latent_dim", "w_P", "perturb", "eve_snr_db", "bob_snr_db", "bob_acc",
               "eve_acc", "gap", "psnr_db", "ssim", "n_samples", "n_real", "seed")


class EvaluationError(ValueError):
    pass


@dataclass
class EvalRow:
    dataset: str
    latent_dim: int
    w_P: float
    perturb: str
    eve_snr_db: float | None
    bob_snr_db: float
    bob_acc: float
    eve_acc: float | None
    psnr_db: float
    ssim: float
    n_samples: int
    n_real: int
    seed: int
    # per-realization accuracies, kept in memory for bootstrap intervals
    bob_acc_draws: list[float] = field(default_factory=list, repr=False, compare=False)
    eve_acc_draws: list[float] = field(default_factory=list, repr=False, compare=False)

    @property
    def gap(self) -> float | None:
        return None if self.eve_acc is None else self.bob_acc - self.eve_acc

    def as_csv(self) -> dict[str, str]:
        out = {}
        for key in CSV_COLUMNS:
            value = getattr(self, key)
            if value is None:
                out[key] = ""
            elif isinstance(value, float):
                out[key] = repr(value)
            else:
                out[key] = str(value)
        return out


def _from_csv(rec: dict[str, str]) -> EvalRow:
    def num(key, cast=float):
        return None if rec[key] == "" else cast(rec[key])

    return EvalRow(dataset=rec["dataset"], latent_dim=int(rec["latent_dim"]), w_P=float(rec["w_P"]),
                   perturb=rec["perturb"], eve_snr_db=num("eve_snr_db"), bob_snr_db=float(rec["bob_snr_db"]),
                   bob_acc=float(rec["bob_acc"]), eve_acc=num("eve_acc"), psnr_db=float(rec["psnr_db"]),
                   ssim=float(rec["ssim"]), n_samples=int(rec["n_samples"]), n_real=int(rec["n_real"]),
                   seed=int(rec["seed"]))


@dataclass
class EvalReport:
    rows: list[EvalRow] = field(default_factory=list)
    config_hash: str = ""

    def __len__(self) -> int:
        return len(self.rows)

    def extend(self, other: "EvalReport") -> "EvalReport":
        self.rows.extend(other.rows)
        return self

    def select(self, **match) -> list[EvalRow]:
        return [r for r in self.rows if all(getattr(r, k) == v for k, v in match.items())]

    def one(self, **match) -> EvalRow:
        found = self.select(**match)
        if len(found) != 1:
            raise KeyError(f"{len(found)} rows match {match}")
        return found[0]

    def to_records(self) -> list[dict]:
        return [r.as_csv() for r in self.rows]


def bootstrap_ci(samples, n_boot: int = 2000, level: float = 0.95, seed: int = 0) -> tuple[float, float]:
    """Percentile bootstrap interval for the mean of ``samples``."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.size < 2:
        return (float(samples.mean()), float(samples.mean())) if samples.size else (math.nan, math.nan)
    rng = np.random.default_rng(seed)
    means = samples[rng.integers(0, samples.size, size=(n_boot, samples.size))].mean(axis=1)
    tail = (1 - level) / 2 * 100
    lo, hi = np.percentile(means, [tail, 100 - tail])
    return float(lo), float(hi)


def _require_eve(bundle: ModelBundle) -> None:
    if not bundle.eve_trained:
        raise EvaluationError("leakage assessment needs a trained Eve; run train_eve first")


@torch.no_grad()
def _bob_side(bundle: ModelBundle, y: torch.Tensor, x: torch.Tensor, labels: torch.Tensor):
    correct = (bundle.bob_cls(y).argmax(1) == labels).double()
    rec = bundle.recon(y)
    return correct, psnr_per_image(rec, x), ssim_per_image(rec.double(), x.double())


def _chunks(n: int, size: int):
    for start in range(0, n, size):
        yield slice(start, min(n, start + size))


def evaluate(bundle: ModelBundle, data: LabeledImageSet, snr_list, n_real: int = 10, seed: int = 0, *,
             noise_free: bool = False, identity_fading: bool = False, chunk: int = 256) -> EvalReport:
    """Bob accuracy / PSNR / SSIM per SNR, averaged over the set and ``n_real`` channel draws.

    If the bundle carries a trained Eve she is evaluated at the same SNR on
    her own independent draws.  ``noise_free`` and ``identity_fading`` switch
    off the noise and fading of every link (reference points).
    """
    snr_list = list(snr_list)
    if not snr_list:
        raise EvaluationError("snr_list is empty")
    if n_real < 1:
        raise EvaluationError("n_real must be >= 1")
    bundle.eval()
    z_all = encode_dataset(bundle, data)
    x_all, labels_all = data.tensors()
    cfg = bundle.config
    report = EvalReport(config_hash=bundle.config_hash)
    for snr in snr_list:
        gen = torch.Generator().manual_seed(_seed_for(seed, snr))
        bob_draws, eve_draws, psnrs, ssims = [], [], [], []
        for _ in range(n_real):
            bc, ec, ps, ss = [], [], [], []
            for sl in _chunks(len(data), chunk):
                z = LatentSignal(z_all.iq[sl], normalized=True)
                B = z.iq.shape[0]
                y_b = _receive(z, B, snr, gen, noise_free, identity_fading)
                c, p, s = _bob_side(bundle, y_b, x_all[sl], labels_all[sl])
                bc.append(c), ps.append(p), ss.append(s)
                if bundle.eve_trained:
                    y_e = _receive(z, B, snr, gen, noise_free, identity_fading)
                    with torch.no_grad():
                        ec.append((bundle.eve_cls(y_e).argmax(1) == labels_all[sl]).double())
            bob_draws.append(float(torch.cat(bc).mean()))
            psnrs.append(float(torch.cat(ps).mean()))
            ssims.append(float(torch.cat(ss).mean()))
            if ec:
                eve_draws.append(float(torch.cat(ec).mean()))
        report.rows.append(EvalRow(
            dataset=cfg.dataset, latent_dim=cfg.latent_dim, w_P=cfg.privacy_weight, perturb="none",
            eve_snr_db=float(snr) if eve_draws else None, bob_snr_db=float(snr),
            bob_acc=float(np.mean(bob_draws)), eve_acc=float(np.mean(eve_draws)) if eve_draws else None,
            psnr_db=float(np.mean(psnrs)), ssim=float(np.mean(ssims)), n_samples=len(data), n_real=n_real,
            seed=seed, bob_acc_draws=bob_draws, eve_acc_draws=eve_draws))
    return report


def _seed_for(seed: int, *parts) -> int:
    key = np.random.SeedSequence([int(seed)] + [int(round(float(p) * 1000)) + 10**6 for p in parts])
    return int(key.generate_state(1, np.uint64)[0] >> 1)


def _receive(z: LatentSignal, B: int, snr, gen, noise_free=False, identity_fading=False) -> torch.Tensor:
    h = unit_fading(B) if identity_fading else sample_fading(B, gen)
    ch = ChannelRealization(h, snr)
    zero = torch.zeros_like(z.iq)
    noise = zero if noise_free else None
    return transmit_superposed(z, zero, ch, ch, gen, noise=noise).iq


def evaluate_with_jammer(bundle: ModelBundle, delta_fn: DeltaFn | None, data: LabeledImageSet, eval_snrs,
                         jammer_bob_gain: float = 1.0, jammer_eve_gain: float = 1.0, n_real: int = 10,
                         seed: int = 0, *, bob_snr_db: float = 10.0, tag: str | None = None,
                         chunk: int = 256) -> EvalReport:
    """Bob and Eve both receive Alice's block plus the jammer's perturbation.

    For every Eve SNR and channel draw: ``y_bob = h_b x + gb*g_b delta + n_b``
    and ``y_eve = h_e x + ge*g_e delta + n_e`` with four independent fading
    coefficients.  ``delta_fn`` sees the Eve-side realizations only.  Channel
    draws depend on ``seed`` alone, so reports for different ``delta_fn``
    are paired.
    """
    _require_eve(bundle)
    eval_snrs = list(eval_snrs)
    if not eval_snrs:
        raise EvaluationError("eval_snrs is empty")
    delta_fn = delta_fn or zero_delta
    tag = tag or getattr(delta_fn, "tag", "none")
    bundle.eval()
    cfg = bundle.config
    z_all = encode_dataset(bundle, data)
    x_all, labels_all = data.tensors()
    report = EvalReport(config_hash=bundle.config_hash)
    for eve_snr in eval_snrs:
        gen = torch.Generator().manual_seed(_seed_for(seed, eve_snr))
        bob_draws, eve_draws, psnrs, ssims = [], [], [], []
        for _ in range(n_real):
            bc, ec, ps, ss = [], [], [], []
            for sl in _chunks(len(data), chunk):
                z = LatentSignal(z_all.iq[sl], normalized=True)
                labels = labels_all[sl]
                B = len(labels)
                ch_b = ChannelRealization(sample_fading(B, gen), bob_snr_db)
                jam_b = ChannelRealization(sample_fading(B, gen), bob_snr_db)
                ch_e = ChannelRealization(sample_fading(B, gen), eve_snr)
                jam_e = ChannelRealization(sample_fading(B, gen), eve_snr)
                n_b = torch.randn(z.iq.shape, generator=gen) * (ch_b.noise_sigma2 / 2) ** 0.5
                n_e = torch.randn(z.iq.shape, generator=gen) * (ch_e.noise_sigma2 / 2) ** 0.5
                delta = delta_fn(z, labels, eve_snr, ch_e, jam_e)
                with torch.no_grad():
                    y_b = transmit_superposed(z, delta, ch_b, jam_b, jam_gain=jammer_bob_gain, noise=n_b)
                    y_e = transmit_superposed(z, delta, ch_e, jam_e, jam_gain=jammer_eve_gain, noise=n_e)
                    c, p, s = _bob_side(bundle, y_b.iq, x_all[sl], labels)
                    bc.append(c), ps.append(p), ss.append(s)
                    ec.append((bundle.eve_cls(y_e.iq).argmax(1) == labels).double())
            bob_draws.append(float(torch.cat(bc).mean()))
            eve_draws.append(float(torch.cat(ec).mean()))
            psnrs.append(float(torch.cat(ps).mean()))
            ssims.append(float(torch.cat(ss).mean()))
        report.rows.append(EvalRow(
            dataset=cfg.dataset, latent_dim=cfg.latent_dim, w_P=cfg.privacy_weight, perturb=tag,
            eve_snr_db=float(eve_snr), bob_snr_db=float(bob_snr_db), bob_acc=float(np.mean(bob_draws)),
            eve_acc=float(np.mean(eve_draws)), psnr_db=float(np.mean(psnrs)), ssim=float(np.mean(ssims)),
            n_samples=len(data), n_real=n_real, seed=seed, bob_acc_draws=bob_draws, eve_acc_draws=eve_draws))
    return report


def gap_sweep(bundles: dict[float, ModelBundle], data: LabeledImageSet, eve_snr_list, n_real: int = 10,
              seed: int = 0, *, bob_snr_db: float = 10.0) -> EvalReport:
    """Bob-Eve gap per (w_P, Eve SNR); Bob stays at ``bob_snr_db``."""
    for w_P, b in bundles.items():
        if not b.eve_trained:
            raise EvaluationError(f"bundle for w_P={w_P} has no trained Eve")
    merged = EvalReport()
    for w_P, b in sorted(bundles.items()):
        rep = evaluate_with_jammer(b, None, data, eve_snr_list, n_real=n_real, seed=seed,
                                   bob_snr_db=bob_snr_db, tag="none")
        for row in rep.rows:
            row.w_P = float(w_P)
        merged.extend(rep)
    merged.config_hash = ",".join(sorted({b.config_hash for b in bundles.values()}))
    return merged


def fidelity_penalty(protected: ModelBundle, baseline: ModelBundle, data: LabeledImageSet, snr: float = 10.0,
                     n_real: int = 10, seed: int = 0) -> dict[str, float]:
    """PSNR/SSIM loss of the protected bundle at matched channel draws (positive = worse)."""
    a = protected.config.replace(privacy_weight=0.0)
    b = baseline.config.replace(privacy_weight=0.0)
    if a != b:
        diff = sorted(k for k in asdict(a) if getattr(a, k) != getattr(b, k))
        raise EvaluationError(f"bundles differ beyond the privacy weight: {diff}")
    rp = evaluate(_without_eve(protected), data, [snr], n_real, seed).rows[0]
    rb = evaluate(_without_eve(baseline), data, [snr], n_real, seed).rows[0]
    return {"delta_psnr_db": rb.psnr_db - rp.psnr_db, "delta_ssim": rb.ssim - rp.ssim}


def _without_eve(bundle: ModelBundle) -> ModelBundle:
    view = ModelBundle(bundle.config, bundle.encoder, bundle.recon, bundle.bob_cls, bundle.eve_cls,
                       bundle.training_mode, eve_trained=False)
    return view


# --- export -----------------------------------------------------------------

def export_report(report: EvalReport, path: str | Path) -> Path:
    """Write the report as CSV; the file appears atomically (no partial rows)."""
    if not report.rows:
        raise EvaluationError("refusing to export an empty report")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for row in report.rows:
            writer.writerow(row.as_csv())
    tmp.replace(path)
    return path


def load_report(path: str | Path) -> EvalReport:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise EvaluationError(f"{path}: unexpected header {reader.fieldnames}")
        return EvalReport([_from_csv(rec) for rec in reader])


_METRICS = (("bob_acc", "Bob accuracy"), ("eve_acc", "Eve accuracy"), ("gap", "Bob-Eve gap"),
            ("psnr_db", "PSNR [dB]"), ("ssim", "SSIM"))


def plot_report(report: EvalReport, path: str | Path) -> list[Path]:
    """One PNG per metric, x = SNR, one line per condition.  Returns the files written."""
    if not report.rows:
        raise EvaluationError("nothing to plot")
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    groups: dict[str, list[EvalRow]] = {}
    for r in report.rows:
        label = f"{r.dataset} d={r.latent_dim} wP={r.w_P:g} {r.perturb}"
        groups.setdefault(label, []).append(r)
    written = []
    for key, title in _METRICS:
        fig, ax = plt.subplots(figsize=(5, 3.5))
        drawn = False
        for label, rows in groups.items():
            pts = sorted((r.eve_snr_db if r.eve_snr_db is not None else r.bob_snr_db, getattr(r, key))
                         for r in rows if getattr(r, key) is not None)
            if pts:
                xs, ys = zip(*pts)
                ax.plot(xs, ys, marker="o", label=label)
                drawn = True
        if not drawn:
            plt.close(fig)
            continue
        ax.set_xlabel("SNR [dB]")
        ax.set_ylabel(title)
        ax.grid(alpha=0.3)
        ax.legend(fontsize=7)
        fig.tight_layout()
        out = path / f"{key}.png"
        fig.savefig(out, dpi=120)
        plt.close(fig)
        written.append(out)
    return written
