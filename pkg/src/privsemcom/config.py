"""Experiment configuration, seeding and run-directory plumbing.

Config files are flat ``key = value`` documents.  Lists are comma separated,
perturbation keys carry a ``perturb.`` prefix and ``#`` starts a comment::

    dataset = mnist
    latent_dim = 32
    train_snr_range_db = -5, 15
    perturb.method = pgd
    perturb.steps = 10
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
import typing
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import torch


class ConfigError(ValueError):
    """A config document could not be parsed or names an unknown key."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


class ValidationError(ConfigError):
    """A parsed config violates a field domain."""


DATASETS = ("mnist", "cifar10", "synthetic")
PERTURB_METHODS = ("fgsm", "pgd")


@dataclass(frozen=True)
class PerturbationConfig:
    method: str = "pgd"
    epsilon: float = 0.1
    steps: int = 10
    alpha: float | None = None  # None -> epsilon / 4
    m: int = 4
    random_start: bool = False
    fading_known: bool = True

    @property
    def step_size(self) -> float:
        return self.epsilon / 4 if self.alpha is None else self.alpha


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str = "synthetic"
    latent_dim: int = 32
    w_sem: float = 1.0
    w_mse: float = 5.0
    w_ssim: float = 1.0
    privacy_weight: float = 0.0
    train_snr_range_db: tuple[float, float] = (-5.0, 15.0)
    eve_train_snr_range_db: tuple[float, float] = (-5.0, 10.0)
    eval_snr_list_db: tuple[float, ...] = (-5.0, 0.0, 5.0, 10.0, 15.0)
    bob_snr_db: float = 10.0
    epochs: int = 20
    eve_epochs: int | None = None  # None -> epochs
    batch_size: int = 64
    learning_rate: float = 1e-3
    lr_eve: float = 1e-3
    eve_steps_per_round: int = 1
    legit_steps_per_round: int = 1
    log_every: int = 1
    seed: int = 0
    n_real: int = 10
    subset_size: int | None = None
    test_subset_size: int | None = None
    conv_dropout: float = 0.25
    cls_dropout: float = 0.5
    cls_hidden: tuple[int, ...] = (512, 256)
    jammer_bob_gain: float = 1.0
    jammer_eve_gain: float = 1.0
    perturbation: PerturbationConfig | None = None

    def __post_init__(self):
        validate(self)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return (32, 32, 3) if self.dataset == "cifar10" else (28, 28, 1)

    @property
    def eve_epoch_budget(self) -> int:
        return self.epochs if self.eve_epochs is None else self.eve_epochs

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def with_overrides(self, overrides: dict[str, str]) -> "ExperimentConfig":
        """Apply string-valued ``key -> value`` overrides (file syntax)."""
        flat = to_flat(self)
        for key, value in overrides.items():
            if key not in _known_keys():
                raise ConfigError(f"unknown config key {key!r}", key)
            flat[key] = value
        return from_flat(flat)

    def config_hash(self) -> str:
        return hashlib.sha256(dumps(self).encode()).hexdigest()[:16]


def validate(cfg: ExperimentConfig) -> None:
    def bad(key, why):
        raise ValidationError(f"{key}: {why}", key)

    if cfg.dataset not in DATASETS:
        bad("dataset", f"must be one of {DATASETS}, got {cfg.dataset!r}")
    if cfg.latent_dim < 1:
        bad("latent_dim", "must be >= 1")
    for key in ("w_sem", "w_mse", "w_ssim", "privacy_weight"):
        value = getattr(cfg, key)
        if not math.isfinite(value) or value < 0:
            bad(key, "must be finite and >= 0")
    for key in ("train_snr_range_db", "eve_train_snr_range_db"):
        rng = getattr(cfg, key)
        if len(rng) != 2 or rng[0] > rng[1]:
            bad(key, "must be [low, high] with low <= high")
    if not cfg.eval_snr_list_db:
        bad("eval_snr_list_db", "must not be empty")
    for key in ("batch_size", "eve_steps_per_round", "legit_steps_per_round",
                "log_every", "n_real"):
        if getattr(cfg, key) < 1:
            bad(key, "must be >= 1")
    if cfg.epochs < 0:
        bad("epochs", "must be >= 0")
    if cfg.eve_epochs is not None and cfg.eve_epochs < 0:
        bad("eve_epochs", "must be >= 0")
    for key in ("subset_size", "test_subset_size"):
        value = getattr(cfg, key)
        if value is not None and value < 1:
            bad(key, "must be >= 1")
    for key in ("learning_rate", "lr_eve"):
        if not getattr(cfg, key) > 0:
            bad(key, "must be > 0")
    for key in ("conv_dropout", "cls_dropout"):
        if not 0 <= getattr(cfg, key) < 1:
            bad(key, "must lie in [0, 1)")
    if len(cfg.cls_hidden) != 2 or min(cfg.cls_hidden) < 1:
        bad("cls_hidden", "needs two positive widths")
    if not 0 <= cfg.seed < 2**64:
        bad("seed", "must be a 64-bit unsigned integer")
    p = cfg.perturbation
    if p is not None:
        if p.method not in PERTURB_METHODS:
            bad("perturb.method", f"must be one of {PERTURB_METHODS}")
        if not p.epsilon > 0:
            bad("perturb.epsilon", "must be > 0")
        if p.steps < 1:
            bad("perturb.steps", "must be >= 1")
        if p.method == "fgsm" and p.steps != 1:
            bad("perturb.steps", "fgsm takes exactly one step")
        if not p.step_size > 0:
            bad("perturb.alpha", "must be > 0")
        if p.m < 1:
            bad("perturb.m", "must be >= 1")


# --- flat key/value serialization ------------------------------------------

_PERTURB_PREFIX = "perturb."


def _hints(cls) -> dict[str, typing.Any]:
    return typing.get_type_hints(cls)


def _known_keys() -> set[str]:
    keys = {f.name for f in dataclasses.fields(ExperimentConfig) if f.name != "perturbation"}
    keys |= {_PERTURB_PREFIX + f.name for f in dataclasses.fields(PerturbationConfig)}
    return keys


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(text: str, hint, key: str):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin in (typing.Union, getattr(__import__("types"), "UnionType", None)):
        if text.strip().lower() == "none":
            return None
        inner = [a for a in args if a is not type(None)]
        return _parse(text, inner[0], key)
    text = text.strip()
    try:
        if origin is tuple:
            item = args[0]
            parts = [p for p in text.replace("[", "").replace("]", "").split(",") if p.strip()]
            return tuple(_parse(p, item, key) for p in parts)
        if hint is bool:
            if text.lower() in ("true", "1", "yes"):
                return True
            if text.lower() in ("false", "0", "no"):
                return False
            raise ValueError(text)
        if hint is int:
            return int(text)
        if hint is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"cannot parse {key}={text!r} as {getattr(hint, '__name__', hint)}", key) from None


def to_flat(cfg: ExperimentConfig) -> dict[str, str]:
    flat = {}
    for f in dataclasses.fields(cfg):
        if f.name == "perturbation":
            continue
        flat[f.name] = _format(getattr(cfg, f.name))
    if cfg.perturbation is not None:
        for f in dataclasses.fields(cfg.perturbation):
            flat[_PERTURB_PREFIX + f.name] = _format(getattr(cfg.perturbation, f.name))
    return flat


def from_flat(flat: dict[str, str]) -> ExperimentConfig:
    top_hints = _hints(ExperimentConfig)
    p_hints = _hints(PerturbationConfig)
    top, pert = {}, {}
    for key, text in flat.items():
        if key.startswith(_PERTURB_PREFIX):
            name = key[len(_PERTURB_PREFIX):]
            if name not in p_hints:
                raise ConfigError(f"unknown config key {key!r}", key)
            pert[name] = _parse(text, p_hints[name], key)
        else:
            if key not in top_hints or key == "perturbation":
                raise ConfigError(f"unknown config key {key!r}", key)
            top[key] = _parse(text, top_hints[key], key)
    if pert:
        method = pert.get("method", "pgd")
        if method == "fgsm":
            pert.setdefault("steps", 1)
        try:
            top["perturbation"] = PerturbationConfig(**pert)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
    return ExperimentConfig(**top)


def loads(text: str) -> ExperimentConfig:
    flat = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        # ``dataset=mnist latent_dim=32`` on one line is accepted too.
        tokens = [line] if "," in line or " = " in line else line.split()
        for token in tokens:
            if "=" not in token:
                raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}",
                                  token.strip())
            key, value = token.split("=", 1)
            flat[key.strip()] = value.strip()
    return from_flat(flat)


def dumps(cfg: ExperimentConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in sorted(to_flat(cfg).items()))


def load_config(path: str | os.PathLike) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return loads(path.read_text())


def save_config(cfg: ExperimentConfig, path: str | os.PathLike) -> Path:
    path = Path(path)
    path.write_text(dumps(cfg))
    return path


# --- random streams ---------------------------------------------------------

STREAM_NAMES = ("data", "fading", "noise", "snr", "dropout", "init",
                "eve_data", "eve_channel", "eve_dropout", "perturbation", "eval")


class RandomStreams:
    """Independent named generators derived from one master seed.

    Each name maps to a child of ``numpy.random.SeedSequence(seed)`` spawned
    in a fixed order, so adding a stream at the end never shifts the others.
    ``numpy(name)`` gives a numpy Generator, ``torch(name)`` a CPU
    ``torch.Generator``; both are created lazily and cached.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        children = np.random.SeedSequence(self.seed).spawn(len(STREAM_NAMES))
        self._seqs = dict(zip(STREAM_NAMES, children))
        self._np: dict[str, np.random.Generator] = {}
        self._torch: dict[str, torch.Generator] = {}

    def _check(self, name: str) -> None:
        if name not in self._seqs:
            raise KeyError(f"unknown stream {name!r}; known: {STREAM_NAMES}")

    def numpy(self, name: str) -> np.random.Generator:
        self._check(name)
        if name not in self._np:
            self._np[name] = np.random.default_rng(self._seqs[name])
        return self._np[name]

    def torch(self, name: str) -> torch.Generator:
        self._check(name)
        if name not in self._torch:
            gen = torch.Generator()
            gen.manual_seed(int(self._seqs[name].generate_state(1, np.uint64)[0] >> 1))
            self._torch[name] = gen
        return self._torch[name]

    def int_seed(self, name: str) -> int:
        """A fresh 63-bit seed drawn from ``name``'s numpy stream."""
        return int(self.numpy(name).integers(0, 2**63 - 1))


def seed_all(seed: int) -> RandomStreams:
    """Build the run's named streams and seed torch's global RNG from ``init``."""
    streams = RandomStreams(seed)
    torch.manual_seed(streams.int_seed("init"))
    return streams


# --- run directories and checkpoints ---------------------------------------

@dataclass
class RunRecord:
    run_id: str
    config: ExperimentConfig
    run_dir: Path
    checkpoint_paths: list[str] = field(default_factory=list)
    created_at: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())

    @property
    def metrics_log_path(self) -> Path:
        return self.run_dir / "metrics.csv"

    @property
    def checkpoint_dir(self) -> Path:
        return self.run_dir / "checkpoints"

    def write_manifest(self) -> None:
        manifest = {
            "run_id": self.run_id,
            "config_hash": self.config.config_hash(),
            "seed": self.config.seed,
            "checkpoint_paths": self.checkpoint_paths,
            "metrics_log_path": str(self.metrics_log_path),
            "created_at": self.created_at,
        }
        (self.run_dir / "run.json").write_text(json.dumps(manifest, indent=2) + "\n")


def new_run(cfg: ExperimentConfig, out_dir: str | os.PathLike, tag: str = "run") -> RunRecord:
    """Create ``out/<run_id>/`` with the resolved config written before any compute."""
    out_dir = Path(out_dir)
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S")
    while True:
        run_id = f"{tag}-{stamp}-{uuid.uuid4().hex[:6]}"
        run_dir = out_dir / run_id
        try:
            run_dir.mkdir(parents=True, exist_ok=False)
            break
        except FileExistsError:
            continue
    (run_dir / "checkpoints").mkdir()
    save_config(cfg, run_dir / "config")
    record = RunRecord(run_id=run_id, config=cfg, run_dir=run_dir)
    record.write_manifest()
    return record
