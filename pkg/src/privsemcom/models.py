"""Alice's encoder, Bob's two decoder branches and Eve's classifier."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path

import torch
from torch import nn

from .channel import LatentSignal, power_normalize
from .config import ExperimentConfig, loads, dumps


class CheckpointError(RuntimeError):
    """Checkpoint is incomplete or does not match its config."""


def _conv_block(c_in: int, c_out: int) -> list[nn.Module]:
    return [nn.Conv2d(c_in, c_out, 3, padding=1), nn.BatchNorm2d(c_out), nn.ReLU(inplace=True)]


class Encoder(nn.Module):
    """Two conv stages (64 then 128 channels, each pooled by 2), then a 1024-unit head.

    ``forward`` returns the raw I/Q tensor ``[B, 2, d]``; ``encode`` adds
    per-sample power normalization.
    """

    def __init__(self, shape: tuple[int, int, int], latent_dim: int, dropout: float = 0.25):
        super().__init__()
        H, W, C = shape
        if H % 4 or W % 4:
            raise ValueError(f"image height and width must be divisible by 4, got {H}x{W}")
        self.latent_dim = latent_dim
        self.features = nn.Sequential(
            *_conv_block(C, 64), *_conv_block(64, 64), nn.MaxPool2d(2), nn.Dropout(dropout),
            *_conv_block(64, 128), *_conv_block(128, 128), nn.MaxPool2d(2), nn.Dropout(dropout),
        )
        self.feature_shape = (128, H // 4, W // 4)
        self.head = nn.Sequential(
            nn.Flatten(),
            nn.Linear(128 * (H // 4) * (W // 4), 1024), nn.ReLU(inplace=True),
            nn.Linear(1024, 2 * latent_dim),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(x)).view(-1, 2, self.latent_dim)

    def encode(self, x: torch.Tensor) -> LatentSignal:
        return power_normalize(self(x))


class ReconDecoder(nn.Module):
    """Received I/Q -> 256-channel quarter-resolution map -> two x2 upsampling blocks -> sigmoid image."""

    def __init__(self, latent_dim: int, shape: tuple[int, int, int]):
        super().__init__()
        H, W, C = shape
        if H % 4 or W % 4:
            raise ValueError(f"image height and width must be divisible by 4, got {H}x{W}")
        self.seed_shape = (256, H // 4, W // 4)
        self.expand = nn.Sequential(
            nn.Flatten(),
            nn.Linear(2 * latent_dim, 1024), nn.ReLU(inplace=True),
            nn.Linear(1024, 256 * (H // 4) * (W // 4)),
        )
        self.upsample = nn.Sequential(
            nn.ConvTranspose2d(256, 128, 4, stride=2, padding=1), nn.BatchNorm2d(128), nn.ReLU(inplace=True),
            nn.ConvTranspose2d(128, 64, 4, stride=2, padding=1), nn.BatchNorm2d(64), nn.ReLU(inplace=True),
            nn.Conv2d(64, C, 3, padding=1), nn.Sigmoid(),
        )

    def forward(self, y: torch.Tensor | LatentSignal) -> torch.Tensor:
        y = y.iq if isinstance(y, LatentSignal) else y
        return self.upsample(self.expand(y).view(-1, *self.seed_shape))


class SemanticClassifier(nn.Module):
    """MLP on the flattened received I/Q vector; returns logits."""

    def __init__(self, latent_dim: int, num_classes: int, hidden=(512, 256), dropout: float = 0.5):
        super().__init__()
        h1, h2 = hidden
        self.net = nn.Sequential(
            nn.Flatten(),
            nn.Linear(2 * latent_dim, h1), nn.ReLU(inplace=True), nn.Dropout(dropout),
            nn.Linear(h1, h2), nn.ReLU(inplace=True), nn.Dropout(dropout),
            nn.Linear(h2, num_classes),
        )

    def forward(self, y: torch.Tensor | LatentSignal) -> torch.Tensor:
        y = y.iq if isinstance(y, LatentSignal) else y
        return self.net(y)


def build_encoder(shape, latent_dim: int, dropout: float = 0.25) -> Encoder:
    return Encoder(tuple(shape), latent_dim, dropout)


def build_recon_decoder(latent_dim: int, shape) -> ReconDecoder:
    return ReconDecoder(latent_dim, tuple(shape))


def build_semantic_classifier(latent_dim: int, num_classes: int, hidden=(512, 256),
                              dropout: float = 0.5) -> SemanticClassifier:
    return SemanticClassifier(latent_dim, num_classes, tuple(hidden), dropout)


def param_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


PARTS = ("encoder", "recon", "bob_cls", "eve_cls")
TRAINING_MODES = ("untrained", "baseline", "minmax", "eve_only")


@dataclass
class ModelBundle:
    config: ExperimentConfig
    encoder: Encoder
    recon: ReconDecoder
    bob_cls: SemanticClassifier
    eve_cls: SemanticClassifier
    training_mode: str = "untrained"
    eve_trained: bool = False
    history: list[str] = field(default_factory=list)

    @property
    def config_hash(self) -> str:
        return self.config.config_hash()

    def modules(self) -> dict[str, nn.Module]:
        return {name: getattr(self, name) for name in PARTS}

    def eval(self) -> "ModelBundle":
        for m in self.modules().values():
            m.eval()
        return self

    def clone(self) -> "ModelBundle":
        return copy.deepcopy(self)

    def state(self) -> dict[str, dict[str, torch.Tensor]]:
        return {name: {k: v.detach().clone() for k, v in m.state_dict().items()}
                for name, m in self.modules().items()}

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        torch.save({
            "params": {name: m.state_dict() for name, m in self.modules().items()},
            "config": dumps(self.config),
            "config_hash": self.config_hash,
            "training_mode": self.training_mode,
            "eve_trained": self.eve_trained,
            "history": list(self.history),
        }, path)
        return path

    @classmethod
    def load(cls, path: str | Path) -> "ModelBundle":
        blob = torch.load(Path(path), map_location="cpu", weights_only=False)
        missing = [p for p in PARTS if p not in blob.get("params", {})]
        if missing:
            raise CheckpointError(f"{path}: checkpoint lacks parameter sets {missing}")
        cfg = loads(blob["config"])
        if cfg.config_hash() != blob.get("config_hash"):
            raise CheckpointError(f"{path}: config hash mismatch")
        bundle = build_bundle(cfg, num_classes=_num_classes(blob["params"]["bob_cls"]))
        for name, m in bundle.modules().items():
            m.load_state_dict(blob["params"][name])
        bundle.training_mode = blob.get("training_mode", "untrained")
        bundle.eve_trained = bool(blob.get("eve_trained", False))
        bundle.history = list(blob.get("history", []))
        return bundle


def _num_classes(state: dict[str, torch.Tensor]) -> int:
    last = sorted(k for k in state if k.endswith(".weight"))[-1]
    return state[last].shape[0]


def build_bundle(cfg: ExperimentConfig, num_classes: int = 10) -> ModelBundle:
    """Fresh bundle; weights come from torch's global RNG (seed it first)."""
    shape = cfg.image_shape
    return ModelBundle(
        config=cfg,
        encoder=build_encoder(shape, cfg.latent_dim, cfg.conv_dropout),
        recon=build_recon_decoder(cfg.latent_dim, shape),
        bob_cls=build_semantic_classifier(cfg.latent_dim, num_classes, cfg.cls_hidden, cfg.cls_dropout),
        eve_cls=build_semantic_classifier(cfg.latent_dim, num_classes, cfg.cls_hidden, cfg.cls_dropout),
    )
