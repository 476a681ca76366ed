"""Labeled image sets: MNIST, CIFAR-10 and a procedural stand-in.

Dataset root is ``$PRIVSEMCOM_DATA_ROOT`` (default ``~/.cache/privsemcom``).
Expected layout, as distributed by the dataset maintainers::

    <root>/mnist/train-images-idx3-ubyte[.gz]   train-labels-idx1-ubyte[.gz]
    <root>/mnist/t10k-images-idx3-ubyte[.gz]    t10k-labels-idx1-ubyte[.gz]
    <root>/cifar10/cifar-10-batches-py/data_batch_{1..5}, test_batch

An ``mnist.npz`` with ``x_train/y_train/x_test/y_test`` arrays in
``<root>/mnist/`` is accepted as well.
"""

from __future__ import annotations

import gzip
import os
import pickle
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np
import torch

DATA_ROOT_ENV = "PRIVSEMCOM_DATA_ROOT"
SHAPES = {"mnist": (28, 28, 1), "cifar10": (32, 32, 3), "synthetic": (28, 28, 1)}
SYNTHETIC_SIZES = {"train": 2000, "test": 500}


class DatasetError(RuntimeError):
    """Dataset files are missing or malformed."""


@dataclass
class LabeledImageSet:
    images: np.ndarray  # [N, H, W, C] float32 in [0, 1]
    labels: np.ndarray  # [N] int64
    num_classes: int
    name: str = ""

    def __post_init__(self):
        if self.images.ndim != 4:
            raise ValueError(f"images must be [N, H, W, C], got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise ValueError("images and labels differ in length")

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "LabeledImageSet":
        return LabeledImageSet(self.images[idx], self.labels[idx], self.num_classes, self.name)

    def tensors(self, idx=None) -> tuple[torch.Tensor, torch.Tensor]:
        """NCHW float image tensor and int64 label tensor."""
        images = self.images if idx is None else self.images[idx]
        labels = self.labels if idx is None else self.labels[idx]
        x = torch.from_numpy(np.ascontiguousarray(images.transpose(0, 3, 1, 2)))
        return x, torch.from_numpy(np.asarray(labels, dtype=np.int64))


def data_root() -> Path:
    return Path(os.environ.get(DATA_ROOT_ENV, Path.home() / ".cache" / "privsemcom"))


def _fetch_hint(name: str, where: Path) -> str:
    if name == "mnist":
        files = "train-images-idx3-ubyte.gz, train-labels-idx1-ubyte.gz, t10k-images-idx3-ubyte.gz, t10k-labels-idx1-ubyte.gz"
        src = "http://yann.lecun.com/exdb/mnist/ (or any mirror)"
    else:
        files = "cifar-10-python.tar.gz extracted to cifar-10-batches-py/"
        src = "https://www.cs.toronto.edu/~kriz/cifar.html"
    return (f"{name} files not found under {where}. Download {files} from {src} "
            f"into that directory, or point ${DATA_ROOT_ENV} at a directory containing {name}/.")


def _read_idx(path: Path) -> np.ndarray:
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        raw = fh.read()
    ndim = raw[3]
    dims = np.frombuffer(raw, dtype=">u4", count=ndim, offset=4)
    return np.frombuffer(raw, dtype=np.uint8, offset=4 + 4 * ndim).reshape(dims)


def write_idx(path: str | os.PathLike, array: np.ndarray) -> None:
    """Write a uint8 array in IDX format (gzip if the name ends in .gz)."""
    array = np.ascontiguousarray(array, dtype=np.uint8)
    header = bytes([0, 0, 0x08, array.ndim]) + np.asarray(array.shape, dtype=">u4").tobytes()
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "wb") as fh:
        fh.write(header + array.tobytes())


def _find(folder: Path, stem: str) -> Path | None:
    for candidate in (folder / stem, folder / f"{stem}.gz"):
        if candidate.is_file():
            return candidate
    return None


def _load_mnist(split: str) -> tuple[np.ndarray, np.ndarray]:
    folder = data_root() / "mnist"
    prefix = "train" if split == "train" else "t10k"
    img = _find(folder, f"{prefix}-images-idx3-ubyte")
    lab = _find(folder, f"{prefix}-labels-idx1-ubyte")
    if img is not None and lab is not None:
        return _read_idx(img)[..., None], _read_idx(lab)
    npz = folder / "mnist.npz"
    if npz.is_file():
        with np.load(npz) as f:
            key = "train" if split == "train" else "test"
            return f[f"x_{key}"][..., None], f[f"y_{key}"]
    raise DatasetError(_fetch_hint("mnist", folder))


def _load_cifar10(split: str) -> tuple[np.ndarray, np.ndarray]:
    folder = data_root() / "cifar10" / "cifar-10-batches-py"
    names = [f"data_batch_{i}" for i in range(1, 6)] if split == "train" else ["test_batch"]
    if not all((folder / n).is_file() for n in names):
        raise DatasetError(_fetch_hint("cifar10", folder))
    xs, ys = [], []
    for n in names:
        with open(folder / n, "rb") as fh:
            batch = pickle.load(fh, encoding="bytes")
        xs.append(np.asarray(batch[b"data"], dtype=np.uint8).reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1))
        ys.append(np.asarray(batch[b"labels"]))
    return np.concatenate(xs), np.concatenate(ys)


def balanced_indices(labels: np.ndarray, size: int, num_classes: int,
                     rng: np.random.Generator) -> np.ndarray:
    """Random subset whose per-class counts differ by at most one."""
    if size > len(labels):
        raise ValueError(f"subset_size {size} exceeds dataset size {len(labels)}")
    base, extra = divmod(size, num_classes)
    bonus = set(rng.choice(num_classes, size=extra, replace=False).tolist())
    picked = []
    for k in range(num_classes):
        pool = np.flatnonzero(labels == k)
        want = base + (k in bonus)
        if want > len(pool):
            raise ValueError(f"class {k} has only {len(pool)} samples, need {want}")
        picked.append(rng.choice(pool, size=want, replace=False))
    idx = np.concatenate(picked)
    return idx[rng.permutation(len(idx))]


def load_dataset(name: str, split: str, subset_size: int | None = None,
                 rng: np.random.Generator | None = None) -> LabeledImageSet:
    if split not in ("train", "test"):
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")
    rng = rng if rng is not None else np.random.default_rng(0)
    if name == "synthetic":
        n = subset_size or SYNTHETIC_SIZES[split]
        return make_synthetic(n, SHAPES["synthetic"], 10, rng)
    if name == "mnist":
        x, y = _load_mnist(split)
    elif name == "cifar10":
        x, y = _load_cifar10(split)
    else:
        raise ValueError(f"unknown dataset {name!r}")
    data = LabeledImageSet((x.astype(np.float32) / 255.0), y.astype(np.int64), 10, name)
    if subset_size is not None:
        data = data.subset(balanced_indices(data.labels, subset_size, 10, rng))
    return data


# --- synthetic templates ----------------------------------------------------

_TEMPLATE_LAYOUT = [
    ("hbar", 0.3, 0.5), ("vbar", 0.5, 0.3), ("hbar", 0.7, 0.5), ("vbar", 0.5, 0.7),
    ("disc", 0.3, 0.3), ("disc", 0.7, 0.7), ("disc", 0.5, 0.5),
    ("cross", 0.3, 0.7), ("cross", 0.7, 0.3), ("cross", 0.5, 0.5),
]


def synthetic_templates(shape=(28, 28, 1), num_classes: int = 10) -> np.ndarray:
    """One noise-free template per class: bars, discs and crosses placed by class."""
    if num_classes > len(_TEMPLATE_LAYOUT):
        raise ValueError("synthetic set supports at most 10 classes")
    H, W, C = shape
    rr, cc = np.mgrid[0:H, 0:W] / np.array([H, W])[:, None, None]
    tint = np.linspace(1.0, 0.6, C)
    out = np.zeros((num_classes, H, W, C), dtype=np.float32)
    for k, (kind, r0, c0) in enumerate(_TEMPLATE_LAYOUT[:num_classes]):
        dr, dc = np.abs(rr - r0), np.abs(cc - c0)
        if kind == "hbar":
            mask = (dr < 0.08) & (dc < 0.3)
        elif kind == "vbar":
            mask = (dc < 0.08) & (dr < 0.3)
        elif kind == "disc":
            mask = dr**2 + dc**2 < 0.18**2
        else:
            mask = ((dr < 0.06) & (dc < 0.22)) | ((dc < 0.06) & (dr < 0.22))
        out[k] = 0.9 * mask[..., None] * tint
    return out


def make_synthetic(num_samples: int, shape=(28, 28, 1), num_classes: int = 10,
                   rng: np.random.Generator | None = None, noise: float = 0.1) -> LabeledImageSet:
    rng = rng if rng is not None else np.random.default_rng(0)
    templates = synthetic_templates(shape, num_classes)
    labels = (np.arange(num_samples) % num_classes)[rng.permutation(num_samples)]
    images = templates[labels]
    if noise > 0:
        images = images + rng.uniform(-noise, noise, size=images.shape).astype(np.float32)
    images = np.clip(images, 0.0, 1.0).astype(np.float32)
    return LabeledImageSet(images, labels.astype(np.int64), num_classes, "synthetic")


def iterate_batches(n: int, batch_size: int, seed: int, epoch: int,
                    drop_last: bool = False) -> Iterator[np.ndarray]:
    """Shuffled index batches; order depends only on ``(seed, epoch)``."""
    perm = np.random.default_rng([seed, epoch]).permutation(n)
    stop = n - n % batch_size if drop_last else n
    for start in range(0, stop, batch_size):
        yield perm[start:start + batch_size]
