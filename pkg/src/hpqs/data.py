"""MNIST in IDX format: reading, writing, class filtering and 4x4 pooling."""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

DATA_ENV = "HPQS_DATA"

FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}

_UBYTE = 0x08
IMAGE_SIDE = 28


class IdxFormatError(ValueError):
    pass


def _open(path: Path):
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def _resolve(root: Path, name: str) -> Path:
    for candidate in (root / name, root / f"{name}.gz"):
        if candidate.exists():
            return candidate
    raise FileNotFoundError(
        f"missing {name} under {root}. Point ${DATA_ENV} at a directory with the four MNIST IDX files, "
        f"or run `hpqs prepare-data <dir>` to build the bundled 5000-image subset."
    )


def read_idx(path) -> np.ndarray:
    """Read an unsigned-byte IDX file, checking the magic number and payload length."""
    path = Path(path)
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise IdxFormatError(f"{path}: file too short for an IDX header")
    zero, dtype, ndim = struct.unpack(">HBB", raw[:4])
    if zero != 0 or dtype != _UBYTE or ndim == 0:
        raise IdxFormatError(f"{path}: bad magic number {raw[:4].hex()} (expected 0000 08 0n)")
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxFormatError(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    expected = int(np.prod(dims))
    if len(raw) - header < expected:
        raise IdxFormatError(f"{path}: truncated payload ({len(raw) - header} of {expected} bytes)")
    return np.frombuffer(raw, dtype=np.uint8, count=expected, offset=header).reshape(dims)


def write_idx(path, array: np.ndarray) -> None:
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise TypeError(f"IDX writer supports uint8 only, got {array.dtype}")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">HBB", 0, _UBYTE, array.ndim))
        fh.write(struct.pack(f">{array.ndim}I", *array.shape))
        fh.write(np.ascontiguousarray(array).tobytes())


def has_idx(root) -> bool:
    root = Path(root)
    return all((root / n).exists() or (root / f"{n}.gz").exists() for n in FILES.values())


@dataclass
class MnistSplits:
    train_x: np.ndarray  # (N, 28, 28) float64 in [0, 1]
    train_y: np.ndarray  # (N,) int64
    test_x: np.ndarray
    test_y: np.ndarray


def _load_pair(root: Path, images: str, labels: str) -> tuple[np.ndarray, np.ndarray]:
    x = read_idx(_resolve(root, FILES[images]))
    y = read_idx(_resolve(root, FILES[labels]))
    if x.ndim != 3 or x.shape[1:] != (IMAGE_SIDE, IMAGE_SIDE):
        raise IdxFormatError(f"{images}: expected (N, 28, 28) images, got {x.shape}")
    if y.ndim != 1 or y.shape[0] != x.shape[0]:
        raise IdxFormatError(f"{labels}: {y.shape[0] if y.ndim == 1 else y.shape} labels for {x.shape[0]} images")
    if y.size and y.max() > 9:
        raise IdxFormatError(f"{labels}: label {int(y.max())} out of range 0..9")
    return x.astype(np.float64) / 255.0, y.astype(np.int64)


def load_mnist(
    path=None,
    classes: Sequence[int] | None = None,
    train_limit: int | None = None,
    test_limit: int | None = None,
) -> MnistSplits:
    """Load the four IDX files from ``path`` (default: ``$HPQS_DATA``).

    With ``classes`` only those digits are kept and relabelled by their
    position in ``classes``.  Limits truncate after filtering; file order is
    preserved throughout.
    """
    if path is None:
        path = os.environ.get(DATA_ENV)
        if not path:
            raise FileNotFoundError(
                f"no dataset path given and ${DATA_ENV} is unset; "
                f"run `hpqs prepare-data <dir>` and export {DATA_ENV}=<dir>"
            )
    root = Path(path)
    train_x, train_y = _load_pair(root, "train_images", "train_labels")
    test_x, test_y = _load_pair(root, "test_images", "test_labels")
    if classes is not None:
        train_x, train_y = filter_classes(train_x, train_y, classes)
        test_x, test_y = filter_classes(test_x, test_y, classes)
    return MnistSplits(train_x[:train_limit], train_y[:train_limit], test_x[:test_limit], test_y[:test_limit])


def filter_classes(x: np.ndarray, y: np.ndarray, classes: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    classes = [int(c) for c in classes]
    if len(set(classes)) != len(classes):
        raise ValueError(f"duplicate classes in {classes}")
    keep = np.isin(y, classes)
    remap = np.full(10, -1, dtype=np.int64)
    remap[classes] = np.arange(len(classes))
    return x[keep], remap[y[keep]]


def avg_pool(images: np.ndarray, out_side: int = 4) -> np.ndarray:
    """Average-pool (N, S, S) images to (N, out, out); S must be divisible by ``out``."""
    n, side, side2 = images.shape
    if side != side2 or side % out_side:
        raise ValueError(f"cannot pool {side}x{side2} images to {out_side}x{out_side}")
    k = side // out_side
    return images.reshape(n, out_side, k, out_side, k).mean(axis=(2, 4))


def qml_features(images: np.ndarray) -> np.ndarray:
    """28x28 images to 16 row-major features from 4x4 average pooling."""
    return avg_pool(images, 4).reshape(images.shape[0], 16)


def prepare_mnist_subset(out_dir, train_per_class: int = 400) -> Path:
    """Write the 5000-image MNIST subset bundled with mlxtend as IDX files.

    Per digit, the first ``train_per_class`` images (in source order) go to
    the training split and the rest to the test split.  The source is sorted
    by digit, so both splits are written in round-robin digit order: every
    prefix is class-balanced, which keeps ``train_limit`` subsets usable.
    """
    try:
        from mlxtend.data import mnist_data
    except ImportError as exc:  # pragma: no cover - depends on the environment
        raise FileNotFoundError(
            "the bundled MNIST subset needs the optional `mlxtend` package (pip install mlxtend); "
            f"alternatively set ${DATA_ENV} to a directory with the MNIST IDX files"
        ) from exc
    x, y = mnist_data()
    x = np.rint(x).astype(np.uint8).reshape(-1, IMAGE_SIDE, IMAGE_SIDE)
    y = y.astype(np.uint8)
    train_idx, test_idx = _round_robin(y, train_per_class)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_idx(out / FILES["train_images"], x[train_idx])
    write_idx(out / FILES["train_labels"], y[train_idx])
    write_idx(out / FILES["test_images"], x[test_idx])
    write_idx(out / FILES["test_labels"], y[test_idx])
    return out


def _round_robin(y: np.ndarray, train_per_class: int) -> tuple[np.ndarray, np.ndarray]:
    train, test = [], []
    for digit in range(10):
        idx = np.flatnonzero(y == digit)
        train.append(idx[:train_per_class])
        test.append(idx[train_per_class:])

    def interleave(groups):
        # order by (rank within digit, digit)
        keyed = [(rank, d, i) for d, g in enumerate(groups) for rank, i in enumerate(g)]
        return np.array([i for _, _, i in sorted(keyed)], dtype=np.int64)

    return interleave(train), interleave(test)
