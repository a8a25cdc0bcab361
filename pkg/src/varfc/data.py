"""Procedural 8-class 32x32 RGB dataset (shapes and textures)."""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .fwt import FormatError, read_fwt, write_fwt

CLASS_NAMES = ("disc", "square", "triangle", "ring", "hstripes", "vstripes", "checker", "cross")
SIZE = 32
NOISE = 0.08


@dataclass
class Dataset:
    images: np.ndarray  # (N, 3, 32, 32) float32, roughly zero-centred
    labels: np.ndarray  # (N,) int64

    def __len__(self):
        return len(self.labels)

    def subset(self, n: int) -> "Dataset":
        return Dataset(self.images[:n], self.labels[:n])


def _colors(rng):
    while True:
        fg, bg = rng.uniform(0, 1, 3), rng.uniform(0, 1, 3)
        if np.linalg.norm(fg - bg) >= 0.5:
            return fg, bg


def _mask(label: int, rng) -> np.ndarray:
    yy, xx = np.mgrid[0:SIZE, 0:SIZE].astype(np.float64)
    cx, cy = rng.uniform(11, 21, 2)
    r = rng.uniform(6, 10)
    dx, dy = xx - cx, yy - cy
    if label == 0:
        return dx * dx + dy * dy < r * r
    if label == 1:
        return np.maximum(np.abs(dx), np.abs(dy)) < 0.8 * r
    if label == 2:
        return (dy < 0.8 * r) & (np.abs(dx) < 0.6 * (dy + r))
    if label == 3:
        d = np.sqrt(dx * dx + dy * dy)
        return (d < r) & (d > 0.55 * r)
    period, phase = rng.uniform(4, 9), rng.uniform(0, 2 * np.pi)
    if label == 4:
        return np.sin(2 * np.pi * yy / period + phase) > 0
    if label == 5:
        return np.sin(2 * np.pi * xx / period + phase) > 0
    if label == 6:
        p2 = rng.uniform(0, 2 * np.pi)
        return np.sin(2 * np.pi * xx / period + phase) * np.sin(2 * np.pi * yy / period + p2) > 0
    if label == 7:
        w = r / 3.2
        return ((np.abs(dx) < w) & (np.abs(dy) < r)) | ((np.abs(dy) < w) & (np.abs(dx) < r))
    raise ValueError(f"unknown class {label}")


def generate(n: int, seed: int) -> Dataset:
    """``n`` images with balanced, shuffled labels; fully determined by ``seed``."""
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % len(CLASS_NAMES))
    images = np.empty((n, 3, SIZE, SIZE), np.float32)
    for i, lab in enumerate(labels):
        m = _mask(int(lab), rng)
        fg, bg = _colors(rng)
        img = np.where(m[None], fg[:, None, None], bg[:, None, None])
        img = img + NOISE * rng.standard_normal(img.shape)
        images[i] = img - 0.5
    return Dataset(images, labels.astype(np.int64))


def make_splits(seed: int = 0, n_train: int = 8000, n_test: int = 2000) -> tuple[Dataset, Dataset]:
    s_train, s_test = np.random.SeedSequence(seed).spawn(2)
    return (generate(n_train, int(s_train.generate_state(1)[0])),
            generate(n_test, int(s_test.generate_state(1)[0])))


def save_dataset(path, ds: Dataset) -> None:
    """FWT1 block holding ``images``, then u32 LE count and u16 LE labels."""
    with open(path, "wb") as fh:
        write_fwt(fh, {"images": ds.images})
        fh.write(struct.pack("<I", len(ds.labels)))
        fh.write(ds.labels.astype("<u2").tobytes())


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        images = read_fwt(fh)["images"]
        head = fh.read(4)
        if len(head) != 4:
            raise FormatError("missing label block")
        (n,) = struct.unpack("<I", head)
        raw = fh.read(2 * n)
        if len(raw) != 2 * n or n != len(images):
            raise FormatError("label block does not match image count")
        labels = np.frombuffer(raw, "<u2").astype(np.int64)
    return Dataset(images, labels)
