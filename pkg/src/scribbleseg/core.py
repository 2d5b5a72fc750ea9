"""Shared value types, seeded randomness and simplex helpers.

Arrays are float64 everywhere. Images are ``(H, W, C)``, label maps ``(H, W)``
uint8 with :data:`UNLABELED` as the unlabeled sentinel, and probability maps
``(H, W, m)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

UNLABELED = 255
BACKGROUND = 0
SIMPLEX_ATOL = 1e-9


class ScribbleSegError(ValueError):
    """Base class for all contract violations raised by this package."""


class NonFiniteLogits(ScribbleSegError):
    pass


class ClassOutOfRange(ScribbleSegError):
    pass


class SimplexViolation(ScribbleSegError):
    pass


class ShapeMismatch(ScribbleSegError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Image:
    """Per-pixel intensities, shape ``(H, W, C)``."""

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim == 2:
            d = d[:, :, None]
        if d.ndim != 3 or d.shape[2] < 1:
            raise ShapeMismatch(f"image must be (H, W, C), got {d.shape}")
        if not np.all(np.isfinite(d)):
            raise ScribbleSegError("image contains non-finite values")
        object.__setattr__(self, "data", _frozen(d))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[:2]


@dataclass(frozen=True, eq=False)
class LabelMap:
    """Class index per pixel; ``UNLABELED`` marks pixels without a label."""

    labels: np.ndarray

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim != 2:
            raise ShapeMismatch(f"label map must be 2-D, got {lab.shape}")
        if lab.size and (lab.min() < 0 or lab.max() > UNLABELED):
            raise ClassOutOfRange("labels must lie in [0, 255]")
        object.__setattr__(self, "labels", _frozen(lab.astype(np.uint8)))

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    @property
    def labeled(self) -> np.ndarray:
        return self.labels != UNLABELED

    def mask(self, k: int) -> np.ndarray:
        return self.labels == k

    def check_classes(self, m: int) -> None:
        lab = self.labels[self.labeled]
        if lab.size and int(lab.max()) >= m:
            raise ClassOutOfRange(f"label {int(lab.max())} >= m={m}")


@dataclass(frozen=True, eq=False)
class ProbMap:
    """Per-pixel class probabilities, shape ``(H, W, m)``."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 3:
            raise ShapeMismatch(f"prob map must be (H, W, m), got {p.shape}")
        if not np.all(np.isfinite(p)) or p.min(initial=0.0) < 0.0 or p.max(initial=0.0) > 1.0:
            raise SimplexViolation("probabilities must be finite and in [0, 1]")
        if p.size and np.max(np.abs(p.sum(axis=-1) - 1.0)) > SIMPLEX_ATOL:
            raise SimplexViolation("pixel class vectors must sum to 1")
        object.__setattr__(self, "probs", _frozen(p))

    @property
    def m(self) -> int:
        return self.probs.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return self.probs.shape[:2]

    def argmax(self) -> LabelMap:
        return LabelMap(np.argmax(self.probs, axis=-1))


@dataclass(frozen=True)
class ClassSet:
    """Class count plus the classes expected to form one connected region."""

    m: int
    connected_classes: frozenset = frozenset()

    def __post_init__(self):
        psi = frozenset(int(k) for k in self.connected_classes)
        if self.m < 2:
            raise ScribbleSegError("need at least two classes")
        if BACKGROUND in psi or any(k < 0 or k >= self.m for k in psi):
            raise ClassOutOfRange(f"connected classes {sorted(psi)} invalid for m={self.m}")
        object.__setattr__(self, "connected_classes", psi)


def make_rng(seed: int) -> np.random.Generator:
    """Deterministic generator: numpy PCG64 seeded with a 64-bit integer.

    PCG64 output is specified bit-for-bit, so a seed replays the same stream
    on every platform.
    """
    return np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))


def child_seeds(rng: np.random.Generator, n: int) -> list[int]:
    return [int(s) for s in rng.integers(0, 2**63 - 1, size=n, dtype=np.int64)]


def softmax(logits, axis: int = -1) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise NonFiniteLogits("logits must be finite")
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(probs: np.ndarray, grad_probs: np.ndarray) -> np.ndarray:
    """Pull a gradient w.r.t. probabilities back to the logits (last axis)."""
    inner = np.sum(grad_probs * probs, axis=-1, keepdims=True)
    return probs * (grad_probs - inner)


def one_hot(labels: LabelMap, m: int) -> ProbMap:
    """Unit vectors at labeled pixels, uniform ``1/m`` at unlabeled ones."""
    labels.check_classes(m)
    lab = labels.labels
    out = np.full(lab.shape + (m,), 1.0 / m)
    sel = labels.labeled
    out[sel] = 0.0
    rows, cols = np.nonzero(sel)
    out[rows, cols, lab[sel].astype(np.intp)] = 1.0
    return ProbMap(out)


def label_weights(labels: LabelMap, m: int) -> np.ndarray:
    """Hard supervision weights ``(H, W, m)``; unlabeled rows are all zero."""
    labels.check_classes(m)
    lab = labels.labels
    w = np.zeros(lab.shape + (m,))
    sel = labels.labeled
    rows, cols = np.nonzero(sel)
    w[rows, cols, lab[sel].astype(np.intp)] = 1.0
    return w


def as_labels(x) -> np.ndarray:
    return x.labels if isinstance(x, LabelMap) else np.asarray(x)


def as_probs(x) -> np.ndarray:
    return x.probs if isinstance(x, ProbMap) else np.asarray(x, dtype=np.float64)


def as_image(x) -> np.ndarray:
    if isinstance(x, Image):
        return x.data
    d = np.asarray(x, dtype=np.float64)
    return d[:, :, None] if d.ndim == 2 else d


def classes_present(labels: LabelMap) -> list[int]:
    vals = np.unique(labels.labels)
    return [int(v) for v in vals if v != UNLABELED]


def check_same_shape(*arrays: Iterable) -> None:
    shapes = {tuple(np.shape(a))[:2] for a in arrays}
    if len(shapes) > 1:
        raise ShapeMismatch(f"spatial shapes differ: {sorted(shapes)}")
