"""Local Gaussian spatial energy and top-pi ranking of unlabeled pixels."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ScribbleSegError, as_image, as_probs, check_same_shape


@dataclass(frozen=True)
class EnergyConfig:
    sigma_p: float = 6.0  # position bandwidth, pixels
    sigma_o: float = 0.1  # intensity bandwidth
    radius: int = 5  # Chebyshev window radius
    include_self: bool = False

    def __post_init__(self):
        if self.sigma_p <= 0 or self.sigma_o <= 0:
            raise ScribbleSegError("kernel bandwidths must be positive")
        if self.radius < 1:
            raise ScribbleSegError("radius must be >= 1")


@dataclass(frozen=True)
class ClassSplit:
    """Per-class positive/negative masks over the unlabeled pixels, ``(m, H, W)``."""

    positive: np.ndarray
    negative: np.ndarray


def gaussian_kernel(i, j, image, cfg: EnergyConfig) -> float:
    """Affinity between pixels ``i`` and ``j`` given as ``(row, col)``."""
    x = as_image(image)
    pi, pj = np.asarray(i, dtype=np.float64), np.asarray(j, dtype=np.float64)
    oi, oj = x[tuple(i)], x[tuple(j)]
    dp = float(np.sum((pi - pj) ** 2))
    do = float(np.sum((oi - oj) ** 2))
    return float(np.exp(-dp / (2 * cfg.sigma_p ** 2) - do / (2 * cfg.sigma_o ** 2)))


def window_offsets(radius: int, include_self: bool = False) -> list[tuple[int, int]]:
    return [(dr, dc) for dr in range(-radius, radius + 1) for dc in range(-radius, radius + 1)
            if include_self or (dr, dc) != (0, 0)]


class KernelCache:
    """Precomputed window affinities of one image, reusable across predictions.

    ``weights[s]`` holds ``G(i, i + offset_s)`` for every pixel ``i`` and is
    zero where the neighbour falls outside the image.
    """

    def __init__(self, image, cfg: EnergyConfig):
        x = as_image(image)
        self.shape = x.shape[:2]
        self.cfg = cfg
        h, w = self.shape
        self.offsets = window_offsets(cfg.radius, cfg.include_self)
        self.weights = np.zeros((len(self.offsets), h, w))
        for s, (dr, dc) in enumerate(self.offsets):
            r0, r1 = max(0, -dr), min(h, h - dr)
            c0, c1 = max(0, -dc), min(w, w - dc)
            if r0 >= r1 or c0 >= c1:
                continue
            a = x[r0:r1, c0:c1]
            b = x[r0 + dr:r1 + dr, c0 + dc:c1 + dc]
            do = np.sum((a - b) ** 2, axis=-1)
            dp = dr * dr + dc * dc
            self.weights[s, r0:r1, c0:c1] = np.exp(-dp / (2 * cfg.sigma_p ** 2)
                                                   - do / (2 * cfg.sigma_o ** 2))

    def energy(self, probs: np.ndarray) -> np.ndarray:
        """Energy for every class at once, ``(H, W, m)``."""
        p = as_probs(probs)
        h, w = self.shape
        r = self.cfg.radius
        # class-first zero-padded copy: out-of-image neighbours contribute 0
        pp = np.ascontiguousarray(np.pad(p, ((r, r), (r, r), (0, 0))).transpose(2, 0, 1))
        acc = np.zeros((p.shape[-1], h, w))
        tmp = np.empty_like(acc)
        for s, (dr, dc) in enumerate(self.offsets):
            np.multiply(self.weights[s], pp[:, r + dr:r + dr + h, r + dc:r + dc + w], out=tmp)
            acc += tmp
        return acc.transpose(1, 2, 0) * p


def spatial_energy_all(pred, image, cfg: EnergyConfig) -> np.ndarray:
    """``Phi[i, k] = sum_{j in window(i), j != i} G_ij p_ik p_jk`` for all classes.

    One pass per window offset, so the cost is O(N r^2) per class.
    """
    p = as_probs(pred)
    check_same_shape(p, as_image(image))
    return KernelCache(image, cfg).energy(p)


def spatial_energy(pred, image, k: int, cfg: EnergyConfig) -> np.ndarray:
    return spatial_energy_all(pred, image, cfg)[..., k]


def round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def rank_select(energy, unlabeled, pi_k: float) -> tuple[np.ndarray, np.ndarray]:
    """Top ``round(pi_k * n_u)`` unlabeled pixels by energy are positive.

    Ties go to the earlier raster index. Returns boolean ``(positive, negative)``
    masks that partition the unlabeled pixels.
    """
    if not 0.0 <= pi_k <= 1.0:
        raise ScribbleSegError(f"pi_k must lie in [0, 1], got {pi_k}")
    e = np.asarray(energy, dtype=np.float64)
    unl = np.asarray(unlabeled, dtype=bool)
    idx = np.flatnonzero(unl.ravel())
    n_pos = round_half_up(pi_k * idx.size)
    order = np.lexsort((idx, -e.ravel()[idx]))
    pos = np.zeros(e.size, dtype=bool)
    pos[idx[order[:n_pos]]] = True
    pos = pos.reshape(e.shape)
    return pos, unl & ~pos


def class_splits(energy_all: np.ndarray, unlabeled, pi, classes=None) -> ClassSplit:
    """Splits for ``classes`` (default: all); other classes get empty masks."""
    e = np.asarray(energy_all)
    m = e.shape[-1]
    pos = np.zeros((m,) + e.shape[:2], dtype=bool)
    neg = np.zeros_like(pos)
    for k in range(m) if classes is None else classes:
        pos[k], neg[k] = rank_select(e[..., k], unlabeled, float(pi[k]))
    return ClassSplit(pos, neg)
