"""Dice score and Hausdorff distance per class, in pixel units."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .core import ShapeMismatch, as_labels

HD_INFINITY = float("inf")


def _masks(pred, gt, k):
    p, g = as_labels(pred), as_labels(gt)
    if p.shape != g.shape:
        raise ShapeMismatch(f"prediction {p.shape} and ground truth {g.shape} differ")
    return p == k, g == k


def dice(pred, gt, k: int) -> float:
    """``2|P & G| / (|P| + |G|)``; 1 when both masks are empty."""
    p, g = _masks(pred, gt, k)
    denom = int(p.sum()) + int(g.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int(np.count_nonzero(p & g)) / denom


def boundary(mask: np.ndarray) -> np.ndarray:
    """Mask pixels with a 4-neighbour outside the mask; off-image counts as outside."""
    m = np.asarray(mask, dtype=bool)
    pad = np.pad(m, 1)
    inner = pad[:-2, 1:-1] & pad[2:, 1:-1] & pad[1:-1, :-2] & pad[1:-1, 2:]
    return m & ~inner


def _directed(a: np.ndarray, b: np.ndarray) -> float:
    d, _ = cKDTree(b).query(a, k=1)
    return float(np.max(d))


def hausdorff(pred, gt, k: int) -> float:
    """Symmetric Hausdorff distance between the class-``k`` boundaries.

    0 when both masks are empty, ``inf`` when exactly one is.
    """
    p, g = _masks(pred, gt, k)
    bp = np.argwhere(boundary(p)).astype(np.float64)
    bg = np.argwhere(boundary(g)).astype(np.float64)
    if len(bp) == 0 and len(bg) == 0:
        return 0.0
    if len(bp) == 0 or len(bg) == 0:
        return HD_INFINITY
    return max(_directed(bp, bg), _directed(bg, bp))


@dataclass
class MetricReport:
    dice: dict
    hd: dict

    @property
    def mean_dice(self) -> float:
        return float(np.mean(list(self.dice.values()))) if self.dice else float("nan")

    @property
    def mean_hd(self) -> float:
        return float(np.mean(list(self.hd.values()))) if self.hd else float("nan")

    def to_dict(self) -> dict:
        def enc(v):
            return "inf" if v == HD_INFINITY else float(v)
        return {"dice": {str(k): float(v) for k, v in self.dice.items()},
                "hd": {str(k): enc(v) for k, v in self.hd.items()},
                "mean_dice": self.mean_dice, "mean_hd": enc(self.mean_hd)}


def evaluate(preds, gts, m: int) -> MetricReport:
    """Per foreground class, averaged over a list of prediction/ground-truth pairs."""
    preds = list(preds)
    gts = list(gts)
    d = {k: float(np.mean([dice(p, g, k) for p, g in zip(preds, gts)])) for k in range(1, m)}
    h = {k: float(np.mean([hausdorff(p, g, k) for p, g in zip(preds, gts)])) for k in range(1, m)}
    return MetricReport(d, h)
