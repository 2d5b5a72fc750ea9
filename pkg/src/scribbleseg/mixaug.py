"""Saliency-guided block mixup with random rotated-square occlusion.

The image is cut into ``grid x grid`` blocks. A discrete per-block mixing
weight ``beta`` is chosen to keep the most salient content of both sources
under smoothness and prior terms, then each source's blocks are permuted
(optimal assignment) so salient blocks land where that source is kept.
Block coordinates are measured in block units and block ``b`` sits at row
``b // grid``, column ``b % grid``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import itertools
import math

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import (BACKGROUND, Image, LabelMap, ScribbleSegError, ShapeMismatch, as_image,
                   label_weights, make_rng)


class GridMismatch(ScribbleSegError):
    pass


class BadCostMatrix(ScribbleSegError):
    pass


class OcclusionTooLarge(ScribbleSegError):
    pass


@dataclass(frozen=True)
class MixConfig:
    grid: int = 4
    beta_levels: tuple = (0.0, 0.5, 1.0)
    gamma_label: float = 0.2  # smoothness of beta between adjacent blocks
    gamma_image: float = 0.2  # intensity jump across blocks with different beta
    gamma_prior: float = 0.1  # weight of the binomial prior on beta levels
    gamma_transport: float = 0.05  # block move cost
    prior: float = 0.5  # binomial success probability over the level index
    icm_restarts: int = 4
    saliency_mode: str = "image"

    def __post_init__(self):
        levels = tuple(sorted(float(b) for b in self.beta_levels))
        object.__setattr__(self, "beta_levels", levels)
        if self.grid < 1:
            raise GridMismatch("grid must be >= 1")
        if levels[0] != 0.0 or levels[-1] != 1.0 or any(b < 0 or b > 1 for b in levels):
            raise ScribbleSegError("beta levels must lie in [0, 1] and include 0 and 1")
        if len(set(levels)) != len(levels):
            raise ScribbleSegError("beta levels must be distinct")
        if min(self.gamma_label, self.gamma_image, self.gamma_prior, self.gamma_transport) < 0:
            raise ScribbleSegError("gamma weights must be non-negative")
        if not 0.0 < self.prior < 1.0:
            raise ScribbleSegError("binomial prior parameter must lie in (0, 1)")
        if self.saliency_mode not in ("image", "loss"):
            raise ScribbleSegError("saliency_mode must be 'image' or 'loss'")


@dataclass(frozen=True)
class Occlusion:
    center: tuple  # (row, col), continuous pixel coordinates
    side: int
    angle: float  # radians


@dataclass(frozen=True)
class MixPlan:
    beta: np.ndarray  # (grid, grid) values from beta_levels
    perm1: np.ndarray  # perm[b] = source block placed at block b
    perm2: np.ndarray
    occlusion: Occlusion | None = None

    def __post_init__(self):
        n = self.beta.size
        for perm in (self.perm1, self.perm2):
            if sorted(np.asarray(perm).tolist()) != list(range(n)):
                raise ScribbleSegError("transport must be a permutation of the blocks")

    @classmethod
    def identity(cls, grid: int, beta: float = 0.0, occlusion=None) -> "MixPlan":
        n = grid * grid
        return cls(np.full((grid, grid), float(beta)), np.arange(n), np.arange(n), occlusion)

    @property
    def grid(self) -> int:
        return self.beta.shape[0]

    def to_dict(self) -> dict:
        occ = None
        if self.occlusion is not None:
            occ = {"center": list(self.occlusion.center), "side": self.occlusion.side,
                   "angle": self.occlusion.angle}
        return {"beta": self.beta.tolist(), "perm1": self.perm1.tolist(),
                "perm2": self.perm2.tolist(), "occlusion": occ}


# --------------------------------------------------------------------------- saliency

def image_saliency(image) -> np.ndarray:
    """Sum over channels of the L2 norm of the central-difference gradient.

    Borders use edge replication, so a one-sided step at the border gives 0.
    """
    x = as_image(image)
    p = np.pad(x, ((1, 1), (1, 1), (0, 0)), mode="edge")
    gy = (p[2:, 1:-1] - p[:-2, 1:-1]) / 2.0
    gx = (p[1:-1, 2:] - p[1:-1, :-2]) / 2.0
    return np.sqrt(gx ** 2 + gy ** 2).sum(axis=-1)


def loss_saliency(image, model, targets) -> np.ndarray:
    """Per-pixel L2 norm (over channels) of d(partial CE)/d(input)."""
    from .losses import pce_loss
    from .model import featurize, input_gradient, logits_from_features
    from .core import softmax

    probs = softmax(logits_from_features(model, featurize(image)))
    grad_logits = pce_loss(probs, targets).gradient
    g = input_gradient(model, image, grad_logits)
    return np.sqrt(np.sum(g ** 2, axis=-1))


def saliency(image, mode: str = "image", model=None, targets=None) -> np.ndarray:
    if mode == "image":
        return image_saliency(image)
    if mode == "loss":
        if model is None or targets is None:
            raise ScribbleSegError("loss saliency needs a model and scribble targets")
        return loss_saliency(image, model, targets)
    raise ScribbleSegError(f"unknown saliency mode {mode!r}")


def _blocks(a: np.ndarray, grid: int) -> np.ndarray:
    """``(H, W, ...)`` -> ``(grid*grid, bh, bw, ...)`` in raster block order."""
    h, w = a.shape[:2]
    if h % grid or w % grid:
        raise GridMismatch(f"grid {grid} does not divide image {h}x{w}")
    bh, bw = h // grid, w // grid
    rest = a.shape[2:]
    b = a.reshape((grid, bh, grid, bw) + rest)
    b = np.moveaxis(b, 2, 1)
    return b.reshape((grid * grid, bh, bw) + rest)


def _unblocks(b: np.ndarray, grid: int) -> np.ndarray:
    n, bh, bw = b.shape[:3]
    rest = b.shape[3:]
    a = b.reshape((grid, grid, bh, bw) + rest)
    a = np.moveaxis(a, 2, 1)
    return a.reshape((grid * bh, grid * bw) + rest)


def block_saliency(s: np.ndarray, grid: int) -> np.ndarray:
    """Mean saliency per block, shape ``(grid, grid)``."""
    s = np.asarray(s, dtype=np.float64)
    return _blocks(s, grid).mean(axis=(1, 2)).reshape(grid, grid)


def block_means(image, grid: int) -> np.ndarray:
    """Mean intensity vector per block, shape ``(grid, grid, C)``."""
    x = as_image(image)
    return _blocks(x, grid).mean(axis=(1, 2)).reshape(grid, grid, -1)


# --------------------------------------------------------------------------- beta

def _adjacent_pairs(grid: int) -> list[tuple[int, int]]:
    pairs = []
    for r in range(grid):
        for c in range(grid):
            i = r * grid + c
            if c + 1 < grid:
                pairs.append((i, i + 1))
            if r + 1 < grid:
                pairs.append((i, i + grid))
    return pairs


def level_log_prior(cfg: MixConfig) -> np.ndarray:
    """Binomial log-pmf over the level index ``0..L-1``."""
    n = len(cfg.beta_levels) - 1
    t = np.arange(n + 1)
    return np.array([math.log(math.comb(n, int(k))) for k in t]) \
        + t * math.log(cfg.prior) + (n - t) * math.log1p(-cfg.prior)


class _BetaProblem:
    """Unary/pairwise tables of the beta objective over level indices."""

    def __init__(self, s1, s2, cfg: MixConfig, means1=None, means2=None):
        s1 = np.asarray(s1, dtype=np.float64)
        s2 = np.asarray(s2, dtype=np.float64)
        if s1.shape != s2.shape or s1.ndim != 2 or s1.shape[0] != s1.shape[1]:
            raise GridMismatch("block saliencies must share one square grid")
        self.grid = s1.shape[0]
        self.n = s1.size
        levels = np.array(cfg.beta_levels)
        self.levels = levels
        L = len(levels)
        flat1, flat2 = s1.ravel(), s2.ravel()
        # unary[i, a]: saliency term plus prior term for block i at level a
        self.unary = -((1 - levels)[None, :] * flat1[:, None] + levels[None, :] * flat2[:, None]) \
            - cfg.gamma_prior * level_log_prior(cfg)[None, :]
        self.pairs = _adjacent_pairs(self.grid)
        label = cfg.gamma_label * (levels[:, None] - levels[None, :]) ** 2
        self.pairwise = []
        if means1 is not None and means2 is not None and cfg.gamma_image > 0:
            m1 = np.asarray(means1, dtype=np.float64).reshape(self.n, -1)
            m2 = np.asarray(means2, dtype=np.float64).reshape(self.n, -1)
            # mixed block mean at each level: (n, L, C)
            mixed = (1 - levels)[None, :, None] * m1[:, None, :] + levels[None, :, None] * m2[:, None, :]
            differ = ~np.eye(L, dtype=bool)
            for i, j in self.pairs:
                d = np.linalg.norm(mixed[i][:, None, :] - mixed[j][None, :, :], axis=-1)
                self.pairwise.append(label + cfg.gamma_image * d * differ)
        else:
            self.pairwise = [label] * len(self.pairs)
        self.neighbours = [[] for _ in range(self.n)]
        for e, (i, j) in enumerate(self.pairs):
            self.neighbours[i].append((j, e, True))
            self.neighbours[j].append((i, e, False))

    def objective(self, idx: np.ndarray) -> float:
        idx = np.asarray(idx)
        val = float(self.unary[np.arange(self.n), idx].sum())
        for (i, j), table in zip(self.pairs, self.pairwise):
            val += float(table[idx[i], idx[j]])
        return val

    def objective_batch(self, idx: np.ndarray) -> np.ndarray:
        """Objective for many configurations ``(K, n)`` at once."""
        val = self.unary[np.arange(self.n)[None, :], idx].sum(axis=1)
        for (i, j), table in zip(self.pairs, self.pairwise):
            val = val + table[idx[:, i], idx[:, j]]
        return val

    def local_costs(self, idx: np.ndarray, i: int) -> np.ndarray:
        cost = self.unary[i].copy()
        for j, e, first in self.neighbours[i]:
            table = self.pairwise[e]
            cost += table[:, idx[j]] if first else table[idx[j], :]
        return cost

    def icm(self, start: np.ndarray, max_sweeps: int = 100) -> np.ndarray:
        # plain-python tables: with a handful of levels numpy call overhead dominates
        if not hasattr(self, "_lists"):
            self._lists = (self.unary.tolist(), [t.tolist() for t in self.pairwise],
                           [t.T.tolist() for t in self.pairwise])
        unary, rows, cols = self._lists
        idx = [int(v) for v in start]
        L = len(self.levels)
        for _ in range(max_sweeps):
            changed = False
            for i in range(self.n):
                cost = list(unary[i])
                for j, e, first in self.neighbours[i]:
                    col = cols[e][idx[j]] if first else rows[e][idx[j]]
                    for a in range(L):
                        cost[a] += col[a]
                best = min(range(L), key=cost.__getitem__)
                if cost[best] < cost[idx[i]] - 1e-15:
                    idx[i] = best
                    changed = True
            if not changed:
                break
        return np.array(idx, dtype=np.int64)


def beta_objective(beta, s1, s2, cfg: MixConfig, means1=None, means2=None) -> float:
    """Value of the beta objective for a block mask drawn from ``cfg.beta_levels``."""
    prob = _BetaProblem(s1, s2, cfg, means1, means2)
    b = np.asarray(beta, dtype=np.float64).ravel()
    idx = np.array([int(np.argmin(np.abs(prob.levels - v))) for v in b])
    if not np.allclose(prob.levels[idx], b):
        raise ScribbleSegError("beta entries must be taken from beta_levels")
    return prob.objective(idx)


def optimize_beta(s1, s2, cfg: MixConfig, means1=None, means2=None, method: str = "icm",
                  rng: np.random.Generator | None = None) -> np.ndarray:
    """Choose a per-block mixing level minimizing the beta objective.

    The objective is ``-sum_i[(1-b_i) s1_i + b_i s2_i]
    + gamma_label * sum_adj (b_i - b_j)^2
    + gamma_image * sum_adj [b_i != b_j] |mu_i(b_i) - mu_j(b_j)|
    - gamma_prior * sum_i log p(b_i)``, where ``mu_i(b)`` is the mixed mean
    intensity of block ``i`` and ``p`` is binomial over the level index.
    ``method="icm"`` runs iterated conditional modes from the unary optimum,
    each constant mask and ``cfg.icm_restarts`` random masks, keeping the
    best; ``method="exact"`` enumerates every mask (grids up to 3x3).
    """
    prob = _BetaProblem(s1, s2, cfg, means1, means2)
    L = len(prob.levels)
    if method == "exact":
        if prob.n > 9:
            raise ScribbleSegError("exhaustive beta search is limited to 9 blocks")
        configs = np.array(list(itertools.product(range(L), repeat=prob.n)), dtype=np.int64)
        vals = prob.objective_batch(configs)
        best = configs[int(np.argmin(vals))]
    elif method == "icm":
        rng = make_rng(0) if rng is None else rng
        starts = [np.argmin(prob.unary, axis=1)]
        starts += [np.full(prob.n, a, dtype=np.int64) for a in range(L)]
        starts += [rng.integers(0, L, size=prob.n) for _ in range(cfg.icm_restarts)]
        best, best_val = None, np.inf
        for s in starts:
            idx = prob.icm(np.asarray(s, dtype=np.int64))
            val = prob.objective(idx)
            if val < best_val - 1e-15:
                best, best_val = idx, val
    else:
        raise ScribbleSegError(f"unknown beta solver {method!r}")
    return prob.levels[best].reshape(prob.grid, prob.grid)


# --------------------------------------------------------------------------- transport

def hungarian(cost) -> np.ndarray:
    """Exact minimum-cost perfect assignment, ``perm[row] = column``."""
    a = np.asarray(cost, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
        raise BadCostMatrix(f"cost matrix must be square and non-empty, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise BadCostMatrix("cost matrix must be finite")
    rows, cols = linear_sum_assignment(a)
    perm = np.empty(a.shape[0], dtype=np.int64)
    perm[rows] = cols
    return perm


def assignment_cost(cost, perm) -> float:
    a = np.asarray(cost, dtype=np.float64)
    return float(a[np.arange(len(perm)), perm].sum())


def block_distance(grid: int) -> np.ndarray:
    """Squared Euclidean distance between block centres, in block units."""
    rc = np.array([(b // grid, b % grid) for b in range(grid * grid)], dtype=np.float64)
    d = rc[:, None, :] - rc[None, :, :]
    return (d ** 2).sum(axis=-1)


def optimize_transport(s, beta, cfg: MixConfig, which: int) -> np.ndarray:
    """Block permutation for one source: ``perm[b]`` is the source block placed at ``b``.

    Moving source block ``i`` to position ``j`` gains ``s_i`` weighted by how
    much of that source is kept at ``j`` (``1 - beta_j`` for source 1,
    ``beta_j`` for source 2) and pays ``gamma_transport * C_ij``.
    """
    s = np.asarray(s, dtype=np.float64).ravel()
    b = np.asarray(beta, dtype=np.float64).ravel()
    if s.size != b.size:
        raise GridMismatch("saliency and beta grids differ")
    if which not in (1, 2):
        raise ScribbleSegError("which must be 1 or 2")
    keep = 1.0 - b if which == 1 else b
    grid = int(round(math.sqrt(s.size)))
    cost = cfg.gamma_transport * block_distance(grid) - s[:, None] * keep[None, :]
    dest_of_source = hungarian(cost)
    perm = np.empty_like(dest_of_source)
    perm[dest_of_source] = np.arange(s.size)
    return perm


# --------------------------------------------------------------------------- mixing

def transport(a1: np.ndarray, a2: np.ndarray, plan: MixPlan) -> np.ndarray:
    """Block-wise ``(1 - beta) * perm1(a1) + beta * perm2(a2)`` for ``(H, W, C)`` arrays."""
    a1 = np.asarray(a1, dtype=np.float64)
    a2 = np.asarray(a2, dtype=np.float64)
    if a1.shape != a2.shape:
        raise ShapeMismatch(f"cannot mix arrays of shape {a1.shape} and {a2.shape}")
    g = plan.grid
    b1 = _blocks(a1, g)[plan.perm1]
    b2 = _blocks(a2, g)[plan.perm2]
    beta = plan.beta.ravel().reshape((-1,) + (1,) * (b1.ndim - 1))
    return _unblocks((1.0 - beta) * b1 + beta * b2, g)


def _as_weights(y, m):
    if isinstance(y, LabelMap):
        if m is None:
            raise ScribbleSegError("class count m is required for hard label maps")
        return label_weights(y, m)
    return np.asarray(y, dtype=np.float64)


def apply_mix(x1, y1, x2, y2, plan: MixPlan, m: int | None = None):
    """Mix two image/label pairs with one plan.

    Labels become per-class soft weights: a labeled pixel contributes
    ``1 - beta`` (source 1) or ``beta`` (source 2) to its class, unlabeled
    pixels contribute nothing. Returns ``(Image, weights)``.
    """
    x1, x2 = as_image(x1), as_image(x2)
    w1, w2 = _as_weights(y1, m), _as_weights(y2, m)
    if x1.shape != x2.shape or w1.shape != w2.shape or x1.shape[:2] != w1.shape[:2]:
        raise ShapeMismatch("images and labels must be congruent")
    return Image(transport(x1, x2, plan)), transport(w1, w2, plan)


def occlusion_mask(shape, center, side: float, angle: float) -> np.ndarray:
    """Rasterize a rotated square: pixel centres with ``-s/2 <= u, v < s/2``."""
    h, w = shape
    rr, cc = np.mgrid[0:h, 0:w].astype(np.float64)
    dr = rr - center[0]
    dc = cc - center[1]
    ca, sa = math.cos(angle), math.sin(angle)
    u = dc * ca + dr * sa
    v = -dc * sa + dr * ca
    half = side / 2.0
    return (u >= -half) & (u < half) & (v >= -half) & (v < half)


def default_occlusion_side(image_side: int) -> int:
    """Keep the 32-pixel square on 192-pixel crops ratio at any image size."""
    return max(1, int(round(32.0 / 192.0 * image_side)))


def sample_occlusion(shape, side: int, rng: np.random.Generator) -> Occlusion:
    h, w = shape
    if side < 1 or side > min(h, w):
        raise OcclusionTooLarge(f"occlusion side {side} does not fit a {h}x{w} image")
    center = (float(rng.uniform(0, h - 1)), float(rng.uniform(0, w - 1)))
    return Occlusion(center, int(side), float(rng.uniform(0.0, math.pi / 2)))


def apply_occlusion(x, y, occ: Occlusion):
    """Zero the image inside the square and relabel it as hard background."""
    x = as_image(x)
    y = np.asarray(y, dtype=np.float64)
    inside = occlusion_mask(x.shape[:2], occ.center, occ.side, occ.angle)
    xo = x.copy()
    xo[inside] = 0.0
    yo = y.copy()
    yo[inside] = 0.0
    yo[inside, BACKGROUND] = 1.0
    return Image(xo), yo, inside


def occlude(x, y, side: int, rng: np.random.Generator, center=None, angle=None):
    """Random rotated-square occlusion; ``center``/``angle`` override the draw.

    Returns ``(image, weights, Occlusion)``.
    """
    x = as_image(x)
    h, w = x.shape[:2]
    if side < 1 or side > min(h, w):
        raise OcclusionTooLarge(f"occlusion side {side} does not fit a {h}x{w} image")
    occ = sample_occlusion((h, w), side, rng)
    if center is not None or angle is not None:
        occ = Occlusion(tuple(center) if center is not None else occ.center, int(side),
                        float(angle) if angle is not None else occ.angle)
    xo, yo, _ = apply_occlusion(x, y, occ)
    return xo, yo, occ


def _normalized(s: np.ndarray) -> np.ndarray:
    mean = float(s.mean())
    return s / mean if mean > 0 else s


def plan_mix(x1, x2, cfg: MixConfig, rng: np.random.Generator, occlusion_side: int | None = None,
             s1=None, s2=None) -> MixPlan:
    """Full recipe for one ordered pair: beta, both transports and an occlusion.

    ``s1``/``s2`` are pixel saliency maps; image-gradient saliency is used
    when they are omitted. Block saliencies are scaled to unit mean so the
    gamma weights are independent of the intensity range. ``occlusion_side``
    of 0 disables occlusion.
    """
    x1, x2 = as_image(x1), as_image(x2)
    if x1.shape != x2.shape:
        raise ShapeMismatch("mix sources must share a shape")
    g = cfg.grid
    bs1 = _normalized(block_saliency(image_saliency(x1) if s1 is None else s1, g))
    bs2 = _normalized(block_saliency(image_saliency(x2) if s2 is None else s2, g))
    beta = optimize_beta(bs1, bs2, cfg, block_means(x1, g), block_means(x2, g), "icm", rng)
    perm1 = optimize_transport(bs1, beta, cfg, 1)
    perm2 = optimize_transport(bs2, beta, cfg, 2)
    side = default_occlusion_side(min(x1.shape[:2])) if occlusion_side is None else occlusion_side
    occ = sample_occlusion(x1.shape[:2], side, rng) if side else None
    return MixPlan(beta, perm1, perm2, occ)
