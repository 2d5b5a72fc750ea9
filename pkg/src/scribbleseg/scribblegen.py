"""Synthetic scribble generation from ground-truth label maps.

Four forms are supported: ``points`` (uniform sampling inside each class),
``random_walk`` (lattice walk with step length ``l``), ``dir_random_walk``
(momentum walk) and ``skeleton`` (thinned class masks). Every generated
pixel carries the ground-truth class of its location.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import warnings

import numpy as np

from .core import UNLABELED, LabelMap, ScribbleSegError, classes_present
from .morphology import connected_components, skeletonize

FORMS = ("points", "random_walk", "dir_random_walk", "skeleton")

# lattice directions, index d <-> angle d * 45 degrees (row axis points down)
DIRECTIONS = np.array(
    [(0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1)], dtype=np.int64
)
# nearest-angle fallback order for the momentum walk: +-45, +-90, +-135, 180
_ROTATIONS = ((1, -1), (2, -2), (3, -3), (4,))


class BudgetExceedsMask(ScribbleSegError):
    pass


class InvalidBudget(ScribbleSegError):
    pass


class InconsistentScribble(ScribbleSegError):
    pass


class EmptyClassMask(ScribbleSegError):
    pass


@dataclass(frozen=True)
class ScribbleBudget:
    """Per-class labeled-pixel targets, optionally split over several draws."""

    pixels: dict
    draws: dict | None = None

    def __post_init__(self):
        for k, n in self.pixels.items():
            if int(n) < 1:
                raise InvalidBudget(f"class {k}: pixel budget must be >= 1, got {n}")
        for k, d in (self.draws or {}).items():
            if int(d) < 1:
                raise InvalidBudget(f"class {k}: draw count must be >= 1, got {d}")

    def scaled(self, factor: float) -> "ScribbleBudget":
        return ScribbleBudget({k: max(1, int(round(v * factor))) for k, v in self.pixels.items()},
                              self.draws)


@dataclass(frozen=True)
class WalkResult:
    pixels: np.ndarray  # (n, 2) row/col in visit order
    draws: int
    complete: bool


@dataclass
class Scribbles:
    labels: LabelMap
    draws: dict = field(default_factory=dict)
    complete: bool = True


@dataclass(frozen=True)
class ScribbleStats:
    n_labeled: np.ndarray  # n_l^k
    n_true: np.ndarray  # n_k
    ratio: np.ndarray  # a_k
    freq: np.ndarray  # labeled class frequencies

    def to_dict(self) -> dict:
        return {
            "n_labeled": [int(v) for v in self.n_labeled],
            "n_true": [int(v) for v in self.n_true],
            "annotation_ratio": [float(v) for v in self.ratio],
            "labeled_frequency": [float(v) for v in self.freq],
        }


def gen_points(gt: LabelMap, budget, rng: np.random.Generator) -> LabelMap:
    """Label exactly ``budget[k]`` pixels of each class, uniformly without replacement."""
    if not isinstance(budget, ScribbleBudget):
        budget = ScribbleBudget(dict(budget))
    out = np.full(gt.shape, UNLABELED, dtype=np.uint8)
    flat_gt = gt.labels.ravel()
    flat_out = out.ravel()
    for k in sorted(budget.pixels):
        n = int(budget.pixels[k])
        idx = np.flatnonzero(flat_gt == k)
        if n > idx.size:
            raise BudgetExceedsMask(f"class {k}: budget {n} > mask size {idx.size}")
        flat_out[rng.choice(idx, size=n, replace=False)] = k
    return LabelMap(out)


def _random_start(mask_pixels: np.ndarray, rng) -> tuple[int, int]:
    r, c = mask_pixels[rng.integers(len(mask_pixels))]
    return int(r), int(c)


def _walk(mask, n_pix, rng, choose_move, max_restarts, stall_limit) -> WalkResult:
    if n_pix < 1:
        raise InvalidBudget("n_pix must be >= 1")
    mask_pixels = np.argwhere(mask)
    if len(mask_pixels) == 0:
        raise EmptyClassMask("class mask is empty")
    h, w = mask.shape
    seen = np.zeros(mask.shape, dtype=bool)
    order = []

    def visit(p):
        if not seen[p]:
            seen[p] = True
            order.append(p)
            return True
        return False

    draws = 0
    while len(order) < n_pix and draws <= max_restarts:
        draws += 1
        pos = _random_start(mask_pixels, rng)
        visit(pos)
        state = {"prev": None}
        stall = 0
        while len(order) < n_pix and stall < stall_limit:
            nxt = choose_move(pos, state, lambda p: 0 <= p[0] < h and 0 <= p[1] < w and mask[p])
            if nxt is None:
                break  # stuck: restart at a fresh pixel
            pos = nxt
            stall = 0 if visit(pos) else stall + 1
    complete = len(order) >= n_pix
    if not complete:
        warnings.warn(f"walk reached {len(order)} of {n_pix} pixels", RuntimeWarning, stacklevel=3)
    return WalkResult(np.array(order, dtype=np.int64).reshape(-1, 2), draws, complete)


def gen_random_walk(gt: LabelMap, k: int, n_pix: int, step: int, rng: np.random.Generator,
                    max_retries: int = 32, max_restarts: int = 200,
                    stall_limit: int = 500) -> WalkResult:
    """Lattice random walk inside the class-``k`` mask.

    Each move draws one of the 8 lattice directions uniformly and jumps
    ``step`` pixels; a destination outside the mask is rejected and the
    direction redrawn, up to ``max_retries`` times before restarting at a
    fresh mask pixel. Only landing pixels are labeled.
    """
    if step < 1:
        raise InvalidBudget("step length must be >= 1")

    def choose(pos, state, inside):
        for _ in range(max_retries):
            d = DIRECTIONS[rng.integers(8)]
            p = (pos[0] + step * int(d[0]), pos[1] + step * int(d[1]))
            if inside(p):
                return p
        return None

    return _walk(gt.labels == k, int(n_pix), rng, choose, max_restarts, stall_limit)


def gen_dir_random_walk(gt: LabelMap, k: int, n_pix: int, rng: np.random.Generator,
                        p_momentum: float = 0.9, max_restarts: int = 200,
                        stall_limit: int = 500) -> WalkResult:
    """Unit-step walk that keeps its previous heading with probability ``p_momentum``.

    When the next pixel leaves the mask the heading is rotated to the nearest
    feasible lattice angle, trying +-45, +-90, +-135 and then 180 degrees; the
    sign tried first at each distance is a fair coin.
    """

    def choose(pos, state, inside):
        prev = state["prev"]
        if prev is None or rng.random() >= p_momentum:
            d0 = int(rng.integers(8))
        else:
            d0 = prev
        flip = rng.random() < 0.5
        offsets = [0]
        for rot in _ROTATIONS:
            offsets.extend(rot[::-1] if flip else rot)
        for off in offsets:
            d = (d0 + off) % 8
            p = (pos[0] + int(DIRECTIONS[d][0]), pos[1] + int(DIRECTIONS[d][1]))
            if inside(p):
                state["prev"] = d
                return p
        return None

    return _walk(gt.labels == k, int(n_pix), rng, choose, max_restarts, stall_limit)


def gen_skeleton(gt: LabelMap, rng: np.random.Generator | None = None) -> LabelMap:
    """Skeleton of every class mask present, background included."""
    out = np.full(gt.shape, UNLABELED, dtype=np.uint8)
    for k in classes_present(gt):
        out[skeletonize(gt.labels == k)] = k
    return LabelMap(out)


def skeleton_draws(scribbles: LabelMap) -> dict:
    """One draw per 8-connected component of each class's scribble."""
    return {k: int(connected_components(scribbles.labels == k, 8)[1].size)
            for k in classes_present(scribbles)}


def skeleton_budget(gt: LabelMap) -> ScribbleBudget:
    """Per-class pixel counts of the skeleton form."""
    sk = gen_skeleton(gt)
    return ScribbleBudget({k: int(np.count_nonzero(sk.labels == k)) for k in classes_present(sk)})


def _walk_labels(gt, budget, rng, walker) -> Scribbles:
    out = np.full(gt.shape, UNLABELED, dtype=np.uint8)
    draws, complete = {}, True
    for k in sorted(budget.pixels):
        n = int(budget.pixels[k])
        if not np.any(gt.labels == k):
            raise BudgetExceedsMask(f"class {k} absent from ground truth")
        parts = int((budget.draws or {}).get(k, 1))
        shares = [n // parts + (1 if i < n % parts else 0) for i in range(parts)]
        total = 0
        labeled = np.zeros(gt.shape, dtype=bool)
        for share in shares:
            if share == 0:
                continue
            res = walker(k, share)
            new = res.pixels[~labeled[res.pixels[:, 0], res.pixels[:, 1]]] if len(res.pixels) else res.pixels
            labeled[new[:, 0], new[:, 1]] = True
            total += res.draws
            complete &= res.complete
        out[labeled] = k
        draws[k] = total
    return Scribbles(LabelMap(out), draws, complete)


def generate(gt: LabelMap, form: str, budget: ScribbleBudget | None, rng: np.random.Generator,
             step: int = 1, p_momentum: float = 0.9) -> Scribbles:
    """Dispatch to one scribble form; ``budget`` is ignored for ``skeleton``."""
    if form == "skeleton":
        sk = gen_skeleton(gt, rng)
        return Scribbles(sk, skeleton_draws(sk), True)
    if budget is None:
        raise InvalidBudget(f"form {form!r} needs a pixel budget")
    if form == "points":
        lab = gen_points(gt, budget, rng)
        return Scribbles(lab, {k: int(v) for k, v in budget.pixels.items()}, True)
    if form == "random_walk":
        return _walk_labels(gt, budget, rng, lambda k, n: gen_random_walk(gt, k, n, step, rng))
    if form == "dir_random_walk":
        return _walk_labels(gt, budget, rng,
                            lambda k, n: gen_dir_random_walk(gt, k, n, rng, p_momentum))
    raise ValueError(f"unknown scribble form {form!r}; expected one of {FORMS}")


def compute_stats(scribbles: LabelMap, gt: LabelMap, m: int | None = None) -> ScribbleStats:
    """Exact per-class counts, annotation ratios and labeled-class frequencies."""
    if scribbles.shape != gt.shape:
        raise InconsistentScribble("scribble and ground-truth shapes differ")
    lab = scribbles.labeled
    if np.any(scribbles.labels[lab] != gt.labels[lab]):
        raise InconsistentScribble("scribble label disagrees with ground truth")
    if m is None:
        m = int(gt.labels[gt.labels != UNLABELED].max(initial=0)) + 1
    n_l = np.bincount(scribbles.labels[lab].astype(np.int64), minlength=m)[:m]
    n = np.bincount(gt.labels[gt.labels != UNLABELED].astype(np.int64), minlength=m)[:m]
    ratio = np.divide(n_l, n, out=np.zeros(m), where=n > 0)
    total = n_l.sum()
    freq = n_l / total if total else np.zeros(m)
    return ScribbleStats(n_l, n, ratio, freq)


def merge_stats(stats: list[ScribbleStats]) -> ScribbleStats:
    n_l = sum(s.n_labeled for s in stats)
    n = sum(s.n_true for s in stats)
    ratio = np.divide(n_l, n, out=np.zeros(len(n)), where=n > 0)
    total = n_l.sum()
    return ScribbleStats(n_l, n, ratio, n_l / total if total else np.zeros(len(n)))
