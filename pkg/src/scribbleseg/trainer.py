"""Training loop for the pixel classifier with augmentation and prior losses.

Each step freezes everything that depends on the current prediction but is
treated as a constant target (mix plans, mixed predictions ``u``, ranked
negative sets, largest-component targets) into a :class:`StepContext`.
:func:`evaluate_parts` then maps parameters to loss values and exact
parameter gradients, which is also what the finite-difference audit probes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import logging

import numpy as np

from .core import ClassSet, NonFiniteLogits, ScribbleSegError, label_weights, make_rng, softmax
from .energy import EnergyConfig, KernelCache, class_splits
from .estimator import PosteriorBatch, estimate_pi
from .losses import (LossValue, LossWeights, NoSupervision, global_consistency_loss, pce_loss,
                     shape_loss, shape_target, spatial_prior_loss, total_loss)
from .metrics import dice
from .mixaug import (MixConfig, MixPlan, apply_occlusion, default_occlusion_side, plan_mix,
                     sample_occlusion, saliency, transport)
from .model import PixelModel, featurize, logits_from_features, param_gradient

log = logging.getLogger(__name__)


class TrainingDiverged(ScribbleSegError):
    def __init__(self, epoch: int, message: str = "loss became non-finite"):
        super().__init__(f"{message} at epoch {epoch}")
        self.epoch = epoch


# Desk-scale schedule for the linear model: 300 epochs with a 30-epoch warm-up
# (the 100-of-1000 ratio), a step size that converges the convex PCE fit
# within ~60 epochs, and a reduced shape weight (see README, "Benchmark").
DESK_LR = 1.0
DESK_WEIGHTS = LossWeights(lambda_global=0.05, lambda_spatial=1.0, lambda_shape=0.1, e_warm=30)
# half-and-half blends land near the ring intensity and confuse a per-pixel linear model
DESK_MIX = MixConfig(beta_levels=(0.0, 1.0))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    lr: float = DESK_LR
    batch_size: int = 4
    weights: LossWeights = DESK_WEIGHTS
    energy: EnergyConfig = EnergyConfig()
    mix: MixConfig = DESK_MIX
    use_mix: bool = True
    use_occlusion: bool = True
    occlusion_side: int | None = None  # None: scale 32-on-192 to the image side
    em_tol: float = 1e-6
    em_max_iter: int = 100
    connected_classes: tuple = (1, 2, 3)
    scribble_form: str = "dir_random_walk"
    scribble_budget: int = 30
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0:
            raise ScribbleSegError("epochs, batch size and learning rate must be positive")
        if self.scribble_budget < 1 or self.em_max_iter < 1 or self.em_tol <= 0:
            raise ScribbleSegError("scribble budget and EM settings must be positive")

    @property
    def augment(self) -> bool:
        return self.use_mix or self.use_occlusion


@dataclass
class StepContext:
    """Frozen inputs of one optimization step."""

    feats: list  # per unmixed image, (H, W, F)
    weights: list  # per unmixed image, (H, W, m) hard scribble weights
    mixed_feats: list = field(default_factory=list)
    mixed_weights: list = field(default_factory=list)
    pairs: list = field(default_factory=list)  # (u12, mixed idx 12, u21, mixed idx 21)
    negatives: np.ndarray | None = None  # (m, B, H, W)
    shape_targets: np.ndarray | None = None  # (B, H, W, m)


@dataclass
class TrainResult:
    model: PixelModel
    log: list
    pi: np.ndarray | None = None


def _forward(theta_model: PixelModel, feats_list):
    return [softmax(logits_from_features(theta_model, f)) for f in feats_list]


def _params_grad(feats_list, grads) -> np.ndarray:
    return sum(param_gradient(f, g) for f, g in zip(feats_list, grads))


def evaluate_parts(model: PixelModel, ctx: StepContext, which=("pce", "global", "spatial", "shape")) -> dict:
    """Loss parts as :class:`LossValue` objects whose gradients are w.r.t. the parameters."""
    probs = _forward(model, ctx.feats)
    mprobs = _forward(model, ctx.mixed_feats)
    parts = {}
    if "pce" in which:
        p = np.stack(probs + mprobs)
        w = np.stack(list(ctx.weights) + list(ctx.mixed_weights))
        lv = pce_loss(p, w)
        n = len(probs)
        parts["pce"] = LossValue(lv.value, _params_grad(ctx.feats, lv.gradient[:n])
                                 + _params_grad(ctx.mixed_feats, lv.gradient[n:]))
    if "global" in which and ctx.pairs:
        value = 0.0
        grads = [np.zeros_like(p) for p in mprobs]
        for u12, i12, u21, i21 in ctx.pairs:
            lv = global_consistency_loss(u12, mprobs[i12], u21, mprobs[i21])
            value += lv.value
            grads[i12] += lv.gradient[0]
            grads[i21] += lv.gradient[1]
        k = len(ctx.pairs)
        parts["global"] = LossValue(value / k, _params_grad(ctx.mixed_feats, grads) / k)
    if "spatial" in which and ctx.negatives is not None:
        lv = spatial_prior_loss(np.stack(probs), ctx.negatives)
        parts["spatial"] = LossValue(lv.value, _params_grad(ctx.feats, lv.gradient),
                                     saturated=lv.saturated)
    if "shape" in which and ctx.shape_targets is not None:
        lv = shape_loss(np.stack(probs), None, target=ctx.shape_targets)
        parts["shape"] = LossValue(lv.value, _params_grad(ctx.feats, lv.gradient))
    return parts


def _pair_up(batch: list, rng: np.random.Generator) -> list:
    """Disjoint pairs over a shuffled batch; an odd leftover pairs with a random peer."""
    order = [batch[i] for i in rng.permutation(len(batch))]
    pairs = [(order[i], order[i + 1]) for i in range(0, len(order) - 1, 2)]
    if len(order) % 2 == 1 and len(order) > 1:
        pairs.append((order[-1], order[int(rng.integers(len(order) - 1))]))
    return pairs


def _plan(x1, x2, cfg: TrainConfig, rng, side, s1=None, s2=None) -> MixPlan:
    if cfg.use_mix:
        plan = plan_mix(x1, x2, cfg.mix, rng, occlusion_side=side if cfg.use_occlusion else 0,
                        s1=s1, s2=s2)
    else:
        occ = sample_occlusion(x1.shape[:2], side, rng) if cfg.use_occlusion else None
        plan = MixPlan.identity(1, 0.0, occ)
    return plan


def build_context(model: PixelModel, images: list, weights: list, cfg: TrainConfig,
                  rng: np.random.Generator, epoch: int, pi=None, caches=None,
                  feats: list | None = None, saliencies: list | None = None) -> StepContext:
    """Freeze the targets of one step at the current parameters.

    ``saliencies`` caches image-gradient saliency maps; loss-gradient
    saliency is recomputed here since it depends on the model.
    """
    m = model.m
    feats = [featurize(x) for x in images] if feats is None else feats
    probs = _forward(model, feats)
    if cfg.use_mix and saliencies is None:
        saliencies = [saliency(x, cfg.mix.saliency_mode, model, w) for x, w in zip(images, weights)]
    ctx = StepContext(feats, weights)
    lw = cfg.weights

    if cfg.augment and len(images) >= 2:
        side = cfg.occlusion_side or default_occlusion_side(min(images[0].shape[:2]))
        for a, b in _pair_up(list(range(len(images))), rng):
            us = []
            for src, dst in ((a, b), (b, a)):
                plan = _plan(images[src], images[dst], cfg, rng, side,
                             *((saliencies[src], saliencies[dst]) if cfg.use_mix else ()))
                x = transport(images[src].data, images[dst].data, plan)
                w = transport(weights[src], weights[dst], plan)
                u = transport(probs[src], probs[dst], plan)
                if plan.occlusion is not None:
                    img, w, inside = apply_occlusion(x, w, plan.occlusion)
                    x = img.data
                    u = u.copy()
                    u[inside] = 0.0
                ctx.mixed_feats.append(featurize(x))
                ctx.mixed_weights.append(w)
                us.append((u, len(ctx.mixed_feats) - 1))
            if lw.lambda_global > 0:
                ctx.pairs.append((us[0][0], us[0][1], us[1][0], us[1][1]))

    if pi is not None and epoch >= lw.e_warm and lw.lambda_spatial > 0:
        negs = []
        for i, p in enumerate(probs):
            cache = caches[i] if caches is not None else KernelCache(images[i], cfg.energy)
            unlabeled = weights[i].sum(axis=-1) == 0
            splits = class_splits(cache.energy(p), unlabeled, pi, classes=range(1, m))
            negs.append(splits.negative)
        ctx.negatives = np.stack(negs, axis=1)

    gated = lw.gate_shape and epoch < lw.e_warm
    if cfg.connected_classes and lw.lambda_shape > 0 and not gated:
        classes = ClassSet(m, frozenset(cfg.connected_classes))
        ctx.shape_targets = np.stack([shape_target(p, classes) for p in probs])
    return ctx


def estimate_epoch_pi(model: PixelModel, feats: list, weights: list, cfg: TrainConfig) -> np.ndarray:
    """EM over every unlabeled training pixel, started from the labeled frequencies."""
    counts = sum(w.reshape(-1, w.shape[-1]).sum(axis=0) for w in weights)
    freq = counts / counts.sum()
    post = [softmax(logits_from_features(model, f))[w.sum(axis=-1) == 0] for f, w in zip(feats, weights)]
    batch = PosteriorBatch(np.concatenate(post), freq)
    return estimate_pi(batch, freq, cfg.em_tol, cfg.em_max_iter).pi


def train(dataset: list, scribbles: list, cfg: TrainConfig, test: list | None = None,
          m: int | None = None) -> TrainResult:
    """Gradient descent on the weighted objective; deterministic for a fixed ``cfg.seed``.

    ``dataset`` holds ``(Image, ground truth)`` pairs (ground truth unused),
    ``scribbles`` the matching label maps. ``test`` pairs are scored with
    mean foreground Dice after every epoch.
    """
    if not dataset:
        raise ScribbleSegError("empty training set")
    if len(dataset) != len(scribbles):
        raise ScribbleSegError("one scribble map per training image is required")
    images = [x for x, _ in dataset]
    if m is None:
        m = 1 + max(int(s.labels[s.labeled].max(initial=0)) for s in scribbles)
    weights = [label_weights(s, m) for s in scribbles]
    counts = sum(w.reshape(-1, m).sum(axis=0) for w in weights)
    if np.any(counts == 0):
        missing = np.flatnonzero(counts == 0).tolist()
        raise ScribbleSegError(f"classes {missing} have no scribbles in the training set")

    rng = make_rng(cfg.seed)
    model = PixelModel.zeros(images[0].channels, m)
    theta = model.params()
    feats = [featurize(x) for x in images]
    lw = cfg.weights
    spatial_on = lw.lambda_spatial > 0 and cfg.epochs > lw.e_warm
    caches = [KernelCache(x, cfg.energy) for x in images] if spatial_on else None
    test_feats = [featurize(x) for x, _ in test] if test else None
    sal = None
    if cfg.use_mix and cfg.mix.saliency_mode == "image":
        sal = [saliency(x) for x in images]

    history = []
    pi = None
    for epoch in range(cfg.epochs):
        model = model.with_params(theta)
        if spatial_on and epoch >= lw.e_warm:
            pi = estimate_epoch_pi(model, feats, weights, cfg)
        order = rng.permutation(len(images))
        sums = {"pce": 0.0, "global": 0.0, "spatial": 0.0, "shape": 0.0, "total": 0.0}
        steps = 0
        for start in range(0, len(order), cfg.batch_size):
            idx = [int(i) for i in order[start:start + cfg.batch_size]]
            ctx = build_context(model, [images[i] for i in idx], [weights[i] for i in idx], cfg, rng,
                                epoch, pi, [caches[i] for i in idx] if caches else None,
                                [feats[i] for i in idx], [sal[i] for i in idx] if sal else None)
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    parts = evaluate_parts(model, ctx)
                    tot = total_loss(parts, lw, epoch)
            except NonFiniteLogits as e:
                raise TrainingDiverged(epoch, "logits became non-finite") from e
            if not np.isfinite(tot.value) or not np.all(np.isfinite(tot.gradient)):
                raise TrainingDiverged(epoch)
            theta = theta - cfg.lr * tot.gradient
            model = model.with_params(theta)
            for k, v in tot.parts.items():
                sums[k] += v
            sums["total"] += tot.value
            steps += 1
        row = {"epoch": epoch, **{k: v / steps for k, v in sums.items()}}
        if test:
            preds = [np.argmax(logits_from_features(model, f), axis=-1) for f in test_feats]
            row["mean_dice"] = mean_dice(preds, [g for _, g in test], m)
        history.append(row)
        log.debug("epoch %d total %.6f", epoch, row["total"])
    return TrainResult(model.with_params(theta), history, pi)


def mean_dice(preds, gts, m: int) -> float:
    """Foreground Dice averaged over classes and images."""
    return float(np.mean([[dice(p, g, k) for k in range(1, m)] for p, g in zip(preds, gts)]))


# --------------------------------------------------------------------------- audit

def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``max|a - n| / max(max|a|, max|n|)``: worst entry relative to the gradient scale."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(n), initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(a - n)) / scale)


def finite_diff_audit(model: PixelModel, batch: list, cfg: TrainConfig, step: float = 1e-5,
                      seed: int = 0) -> dict:
    """Central-difference check of every loss part and the total, w.r.t. the parameters.

    ``batch`` is a list of ``(Image, scribble LabelMap)`` pairs (small images).
    Targets are frozen once at ``model`` so the check sees the same objective
    the optimizer does. Raises :class:`NoSupervision` when nothing is labeled.
    """
    images = [x for x, _ in batch]
    m = model.m
    weights = [label_weights(s, m) for _, s in batch]
    if sum(float(w.sum()) for w in weights) == 0:
        raise NoSupervision("audit batch carries no labeled pixels")
    feats = [featurize(x) for x in images]
    epoch = cfg.weights.e_warm
    pi = None
    if cfg.weights.lambda_spatial > 0:
        pi = estimate_epoch_pi(model, feats, weights, cfg)
    ctx = build_context(model, images, weights, cfg, make_rng(seed), epoch, pi, feats=feats)
    theta = model.params()

    def objective(th):
        parts = evaluate_parts(model.with_params(th), ctx)
        tot = total_loss(parts, cfg.weights, epoch)
        return {**{k: v.value for k, v in parts.items()}, "total": tot.value}, parts, tot

    _, parts, tot = objective(theta)
    analytic = {k: v.gradient for k, v in parts.items()}
    analytic["total"] = tot.gradient
    numeric = {k: np.zeros_like(theta) for k in analytic}
    for i in range(theta.size):
        tp, tm = theta.copy(), theta.copy()
        tp[i] += step
        tm[i] -= step
        vp, _, _ = objective(tp)
        vm, _, _ = objective(tm)
        for k in numeric:
            numeric[k][i] = (vp[k] - vm[k]) / (2 * step)
    return {k: max_relative_error(analytic[k], numeric[k]) for k in analytic}
