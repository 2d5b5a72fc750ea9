import numpy as np
import pytest

from scribbleseg import trainer
from scribbleseg.core import UNLABELED, Image, LabelMap, make_rng
from scribbleseg.experiments import BenchmarkSpec, make_benchmark
from scribbleseg.losses import LossValue, LossWeights, NoSupervision
from scribbleseg.model import PixelModel, feature_dim
from scribbleseg.trainer import (TrainConfig, TrainingDiverged, build_context, finite_diff_audit,
                                 max_relative_error, train)


def audit_batch(seed, side=16, m=3, n=2):
    """Blocky random scenes with sparse labels, plus a random model."""
    rng = np.random.default_rng(seed)
    batch = []
    for _ in range(n):
        gt = np.kron(rng.integers(0, m, (4, 4)), np.ones((side // 4, side // 4), int))
        x = gt * 0.4 + rng.normal(0, 0.1, gt.shape)
        lab = np.where(rng.random(gt.shape) < 0.2, gt, UNLABELED)
        batch.append((Image(x), LabelMap(lab)))
    model = PixelModel(rng.normal(0, 0.5, (feature_dim(1), m)), rng.normal(0, 0.5, m))
    return model, batch


def audit_cfg(**kw):
    kw.setdefault("weights", LossWeights(0.05, 1.0, 1.0, e_warm=0))
    return TrainConfig(connected_classes=(1, 2), occlusion_side=4, **kw)


def test_max_relative_error():
    assert max_relative_error(np.array([1.0, 2.0]), np.array([1.0, 2.1])) == pytest.approx(0.1 / 2.1)
    assert max_relative_error(np.zeros(3), np.zeros(3)) == 0.0


def test_audit_pce_only_exact():
    model, batch = audit_batch(0)
    cfg = audit_cfg(weights=LossWeights(0, 0, 0, 0), use_mix=False, use_occlusion=False)
    err = finite_diff_audit(model, batch, cfg)
    assert set(err) == {"pce", "total"}
    assert err["total"] < 1e-6


def test_audit_all_losses():
    model, batch = audit_batch(1)
    err = finite_diff_audit(model, batch, audit_cfg())
    assert set(err) == {"pce", "global", "spatial", "shape", "total"}
    assert max(err.values()) < 1e-4


def test_audit_without_labels():
    model, batch = audit_batch(2)
    empty = [(x, LabelMap(np.full(x.shape, UNLABELED))) for x, _ in batch]
    with pytest.raises(NoSupervision):
        finite_diff_audit(model, empty, audit_cfg(weights=LossWeights(0, 0, 0, 0)))


def test_warmup_leaves_no_spatial_negatives():
    model, batch = audit_batch(3)
    images = [x for x, _ in batch]
    from scribbleseg.core import label_weights
    weights = [label_weights(s, 3) for _, s in batch]
    cfg = TrainConfig(weights=LossWeights(0.05, 1.0, 1.0, e_warm=5), connected_classes=(1, 2), occlusion_side=4)
    pi = np.array([0.5, 0.3, 0.2])
    assert build_context(model, images, weights, cfg, make_rng(0), 4, pi).negatives is None
    assert build_context(model, images, weights, cfg, make_rng(0), 5, pi).negatives is not None


@pytest.fixture(scope="module")
def small_bench():
    return make_benchmark(0, BenchmarkSpec(side=32, n_train=3, n_test=2, budget=15))


def test_warmup_update_is_bitwise_unaffected(small_bench):
    b = small_bench
    base = LossWeights(0.05, 0.0, 0.1, e_warm=4)
    a = train(b.train, b.scribbles, TrainConfig(epochs=4, weights=base), m=b.m)
    c = train(b.train, b.scribbles, TrainConfig(epochs=4, weights=LossWeights(0.05, 1.0, 0.1, e_warm=4)), m=b.m)
    assert a.model.params().tobytes() == c.model.params().tobytes()


def test_training_is_deterministic(small_bench):
    b = small_bench
    cfg = TrainConfig(epochs=6, weights=LossWeights(0.05, 1.0, 0.1, e_warm=3), seed=4)
    r1 = train(b.train, b.scribbles, cfg, test=b.test, m=b.m)
    r2 = train(b.train, b.scribbles, cfg, test=b.test, m=b.m)
    assert r1.log == r2.log
    assert r1.model.params().tobytes() == r2.model.params().tobytes()
    assert r1.pi is not None and abs(r1.pi.sum() - 1) < 1e-9


def test_pce_only_config_logs_only_pce(small_bench):
    b = small_bench
    cfg = TrainConfig(epochs=3, weights=LossWeights(0, 0, 0, 0), use_mix=False, use_occlusion=False)
    res = train(b.train, b.scribbles, cfg, test=b.test, m=b.m)
    for row in res.log:
        assert row["global"] == row["spatial"] == row["shape"] == 0.0
        assert row["pce"] > 0 and row["total"] == row["pce"]


def test_divergence_reports_epoch(small_bench, monkeypatch):
    b = small_bench
    real = trainer.total_loss

    def poisoned(parts, weights, epoch):
        out = real(parts, weights, epoch)
        return LossValue(float("nan") if epoch == 2 else out.value, out.gradient, parts=out.parts)
    monkeypatch.setattr(trainer, "total_loss", poisoned)
    with pytest.raises(TrainingDiverged) as e:
        train(b.train, b.scribbles, TrainConfig(epochs=5), m=b.m)
    assert e.value.epoch == 2


def test_missing_class_rejected(small_bench):
    b = small_bench
    scr = [LabelMap(np.where(s.labels == 3, UNLABELED, s.labels)) for s in b.scribbles]
    with pytest.raises(ValueError):
        train(b.train, scr, TrainConfig(epochs=1), m=4)
