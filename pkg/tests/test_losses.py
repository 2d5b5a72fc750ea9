import numpy as np
import pytest
from hypothesis import given, strategies as st

from scribbleseg.core import UNLABELED, ClassSet, LabelMap, softmax
from scribbleseg.losses import (DegenerateConsistency, LossValue, LossWeights, NoSupervision,
                                global_consistency_loss, pce_loss, shape_loss, shape_target,
                                spatial_prior_loss, total_loss)
from scribbleseg.trainer import max_relative_error


def fd_grad(f, z, h=1e-5):
    g = np.zeros_like(z)
    it = np.nditer(z, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        zp, zm = z.copy(), z.copy()
        zp[i] += h
        zm[i] -= h
        g[i] = (f(zp) - f(zm)) / (2 * h)
    return g


def instance(seed, side=8, m=3):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(side, side, m))
    lab = np.where(rng.random((side, side)) < 0.3, rng.integers(0, m, (side, side)), UNLABELED)
    return rng, z, LabelMap(lab)


def splits(rng, side, m):
    return rng.random((m, side, side)) < 0.25


# ---- pce

def test_pce_perfect_and_uniform():
    lab = LabelMap([[1, UNLABELED]])
    p = np.array([[[0.0, 1.0], [0.5, 0.5]]])
    assert pce_loss(p, lab).value == pytest.approx(0.0, abs=1e-12)
    lab4 = LabelMap([[2, UNLABELED]])
    assert pce_loss(np.full((1, 2, 4), 0.25), lab4).value == pytest.approx(np.log(4))
    with pytest.raises(NoSupervision):
        pce_loss(np.full((1, 1, 2), 0.5), LabelMap([[UNLABELED]]))


@pytest.mark.parametrize("soft", [False, True])
def test_pce_gradient(soft):
    rng, z, lab = instance(0)
    target = lab
    if soft:
        w = rng.random((8, 8, 3)) * (rng.random((8, 8, 1)) < 0.4)
        target = w / np.maximum(w.sum(-1, keepdims=True), 1) * rng.random((8, 8, 1))
    g = pce_loss(softmax(z), target).gradient
    num = fd_grad(lambda zz: pce_loss(softmax(zz), target).value, z)
    assert max_relative_error(g, num) < 1e-5
    unl = ~lab.labeled
    if not soft:
        assert not g[unl].any()


# ---- global consistency

def test_global_extremes():
    rng = np.random.default_rng(1)
    v = softmax(rng.normal(size=(4, 4, 3)))
    assert global_consistency_loss(v, v, v, v).value == pytest.approx(-1.0)
    u = np.zeros((4, 4, 3))
    u[..., 0] = 1.0
    v2 = np.zeros((4, 4, 3))
    v2[..., 1] = 1.0
    assert global_consistency_loss(u, v2, u, v2).value == pytest.approx(0.0)
    with pytest.raises(DegenerateConsistency):
        global_consistency_loss(np.zeros((2, 2, 2)), v2[:2, :2, :2], u[:2, :2, :2], v2[:2, :2, :2])


def test_global_gradient():
    rng = np.random.default_rng(2)
    u12, u21 = rng.random((2, 6, 6, 3))
    z = rng.normal(size=(2, 6, 6, 3))
    g = global_consistency_loss(u12, softmax(z[0]), u21, softmax(z[1])).gradient
    num = fd_grad(lambda zz: global_consistency_loss(u12, softmax(zz[0]), u21, softmax(zz[1])).value, z)
    assert max_relative_error(g, num) < 1e-5


@given(st.integers(0, 2**32))
def test_global_range(seed):
    rng = np.random.default_rng(seed)
    u = rng.random((2, 3, 3, 2))
    v = softmax(rng.normal(size=(2, 3, 3, 2)))
    assert -1 - 1e-12 <= global_consistency_loss(u[0], v[0], u[1], v[1]).value <= 1 + 1e-12


# ---- spatial prior

def test_spatial_cases():
    p = np.zeros((2, 2, 3))
    p[..., 0] = 1.0
    neg = np.zeros((3, 2, 2), bool)
    neg[1] = True
    assert spatial_prior_loss(p, neg).value == pytest.approx(0.0)
    neg = np.zeros((3, 1, 1), bool)
    neg[2, 0, 0] = True
    assert spatial_prior_loss(np.full((1, 1, 3), 1 / 3), neg).value == pytest.approx(-np.log(2 / 3))


def test_spatial_saturation_counter():
    p = np.zeros((1, 1, 2))
    p[..., 1] = 1.0
    neg = np.zeros((2, 1, 1), bool)
    neg[1] = True
    res = spatial_prior_loss(p, neg)
    assert res.saturated == 1 and np.isfinite(res.value)


def test_spatial_gradient():
    rng, z, _ = instance(3)
    neg = splits(rng, 8, 3)
    g = spatial_prior_loss(softmax(z), neg).gradient
    num = fd_grad(lambda zz: spatial_prior_loss(softmax(zz), neg).value, z)
    assert max_relative_error(g, num) < 1e-5


@given(st.integers(0, 2**32))
def test_spatial_relabeling_invariance(seed):
    rng = np.random.default_rng(seed)
    p = softmax(rng.normal(size=(4, 4, 3)))
    neg = rng.random((3, 4, 4)) < 0.4
    perm = rng.permutation(3)
    a = spatial_prior_loss(p, neg).value
    b = spatial_prior_loss(p[..., perm], neg[perm]).value
    assert a == pytest.approx(b, abs=1e-12)
    assert a >= 0


# ---- shape

def test_shape_single_component_is_self_ce():
    p = np.full((4, 4, 2), 0.2)
    p[..., 1] = 0.8
    p[0, :, 0], p[0, :, 1] = 0.7, 0.3
    cs = ClassSet(2, {1})
    res = shape_loss(p, cs)
    sel = np.argmax(p, -1) == 1
    assert res.value == pytest.approx(-np.log(p[sel, 1]).mean())


def test_shape_drops_stray_component():
    p = np.zeros((6, 6, 2))
    p[..., 0] = 0.9
    p[..., 1] = 0.1
    p[0:3, 0:3] = [0.2, 0.8]
    p[5, 5] = [0.3, 0.7]
    t = shape_target(p, ClassSet(2, {1}))
    assert t[0:3, 0:3, 1].all() and t[..., 1].sum() == 9 and t[5, 5].sum() == 0


def test_shape_empty_psi():
    p = softmax(np.random.default_rng(0).normal(size=(4, 4, 3)))
    res = shape_loss(p, ClassSet(3))
    assert res.value == 0.0 and not res.gradient.any()


def test_shape_gradient_with_frozen_target():
    rng, z, _ = instance(4)
    cs = ClassSet(3, {1, 2})
    t = shape_target(softmax(z), cs)
    g = shape_loss(softmax(z), cs, t).gradient
    num = fd_grad(lambda zz: shape_loss(softmax(zz), cs, t).value, z)
    assert max_relative_error(g, num) < 1e-5
    assert shape_loss(softmax(z), cs).value >= 0


# ---- total

def _parts(rng):
    return {k: LossValue(float(rng.normal()), rng.normal(size=(3, 3, 2))) for k in ("pce", "global", "spatial", "shape")}


def test_total_warmup_gate():
    parts = _parts(np.random.default_rng(0))
    w = LossWeights(0.05, 1.0, 1.0, e_warm=100)
    t = total_loss(parts, w, 0)
    no_spatial = {k: v for k, v in parts.items() if k != "spatial"}
    assert t.value == total_loss(no_spatial, w, 0).value
    assert np.array_equal(t.gradient, total_loss(no_spatial, w, 0).gradient)
    assert t.parts["spatial"] == 0.0


def test_total_zero_weights_is_pce():
    parts = _parts(np.random.default_rng(1))
    t = total_loss(parts, LossWeights(0, 0, 0, 0), 5)
    assert t.value == parts["pce"].value and np.array_equal(t.gradient, parts["pce"].gradient)


@given(st.integers(0, 2**32), st.floats(0, 3), st.floats(0, 3), st.floats(0, 3))
def test_total_linear(seed, a, b, c):
    parts = _parts(np.random.default_rng(seed))
    t = total_loss(parts, LossWeights(a, b, c, e_warm=0), 1)
    g = parts["pce"].gradient + a * parts["global"].gradient + b * parts["spatial"].gradient \
        + c * parts["shape"].gradient
    assert np.max(np.abs(t.gradient - g)) <= 1e-12
    v = parts["pce"].value + a * parts["global"].value + b * parts["spatial"].value + c * parts["shape"].value
    assert t.value == pytest.approx(v, abs=1e-12)


def test_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(-1.0)
