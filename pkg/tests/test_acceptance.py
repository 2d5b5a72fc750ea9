"""Acceptance suite: ten criteria, each reported as one PASS/FAIL line."""
import itertools
import json
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE
from scribbleseg.cli import main
from scribbleseg.core import UNLABELED, Image, LabelMap, make_rng, softmax
from scribbleseg.energy import EnergyConfig, spatial_energy_all
from scribbleseg.estimator import estimate_pi, synthetic_posteriors
from scribbleseg.experiments import ABLATIONS, run_ablation, run_study, study_checks, summarize_study
from scribbleseg.losses import LossWeights
from scribbleseg.metrics import boundary, dice, hausdorff
from scribbleseg.mixaug import MixConfig, assignment_cost, beta_objective, hungarian, optimize_beta
from scribbleseg.model import PixelModel, feature_dim
from scribbleseg.trainer import TrainConfig, finite_diff_audit


def report(n, ok, detail, elapsed, budget):
    ok = ok and elapsed < budget
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}  ({elapsed:.1f}s of {budget:.0f}s)"
    ACCEPTANCE[n] = line
    print(line)
    return ok


# 1 ------------------------------------------------------------------------

def test_01_hungarian_exact():
    t = time.perf_counter()
    rng = make_rng(1)
    perms = {n: np.array(list(itertools.permutations(range(n)))) for n in range(2, 8)}
    bad = 0
    for case in range(1000):
        n = 2 + case % 6
        cost = rng.integers(-50, 51, size=(n, n))
        best = cost[np.arange(n), perms[n]].sum(axis=1).min()
        bad += assignment_cost(cost, hungarian(cost)) != best
    ok = report(1, bad == 0, f"{1000 - bad}/1000 assignments equal the brute-force minimum",
                time.perf_counter() - t, 10)
    assert ok


# 2 ------------------------------------------------------------------------

def test_02_beta_solver_quality():
    t = time.perf_counter()
    rng = make_rng(2)
    cfg = MixConfig(grid=3, beta_levels=(0.0, 0.5, 1.0))
    close, below = 0, 0
    for _ in range(200):
        s1, s2 = rng.random((3, 3)), rng.random((3, 3))
        m1, m2 = rng.random((3, 3, 1)), rng.random((3, 3, 1))
        opt = beta_objective(optimize_beta(s1, s2, cfg, m1, m2, "exact"), s1, s2, cfg, m1, m2)
        icm = beta_objective(optimize_beta(s1, s2, cfg, m1, m2, "icm", rng), s1, s2, cfg, m1, m2)
        below += icm < opt - 1e-12
        close += icm - opt <= 0.05 * abs(opt)
    ok = report(2, close >= 190 and below == 0,
                f"ICM within 5% on {close}/200, below optimum on {below}", time.perf_counter() - t, 30)
    assert ok


# 3 ------------------------------------------------------------------------

def test_03_em_recovery():
    t = time.perf_counter()
    pi = np.array([0.7, 0.2, 0.1])
    errs, monotone = [], True
    for seed in range(5):
        batch, _ = synthetic_posteriors(pi, 10_000, np.full(3, 1 / 3), make_rng(seed))
        est = estimate_pi(batch, np.full(3, 1 / 3))
        errs.append(float(np.abs(est.pi - pi).sum()))
        monotone &= bool(np.all(np.diff(est.trace) >= -1e-9))
    ok = report(3, max(errs) < 0.02 and monotone,
                f"max L1 error {max(errs):.4f} over 5 runs, traces monotone: {monotone}",
                time.perf_counter() - t, 5)
    assert ok


# 4 ------------------------------------------------------------------------

def brute_energy(p, x, cfg):
    h, w, m = p.shape
    rr, cc = np.divmod(np.arange(h * w), w)
    o = x.reshape(h * w, -1)
    dp = (rr[:, None] - rr[None]) ** 2 + (cc[:, None] - cc[None]) ** 2
    do = ((o[:, None] - o[None]) ** 2).sum(-1)
    G = np.exp(-dp / (2 * cfg.sigma_p**2) - do / (2 * cfg.sigma_o**2))
    cheb = np.maximum(np.abs(rr[:, None] - rr[None]), np.abs(cc[:, None] - cc[None]))
    G[(cheb > cfg.radius) | (cheb == 0)] = 0.0
    q = p.reshape(h * w, m)
    return (q * (G @ q)).reshape(h, w, m)


def test_04_energy_equivalence():
    t = time.perf_counter()
    cfg = EnergyConfig(sigma_p=6.0, sigma_o=0.1, radius=5)
    rng = make_rng(4)
    worst = 0.0
    for _ in range(50):
        x = rng.random((32, 32, 1)) * 0.5
        p = softmax(rng.normal(size=(32, 32, 3)) * 2)
        worst = max(worst, float(np.max(np.abs(spatial_energy_all(p, x, cfg) - brute_energy(p, x, cfg)))))
    ok = report(4, worst < 1e-9, f"max |windowed - brute force| = {worst:.2e}", time.perf_counter() - t, 20)
    assert ok


# 5 ------------------------------------------------------------------------

def test_05_gradient_audit():
    t = time.perf_counter()
    cfg = TrainConfig(weights=LossWeights(0.05, 1.0, 1.0, e_warm=0), connected_classes=(1, 2),
                      occlusion_side=4)
    worst = {}
    for seed in range(20):
        rng = np.random.default_rng(seed)
        batch = []
        for _ in range(2):
            gt = np.kron(rng.integers(0, 3, (4, 4)), np.ones((4, 4), int))
            x = gt * 0.4 + rng.normal(0, 0.1, gt.shape)
            lab = np.where(rng.random(gt.shape) < 0.2, gt, UNLABELED)
            batch.append((Image(x), LabelMap(lab)))
        model = PixelModel(rng.normal(0, 0.5, (feature_dim(1), 3)), rng.normal(0, 0.5, 3))
        for k, v in finite_diff_audit(model, batch, cfg, seed=seed).items():
            worst[k] = max(worst.get(k, 0.0), v)
    parts = ("pce", "global", "spatial", "shape", "total")
    ok = report(5, set(parts) <= set(worst) and max(worst.values()) < 1e-4,
                "max relative error " + ", ".join(f"{k} {worst.get(k, float('nan')):.1e}" for k in parts),
                time.perf_counter() - t, 60)
    assert ok


# 6 ------------------------------------------------------------------------

def test_06_ablation_direction():
    t = time.perf_counter()
    dice_by = run_ablation(range(5), ABLATIONS, epochs=300)
    mean = {k: float(np.mean(v)) for k, v in dice_by.items()}
    gain_full = mean["full"] - mean["pce"]
    gain_aug = mean["aug_global"] - mean["pce"]
    ok = report(6, gain_full >= 0.05 and gain_aug >= 0.02,
                f"Dice pce {mean['pce']:.3f}, aug+global {mean['aug_global']:.3f} ({gain_aug:+.3f}), "
                f"full {mean['full']:.3f} ({gain_full:+.3f})", time.perf_counter() - t, 600)
    assert ok


# 7 and 8 ------------------------------------------------------------------

@pytest.fixture(scope="module")
def study():
    t = time.perf_counter()
    rows = run_study(["points", "dir_random_walk", "random_walk"], [1.0], range(5))
    rows += run_study(["points"], [2.0, 4.0], range(5))
    return summarize_study(rows), time.perf_counter() - t


def test_07_scribble_form_ordering(study):
    summary, elapsed = study
    p, d, r = (summary[(f, 1.0)] for f in ("points", "dir_random_walk", "random_walk"))
    checks = study_checks(summary)
    ok = report(7, checks["points_ge_dirrw"] and checks["dirrw_ge_rw"],
                f"Dice points {p:.3f}, dir_random_walk {d:.3f}, random_walk {r:.3f}", elapsed, 900)
    assert ok


def test_08_budget_trend(study):
    summary, elapsed = study
    trend = [summary[("points", mu)] for mu in (1.0, 2.0, 4.0)]
    ok = report(8, study_checks(summary)["points_budget_trend"],
                "points Dice at n, 2n, 4n: " + ", ".join(f"{v:.3f}" for v in trend), elapsed, 900)
    assert ok


# 9 ------------------------------------------------------------------------

def test_09_metric_units():
    t = time.perf_counter()
    a = np.zeros((8, 8), int)
    a[2:5, 2:6] = 1
    b = np.zeros((8, 8), int)
    b[6:8, 0:6] = 1
    s0 = np.zeros((6, 6), int)
    s0[0, 0] = 1
    s1 = np.zeros((6, 6), int)
    s1[3, 4] = 1
    outer = np.zeros((14, 14), int)
    outer[2:12, 2:12] = 1
    inner = np.zeros((14, 14), int)
    inner[4:10, 4:10] = 1
    po, pi = np.argwhere(boundary(outer == 1)), np.argwhere(boundary(inner == 1))
    d = np.sqrt(((po[:, None] - pi[None]) ** 2).sum(-1))
    brute = max(d.min(1).max(), d.min(0).max())
    checks = [dice(a, a, 1) == 1.0, dice(a, b, 1) == 0.0, hausdorff(s0, s1, 1) == 5.0,
              hausdorff(a, a, 1) == 0.0, hausdorff(outer, inner, 1) == brute]
    ok = report(9, all(checks), f"{sum(checks)}/5 metric identities hold", time.perf_counter() - t, 1)
    assert ok


# 10 -----------------------------------------------------------------------

def _snapshot(d: Path) -> dict:
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def _run_twice(tmp: Path, name: str, argv: list) -> bool:
    outs = []
    for rep in ("a", "b"):
        out = tmp / name / rep
        assert main(argv + ["--out", str(out)]) == 0, name
        outs.append(_snapshot(out))
    return outs[0] == outs[1] and len(outs[0]) > 0


def test_10_cli_determinism(tmp_path):
    t = time.perf_counter()

    def man(name, **body):
        p = tmp_path / f"{name}.json"
        p.write_text(json.dumps({"schema_version": 1, "seed": 5, **body}))
        return str(p)

    small = {"side": 32, "n_train": 2, "n_test": 1}
    data = tmp_path / "data"
    assert main(["synth", "--manifest", man("synth", dataset=small), "--out", str(data)]) == 0
    assert main(["synth", "--kind", "mixture", "--seed", "3", "--out", str(data)]) == 0
    gts = [str(data / "train_000_gt.pgm"), str(data / "train_001_gt.pgm")]
    imgs = [str(data / "train_000_image.pgm"), str(data / "train_001_image.pgm")]
    scr = tmp_path / "scr"
    assert main(["scribble", "--gt", *gts, "--seed", "1", "--out", str(scr)]) == 0
    scrs = [str(scr / "train_000_gt_scribble.pgm"), str(scr / "train_001_gt_scribble.pgm")]
    runs = {
        "synth": ["synth", "--manifest", man("synth2", dataset=small)],
        "scribble": ["scribble", "--gt", *gts, "--manifest", man("scribble", scribbles={"form": "dir_random_walk", "budget": 20})],
        "train": ["train", "--manifest", man("train", dataset=small, train={"epochs": 40, "e_warm": 10})],
        "study": ["study", "--manifest", man("study", dataset=small, forms=["points"], multipliers=[1],
                                             seeds=1, epochs=20)],
        "estimate-pi": ["estimate-pi", "--pred", str(data / "mixture_pred.json"),
                        "--scribbles", str(data / "mixture_scribbles.pgm")],
        "mix-preview": ["mix-preview", "--image", *imgs, "--labels", *scrs, "--manifest", man("mix")],
        "metrics": ["metrics", "--pred", *gts, "--gt", gts[1], gts[0]],
    }
    same = {name: _run_twice(tmp_path, name, argv) for name, argv in runs.items()}
    ok = report(10, all(same.values()),
                f"byte-identical re-runs for {sum(same.values())}/{len(same)} commands"
                + ("" if all(same.values()) else f", differing: {[k for k, v in same.items() if not v]}"),
                time.perf_counter() - t, 120)
    assert ok
