"""Command-line entry point: ``scribbleseg <command> [--manifest M] [--seed S] [--out DIR]``.

Commands read a JSON manifest (``schema_version`` 1, unknown keys rejected)
and/or files given as options. Every output is a pure function of the
manifest, the input files and the seed. The seed comes from ``--seed``,
then the ``SCRIBBLESEG_SEED`` environment variable, then the manifest's
``seed`` key, then 0.

Exit codes: 0 success, 2 bad input (usage, files, manifest), 3 training
diverged, 4 other model errors (e.g. a class without scribbles).
"""
from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .core import LabelMap, ProbMap, ScribbleSegError, child_seeds, make_rng
from .energy import EnergyConfig
from .estimator import PosteriorBatch, estimate_pi, init_pi, synthetic_posteriors
from .experiments import (BenchmarkSpec, make_benchmark, matched_budget, run_study,
                          study_checks, summarize_study)
from .metrics import evaluate
from .mixaug import MixConfig, apply_mix, apply_occlusion, plan_mix
from .model import predict
from .scribblegen import FORMS, compute_stats, generate, merge_stats
from .synth import SynthSpec, synth_dataset
from .trainer import DESK_MIX, DESK_WEIGHTS, TrainConfig, TrainingDiverged, train

SEED_ENV = "SCRIBBLESEG_SEED"
EXIT_INPUT, EXIT_DIVERGED, EXIT_MODEL = 2, 3, 4
LOG_COLUMNS = ["epoch", "pce", "global", "spatial", "shape", "total", "mean_dice"]


class ManifestError(ScribbleSegError):
    pass


# --------------------------------------------------------------------------- manifests

_DATASET_KEYS = {"side", "m", "noise", "n_train", "n_test"}
_SCRIBBLE_KEYS = {"form", "budget", "multiplier", "step", "p_momentum"}
_TRAIN_KEYS = {"epochs", "lr", "batch_size", "lambda_global", "lambda_spatial", "lambda_shape",
               "e_warm", "gate_shape", "use_mix", "use_occlusion", "occlusion_side", "grid",
               "sigma_p", "sigma_o", "radius", "em_tol", "em_max_iter", "connected_classes",
               "saliency_mode", "beta_levels"}
MANIFEST_KEYS = {
    "scribble": {"gt", "scribbles"},
    "train": {"dataset", "scribbles", "train"},
    "study": {"dataset", "forms", "multipliers", "budget", "seeds", "epochs"},
    "estimate-pi": {"tol", "max_iter"},
    "mix-preview": {"mix", "occlusion_side"},
    "metrics": {"m"},
    "synth": {"dataset", "kind", "pi", "n_u", "labeled_freq"},
}


def _check_keys(d: dict, allowed: set, where: str) -> None:
    if not isinstance(d, dict):
        raise ManifestError(f"{where} must be a JSON object")
    unknown = set(d) - allowed
    if unknown:
        raise ManifestError(f"unknown keys in {where}: {sorted(unknown)}")


def load_manifest(path, command: str) -> dict:
    if path is None:
        return {}
    d = io.read_json(path)
    _check_keys(d, MANIFEST_KEYS[command] | {"schema_version", "seed"}, "manifest")
    for section, keys in (("dataset", _DATASET_KEYS), ("scribbles", _SCRIBBLE_KEYS), ("train", _TRAIN_KEYS)):
        if section in d:
            _check_keys(d[section], keys, section)
    if "mix" in d:
        _check_keys(d["mix"], set(MixConfig.__dataclass_fields__), "mix")
    return d


def resolve_seed(arg, manifest: dict) -> int:
    if arg is not None:
        return int(arg)
    env = os.environ.get(SEED_ENV)
    if env not in (None, ""):
        try:
            return int(env)
        except ValueError as e:
            raise ManifestError(f"{SEED_ENV} must be an integer, got {env!r}") from e
    return int(manifest.get("seed", 0))


def bench_spec(d: dict, scribbles: dict | None = None) -> BenchmarkSpec:
    kw = dict(d)
    if scribbles:
        kw.update({k: scribbles[k] for k in ("form", "budget") if k in scribbles})
    return BenchmarkSpec(**kw)


def train_config(d: dict, seed: int) -> TrainConfig:
    d = dict(d)
    w = replace(DESK_WEIGHTS, **{k: d.pop(k) for k in
                                 ("lambda_global", "lambda_spatial", "lambda_shape", "e_warm", "gate_shape")
                                 if k in d})
    energy = EnergyConfig(**{k: d.pop(k) for k in ("sigma_p", "sigma_o", "radius") if k in d})
    mix = replace(DESK_MIX, **{k: d.pop(k) for k in ("grid", "saliency_mode", "beta_levels") if k in d})
    if "connected_classes" in d:
        d["connected_classes"] = tuple(d["connected_classes"])
    return TrainConfig(weights=w, energy=energy, mix=mix, seed=seed, **d)


# --------------------------------------------------------------------------- commands

def _stem(p) -> str:
    return Path(p).name.split(".")[0]


def cmd_synth(args, man: dict, seed: int, out: Path) -> None:
    """Write a benchmark split (images + ground truth) or an EM mixture pair."""
    kind = args.kind or man.get("kind", "dataset")
    if kind == "dataset":
        spec = bench_spec(man.get("dataset", {}))
        s_train, s_test = child_seeds(make_rng(seed), 2)
        for split, s, n in (("train", s_train, spec.n_train), ("test", s_test, spec.n_test)):
            data = synth_dataset(SynthSpec(side=spec.side, m=spec.m, noise=spec.noise, count=n, seed=s))
            for i, (x, g) in enumerate(data):
                io.write_image(out / f"{split}_{i:03d}_image.pgm", x)
                io.write_labels(out / f"{split}_{i:03d}_gt.pgm", g)
    elif kind == "mixture":
        pi = np.asarray(man.get("pi", [0.7, 0.2, 0.1]), dtype=np.float64)
        n_u = int(man.get("n_u", 10000))
        freq = np.asarray(man.get("labeled_freq", np.full(pi.size, 1.0 / pi.size)), dtype=np.float64)
        batch, _ = synthetic_posteriors(pi, n_u, freq, make_rng(seed))
        # row 0 holds labeled pixels in the labeled proportions; the rest are unlabeled
        width = 100
        if n_u % width:
            raise ManifestError(f"n_u must be a multiple of {width}")
        counts = np.floor(freq * width).astype(int)
        counts[: width - counts.sum()] += 1
        lab_row = np.repeat(np.arange(pi.size), counts).astype(np.uint8)
        labels = np.full((n_u // width + 1, width), 255, dtype=np.uint8)
        labels[0] = lab_row
        probs = np.concatenate([np.eye(pi.size)[lab_row][None],
                                batch.posteriors.reshape(n_u // width, width, pi.size)])
        io.write_probs(out / "mixture_pred.json", ProbMap(probs), {"true_pi": pi.tolist()})
        io.write_labels(out / "mixture_scribbles.pgm", LabelMap(labels))
    else:
        raise ManifestError(f"unknown synth kind {kind!r}")


def cmd_scribble(args, man: dict, seed: int, out: Path) -> None:
    gts = args.gt or man.get("gt", [])
    if not gts:
        raise ManifestError("scribble needs ground-truth files (--gt)")
    sc = dict(man.get("scribbles", {}))
    form = args.form or sc.get("form", "dir_random_walk")
    if form not in FORMS:
        raise ManifestError(f"unknown form {form!r}; expected one of {FORMS}")
    budget = args.budget if args.budget is not None else sc.get("budget")
    multiplier = sc.get("multiplier")
    step = int(args.step if args.step is not None else sc.get("step", 1))
    gt_maps = [io.read_labels(p) for p in gts]
    m = 1 + max(int(g.labels[g.labeled].max(initial=0)) for g in gt_maps)
    rng = make_rng(seed)
    stats, files = [], []
    for p, gt in zip(gts, gt_maps):
        if form == "skeleton":
            b = None
        else:
            # budgets larger than a class are capped at the class size
            base = int(budget) if budget is not None else BenchmarkSpec().budget
            b = matched_budget(gt, float(multiplier or 1.0), base)
        res = generate(gt, form, b, rng, step=step, p_momentum=float(sc.get("p_momentum", 0.9)))
        name = f"{_stem(p)}_scribble.pgm"
        io.write_labels(out / name, res.labels)
        st = compute_stats(res.labels, gt, m)
        stats.append(st)
        files.append({"gt": str(p), "scribble": name, "complete": bool(res.complete),
                      "draws": {str(k): v for k, v in res.draws.items()}, **st.to_dict()})
    io.write_json(out / "scribble_stats.json", {"form": form, "seed": seed, "files": files,
                                               "total": merge_stats(stats).to_dict()})


def cmd_train(args, man: dict, seed: int, out: Path) -> None:
    spec = bench_spec(man.get("dataset", {}), man.get("scribbles", {}))
    bench = make_benchmark(seed, spec)
    cfg = train_config(man.get("train", {}), seed)
    res = train(bench.train, bench.scribbles, cfg, test=bench.test, m=bench.m)
    io.write_csv(out / "train_log.csv", LOG_COLUMNS, res.log)
    io.write_json(out / "model.json", {"model": res.model.to_dict()})
    preds = [predict(res.model, x).argmax() for x, _ in bench.test]
    report = evaluate(preds, [g for _, g in bench.test], bench.m)
    stats = merge_stats([compute_stats(s, g, bench.m) for s, (_, g) in zip(bench.scribbles, bench.train)])
    io.write_json(out / "report.json", {"seed": seed, "metrics": report.to_dict(),
                                        "scribbles": stats.to_dict(),
                                        "pi": None if res.pi is None else res.pi.tolist()})


def cmd_study(args, man: dict, seed: int, out: Path) -> None:
    spec = bench_spec(man.get("dataset", {}), {"budget": man["budget"]} if "budget" in man else None)
    forms = man.get("forms", ["points", "dir_random_walk", "random_walk"])
    mults = [float(v) for v in man.get("multipliers", [1.0, 2.0, 4.0])]
    n_seeds = int(man.get("seeds", 5))
    seeds = [seed + i for i in range(n_seeds)]
    rows = run_study(forms, mults, seeds, int(man.get("epochs", 300)), spec)
    io.write_csv(out / "study_cells.csv", ["form", "multiplier", "seed", "n_labeled", "mean_dice"], rows)
    summary = summarize_study(rows)
    io.write_csv(out / "study_summary.csv", ["form", "multiplier", "mean_dice"],
                 [{"form": f, "multiplier": mu, "mean_dice": d} for (f, mu), d in summary.items()])
    from .plotting import write_line_chart
    series = {f: [summary.get((f, mu)) for mu in mults] for f in forms}
    write_line_chart(out / "study.svg", series, [f"{mu:g}n" for mu in mults],
                     title="PCE-only Dice by scribble budget", ylabel="mean Dice")
    io.write_json(out / "study_checks.json", {"checks": study_checks(summary), "seeds": seeds})


def cmd_estimate_pi(args, man: dict, seed: int, out: Path) -> None:
    if not args.pred or not args.scribbles:
        raise ManifestError("estimate-pi needs --pred and --scribbles")
    probs, idx = io.read_probs(args.pred)
    scr = io.read_labels(args.scribbles)
    if scr.shape != probs.shape:
        raise ManifestError("prediction and scribble shapes differ")
    m = probs.m
    scr.check_classes(m)
    counts = np.bincount(scr.labels[scr.labeled].astype(np.int64), minlength=m)[:m]
    pi0 = init_pi(counts)
    batch = PosteriorBatch(probs.probs[~scr.labeled], pi0)
    est = estimate_pi(batch, pi0, float(args.tol or man.get("tol", 1e-6)),
                      int(args.max_iter or man.get("max_iter", 100)))
    report = {"pi": est.pi.tolist(), "iterations": est.iterations, "converged": est.converged,
              "initial_pi": pi0.tolist()}
    if "true_pi" in idx:
        report["true_pi"] = idx["true_pi"]
        report["l1_error"] = float(np.abs(est.pi - np.asarray(idx["true_pi"])).sum())
    io.write_json(out / "pi.json", report)
    io.write_csv(out / "pi_trace.csv", ["iteration", "log_likelihood"],
                 [{"iteration": i, "log_likelihood": v} for i, v in enumerate(est.trace)])


def cmd_mix_preview(args, man: dict, seed: int, out: Path) -> None:
    if not args.image or len(args.image) != 2:
        raise ManifestError("mix-preview needs exactly two --image files")
    x1, x2 = (io.read_image(p) for p in args.image)
    cfg = MixConfig(**man.get("mix", {}))
    labels = [io.read_labels(p) for p in args.labels] if args.labels else None
    if labels is not None and len(labels) != 2:
        raise ManifestError("give --labels for both images or neither")
    if labels is None:
        # no supervision to mix: a single all-zero weight plane keeps the pipeline uniform
        ys, m = [np.zeros(x1.shape + (1,)), np.zeros(x2.shape + (1,))], None
    else:
        ys, m = labels, 1 + max(int(l.labels[l.labeled].max(initial=0)) for l in labels)
    rng = make_rng(seed)
    side = man.get("occlusion_side")
    plans = {}
    for tag, (a, b) in (("12", (0, 1)), ("21", (1, 0))):
        xa, xb = (x1, x2) if a == 0 else (x2, x1)
        plan = plan_mix(xa, xb, cfg, rng, occlusion_side=side)
        img, w = apply_mix(xa, ys[a], xb, ys[b], plan, m)
        if plan.occlusion is not None:
            img, w, _ = apply_occlusion(img, w, plan.occlusion)
        io.write_image(out / f"mixed_{tag}.pgm", img)
        if labels is not None:
            lab = np.where(w.sum(axis=-1) > 0, np.argmax(w, axis=-1), 255).astype(np.uint8)
            io.write_labels(out / f"mixed_{tag}_labels.pgm", LabelMap(lab))
        plans[tag] = plan.to_dict()
    io.write_json(out / "mix_plan.json", {"seed": seed, "plans": plans})


def cmd_metrics(args, man: dict, seed: int, out: Path) -> None:
    if not args.pred or not args.gt or len(args.pred) != len(args.gt):
        raise ManifestError("metrics needs matching --pred and --gt file lists")
    preds = [io.read_labels(p) for p in args.pred]
    gts = [io.read_labels(p) for p in args.gt]
    m = int(args.m or man.get("m") or 1 + max(int(g.labels[g.labeled].max(initial=0)) for g in gts))
    report = evaluate(preds, gts, m)
    io.write_json(out / "metrics.json", {"m": m, "files": [str(p) for p in args.pred], **report.to_dict()})


COMMANDS = {"synth": cmd_synth, "scribble": cmd_scribble, "train": cmd_train, "study": cmd_study,
            "estimate-pi": cmd_estimate_pi, "mix-preview": cmd_mix_preview, "metrics": cmd_metrics}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="scribbleseg", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--manifest", help="JSON manifest")
    common.add_argument("--seed", type=int, help=f"overrides ${SEED_ENV} and the manifest")
    common.add_argument("--out", default=".", help="output directory (created if missing)")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("synth", parents=[common], help="write a synthetic dataset or EM mixture files")
    p.add_argument("--kind", choices=["dataset", "mixture"])
    p = sub.add_parser("scribble", parents=[common], help="generate scribbles from ground truth")
    p.add_argument("--gt", nargs="+")
    p.add_argument("--form", choices=FORMS)
    p.add_argument("--budget", type=int, help=f"pixels per class (default {BenchmarkSpec().budget})")
    p.add_argument("--step", type=int)
    sub.add_parser("train", parents=[common], help="train on the synthetic benchmark")
    sub.add_parser("study", parents=[common], help="PCE-only scribble-efficiency study")
    p = sub.add_parser("estimate-pi", parents=[common], help="EM class-ratio estimate")
    p.add_argument("--pred", help="probability-map index JSON")
    p.add_argument("--scribbles", help="scribble label PGM")
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iter", type=int)
    p = sub.add_parser("mix-preview", parents=[common], help="write a mixed, occluded image pair")
    p.add_argument("--image", nargs="+")
    p.add_argument("--labels", nargs="+")
    p = sub.add_parser("metrics", parents=[common], help="Dice and Hausdorff per class")
    p.add_argument("--pred", nargs="+")
    p.add_argument("--gt", nargs="+")
    p.add_argument("--m", type=int)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        man = load_manifest(args.manifest, args.command)
        seed = resolve_seed(args.seed, man)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](args, man, seed, out)
    except TrainingDiverged as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except (io.FormatError, ManifestError, OSError, TypeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except ScribbleSegError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MODEL
    return 0


if __name__ == "__main__":
    sys.exit(main())
