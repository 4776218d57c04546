"""Glue between a trained classifier, the attribution methods and
post-processing: method construction from config, an image-level worker
pool, and the benchmark table."""

from __future__ import annotations

import csv
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import attribution as A
from .config import AugConfig, MethodConfig, RunConfig
from .evalmetrics import PixelConfusion, confusion, metrics_from_confusion
from .explainer import explainer_attribution
from .lrp import default_rules, lrp, rule_from_dict
from .net import Network
from .postproc import PostprocConfig, postprocess_pipeline
from .synthdata import hash_seed

# methods that compare against a damage-free reference
REFERENCE_METHODS = ("integrated_gradients", "deeplift", "deeplift_shap", "gradient_shap")


def make_baseline(mcfg: MethodConfig, damage_free: np.ndarray | None, seed: int) -> A.BaselineSpec:
    kind = mcfg.baseline.kind
    if mcfg.name in ("deeplift_shap", "gradient_shap") and kind == "mean_damage_free":
        kind = "damage_free"  # the Shap variants average over the sampled set itself
    return A.BaselineSpec(kind, mcfg.baseline.n_samples, mcfg.baseline.sigma, seed,
                          damage_free if kind in ("mean_damage_free", "damage_free") else None)


def make_attributor(mcfg: MethodConfig, net: Network, damage_free=None, explainer: Network | None = None,
                    seed: int = 0):
    """A function ``(x, image_seed) -> AttributionMap`` for the configured method."""
    name = mcfg.name
    kw: dict = {}
    if name in REFERENCE_METHODS:
        spec = make_baseline(mcfg, damage_free, seed)
        kw["baseline"] = spec.samples(net.input_shape) if name in ("deeplift_shap", "gradient_shap") else \
            spec.reference(net.input_shape)
    if name == "integrated_gradients":
        kw["steps"] = mcfg.steps
    if name == "gradient_shap":
        kw.update(n_samples=mcfg.n_samples, noise_sigma=mcfg.noise_sigma)
    if name == "lrp":
        lc = mcfg.lrp
        kw["rules"] = default_rules(net, rule_from_dict(lc.first), rule_from_dict(lc.lower), rule_from_dict(lc.upper),
                                    rule_from_dict(lc.dense), lc.n_lower, lc.lower_includes_first)
    if name == "explainer" and explainer is None:
        raise ValueError("the explainer method needs a trained explainer model")

    base = {
        "input_x_gradient": A.input_x_gradient,
        "integrated_gradients": A.integrated_gradients,
        "deeplift": A.deeplift,
        "deeplift_shap": A.deeplift_shap,
        "gradient_shap": A.gradient_shap,
        "lrp": lrp,
        "explainer": lambda _net, x, c, **k: explainer_attribution(explainer, x, c),
        "raw": lambda _net, x, c, **k: A.raw_intensity(x, c),
    }[name]

    def run(x, image_seed: int = 0) -> A.AttributionMap:
        extra = dict(kw)
        if name == "gradient_shap":
            extra["seed"] = image_seed
        if mcfg.aug_smooth.enabled:
            return A.aug_smooth(base, net, x, 1, _aug(mcfg.aug_smooth, image_seed), **extra)
        return base(net, x, 1, **extra)

    return run


def _aug(ac: AugConfig, seed: int) -> A.AugSmoothConfig:
    return A.AugSmoothConfig(ac.flips, ac.intensity_factors, ac.n_augmentations, seed)


# ---------------------------------------------------------------------------
# worker pool

_WORKER: dict = {}


def _init_worker(mcfg, net, damage_free, explainer, seed):
    _WORKER["run"] = make_attributor(mcfg, net, damage_free, explainer, seed)


def _attribute_one(args):
    x, image_seed = args
    t = time.perf_counter()
    values = _WORKER["run"](x, image_seed).values
    return values, time.perf_counter() - t


def attribute_images(mcfg: MethodConfig, net: Network, images, damage_free=None, explainer=None, seed: int = 0,
                     jobs: int = 1, ids=None) -> tuple[list[np.ndarray], list[float]]:
    """Attribution maps and per-image attribution seconds, in input order.

    Per-image seeds derive from ``seed`` and the image id, so the maps do
    not depend on ``jobs``.
    """
    ids = range(len(images)) if ids is None else ids
    tasks = [(np.asarray(x, dtype=net.dtype), hash_seed(seed, int(i))) for x, i in zip(images, ids)]
    init = (mcfg, net, damage_free, explainer, seed)
    if jobs == 1:
        _init_worker(*init)
        results = [_attribute_one(t) for t in tasks]
    else:
        with ProcessPoolExecutor(jobs, initializer=_init_worker, initargs=init) as pool:
            results = list(pool.map(_attribute_one, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    return [r[0] for r in results], [r[1] for r in results]


# ---------------------------------------------------------------------------
# benchmark

BENCHMARK_FIELDS = ("method", "threshold", "morphology", "f1", "precision", "recall", "iou", "n_images",
                    "seconds_per_image")


@dataclass
class BenchmarkRow:
    method: str
    threshold: str
    morphology: bool
    f1: float
    precision: float
    recall: float
    iou: float
    n_images: int
    seconds_per_image: float


def score_maps(maps, gts, pcfg: PostprocConfig) -> dict[tuple[str, bool], PixelConfusion]:
    """Micro-averaged confusions for every (threshold, morphology) pair."""
    out = {}
    for strategy in ("simple", "gmm"):
        cfg = replace(pcfg, strategy=strategy, morphology=True)
        on, off = PixelConfusion(0, 0, 0, 0), PixelConfusion(0, 0, 0, 0)
        for a, gt in zip(maps, gts):
            final, steps = postprocess_pipeline(a, cfg)
            on = on + confusion(final, gt)
            off = off + confusion(steps["threshold"], gt)
        out[(strategy, True)], out[(strategy, False)] = on, off
    return out


def run_benchmark(cfg: RunConfig, net: Network, images, gts, damage_free, explainer=None,
                  ids=None) -> list[BenchmarkRow]:
    rows = []
    for name in cfg.benchmark.methods:
        mcfg = replace(cfg.method, name=name)
        maps, secs = attribute_images(mcfg, net, images, damage_free, explainer, cfg.seed, cfg.jobs, ids)
        per_image = float(np.mean(secs)) if secs else 0.0
        for (strategy, morph), c in score_maps(maps, gts, cfg.postproc).items():
            m = metrics_from_confusion(c)
            rows.append(BenchmarkRow(name, strategy, morph, m.f1, m.precision, m.recall, m.iou, len(maps), per_image))
    return rows


def write_benchmark(path, rows: list[BenchmarkRow]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(BENCHMARK_FIELDS)
        for r in rows:
            w.writerow([r.method, r.threshold, "on" if r.morphology else "off",
                        *(f"{v:.6f}" for v in (r.f1, r.precision, r.recall, r.iou)), r.n_images,
                        f"{r.seconds_per_image:.6f}"])


def drop_columns(path, names=("seconds_per_image",)) -> list[list[str]]:
    """CSV rows without the given columns, for timing-free comparisons."""
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    keep = [i for i, h in enumerate(rows[0]) if h not in names]
    return [[r[i] for i in keep] for r in rows]


def growth_estimator(run, pcfg: PostprocConfig):
    """Image -> post-processed mask, for :func:`growth.evaluate_growth`."""

    def estimate(image):
        return postprocess_pipeline(run(image).values, pcfg)[0]

    return estimate
