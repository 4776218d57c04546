"""Artificial crack-growth trajectories and growth-monitoring statistics.

A trajectory starts from a damage-free image and one crack: its skeleton is
dilated once more at every step and the grown mask is darkened onto the clean
image. Monitoring quality is judged per trajectory by a linear fit of the
estimated severity against the step index.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .imageio import to_uint8, write_pgm
from .net import Network
from .postproc import dilate
from .severity import CALIBRATION_MM_PER_PX, max_width, skeletonize
from .synthdata import SynthConfig, gen_crack_path, hash_seed, quantize
from .train import predict


@dataclass
class GrowthTrajectory:
    images: np.ndarray  # (T, 1, H, W)
    masks: np.ndarray  # (T, H, W) bool, nested
    source_id: str = ""
    seed: int = 0

    def __len__(self):
        return len(self.masks)


def generate_trajectory(clean_image, crack_mask, n_steps: int = 5, r_dilate: int = 5, seed: int = 0,
                        darkness: float = 0.25, jitter: float = 0.05, source_id: str = "") -> GrowthTrajectory:
    """Step ``t`` (0-based) holds the crack skeleton dilated ``t + 1`` times
    with a disk of radius ``r_dilate``."""
    clean = np.asarray(clean_image, dtype=np.float32)
    if clean.ndim == 3:
        clean = clean[0]
    m = np.asarray(crack_mask, dtype=bool)
    if clean.shape != m.shape:
        raise ValueError("image and mask must share a shape")
    if n_steps < 1 or r_dilate < 1:
        raise ValueError("n_steps and r_dilate must be >= 1")
    grown = skeletonize(m)
    if not grown.any():
        raise ValueError("crack mask is empty after skeletonization")
    rng = np.random.default_rng(seed)
    # one darkening field per trajectory so a cracked pixel looks the same at every step
    factor = darkness + rng.uniform(-jitter, jitter, size=clean.shape)
    images, masks = [], []
    for _ in range(n_steps):
        grown = dilate(grown, r_dilate)
        masks.append(grown)
        images.append(quantize(np.where(grown, clean * factor, clean)))
    return GrowthTrajectory(np.stack(images)[:, None].astype(np.float32), np.stack(masks), source_id, seed)


def make_trajectories(clean_images, n: int, cfg: SynthConfig | None = None, seed: int = 0, n_steps: int = 5,
                      r_dilate: int = 5, source_ids=None) -> list[GrowthTrajectory]:
    """``n`` trajectories, each on a randomly drawn damage-free image with one
    freshly generated crack (single cracks: branching is not modelled)."""
    cfg = cfg or SynthConfig()
    pool = np.asarray(clean_images)
    if len(pool) == 0:
        raise ValueError("empty damage-free pool")
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(pool), n, replace=len(pool) < n)
    out = []
    for i, k in enumerate(picks):
        img = pool[k]
        size = img.shape[-1]
        attempt, crack = 0, np.zeros(img.shape[-2:], dtype=bool)
        while not crack.any():
            crack = gen_crack_path(size, cfg, seed=hash_seed(seed, i, attempt), n_cracks=1)
            attempt += 1
        sid = str(source_ids[k]) if source_ids is not None else str(int(k))
        out.append(generate_trajectory(img, crack, n_steps, r_dilate, seed=hash_seed(seed, i, 99), source_id=sid))
    return out


# ---------------------------------------------------------------------------
# statistics


def linear_fit(values, x=None) -> tuple[float, float, float]:
    """Least-squares ``(slope, intercept, r)``; ``x`` defaults to ``0..n-1``.
    ``r`` is 0 when either variable has zero variance."""
    y = np.asarray(values, dtype=np.float64)
    x = np.arange(len(y), dtype=np.float64) if x is None else np.asarray(x, dtype=np.float64)
    if len(y) < 2 or x.shape != y.shape:
        raise ValueError("linear_fit needs at least two (x, y) points")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy, sxy = dx @ dx, dy @ dy, dx @ dy
    if sxx == 0:
        raise ValueError("linear_fit needs at least two distinct x values")
    slope = sxy / sxx
    r = 0.0 if syy == 0 else float(np.clip(sxy / np.sqrt(sxx * syy), -1.0, 1.0))
    return float(slope), float(y.mean() - slope * x.mean()), r


def slope_mape(est_slopes, true_slopes) -> float:
    """Mean ``|est - true| / |true|`` in percent; zero true slopes are
    dropped with a warning."""
    est, true = np.asarray(est_slopes, dtype=float), np.asarray(true_slopes, dtype=float)
    if est.shape != true.shape or est.size == 0:
        raise ValueError("slope_mape needs two non-empty sequences of equal length")
    keep = true != 0
    if not keep.all():
        warnings.warn(f"{int((~keep).sum())} trajectories with zero true slope excluded", stacklevel=2)
    if not keep.any():
        raise ValueError("every true slope is zero")
    return float(np.mean(np.abs(est[keep] - true[keep]) / np.abs(true[keep])) * 100)


@dataclass
class TrajectoryMetrics:
    steps: list[int]
    true_area: list[float]
    est_area: list[float]
    true_width: list[float]
    est_width: list[float]
    retained: bool
    r_area: float = float("nan")
    r_width: float = float("nan")
    slope_true_area: float = float("nan")
    slope_est_area: float = float("nan")
    slope_true_width: float = float("nan")
    slope_est_width: float = float("nan")


@dataclass
class GrowthSummary:
    method: str
    avg_r_area: float
    mape_area: float
    avg_r_width: float
    mape_width: float
    n_retained: int
    per_trajectory: list[TrajectoryMetrics] = field(default_factory=list, repr=False)


MIN_RETAINED_STEPS = 3


def trajectory_metrics(traj: GrowthTrajectory, positive, est_masks,
                       calibration: float = CALIBRATION_MM_PER_PX) -> TrajectoryMetrics:
    """Severity sequences over the steps flagged in ``positive``; widths in px."""
    steps = [int(t) for t in np.flatnonzero(positive)]
    ta = [float(traj.masks[t].sum()) for t in steps]
    tw = [max_width(traj.masks[t], calibration)[0] for t in steps]
    ea = [float(np.asarray(est_masks[t], dtype=bool).sum()) for t in steps]
    ew = [max_width(est_masks[t], calibration)[0] for t in steps]
    tm = TrajectoryMetrics(steps, ta, ea, tw, ew, retained=len(steps) >= MIN_RETAINED_STEPS)
    if tm.retained:
        tm.slope_true_area, _, _ = linear_fit(ta, steps)
        tm.slope_est_area, _, tm.r_area = linear_fit(ea, steps)
        tm.slope_true_width, _, _ = linear_fit(tw, steps)
        tm.slope_est_width, _, tm.r_width = linear_fit(ew, steps)
    return tm


def evaluate_growth(trajectories, classifier: Network | None = None,
                    estimator: Callable[[np.ndarray], np.ndarray] | None = None, method: str = "oracle",
                    calibration: float = CALIBRATION_MM_PER_PX) -> GrowthSummary:
    """Average r and slope MAPE (area and width) over retained trajectories.

    Steps the ``classifier`` labels damage-free are dropped (all steps are kept
    without a classifier) and trajectories with fewer than three remaining
    steps are discarded. ``estimator`` maps one image ``(C, H, W)`` to a mask;
    without it the ground-truth masks are used (oracle mode).
    """
    per = []
    for traj in trajectories:
        if classifier is not None:
            positive = predict(classifier, traj.images.astype(classifier.dtype)) == 1
        else:
            positive = np.ones(len(traj), dtype=bool)
        if estimator is None:
            est = traj.masks
        else:
            est = [estimator(traj.images[t]) if positive[t] else None for t in range(len(traj))]
        per.append(trajectory_metrics(traj, positive, est, calibration))
    kept = [t for t in per if t.retained]
    if not kept:
        raise ValueError("no trajectory retained three or more positive steps")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ma = slope_mape([t.slope_est_area for t in kept], [t.slope_true_area for t in kept])
        try:
            mw = slope_mape([t.slope_est_width for t in kept], [t.slope_true_width for t in kept])
        except ValueError:
            mw = float("nan")
    return GrowthSummary(method, float(np.mean([t.r_area for t in kept])), ma,
                         float(np.mean([t.r_width for t in kept])), mw, len(kept), per)


# ---------------------------------------------------------------------------
# files

INDEX_FIELDS = ("trajectory", "step", "image_path", "mask_path", "source_id", "seed")
SUMMARY_FIELDS = ("method", "avg_r_area", "mape_area", "avg_r_width", "mape_width", "n_retained")


def write_trajectories(trajectories, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, traj in enumerate(trajectories):
        d = out / f"traj_{i:03d}"
        d.mkdir(exist_ok=True)
        for t in range(len(traj)):
            img_rel, mask_rel = f"{d.name}/step_{t}.pgm", f"{d.name}/step_{t}_mask.pgm"
            write_pgm(out / img_rel, to_uint8(traj.images[t, 0]))
            write_pgm(out / mask_rel, traj.masks[t])
            rows.append((i, t, img_rel, mask_rel, traj.source_id, traj.seed))
    index = out / "index.csv"
    with open(index, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(INDEX_FIELDS)
        w.writerows(rows)
    return index


def write_summary(path, summaries) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(SUMMARY_FIELDS)
        for s in summaries:
            w.writerow([s.method, *(f"{v:.6f}" for v in (s.avg_r_area, s.mape_area, s.avg_r_width, s.mape_width)),
                        s.n_retained])
