"""From continuous attribution maps to clean binary masks.

Thresholding (simple or two-component GMM) followed by closing, area opening
and a wider second closing. Structuring elements are discrete Euclidean
disks ``{(dy, dx): dy^2 + dx^2 <= r^2}``, so a disk dilation is exactly the
set of pixels whose squared distance to the mask is at most ``r^2``.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .evalmetrics import metrics_from_confusion, seg_metrics
from .grid import component_sizes, label8, sq_distance_to_fast

STEPS = ("threshold", "close1", "area_open", "close2")


def disk_offsets(r: int) -> list[tuple[int, int]]:
    if r < 0:
        raise ValueError("radius must be >= 0")
    return [(dy, dx) for dy in range(-r, r + 1) for dx in range(-r, r + 1) if dy * dy + dx * dx <= r * r]


# ---------------------------------------------------------------------------
# thresholding


def _clamped(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError("attribution map contains non-finite values")
    return np.maximum(v, 0)


def threshold_simple(values, kappa: float = 2.0) -> np.ndarray:
    """``v > mean + kappa * std`` on the map with negatives set to zero."""
    v = _clamped(values)
    return v > v.mean() + kappa * v.std()


@dataclass
class Gmm1d:
    weights: tuple[float, float]
    means: tuple[float, float]
    variances: tuple[float, float]
    n_iter: int = 0
    converged: bool = False

    def posterior_high(self, x) -> np.ndarray:
        """Responsibility of the higher-mean component."""
        x = np.asarray(x, dtype=np.float64)
        logp = _component_logpdf(x, np.array(self.weights), np.array(self.means), np.array(self.variances))
        hi = int(np.argmax(self.means))
        norm = np.logaddexp(logp[0], logp[1])
        return np.exp(logp[hi] - norm)


VAR_FLOOR = 1e-12


def _component_logpdf(x, w, mu, var):
    return np.stack([np.log(w[k]) - 0.5 * np.log(2 * np.pi * var[k]) - (x - mu[k]) ** 2 / (2 * var[k]) for k in range(2)])


def gmm_fit_1d(values, max_iter: int = 100, tol: float = 1e-6) -> Gmm1d:
    """Two-component EM. Means start at the 20th and 95th percentiles with
    equal weights and the pooled variance."""
    x = np.asarray(values, dtype=np.float64).ravel()
    if len(np.unique(x)) < 2:
        raise ValueError("GMM fit needs at least two distinct values")
    mu = np.percentile(x, [20, 95])
    if mu[0] == mu[1]:
        mu = np.array([x.min(), x.max()])
    w = np.array([0.5, 0.5])
    var = np.full(2, max(x.var(), VAR_FLOOR))
    prev, converged, it = -np.inf, False, 0
    for it in range(1, max_iter + 1):
        logp = _component_logpdf(x, w, mu, var)
        norm = np.logaddexp(logp[0], logp[1])
        ll = norm.sum()
        resp = np.exp(logp - norm)
        nk = resp.sum(axis=1)
        nk = np.maximum(nk, 1e-12)
        w = nk / nk.sum()
        mu = (resp @ x) / nk
        var = np.maximum((resp * (x[None] - mu[:, None]) ** 2).sum(axis=1) / nk, VAR_FLOOR)
        if abs(ll - prev) < tol:
            converged = True
            break
        prev = ll
    return Gmm1d(tuple(w), tuple(mu), tuple(var), it, converged)


def threshold_gmm(values) -> np.ndarray:
    """Pixels whose posterior for the higher-mean component is at least 0.5."""
    v = _clamped(values)
    try:
        gmm = gmm_fit_1d(v)
    except ValueError:
        warnings.warn("degenerate attribution map: GMM threshold returns an empty mask", stacklevel=2)
        return np.zeros(v.shape, dtype=bool)
    return gmm.posterior_high(v) >= 0.5


def binarize(values, strategy: str = "simple", kappa: float = 2.0) -> np.ndarray:
    if strategy == "simple":
        return threshold_simple(values, kappa)
    if strategy == "gmm":
        return threshold_gmm(values)
    raise ValueError(f"unknown threshold strategy {strategy!r}")


# ---------------------------------------------------------------------------
# morphology


def dilate(mask, r: int) -> np.ndarray:
    """Disk dilation; pixels outside the grid count as background."""
    m = np.asarray(mask, dtype=bool)
    if r < 0:
        raise ValueError("radius must be >= 0")
    if not m.any():
        return m.copy()
    return sq_distance_to_fast(m) <= r * r


def erode(mask, r: int) -> np.ndarray:
    """Disk erosion; pixels outside the grid count as foreground."""
    m = np.asarray(mask, dtype=bool)
    return ~dilate(~m, r)


def close(mask, r: int) -> np.ndarray:
    return erode(dilate(mask, r), r)


def area_opening(mask, min_area: int) -> np.ndarray:
    """Drop 8-connected components smaller than ``min_area`` pixels."""
    if min_area < 1:
        raise ValueError("min_area must be >= 1")
    labels, n = label8(mask)
    keep = component_sizes(labels, n) >= min_area
    keep[0] = False
    return keep[labels]


# ---------------------------------------------------------------------------
# pipeline


@dataclass
class PostprocConfig:
    strategy: str = "simple"
    kappa: float = 2.0
    r1: int = 5
    min_area: int = 50
    r2: int = 25
    morphology: bool = True

    def __post_init__(self):
        if self.strategy not in ("simple", "gmm"):
            raise ValueError(f"unknown threshold strategy {self.strategy!r}")
        if self.r1 < 1 or self.r2 < 1:
            raise ValueError("closing radii must be >= 1")
        if self.min_area < 1:
            raise ValueError("min_area must be >= 1")

    @classmethod
    def for_patch_size(cls, size: int, reference: int = 256, **kw) -> "PostprocConfig":
        """Defaults rescaled from ``reference``-pixel patches: radii scale
        with the side length, the minimum area with its square."""
        s = size / reference
        base = cls()
        return cls(r1=max(1, round(base.r1 * s)), min_area=max(1, round(base.min_area * s * s)),
                   r2=max(1, round(base.r2 * s)), **kw)


def postprocess_pipeline(values, cfg: PostprocConfig | None = None) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Threshold, close(r1), area-open, close(r2).

    Returns the final mask and every intermediate keyed by step name. With
    ``cfg.morphology`` off, the thresholded mask is final.
    """
    cfg = cfg or PostprocConfig()
    steps = {"threshold": binarize(values, cfg.strategy, cfg.kappa)}
    if not cfg.morphology:
        return steps["threshold"], steps
    steps["close1"] = close(steps["threshold"], cfg.r1)
    steps["area_open"] = area_opening(steps["close1"], cfg.min_area)
    steps["close2"] = close(steps["area_open"], cfg.r2)
    return steps["close2"], steps


def write_step_metrics(path, per_step_confusions: dict) -> None:
    """CSV ``step,f1,precision,recall,iou`` from accumulated confusions."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["step", "f1", "precision", "recall", "iou"])
        for step in STEPS:
            if step in per_step_confusions:
                m = metrics_from_confusion(per_step_confusions[step])
                w.writerow([step, *(f"{getattr(m, k):.6f}" for k in ("f1", "precision", "recall", "iou"))])


def step_metrics(steps: dict[str, np.ndarray], gt) -> dict:
    return {name: asdict(seg_metrics(m, gt)) for name, m in steps.items()}
