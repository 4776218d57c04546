"""Gradient- and reference-based attribution maps.

All methods explain the pre-softmax logit of ``class_index`` for a single
image ``x`` of shape ``net.input_shape`` and return an :class:`AttributionMap`
at input resolution, summed over channels.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .net import (Conv2d, Flatten, InputShapeError, Linear, MaxPool2d, Network, ReLU,
                  Sigmoid, Upsample2d, forward_with_trace, input_gradient, to_external)

#: below this |delta| DeepLift falls back to the plain gradient
DELTA_EPS = 1e-7


@dataclass
class AttributionMap:
    values: np.ndarray
    method: str
    class_index: int = 1

    @property
    def shape(self):
        return self.values.shape


def _check_input(net: Network, x) -> np.ndarray:
    x = np.asarray(x, dtype=net.dtype)
    if tuple(x.shape) != net.input_shape:
        raise InputShapeError(f"expected a single input of shape {net.input_shape}, got {x.shape}")
    return x


def _check_class(net: Network, class_index: int) -> None:
    if not 0 <= class_index < net.n_outputs:
        raise IndexError(f"class_index {class_index} out of range for {net.n_outputs} outputs")


def _batched_gradients(net, xs, class_index, batch_size=64):
    out = np.empty_like(xs)
    for i in range(0, len(xs), batch_size):
        out[i : i + batch_size] = input_gradient(net, xs[i : i + batch_size], class_index)
    return out


# ---------------------------------------------------------------------------
# baselines


@dataclass
class BaselineSpec:
    """Reference input(s) for IG, DeepLift and the Shap variants.

    ``kind`` is one of ``zero``, ``mean_damage_free``, ``damage_free`` (a
    distribution of sampled images) or ``random_normal``. ``source`` holds the
    damage-free pool, shape ``(N, C, H, W)``.
    """

    kind: str = "zero"
    n_samples: int = 10
    sigma: float = 1.0
    seed: int = 0
    source: np.ndarray | None = field(default=None, repr=False)

    KINDS = ("zero", "mean_damage_free", "damage_free", "random_normal")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown baseline kind {self.kind!r}")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.kind in ("mean_damage_free", "damage_free"):
            if self.source is None or len(self.source) == 0:
                raise ValueError("damage-free baselines need a non-empty source pool")

    def samples(self, shape) -> np.ndarray:
        """The baseline distribution as an array ``(n, *shape)``."""
        rng = np.random.default_rng(self.seed)
        if self.kind == "zero":
            return np.zeros((1, *shape))
        if self.kind == "random_normal":
            return rng.normal(0, self.sigma, size=(self.n_samples, *shape))
        src = np.asarray(self.source)
        if tuple(src.shape[1:]) != tuple(shape):
            raise InputShapeError(f"baseline pool has shape {src.shape[1:]}, expected {shape}")
        idx = rng.choice(len(src), self.n_samples, replace=len(src) < self.n_samples)
        return src[np.sort(idx)]

    def reference(self, shape) -> np.ndarray:
        """A single reference image: the mean of :meth:`samples`."""
        return self.samples(shape).mean(axis=0)


def _as_baseline(baseline, shape) -> np.ndarray:
    if baseline is None:
        return np.zeros(shape)
    if isinstance(baseline, BaselineSpec):
        return baseline.reference(shape)
    b = np.asarray(baseline)
    if b.shape != tuple(shape):
        raise InputShapeError(f"baseline shape {b.shape} != input shape {shape}")
    return b


def _as_pool(baseline, shape) -> np.ndarray:
    if isinstance(baseline, BaselineSpec):
        return baseline.samples(shape)
    b = np.asarray(baseline)
    if b.shape == tuple(shape):
        return b[None]
    if b.ndim == len(shape) + 1 and b.shape[1:] == tuple(shape):
        if len(b) == 0:
            raise ValueError("empty baseline pool")
        return b
    raise InputShapeError(f"baseline pool shape {b.shape} incompatible with {shape}")


# ---------------------------------------------------------------------------
# gradient family


def input_x_gradient(net: Network, x, class_index: int = 1) -> AttributionMap:
    x = _check_input(net, x)
    g = input_gradient(net, x, class_index)
    return AttributionMap((x * g).sum(axis=0), "input_x_gradient", class_index)


def integrated_gradients(net: Network, x, class_index: int = 1, baseline=None, steps: int = 50,
                         batch_size: int = 64) -> AttributionMap:
    """Midpoint-rule path integral of gradients from the baseline to ``x``."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    x = _check_input(net, x)
    _check_class(net, class_index)
    ref = _as_baseline(baseline, x.shape).astype(net.dtype)
    delta = x - ref
    alphas = ((np.arange(steps) + 0.5) / steps).astype(net.dtype)
    total = np.zeros(x.shape, dtype=np.float64)
    for i in range(0, steps, batch_size):
        a = alphas[i : i + batch_size, None, None, None]
        g = input_gradient(net, ref + a * delta, class_index)
        total += g.sum(axis=0, dtype=np.float64)
    attr = delta * (total / steps)
    return AttributionMap(attr.sum(axis=0).astype(net.dtype), "integrated_gradients", class_index)


def gradient_shap(net: Network, x, class_index: int = 1, baseline=None, n_samples: int = 10,
                  noise_sigma: float = 0.0, seed: int = 0, batch_size: int = 64) -> AttributionMap:
    """Expected gradients over baselines drawn from a pool and uniform path points."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    x = _check_input(net, x)
    _check_class(net, class_index)
    pool = _as_pool(baseline if baseline is not None else np.zeros(x.shape), x.shape).astype(net.dtype)
    rng = np.random.default_rng(seed)
    pick = rng.integers(len(pool), size=n_samples)
    alpha = rng.random(n_samples).astype(net.dtype)[:, None, None, None]
    noise = rng.normal(0, noise_sigma, size=(n_samples, *x.shape)).astype(net.dtype) if noise_sigma else 0
    total = np.zeros(x.shape, dtype=np.float64)
    for i in range(0, n_samples, batch_size):
        b = pool[pick[i : i + batch_size]]
        xi = x + (noise[i : i + batch_size] if noise_sigma else 0)
        g = input_gradient(net, b + alpha[i : i + batch_size] * (xi - b), class_index)
        total += ((xi - b) * g).sum(axis=0, dtype=np.float64)
    attr = total / n_samples
    return AttributionMap(attr.sum(axis=0).astype(net.dtype), "gradient_shap", class_index)


# ---------------------------------------------------------------------------
# DeepLift (Rescale rule)


def _safe_ratio(num, den, fallback):
    small = np.abs(den) < DELTA_EPS
    return np.where(small, fallback, num / np.where(small, 1, den))


def _maxpool_multipliers(layer: MaxPool2d, m, tx, tr, i):
    """Split each window's output delta between the input's and the
    reference's winners (half each), skipping winners whose own delta
    vanishes. Tied winners share their half equally, which keeps the rule
    independent of the scan order. Summation-to-delta stays exact."""
    shape = tx.inputs[i].shape
    dxw = layer.windows(tx.inputs[i] - tr.inputs[i])
    moved = np.abs(dxw) >= DELTA_EPS
    win_x = (layer.windows(tx.inputs[i]) == tx.outputs[i][..., None]) & moved
    win_r = (layer.windows(tr.inputs[i]) == tr.outputs[i][..., None]) & moved
    n_x, n_r = win_x.sum(-1), win_r.sum(-1)
    ok_x, ok_r = n_x > 0, n_r > 0
    both = ok_x & ok_r
    share_x = np.where(both, 0.5, ok_x).astype(m.dtype) / np.maximum(n_x, 1)
    share_r = np.where(both, 0.5, ok_r).astype(m.dtype) / np.maximum(n_r, 1)
    contrib = m * (tx.outputs[i] - tr.outputs[i])
    safe = np.where(moved, dxw, 1)
    gw = (win_x * (contrib * share_x)[..., None] + win_r * (contrib * share_r)[..., None]) / safe
    # neither side has a moving winner: the output delta is zero too, keep the gradient
    _, idx_x = tx.caches[i]
    mg = np.where(ok_x | ok_r, 0, m).astype(m.dtype)
    return layer.unwindows(gw.astype(m.dtype), shape) + layer.route(mg, idx_x, shape)


def deeplift_multipliers(net: Network, xs, refs, class_index: int) -> np.ndarray:
    """Input multipliers for batches of inputs ``xs`` against ``refs``."""
    _, tx = forward_with_trace(net, xs)
    _, tr = forward_with_trace(net, refs)
    out = tx.outputs[-1]
    m = np.zeros_like(out)
    m[:, class_index] = 1
    for i in range(len(net.layers) - 1, -1, -1):
        layer, p = net.layers[i], net.params[i]
        if isinstance(layer, (Conv2d, Linear)):
            m = layer.linear_transpose(m, p[0], tx.inputs[i].shape)
        elif isinstance(layer, (ReLU, Sigmoid)):
            dz = tx.inputs[i] - tr.inputs[i]
            da = tx.outputs[i] - tr.outputs[i]
            grad, _ = layer.backward(np.ones_like(dz), tx.caches[i], p)
            m = m * _safe_ratio(da, dz, grad)
        elif isinstance(layer, MaxPool2d):
            m = _maxpool_multipliers(layer, m, tx, tr, i)
        elif isinstance(layer, (Flatten, Upsample2d)):
            m, _ = layer.backward(m, tx.caches[i], p)
        else:  # pragma: no cover
            raise TypeError(f"DeepLift has no rule for {layer.kind}")
    return to_external(m)


def deeplift(net: Network, x, class_index: int = 1, baseline=None) -> AttributionMap:
    x = _check_input(net, x)
    _check_class(net, class_index)
    ref = _as_baseline(baseline, x.shape).astype(net.dtype)
    m = deeplift_multipliers(net, x[None], ref[None], class_index)[0]
    return AttributionMap(((x - ref) * m).sum(axis=0), "deeplift", class_index)


def deeplift_shap(net: Network, x, class_index: int = 1, baseline=None, batch_size: int = 32) -> AttributionMap:
    """DeepLift averaged over every image of the baseline distribution."""
    x = _check_input(net, x)
    _check_class(net, class_index)
    if baseline is None:
        raise ValueError("deeplift_shap needs a baseline distribution")
    pool = _as_pool(baseline, x.shape).astype(net.dtype)
    total = np.zeros(x.shape, dtype=np.float64)
    for i in range(0, len(pool), batch_size):
        refs = pool[i : i + batch_size]
        xs = np.broadcast_to(x, refs.shape)
        m = deeplift_multipliers(net, np.ascontiguousarray(xs), refs, class_index)
        total += ((xs - refs) * m).sum(axis=0, dtype=np.float64)
    attr = total / len(pool)
    return AttributionMap(attr.sum(axis=0).astype(net.dtype), "deeplift_shap", class_index)


# ---------------------------------------------------------------------------
# raw intensities

LUMA = np.array([0.299, 0.587, 0.114])


def grayscale(x) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim == 2:
        return x
    if x.shape[0] == 1:
        return x[0]
    if x.shape[0] == 3:
        return np.tensordot(LUMA, x, axes=1).astype(x.dtype)
    raise ValueError("grayscale expects 1 or 3 channels")


def raw_intensity(x, class_index: int = 1) -> AttributionMap:
    """Darkness as relevance: ``1 - gray(x)``."""
    return AttributionMap((1 - grayscale(x)).astype(np.float32), "raw", class_index)


# ---------------------------------------------------------------------------
# AugSmooth


@dataclass
class AugSmoothConfig:
    flips: tuple = ((False, False), (True, False), (False, True), (True, True))
    intensity_factors: tuple = (0.9, 1.0, 1.1)
    n_augmentations: int | None = 6
    seed: int = 0

    def __post_init__(self):
        if not self.flips or not self.intensity_factors:
            raise ValueError("at least one augmentation required")
        if any(f <= 0 for f in self.intensity_factors):
            raise ValueError("intensity factors must be positive")
        if self.n_augmentations is not None and self.n_augmentations < 1:
            raise ValueError("n_augmentations must be >= 1")

    def augmentations(self) -> list[tuple[bool, bool, float]]:
        combos = [(bool(h), bool(v), float(f)) for (h, v), f in
                  itertools.product(self.flips, self.intensity_factors)]
        n = self.n_augmentations
        if n is None or n >= len(combos):
            return combos
        rng = np.random.default_rng(self.seed)
        return [combos[i] for i in sorted(rng.choice(len(combos), n, replace=False))]


def _flip(a, h, v):
    if h:
        a = a[..., ::-1]
    if v:
        a = a[..., ::-1, :]
    return a


def aug_smooth(method: Callable[..., AttributionMap], net: Network, x, class_index: int = 1,
               cfg: AugSmoothConfig | None = None, **kwargs) -> AttributionMap:
    """Average ``method`` over flipped / intensity-scaled copies of ``x``."""
    cfg = cfg or AugSmoothConfig()
    x = np.asarray(x)
    maps = []
    for h, v, f in cfg.augmentations():
        xa = _flip(x, h, v)
        if f != 1.0:
            xa = xa * np.asarray(f, dtype=x.dtype)
        am = method(net, np.ascontiguousarray(xa), class_index, **kwargs)
        maps.append(np.ascontiguousarray(_flip(am.values, h, v)))
    values = np.mean(np.stack(maps), axis=0).astype(maps[0].dtype)
    return AttributionMap(values, f"{am.method}+augsmooth", class_index)
