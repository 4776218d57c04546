"""Mask-predicting explainer network and its training losses.

The explainer ``E`` maps an image to K per-class masks ``S`` in [0, 1]. For
target classes ``Y`` the masks are merged into a target mask ``m`` and a
non-target mask ``n`` (element-wise maxima), and the frozen classifier ``F``
is queried on ``x * m`` and on ``x * (1 - m)``:

* classification loss: mean binary cross-entropy of ``softmax(F(x*m))``
  against the multi-hot target over the K positive classes;
* negative-classification loss: cross-entropy of ``softmax(F(x*(1-m)))``
  against the damage-free class 0 (the entropy loss is the older variant);
* area loss: hinge keeping ``mean(m)`` inside ``[a_min, a_max]`` plus
  ``mean(n)``;
* total-variation loss: anisotropic L1 differences of ``m`` and ``n``.

Every loss comes with its gradient with respect to the masks, so training
back-propagates through ``F`` into ``E`` without an autodiff framework.
Class 0 is damage-free; mask ``k`` (0-based) belongs to class ``k + 1``.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .attribution import AttributionMap
from .net import (Conv2d, MaxPool2d, Network, ReLU, Sigmoid, Upsample2d, backward, build_network,
                  forward, forward_with_trace, softmax)
from .train import Adam, TrainConfig, TrainingDivergedError, flat_grads, flat_params

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


@dataclass
class ExplainerLossWeights:
    lambda_nc: float = 0.1
    lambda_a: float = 0.1
    lambda_tv: float = 0.1
    lambda_e: float = 0.1
    a_min: float = 0.001
    a_max: float = 0.15
    use_entropy: bool = False  # swap the negative-classification term for the entropy term

    def __post_init__(self):
        if min(self.lambda_nc, self.lambda_a, self.lambda_tv, self.lambda_e) < 0:
            raise ValueError("loss weights must be non-negative")
        if not 0 <= self.a_min < self.a_max <= 1:
            raise ValueError("need 0 <= a_min < a_max <= 1")


@dataclass
class AggregatedMasks:
    target: np.ndarray
    inverse: np.ndarray
    non_target: np.ndarray


def _target_matrix(targets, k: int) -> np.ndarray:
    """Class sets (1-based ids) -> boolean (B, K) membership."""
    out = np.zeros((len(targets), k), dtype=bool)
    for b, ys in enumerate(targets):
        ys = set(ys)
        if not ys:
            raise ValueError("target class set must be non-empty")
        bad = [y for y in ys if not 1 <= y <= k]
        if bad:
            raise ValueError(f"target classes {bad} outside 1..{k}")
        out[b, [y - 1 for y in ys]] = True
    return out


def _masked_max(S, sel):
    """Pixel-wise max over the selected masks and the winning mask index;
    samples with nothing selected get zeros and index -1."""
    vals = np.where(sel[:, :, None, None], S, -np.inf)
    idx = np.argmax(vals, axis=1)
    out = np.take_along_axis(vals, idx[:, None], axis=1)[:, 0]
    none = ~sel.any(axis=1)
    out[none] = 0.0
    idx[none] = -1
    return out, idx


def aggregate_masks(S, targets) -> AggregatedMasks:
    """Merge per-class masks ``S`` (K, H, W) for the class set ``targets``."""
    S = np.asarray(S)
    sel = _target_matrix([targets], S.shape[0])
    m, _ = _masked_max(S[None], sel)
    n, _ = _masked_max(S[None], ~sel)
    return AggregatedMasks(m[0], 1 - m[0], n[0])


# ---------------------------------------------------------------------------
# probability-level terms: (value per sample, d value / d p)


def classification_term(p, y):
    """Mean binary cross-entropy over the K positive classes.

    ``p`` is (B, K+1) softmax output, ``y`` (B, K) multi-hot targets.
    """
    q = np.clip(p[:, 1:], PROB_FLOOR, 1 - PROB_FLOOR)
    k = q.shape[1]
    val = -(y * np.log(q) + (1 - y) * np.log(1 - q)).sum(axis=1) / k
    dp = np.zeros_like(p)
    dp[:, 1:] = -(y / q - (1 - y) / (1 - q)) / k
    return val, dp


def negative_classification_term(p):
    p0 = np.maximum(p[:, 0], PROB_FLOOR)
    q = np.clip(p[:, 1:], 0, 1 - PROB_FLOOR)
    k = q.shape[1]
    val = -np.log(p0) - np.log(1 - q).sum(axis=1) / k
    dp = np.zeros_like(p)
    dp[:, 0] = -1 / p0
    dp[:, 1:] = 1 / (1 - q) / k
    return val, dp


def entropy_term(p):
    q = np.maximum(p[:, 1:], PROB_FLOOR)
    k = q.shape[1]
    val = (q * np.log(q)).sum(axis=1) / k
    dp = np.zeros_like(p)
    dp[:, 1:] = (np.log(q) + 1) / k
    return val, dp


def _softmax_backward(p, dp):
    return p * (dp - (p * dp).sum(axis=1, keepdims=True))


def area_term(m, n, a_min, a_max):
    """Per-sample hinge on mean(m) plus mean(n), with gradients."""
    hw = m.shape[-2] * m.shape[-1]
    mm = m.mean(axis=(-2, -1))
    val = np.maximum(0, mm - a_max) + np.maximum(0, a_min - mm) + n.mean(axis=(-2, -1))
    slope = (mm > a_max).astype(m.dtype) - (mm < a_min).astype(m.dtype)
    dm = np.broadcast_to((slope / hw)[:, None, None], m.shape).copy()
    dn = np.full_like(n, 1 / hw)
    return val, dm, dn


def _tv_single(a):
    hw = a.shape[-2] * a.shape[-1]
    dv = np.diff(a, axis=-2)
    dh = np.diff(a, axis=-1)
    val = (np.abs(dv).sum(axis=(-2, -1)) + np.abs(dh).sum(axis=(-2, -1))) / hw
    g = np.zeros_like(a)
    sv, sh = np.sign(dv) / hw, np.sign(dh) / hw
    g[..., 1:, :] += sv
    g[..., :-1, :] -= sv
    g[..., :, 1:] += sh
    g[..., :, :-1] -= sh
    return val, g


def tv_term(m, n):
    vm, gm = _tv_single(m)
    vn, gn = _tv_single(n)
    return vm + vn, gm, gn


# ---------------------------------------------------------------------------
# batched losses against the classifier


@dataclass
class LossTerms:
    total: float
    classification: float
    negative: float  # L_NC, or L_E when the entropy variant is active
    area: float
    tv: float


def _input_grad_of_probs(F: Network, xin, p_grad_fn):
    """Forward ``xin`` through F, map probabilities to a loss and return the
    per-sample loss plus its gradient w.r.t. ``xin``."""
    logits, trace = forward_with_trace(F, xin)
    logits = logits.astype(np.float64)
    p = softmax(logits)
    val, dp = p_grad_fn(p)
    dz = _softmax_backward(p, dp)
    gx, _ = backward(F, trace, dz.astype(F.dtype))
    return val, gx, p


def explainer_losses(F: Network, x, S, targets, weights: ExplainerLossWeights | None = None,
                     need_grad: bool = True):
    """Batch-mean loss terms and d total / d S.

    ``x`` is (B, C, H, W), ``S`` (B, K, H, W), ``targets`` one class set per
    sample. Returns ``(LossTerms, grad_S or None, extras)``.
    """
    w = weights or ExplainerLossWeights()
    x = np.asarray(x, dtype=F.dtype)
    S = np.asarray(S, dtype=np.float64)
    b, k = S.shape[:2]
    if F.n_outputs != k + 1:
        raise ValueError(f"classifier has {F.n_outputs} outputs, expected K+1 = {k + 1}")
    sel = _target_matrix(targets, k)
    m, m_idx = _masked_max(S, sel)
    n, n_idx = _masked_max(S, ~sel)
    y = sel.astype(np.float64)

    xm = x * m[:, None].astype(F.dtype)
    xi = x * (1 - m)[:, None].astype(F.dtype)
    lc, gxm, p = _input_grad_of_probs(F, xm, lambda p: classification_term(p, y))
    neg_fn = entropy_term if w.use_entropy else negative_classification_term
    lam_neg = w.lambda_e if w.use_entropy else w.lambda_nc
    ln, gxi, p_inv = _input_grad_of_probs(F, xi, neg_fn)
    la, dam, dan = area_term(m, n, w.a_min, w.a_max)
    lt, dtm, dtn = tv_term(m, n)

    per_sample = lc + lam_neg * ln + w.lambda_a * la + w.lambda_tv * lt
    terms = LossTerms(float(per_sample.mean()), float(lc.mean()), float(ln.mean()), float(la.mean()),
                      float(lt.mean()))
    extras = {"probs_masked": p, "probs_inverse": p_inv, "target": m, "non_target": n}
    if not need_grad:
        return terms, None, extras

    xd = x.astype(np.float64)
    gm = (gxm * xd).sum(axis=1) - lam_neg * (gxi * xd).sum(axis=1)
    gm = gm + w.lambda_a * dam + w.lambda_tv * dtm
    gn = w.lambda_a * dan + w.lambda_tv * dtn
    # route each merged-mask gradient to the mask that won the maximum
    gS = np.zeros_like(S)
    for idx, g in ((m_idx, gm), (n_idx, gn)):
        for j in range(k):
            gS[:, j] += np.where(idx == j, g, 0.0)
    return terms, gS / b, extras


def loss_classification(F: Network, x, targets, m) -> float:
    S = np.asarray(m, dtype=np.float64)[None, None]
    _, _, ex = explainer_losses(F, np.asarray(x)[None], S, [targets], need_grad=False)
    return float(classification_term(ex["probs_masked"], np.ones((1, 1)))[0][0])


def loss_negative_classification(F: Network, x, m_inverse) -> float:
    xi = np.asarray(x, dtype=F.dtype) * np.asarray(m_inverse, dtype=F.dtype)[None]
    return float(negative_classification_term(softmax(forward(F, xi[None]).astype(np.float64)))[0][0])


def loss_negative_entropy(F: Network, x, m_inverse) -> float:
    xi = np.asarray(x, dtype=F.dtype) * np.asarray(m_inverse, dtype=F.dtype)[None]
    return float(entropy_term(softmax(forward(F, xi[None]).astype(np.float64)))[0][0])


def loss_area(m, n, a_min: float = 0.001, a_max: float = 0.15) -> float:
    return float(area_term(np.asarray(m, dtype=np.float64)[None], np.asarray(n, dtype=np.float64)[None],
                           a_min, a_max)[0][0])


def loss_tv(m, n) -> float:
    return float(tv_term(np.asarray(m, dtype=np.float64)[None], np.asarray(n, dtype=np.float64)[None])[0][0])


def explainer_total_loss(S, F: Network, x, targets, weights: ExplainerLossWeights | None = None) -> LossTerms:
    terms, _, _ = explainer_losses(F, np.asarray(x)[None], np.asarray(S)[None], [targets], weights, need_grad=False)
    return terms


# ---------------------------------------------------------------------------
# network and training


def explainer_network(input_shape=(1, 64, 64), n_masks: int = 1, widths=(8, 16, 32), seed: int = 0,
                      init_from: Network | None = None) -> Network:
    """Conv trunk of the classifier, then upsample + conv blocks back to input
    resolution and a sigmoid head. ``init_from`` copies matching trunk
    weights from a classifier."""
    c = input_shape[0]
    layers = []
    for width in widths:
        layers += [Conv2d(c, width), ReLU(), MaxPool2d(2, 2)]
        c = width
    for width in reversed(widths[:-1]):
        layers += [Upsample2d(2), Conv2d(c, width), ReLU()]
        c = width
    layers += [Upsample2d(2), Conv2d(c, n_masks), Sigmoid()]
    net = build_network(layers, input_shape, seed=seed)
    if init_from is not None:
        n_trunk = 3 * len(widths)
        for i in range(n_trunk):
            src = init_from.params[i] if i < len(init_from.layers) else None
            if net.params[i] is not None and src is not None and src[0].shape == net.params[i][0].shape:
                net.params[i] = (np.array(src[0], dtype=net.dtype), np.array(src[1], dtype=net.dtype))
    return net


def explain_masks(E: Network, x, batch_size: int = 64) -> np.ndarray:
    x = np.asarray(x)
    return np.concatenate([forward(E, x[i : i + batch_size]) for i in range(0, len(x), batch_size)])


LOG_FIELDS = ("epoch", "total", "L_C", "L_NC", "L_A", "L_TV")


def train_explainer(E: Network, F: Network, images, weights: ExplainerLossWeights | None = None,
                    cfg: TrainConfig | None = None, targets=None, log_path=None):
    """Fit ``E`` on positive images against the frozen classifier ``F``.

    Only the explainer's weights move. ``targets`` defaults to ``{1}`` for
    every image. Returns the frozen explainer and per-epoch loss history.
    """
    cfg = cfg or TrainConfig(learning_rate=1e-5)
    weights = weights or ExplainerLossWeights()
    x = np.asarray(images, dtype=E.dtype)
    if len(x) == 0:
        raise ValueError("explainer training needs at least one positive image")
    targets = targets if targets is not None else [{1}] * len(x)
    E = E.copy()
    params = flat_params(E)
    opt = Adam(params, cfg.learning_rate, cfg.beta1, cfg.beta2, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    history = []
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(len(x))
        sums = np.zeros(5)
        for start in range(0, len(x), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb = x[idx]
            S, trace = forward_with_trace(E, xb)
            terms, gS, _ = explainer_losses(F, xb, S, [targets[i] for i in idx], weights)
            if not np.isfinite(terms.total):
                raise TrainingDivergedError(f"non-finite explainer loss at epoch {epoch}")
            _, grads = backward(E, trace, gS.astype(E.dtype), need_params=True)
            opt.step(flat_grads(grads))
            sums += len(idx) * np.array([terms.total, terms.classification, terms.negative, terms.area, terms.tv])
        row = dict(zip(LOG_FIELDS, [epoch, *(sums / len(x))]))
        history.append(row)
        log.info("explainer epoch %d total %.4f", epoch, row["total"])
    if log_path is not None:
        write_log(log_path, history)
    return E.freeze(), history


def write_log(path, history) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(LOG_FIELDS)
        for row in history:
            w.writerow([row["epoch"], *(f"{row[k]:.6f}" for k in LOG_FIELDS[1:])])


def explainer_attribution(E: Network, x, class_index: int = 1) -> AttributionMap:
    """The explainer's mask for ``class_index`` as an attribution map."""
    S = forward(E, np.asarray(x, dtype=E.dtype)[None])[0]
    return AttributionMap(S[class_index - 1], "explainer", class_index)
