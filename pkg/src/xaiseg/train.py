"""Adam training loop with flip augmentation and early stopping."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .evalmetrics import cls_metrics
from .net import Network, backward, forward, forward_with_trace, softmax

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 1e-8
    max_epochs: int = 60
    patience: int = 10
    flip_probability: float = 0.5
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if self.patience < 1 or self.max_epochs < 1 or self.batch_size < 1:
            raise ValueError("patience, max_epochs and batch_size must be >= 1")
        if not 0 <= self.flip_probability <= 1:
            raise ValueError("flip_probability must lie in [0, 1]")


class Adam:
    """Adam with L2 weight decay folded into the gradient."""

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps, self.wd = lr, beta1, beta2, eps, weight_decay
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1 - b1**self.t, 1 - b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if self.wd:
                g = g + self.wd * p
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype, copy=False)


def flat_params(net: Network) -> list[np.ndarray]:
    return [a for p in net.params if p is not None for a in p]


def flat_grads(grads) -> list[np.ndarray]:
    return [a for g in grads if g is not None for a in g]


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -float(logp[np.arange(n), labels].mean())
    g = np.exp(logp)
    g[np.arange(n), labels] -= 1
    return loss, g / n


def random_flips(x: np.ndarray, rng: np.random.Generator, p: float) -> np.ndarray:
    """Independent horizontal and vertical flips, each with probability ``p``."""
    x = x.copy()
    n = x.shape[0]
    hf = rng.random(n) < p
    vf = rng.random(n) < p
    x[hf] = x[hf][..., ::-1]
    x[vf] = x[vf][..., ::-1, :]
    return x


def predict(net: Network, x: np.ndarray, batch_size: int = 128) -> np.ndarray:
    out = [forward(net, x[i : i + batch_size]) for i in range(0, len(x), batch_size)]
    return np.concatenate(out).argmax(axis=1)


def predict_proba(net: Network, x: np.ndarray, batch_size: int = 128) -> np.ndarray:
    out = [softmax(forward(net, x[i : i + batch_size])) for i in range(0, len(x), batch_size)]
    return np.concatenate(out)


def train_classifier(net: Network, train, val, cfg: TrainConfig | None = None):
    """Train ``net`` on ``train = (x, y)`` and keep the best validation epoch.

    Validation balanced accuracy drives model selection and early stopping.
    Returns the frozen best network and a per-epoch history list.
    """
    cfg = cfg or TrainConfig()
    xtr, ytr = np.asarray(train[0], dtype=net.dtype), np.asarray(train[1], dtype=int)
    xva, yva = np.asarray(val[0], dtype=net.dtype), np.asarray(val[1], dtype=int)
    if len(xtr) == 0 or len(xva) == 0:
        raise ValueError("train and validation folds must be non-empty")

    net = net.copy()
    params = flat_params(net)
    opt = Adam(params, cfg.learning_rate, cfg.beta1, cfg.beta2, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)

    best_score, best_params, since_best = -np.inf, [p.copy() for p in params], 0
    history = []
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(len(xtr))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb = random_flips(xtr[idx], rng, cfg.flip_probability)
            logits, trace = forward_with_trace(net, xb)
            loss, g = cross_entropy(logits, ytr[idx])
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}")
            _, grads = backward(net, trace, g, need_params=True)
            opt.step(flat_grads(grads))
            losses.append(loss * len(idx))
        score = cls_metrics(predict(net, xva), yva).balanced_accuracy
        history.append({"epoch": epoch, "train_loss": sum(losses) / len(xtr), "val_balanced_accuracy": score})
        log.info("epoch %d loss %.4f val_ba %.4f", epoch, history[-1]["train_loss"], score)
        if score > best_score:
            best_score, best_params, since_best = score, [p.copy() for p in params], 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break

    for p, b in zip(params, best_params):
        p[...] = b
    return net.freeze(), history
