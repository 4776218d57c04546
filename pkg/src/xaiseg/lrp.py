"""Layer-wise relevance propagation with per-layer rules.

For an affine layer ``z_k = sum_j a_j w_jk + b_k`` each rule redistributes
the upper relevance ``R_k`` onto the inputs ``a_j``. Bias shares are absorbed.
ReLU and Sigmoid pass relevance through, max-pooling routes it to the
winning input, Flatten and Upsample only reshape it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attribution import AttributionMap, _check_class, _check_input
from .net import (Conv2d, Flatten, Linear, MaxPool2d, Network, ReLU, Sigmoid, Upsample2d,
                  forward_with_trace, to_external)

__all__ = ["LRP0", "Epsilon", "Gamma", "AlphaBeta", "ZB", "default_rules", "lrp", "lrp_relevances"]


@dataclass(frozen=True)
class LRP0:
    pass


@dataclass(frozen=True)
class Epsilon:
    epsilon: float = 1e-6

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


@dataclass(frozen=True)
class Gamma:
    gamma: float = 0.25

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")


@dataclass(frozen=True)
class AlphaBeta:
    alpha: float = 1.0
    beta: float = 0.0

    def __post_init__(self):
        if self.alpha < 1 or abs(self.alpha - self.beta - 1) > 1e-12:
            raise ValueError("AlphaBeta needs alpha - beta = 1 and alpha >= 1")


@dataclass(frozen=True)
class ZB:
    low: float = 0.0
    high: float = 1.0

    def __post_init__(self):
        if self.low > self.high:
            raise ValueError("ZB bounds need low <= high")


RULES = {"lrp0": LRP0, "epsilon": Epsilon, "gamma": Gamma, "alphabeta": AlphaBeta, "zb": ZB}


def rule_from_dict(d: dict):
    d = dict(d)
    name = d.pop("rule").lower()
    return RULES[name](**d)


def rule_to_dict(rule) -> dict:
    name = {v: k for k, v in RULES.items()}[type(rule)]
    return {"rule": name, **rule.__dict__}


def default_rules(net: Network, first=ZB(), lower=AlphaBeta(), upper=Gamma(), dense=Epsilon(),
                  n_lower: int = 2, lower_includes_first: bool = False) -> dict[int, object]:
    """ZB on the first conv, AlphaBeta on the next ``n_lower`` convs, Gamma on
    the remaining convs and Epsilon on every Linear layer.

    With ``lower_includes_first`` the AlphaBeta block counts the first conv
    among its ``n_lower`` layers.
    """
    rules: dict[int, object] = {}
    convs = [i for i, l in enumerate(net.layers) if isinstance(l, Conv2d)]
    n_ab = n_lower - 1 if lower_includes_first else n_lower
    for rank, i in enumerate(convs):
        if rank == 0:
            rules[i] = first
        elif rank <= n_ab:
            rules[i] = lower
        else:
            rules[i] = upper
    for i, l in enumerate(net.layers):
        if isinstance(l, Linear):
            rules[i] = dense
    return rules


def uniform_rules(net: Network, rule) -> dict[int, object]:
    return {i: rule for i in net.param_layers()}


def _div(r, z, eps=0.0):
    """``r / (z + eps * sign(z))`` with 0/0 -> 0."""
    if eps:
        z = z + eps * np.where(z >= 0, 1, -1).astype(z.dtype)
    nz = z != 0
    return np.where(nz, r / np.where(nz, z, 1), 0)


def _pos(a):
    return np.maximum(a, 0)


def _neg(a):
    return np.minimum(a, 0)


def _affine_rule(layer, rule, a, w, b, R):
    fwd = layer.linear
    back = layer.linear_transpose
    if isinstance(rule, (LRP0, Epsilon, Gamma)):
        eps = rule.epsilon if isinstance(rule, Epsilon) else 0.0
        if isinstance(rule, Gamma):
            w = w + rule.gamma * _pos(w)
            b = b + rule.gamma * _pos(b)
        z, _ = fwd(a, w, b)
        return a * back(_div(R, z, eps), w, a.shape)
    if isinstance(rule, AlphaBeta):
        ap, an, wp, wn = _pos(a), _neg(a), _pos(w), _neg(w)
        zp = fwd(ap, wp, _pos(b))[0] + fwd(an, wn)[0]
        zn = fwd(ap, wn, _neg(b))[0] + fwd(an, wp)[0]
        sp, sn = _div(R, zp), _div(R, zn)
        rp = ap * back(sp, wp, a.shape) + an * back(sp, wn, a.shape)
        rn = ap * back(sn, wn, a.shape) + an * back(sn, wp, a.shape)
        return rule.alpha * rp - rule.beta * rn
    if isinstance(rule, ZB):
        lo = np.full_like(a, rule.low)
        hi = np.full_like(a, rule.high)
        wp, wn = _pos(w), _neg(w)
        z = fwd(a, w, b)[0] - fwd(lo, wp)[0] - fwd(hi, wn)[0]
        s = _div(R, z)
        return a * back(s, w, a.shape) - lo * back(s, wp, a.shape) - hi * back(s, wn, a.shape)
    raise TypeError(f"unknown LRP rule {rule!r}")


def lrp_relevances(net: Network, xs, class_index: int, rules: dict[int, object]):
    """Relevance at the input of every layer, for a batch ``xs``.

    Returns ``(input_relevance, per_layer)``. ``input_relevance`` is NCHW;
    ``per_layer[i]`` is the relevance at the input of layer ``i`` in the
    engine's internal layout.
    """
    missing = [i for i in net.param_layers() if i not in rules]
    if missing:
        raise KeyError(f"no LRP rule assigned to layer(s) {missing}")
    logits, tr = forward_with_trace(net, xs)
    R = np.zeros_like(logits)
    R[:, class_index] = logits[:, class_index]
    per_layer = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        layer, p = net.layers[i], net.params[i]
        if isinstance(layer, (Conv2d, Linear)):
            R = _affine_rule(layer, rules[i], tr.inputs[i], p[0], p[1], R)
        elif isinstance(layer, (ReLU, Sigmoid)):
            pass
        elif isinstance(layer, MaxPool2d):
            shape, idx = tr.caches[i]
            R = layer.route(R, idx, shape)
        elif isinstance(layer, (Flatten, Upsample2d)):
            R, _ = layer.backward(R, tr.caches[i], p)
        else:  # pragma: no cover
            raise TypeError(f"LRP has no rule for {layer.kind}")
        per_layer[i] = R
    return to_external(R), per_layer


def lrp(net: Network, x, class_index: int = 1, rules: dict[int, object] | None = None) -> AttributionMap:
    x = _check_input(net, x)
    _check_class(net, class_index)
    if rules is None:
        rules = default_rules(net)
    R, _ = lrp_relevances(net, x[None], class_index, rules)
    return AttributionMap(R[0].sum(axis=0), "lrp", class_index)
