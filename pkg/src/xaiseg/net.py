"""Small numpy neural-network engine.

The public surface speaks NCHW: ``Network.input_shape`` is ``(C, H, W)`` and
:func:`forward` / :func:`input_gradient` / :func:`backward` take and return
NCHW batches. Inside a pass image tensors are channels-last (NHWC) so each
convolution is one tall matrix product; :class:`Trace` entries use that
internal layout. Conv weights are stored ``(out, in, k, k)`` and Flatten
emits features in C, H, W order, so parameters do not depend on the layout.

Arithmetic follows the dtype of the parameters; :meth:`Network.astype` gives
a float64 twin for numerical checks.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Any, ClassVar, Sequence

import numpy as np
from numpy.lib.stride_tricks import as_strided

__all__ = [
    "Conv2d",
    "ReLU",
    "MaxPool2d",
    "Linear",
    "Flatten",
    "Upsample2d",
    "Sigmoid",
    "Network",
    "Trace",
    "InputShapeError",
    "build_network",
    "minivgg",
    "forward",
    "forward_with_trace",
    "backward",
    "softmax",
    "input_gradient",
    "weights_checksum",
    "to_internal",
    "to_external",
]


class InputShapeError(ValueError):
    pass


def to_internal(x: np.ndarray) -> np.ndarray:
    """NCHW -> NHWC; other ranks pass through."""
    return np.ascontiguousarray(x.transpose(0, 2, 3, 1)) if x.ndim == 4 else x


def to_external(x: np.ndarray) -> np.ndarray:
    """NHWC -> NCHW; other ranks pass through."""
    return np.ascontiguousarray(x.transpose(0, 3, 1, 2)) if x.ndim == 4 else x


# ---------------------------------------------------------------------------
# layers


class Layer:
    kind: ClassVar[str] = ""
    has_params: ClassVar[bool] = False

    def out_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        raise NotImplementedError

    def param_shapes(self) -> tuple[tuple[int, ...], tuple[int, ...]] | None:
        return None

    def forward(self, x, params):
        """Return ``(y, cache)``; the cache feeds :meth:`backward`."""
        raise NotImplementedError

    def backward(self, g, cache, params, need_params=True):
        """Return ``(grad_x, (grad_w, grad_b) or None)``."""
        raise NotImplementedError

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        d.update(self.__dict__)
        return d


@dataclass(frozen=True)
class Conv2d(Layer):
    in_channels: int
    out_channels: int
    kernel_size: int = 3
    stride: int = 1
    padding: int = 1

    kind: ClassVar[str] = "Conv2d"
    has_params: ClassVar[bool] = True

    def __post_init__(self):
        if self.kernel_size < 1 or self.stride < 1 or self.padding < 0:
            raise ValueError(f"invalid Conv2d parameters: {self}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError(f"invalid Conv2d channels: {self}")

    def out_shape(self, in_shape):
        c, h, w = in_shape
        if c != self.in_channels:
            raise InputShapeError(f"Conv2d expects {self.in_channels} channels, got {c}")
        k, s, p = self.kernel_size, self.stride, self.padding
        ho, wo = (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1
        if ho < 1 or wo < 1:
            raise InputShapeError(f"Conv2d input {in_shape} too small")
        return (self.out_channels, ho, wo)

    def param_shapes(self):
        k = self.kernel_size
        return (self.out_channels, self.in_channels, k, k), (self.out_channels,)

    def fan_in(self) -> int:
        return self.in_channels * self.kernel_size**2

    @staticmethod
    def _wmat(w):
        # (O, C, k, k) -> (k*k*C, O), rows ordered like the im2col taps
        return w.transpose(2, 3, 1, 0).reshape(-1, w.shape[0])

    def _im2col(self, x):
        n, h, w, c = x.shape
        k, s, p = self.kernel_size, self.stride, self.padding
        ho, wo = (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1
        if p:
            x = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
        if c == 1:
            # single channel: tap-major copies move whole image rows
            cols = np.empty((k * k, n, ho, wo), dtype=x.dtype)
            for i in range(k):
                for j in range(k):
                    cols[i * k + j] = x[:, i : i + s * ho : s, j : j + s * wo : s, 0]
            return cols.reshape(k * k, -1).T, ho, wo
        x = np.ascontiguousarray(x)
        # within one kernel row the (tap, channel) run is contiguous in NHWC
        sn, sh, sw, sc = x.strides
        view = as_strided(x, (n, ho, wo, k, k * c), (sn, sh * s, sw * s, sh, sc), writeable=False)
        return view.reshape(n * ho * wo, k * k * c), ho, wo

    def _col2im(self, dcols, x_shape, ho, wo):
        n, h, w, c = x_shape
        k, s, p = self.kernel_size, self.stride, self.padding
        out = np.zeros((n, h + 2 * p, w + 2 * p, c), dtype=dcols.dtype)
        if c == 1:
            d = dcols.T.reshape(k, k, n, ho, wo)
            for i in range(k):
                for j in range(k):
                    out[:, i : i + s * ho : s, j : j + s * wo : s, 0] += d[i, j]
            return out[:, p : p + h, p : p + w]
        d = dcols.reshape(n, ho, wo, k, k, c)
        for i in range(k):
            for j in range(k):
                out[:, i : i + s * ho : s, j : j + s * wo : s] += d[:, :, :, i, j]
        return out[:, p : p + h, p : p + w]

    def linear(self, x, w, b=None):
        """Affine map of an NHWC batch with explicit weights; returns ``(y, cols)``."""
        cols, ho, wo = self._im2col(x)
        y = cols @ self._wmat(w)
        if b is not None:
            y += b
        return y.reshape(x.shape[0], ho, wo, w.shape[0]), cols

    def linear_transpose(self, g, w, x_shape):
        _, ho, wo, o = g.shape
        k, p = self.kernel_size, self.padding
        if self.stride == 1 and p <= k - 1 and o <= 4 * self.in_channels:
            # stride-1 transpose is a correlation with the flipped kernel;
            # cheaper than scattering columns unless it fans out to many channels
            flipped = Conv2d(o, self.in_channels, k, 1, k - 1 - p)
            wt = w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
            return flipped.linear(g, wt)[0]
        if self.in_channels == 1:
            # tap-major product keeps the scatter below contiguous
            dcols = (self._wmat(w) @ g.reshape(-1, o).T).T
        else:
            dcols = g.reshape(-1, o) @ self._wmat(w).T
        return self._col2im(dcols, x_shape, ho, wo)

    def forward(self, x, params):
        w, b = params
        y, cols = self.linear(x, w, b)
        return y, (x.shape, cols)

    def backward(self, g, cache, params, need_params=True):
        w, _ = params
        x_shape, cols = cache
        gx = self.linear_transpose(g, w, x_shape)
        if not need_params:
            return gx, None
        o = w.shape[0]
        gm = g.reshape(-1, o)
        k, c = self.kernel_size, self.in_channels
        gw = (cols.T @ gm).reshape(k, k, c, o).transpose(3, 2, 0, 1)
        return gx, (np.ascontiguousarray(gw), gm.sum(axis=0))


@dataclass(frozen=True)
class Linear(Layer):
    in_features: int
    out_features: int

    kind: ClassVar[str] = "Linear"
    has_params: ClassVar[bool] = True

    def __post_init__(self):
        if self.in_features < 1 or self.out_features < 1:
            raise ValueError(f"invalid Linear parameters: {self}")

    def out_shape(self, in_shape):
        if tuple(in_shape) != (self.in_features,):
            raise InputShapeError(f"Linear expects ({self.in_features},), got {in_shape}")
        return (self.out_features,)

    def param_shapes(self):
        return (self.out_features, self.in_features), (self.out_features,)

    def fan_in(self) -> int:
        return self.in_features

    def linear(self, x, w, b=None):
        y = x @ w.T
        if b is not None:
            y = y + b
        return y, None

    def linear_transpose(self, g, w, x_shape):
        return g @ w

    def forward(self, x, params):
        w, b = params
        return x @ w.T + b, x

    def backward(self, g, cache, params, need_params=True):
        w, _ = params
        return g @ w, ((g.T @ cache, g.sum(axis=0)) if need_params else None)


@dataclass(frozen=True)
class ReLU(Layer):
    kind: ClassVar[str] = "ReLU"

    def out_shape(self, in_shape):
        return tuple(in_shape)

    def forward(self, x, params):
        return np.maximum(x, 0), x

    def backward(self, g, cache, params, need_params=True):
        return g * (cache > 0), None


@dataclass(frozen=True)
class Sigmoid(Layer):
    kind: ClassVar[str] = "Sigmoid"

    def out_shape(self, in_shape):
        return tuple(in_shape)

    def forward(self, x, params):
        # exp(-|x|) never overflows
        e = np.exp(-np.abs(x))
        y = np.where(x >= 0, 1 / (1 + e), e / (1 + e)).astype(x.dtype, copy=False)
        return y, y

    def backward(self, g, cache, params, need_params=True):
        return g * cache * (1 - cache), None


@dataclass(frozen=True)
class MaxPool2d(Layer):
    window: int = 2
    stride: int = 2

    kind: ClassVar[str] = "MaxPool2d"

    def __post_init__(self):
        if self.window < 1 or self.stride < 1:
            raise ValueError(f"invalid MaxPool2d parameters: {self}")

    def out_shape(self, in_shape):
        c, h, w = in_shape
        k, s = self.window, self.stride
        ho, wo = (h - k) // s + 1, (w - k) // s + 1
        if ho < 1 or wo < 1:
            raise InputShapeError(f"MaxPool2d input {in_shape} too small")
        return (c, ho, wo)

    def _sizes(self, x_shape):
        k, s = self.window, self.stride
        return (x_shape[1] - k) // s + 1, (x_shape[2] - k) // s + 1

    def _tiled(self, x_shape) -> bool:
        k = self.window
        return k == self.stride and x_shape[1] % k == 0 and x_shape[2] % k == 0

    def _offsets(self, ho, wo):
        k, s = self.window, self.stride
        for t in range(k * k):
            i, j = divmod(t, k)
            yield t, (slice(None), slice(i, i + s * ho, s), slice(j, j + s * wo, s))

    def windows(self, x):
        """Window values of an NHWC batch, ``(N, Ho, Wo, C, k*k)``, row-major."""
        ho, wo = self._sizes(x.shape)
        return np.stack([x[sl] for _, sl in self._offsets(ho, wo)], axis=-1)

    def unwindows(self, gw, x_shape):
        """Adjoint of :meth:`windows`: sum window values back onto the input grid."""
        ho, wo = self._sizes(x_shape)
        out = np.zeros(x_shape, dtype=gw.dtype)
        for t, sl in self._offsets(ho, wo):
            out[sl] += gw[..., t]
        return out

    def forward(self, x, params):
        n, h, w, c = x.shape
        ho, wo = self._sizes(x.shape)
        k = self.window
        if self._tiled(x.shape):
            # reduce along window rows, then across rows: the winner is the
            # first maximum in row-major window order
            xr = x.reshape(n, ho, k, wo, k, c)
            row_best = xr[:, :, :, :, 0]
            row_arg = np.zeros((n, ho, k, wo, c), dtype=np.int16)
            for j in range(1, k):
                v = xr[:, :, :, :, j]
                upd = v > row_best
                row_best = np.maximum(row_best, v)
                row_arg = row_arg + upd * (np.int16(j) - row_arg)
            y, idx = row_best[:, :, 0], row_arg[:, :, 0]
            for i in range(1, k):
                v = row_best[:, :, i]
                upd = v > y
                y = np.maximum(y, v)
                idx = idx + upd * (row_arg[:, :, i] + np.int16(i * k) - idx)
            return y, (x.shape, idx)
        y = idx = None
        for t, sl in self._offsets(ho, wo):
            v = x[sl]
            if y is None:
                y, idx = v.copy(), np.zeros(v.shape, dtype=np.int16)
                continue
            upd = v > y
            y = np.maximum(y, v)
            idx = idx + upd * (np.int16(t) - idx)
        return y, (x.shape, idx)

    def route(self, g, idx, x_shape):
        """Scatter ``g`` back onto the window positions selected by ``idx``."""
        k = self.window
        n, ho, wo, c = g.shape
        if self._tiled(x_shape):
            out = np.zeros((n, ho, k, wo, k, c), dtype=g.dtype)
            for t in range(k * k):
                out[:, :, t // k, :, t % k] = g * (idx == t)
            return out.reshape(x_shape)
        out = np.zeros(x_shape, dtype=g.dtype)
        for t, sl in self._offsets(ho, wo):
            out[sl] += g * (idx == t)
        return out

    def backward(self, g, cache, params, need_params=True):
        x_shape, idx = cache
        return self.route(g, idx, x_shape), None


@dataclass(frozen=True)
class Flatten(Layer):
    """Flattens image tensors in C, H, W order."""

    kind: ClassVar[str] = "Flatten"

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, params):
        return to_external(x).reshape(x.shape[0], -1), x.shape

    def backward(self, g, cache, params, need_params=True):
        if len(cache) == 4:
            n, h, w, c = cache
            return to_internal(g.reshape(n, c, h, w)), None
        return g.reshape(cache), None


@dataclass(frozen=True)
class Upsample2d(Layer):
    """Nearest-neighbour upsampling by an integer factor."""

    scale: int = 2

    kind: ClassVar[str] = "Upsample2d"

    def __post_init__(self):
        if self.scale < 1:
            raise ValueError("scale must be >= 1")

    def out_shape(self, in_shape):
        c, h, w = in_shape
        return (c, h * self.scale, w * self.scale)

    def forward(self, x, params):
        s = self.scale
        return x.repeat(s, axis=1).repeat(s, axis=2), None

    def backward(self, g, cache, params, need_params=True):
        s = self.scale
        n, h, w, c = g.shape
        return g.reshape(n, h // s, s, w // s, s, c).sum(axis=(2, 4)), None


LAYER_KINDS: dict[str, type[Layer]] = {
    cls.kind: cls for cls in (Conv2d, ReLU, MaxPool2d, Linear, Flatten, Upsample2d, Sigmoid)
}


def layer_from_dict(d: dict) -> Layer:
    d = dict(d)
    kind = d.pop("kind")
    try:
        cls = LAYER_KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown layer kind {kind!r}") from None
    return cls(**d)


# ---------------------------------------------------------------------------
# network


@dataclass
class Network:
    layers: tuple[Layer, ...]
    params: list[Any]
    input_shape: tuple[int, int, int]
    frozen: bool = field(default=False)

    def __post_init__(self):
        self.layers = tuple(self.layers)
        self.input_shape = tuple(int(v) for v in self.input_shape)
        if len(self.params) != len(self.layers):
            raise ValueError("one parameter entry per layer required")
        shape = self.input_shape
        for layer, p in zip(self.layers, self.params):
            shape = layer.out_shape(shape)
            expected = layer.param_shapes()
            if expected is None:
                if p is not None:
                    raise ValueError(f"{layer.kind} takes no parameters")
            elif p is None or tuple(p[0].shape) != expected[0] or tuple(p[1].shape) != expected[1]:
                raise ValueError(f"parameter shapes for {layer} do not match {expected}")
        self.output_shape = shape

    @property
    def n_outputs(self) -> int:
        return int(np.prod(self.output_shape))

    @property
    def dtype(self):
        for p in self.params:
            if p is not None:
                return p[0].dtype
        return np.dtype(np.float32)

    def freeze(self) -> "Network":
        for p in self.params:
            if p is not None:
                for a in p:
                    a.flags.writeable = False
        self.frozen = True
        return self

    def copy(self) -> "Network":
        params = [None if p is None else (p[0].copy(), p[1].copy()) for p in self.params]
        return Network(self.layers, params, self.input_shape)

    def astype(self, dtype) -> "Network":
        params = [None if p is None else (p[0].astype(dtype), p[1].astype(dtype)) for p in self.params]
        return Network(self.layers, params, self.input_shape)

    def param_layers(self) -> list[int]:
        return [i for i, l in enumerate(self.layers) if l.has_params]


def build_network(layers: Sequence[Layer], input_shape, seed: int = 0, dtype=np.float32) -> Network:
    """Kaiming-uniform (fan-in, ReLU gain) weights and zero biases."""
    rng = np.random.default_rng(seed)
    params = []
    for layer in layers:
        shapes = layer.param_shapes()
        if shapes is None:
            params.append(None)
            continue
        bound = np.sqrt(6.0 / layer.fan_in())
        w = rng.uniform(-bound, bound, size=shapes[0]).astype(dtype)
        params.append((w, np.zeros(shapes[1], dtype=dtype)))
    return Network(tuple(layers), params, tuple(input_shape))


def minivgg_layers(input_shape=(1, 64, 64), n_classes: int = 2, widths=(8, 16, 32), hidden: int = 128):
    c, h, w = input_shape
    layers: list[Layer] = []
    for width in widths:
        layers += [Conv2d(c, width), ReLU(), MaxPool2d(2, 2)]
        c = width
        h, w = h // 2, w // 2
    layers += [Flatten(), Linear(c * h * w, hidden), ReLU(), Linear(hidden, n_classes)]
    return layers


def minivgg(input_shape=(1, 64, 64), n_classes: int = 2, seed: int = 0, **kw) -> Network:
    return build_network(minivgg_layers(input_shape, n_classes, **kw), input_shape, seed=seed)


# ---------------------------------------------------------------------------
# passes


@dataclass
class Trace:
    """Per-layer inputs, outputs and caches of one pass, in internal layout."""

    inputs: list[np.ndarray]
    outputs: list[np.ndarray]
    caches: list[Any]

    def __len__(self):
        return len(self.inputs)


def _as_batch(net: Network, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x)
    if tuple(x.shape) == net.input_shape:
        return x[None], True
    if x.ndim == len(net.input_shape) + 1 and tuple(x.shape[1:]) == net.input_shape:
        return x, False
    raise InputShapeError(f"expected input shape {net.input_shape}, got {x.shape}")


def run_internal(net: Network, h: np.ndarray) -> Trace:
    """Forward an internal-layout batch, recording every layer."""
    trace = Trace([], [], [])
    for layer, p in zip(net.layers, net.params):
        y, cache = layer.forward(h, p)
        trace.inputs.append(h)
        trace.outputs.append(y)
        trace.caches.append(cache)
        h = y
    return trace


def backward_internal(net: Network, trace: Trace, g, need_params: bool = False):
    grads: list[Any] = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        g, pg = net.layers[i].backward(g, trace.caches[i], net.params[i], need_params)
        if need_params:
            grads[i] = pg
    return g, (grads if need_params else None)


def forward_with_trace(net: Network, x) -> tuple[np.ndarray, Trace]:
    xb, single = _as_batch(net, x)
    trace = run_internal(net, to_internal(xb.astype(net.dtype, copy=False)))
    out = to_external(trace.outputs[-1])
    return (out[0] if single else out), trace


def forward(net: Network, x) -> np.ndarray:
    return forward_with_trace(net, x)[0]


def backward(net: Network, trace: Trace, grad_out, need_params: bool = False):
    """Back-propagate ``grad_out`` (batch-shaped, NCHW for image outputs).

    Returns ``(grad_input, param_grads)`` with ``grad_input`` in NCHW;
    ``param_grads`` is ``None`` unless requested.
    """
    g = np.asarray(grad_out, dtype=net.dtype)
    out = trace.outputs[-1]
    if g.ndim == 4:
        g = to_internal(g)
    if g.shape != out.shape:
        g = g.reshape(out.shape)
    g, grads = backward_internal(net, trace, g, need_params)
    return to_external(g), grads


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _fused_input_gradient(net: Network, h: np.ndarray, class_index: int) -> np.ndarray:
    """Input gradient without a trace; ReLU -> MaxPool pairs pool first.

    Max-pooling commutes with ReLU, and a window whose maximum is not
    positive gets zero gradient under either order, so this matches
    :func:`backward_internal` exactly while touching 4x fewer activations.
    """
    layers, params = net.layers, net.params
    steps = []  # (layer, cache, params, relu_mask)
    i = 0
    while i < len(layers):
        layer = layers[i]
        if isinstance(layer, ReLU) and i + 1 < len(layers) and isinstance(layers[i + 1], MaxPool2d):
            pooled, cache = layers[i + 1].forward(h, None)
            mask = pooled > 0
            steps.append((layers[i + 1], cache, None, mask))
            h = pooled * mask
            i += 2
            continue
        h, cache = layer.forward(h, params[i])
        steps.append((layer, cache, params[i], None))
        i += 1
    g = np.zeros_like(h)
    g.reshape(len(g), -1)[:, class_index] = 1
    for layer, cache, p, mask in reversed(steps):
        if mask is not None:
            g = g * mask
        g, _ = layer.backward(g, cache, p, False)
    return g


def input_gradient(net: Network, x, class_index: int) -> np.ndarray:
    """Gradient of the pre-softmax logit ``class_index`` with respect to ``x``."""
    if not 0 <= class_index < net.n_outputs:
        raise IndexError(f"class_index {class_index} out of range for {net.n_outputs} outputs")
    xb, single = _as_batch(net, x)
    gx = to_external(_fused_input_gradient(net, to_internal(xb.astype(net.dtype, copy=False)), class_index))
    return gx[0] if single else gx


def weights_checksum(net: Network) -> str:
    h = hashlib.sha256()
    for p in net.params:
        if p is not None:
            for a in p:
                h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()
