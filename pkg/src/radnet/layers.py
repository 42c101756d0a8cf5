"""Layers with hand-written reverse-mode rules, the two losses, and a
central-difference gradient checker.

Every layer follows the same small protocol::

    out = layer.forward(x, train=True, rng=rng)
    bundle = layer.backward(upstream)      # GradBundle(grads, input_grad)

``backward`` uses state cached by the most recent ``forward`` and must be
called in the same mode.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, NumericError, ShapeError, StateError
from .tensor import col2im, im2col, pad_same


@dataclass
class GradBundle:
    grads: dict = field(default_factory=dict)
    input_grad: np.ndarray | None = None


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self._cache = None
        self._mode = None

    def forward(self, x, train=False, rng=None):
        raise NotImplementedError

    def backward(self, upstream) -> GradBundle:
        raise NotImplementedError

    def _remember(self, train, cache):
        self._mode = "train" if train else "infer"
        self._cache = cache

    def _recall(self):
        if self._cache is None:
            raise StateError(f"{self.kind}: backward called before forward")
        return self._cache

    def named_parameters(self):
        return self.params

    def __repr__(self):
        shapes = ", ".join(f"{k}={v.shape}" for k, v in self.params.items())
        return f"{type(self).__name__}({shapes})"


class Conv2D(Layer):
    """Same-padded stride-1 cross-correlation with per-filter bias."""

    kind = "conv2d"

    def __init__(self, in_channels, out_channels, kernel=3, dtype=np.float32):
        super().__init__()
        self.kernel = (kernel, kernel)
        self.params["W"] = np.zeros((out_channels, in_channels, kernel, kernel), dtype)
        self.params["b"] = np.zeros(out_channels, dtype)

    @property
    def fan_in(self):
        _, c, kh, kw = self.params["W"].shape
        return c * kh * kw

    def forward(self, x, train=False, rng=None):
        W, b = self.params["W"], self.params["b"]
        if x.ndim != 4 or x.shape[1] != W.shape[1]:
            raise ShapeError(f"conv2d expects b x {W.shape[1]} x h x w input, got {x.shape}")
        n, _, h, w = x.shape
        xp = pad_same(x, self.kernel)
        cols = im2col(xp, self.kernel)                  # n x K x (h*w)
        out = np.matmul(W.reshape(W.shape[0], -1), cols)  # n x f x (h*w)
        out += b[None, :, None]
        self._remember(train, (xp.shape, cols))
        return out.reshape(n, W.shape[0], h, w)

    def backward(self, upstream):
        padded_shape, cols = self._recall()
        W = self.params["W"]
        n, f, h, w = upstream.shape
        g = upstream.reshape(n, f, h * w)
        dW = np.tensordot(g, cols, axes=([0, 2], [0, 2])).reshape(W.shape)
        db = g.sum(axis=(0, 2))
        dcols = np.matmul(W.reshape(f, -1).T, g)
        dxp = col2im(dcols, padded_shape, self.kernel)
        ph, pw = self.kernel[0] // 2, self.kernel[1] // 2
        dx = dxp[:, :, ph:ph + h, pw:pw + w]
        return GradBundle({"W": dW, "b": db}, np.ascontiguousarray(dx))


class PadToEven(Layer):
    """Append one zero row/column to odd spatial extents so 2x2 pooling tiles."""

    kind = "pad_even"

    def forward(self, x, train=False, rng=None):
        h, w = x.shape[-2:]
        ph, pw = h % 2, w % 2
        self._remember(train, (h, w))
        if not (ph or pw):
            return x
        return np.pad(x, [(0, 0), (0, 0), (0, ph), (0, pw)])

    def backward(self, upstream):
        h, w = self._recall()
        return GradBundle({}, np.ascontiguousarray(upstream[:, :, :h, :w]))


class MaxPool2x2(Layer):
    kind = "maxpool2x2"

    def forward(self, x, train=False, rng=None):
        n, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ShapeError(f"maxpool2x2 needs even spatial dims, got {h}x{w}")
        win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
        win = win.reshape(n, c, h // 2, w // 2, 4)
        idx = win.argmax(axis=-1)  # first occurrence wins ties
        out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
        self._remember(train, (x.shape, idx))
        return out

    def backward(self, upstream):
        shape, idx = self._recall()
        n, c, h, w = shape
        g = np.zeros((n, c, h // 2, w // 2, 4), dtype=upstream.dtype)
        np.put_along_axis(g, idx[..., None], upstream[..., None], axis=-1)
        g = g.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return GradBundle({}, g.reshape(shape))


class BatchNorm2D(Layer):
    """Per-channel batch normalization over (batch, height, width)."""

    kind = "batchnorm2d"

    def __init__(self, channels, momentum=0.9, eps=1e-5, dtype=np.float32):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.params["gamma"] = np.ones(channels, dtype)
        self.params["beta"] = np.zeros(channels, dtype)
        self.buffers["running_mean"] = np.zeros(channels, dtype)
        self.buffers["running_var"] = np.ones(channels, dtype)
        # set by the first train step or by loading a checkpoint
        self.stats_ready = False

    def forward(self, x, train=False, rng=None):
        gamma, beta = self.params["gamma"], self.params["beta"]
        if x.ndim != 4 or x.shape[1] != gamma.shape[0]:
            raise ShapeError(f"batchnorm2d expects b x {gamma.shape[0]} x h x w, got {x.shape}")
        bc = (None, slice(None), None, None)
        if train:
            count = x.shape[0] * x.shape[2] * x.shape[3]
            if count < 2:
                raise ShapeError("batchnorm2d train mode needs at least 2 values per channel")
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            m = self.momentum
            rm, rv = self.buffers["running_mean"], self.buffers["running_var"]
            rm[...] = m * rm + (1 - m) * mean
            rv[...] = m * rv + (1 - m) * var
            self.stats_ready = True
        else:
            if not self.stats_ready:
                raise StateError("batchnorm2d: inference before any training step or loaded statistics")
            mean = self.buffers["running_mean"]
            var = self.buffers["running_var"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean[bc]) * inv_std[bc]
        self._remember(train, (xhat, inv_std))
        return gamma[bc] * xhat + beta[bc]

    def backward(self, upstream):
        xhat, inv_std = self._recall()
        gamma = self.params["gamma"]
        bc = (None, slice(None), None, None)
        dgamma = (upstream * xhat).sum(axis=(0, 2, 3))
        dbeta = upstream.sum(axis=(0, 2, 3))
        if self._mode == "train":
            count = upstream.shape[0] * upstream.shape[2] * upstream.shape[3]
            dx = (gamma * inv_std / count)[bc] * (
                count * upstream - dbeta[bc] - xhat * dgamma[bc]
            )
        else:
            dx = upstream * (gamma * inv_std)[bc]
        return GradBundle({"gamma": dgamma, "beta": dbeta}, dx)


class Dropout(Layer):
    """Inverted dropout: survivors are rescaled at train time, inference is identity."""

    kind = "dropout"

    def __init__(self, rate):
        super().__init__()
        if not 0 <= rate < 1:
            raise ArgumentError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.frozen = False  # reuse the last mask (gradient checking)

    def forward(self, x, train=False, rng=None):
        if not train or self.rate == 0:
            self._remember(train, None)
            return x
        if self.frozen and self._cache is not None and self._cache.shape == x.shape:
            mask = self._cache
        else:
            if rng is None:
                raise ArgumentError("dropout in train mode needs a random generator")
            keep = rng.random(x.shape) >= self.rate
            mask = keep.astype(x.dtype) / x.dtype.type(1 - self.rate)
        self._remember(train, mask)
        return x * mask

    def backward(self, upstream):
        if self._mode is None:
            raise StateError("dropout: backward called before forward")
        mask = self._cache
        return GradBundle({}, upstream if mask is None else upstream * mask)


class Dense(Layer):
    kind = "dense"

    def __init__(self, n_in, n_out, dtype=np.float32):
        super().__init__()
        self.params["W"] = np.zeros((n_out, n_in), dtype)
        self.params["b"] = np.zeros(n_out, dtype)

    @property
    def fan_in(self):
        return self.params["W"].shape[1]

    def forward(self, x, train=False, rng=None):
        W, b = self.params["W"], self.params["b"]
        if x.ndim != 2 or x.shape[1] != W.shape[1]:
            raise ShapeError(f"dense expects b x {W.shape[1]} input, got {x.shape}")
        self._remember(train, x)
        return x @ W.T + b

    def backward(self, upstream):
        x = self._recall()
        W = self.params["W"]
        return GradBundle({"W": upstream.T @ x, "b": upstream.sum(axis=0)}, upstream @ W)


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, train=False, rng=None):
        self._remember(train, x.shape)
        return x.reshape(x.shape[0], -1)

    def backward(self, upstream):
        return GradBundle({}, upstream.reshape(self._recall()))


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train=False, rng=None):
        mask = x > 0
        self._remember(train, mask)
        return np.where(mask, x, 0).astype(x.dtype, copy=False)

    def backward(self, upstream):
        return GradBundle({}, np.where(self._recall(), upstream, 0).astype(upstream.dtype, copy=False))


def sigmoid(x):
    # tanh form avoids overflow in exp for large |x|
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


class Sigmoid(Layer):
    kind = "sigmoid"

    def forward(self, x, train=False, rng=None):
        out = sigmoid(x)
        self._remember(train, out)
        return out

    def backward(self, upstream):
        s = self._recall()
        return GradBundle({}, upstream * s * (1 - s))


class Softmax(Layer):
    """Softmax over the class axis (axis 1)."""

    kind = "softmax"

    def forward(self, x, train=False, rng=None):
        out = softmax(x, axis=1)
        self._remember(train, out)
        return out

    def backward(self, upstream):
        s = self._recall()
        return GradBundle({}, s * (upstream - (upstream * s).sum(axis=1, keepdims=True)))


ACTIVATIONS = {"relu": ReLU, "sigmoid": Sigmoid, "softmax": Softmax}


def activation(kind: str) -> Layer:
    try:
        return ACTIVATIONS[kind]()
    except KeyError:
        raise ArgumentError(f"unknown activation {kind!r}") from None


# --------------------------------------------------------------------------
# losses

PROB_CLAMP = 1e-7


def _check_binary_targets(p, y):
    p = np.asarray(p).reshape(-1)
    y = np.asarray(y).reshape(-1)
    if p.shape != y.shape:
        raise ArgumentError(f"bce: {p.size} predictions but {y.size} targets")
    if not np.all((y == 0) | (y == 1)):
        raise ArgumentError("bce targets must be 0 or 1")
    return p, y


def _check_onehot_targets(p, y):
    p = np.asarray(p)
    y = np.asarray(y)
    if p.ndim != 2 or p.shape != y.shape:
        raise ArgumentError(f"cce: predictions {p.shape} and targets {y.shape} must be matching b x k")
    if not (np.all((y == 0) | (y == 1)) and np.all(y.sum(axis=1) == 1)):
        raise ArgumentError("cce targets must be one-hot rows")
    return p, y


def binary_cross_entropy(p, y) -> np.float64:
    p, y = _check_binary_targets(p, y)
    q = np.clip(p, PROB_CLAMP, 1 - PROB_CLAMP)
    return np.float64(-np.mean(y * np.log(q) + (1 - y) * np.log(1 - q)))


def categorical_cross_entropy(p, y) -> np.float64:
    p, y = _check_onehot_targets(p, y)
    q = np.clip(p, PROB_CLAMP, 1 - PROB_CLAMP)
    return np.float64(-np.mean(np.sum(y * np.log(q), axis=1)))


def loss(pred, target, kind: str) -> np.float64:
    if kind == "bce":
        return binary_cross_entropy(pred, target)
    if kind == "cce":
        return categorical_cross_entropy(pred, target)
    raise ArgumentError(f"unknown loss {kind!r}")


def loss_grad(pred, target, kind: str) -> np.ndarray:
    """Gradient of :func:`loss` with respect to the probabilities."""
    shape = np.shape(pred)
    if kind == "bce":
        p, y = _check_binary_targets(pred, target)
        q = np.clip(p, PROB_CLAMP, 1 - PROB_CLAMP)
        g = (q - y) / (q * (1 - q)) / p.size
        return g.reshape(shape).astype(np.asarray(pred).dtype)
    if kind == "cce":
        p, y = _check_onehot_targets(pred, target)
        q = np.clip(p, PROB_CLAMP, 1 - PROB_CLAMP)
        return (-y / q / p.shape[0]).astype(p.dtype)
    raise ArgumentError(f"unknown loss {kind!r}")


def loss_logit_grad(probs, target, kind: str) -> np.ndarray:
    """Gradient of the loss with respect to the pre-activation logits.

    Sigmoid + BCE and softmax + CCE both collapse to ``(p - y) / batch``, which
    stays informative even where the clamped probability gradient would not.
    """
    probs = np.asarray(probs)
    if kind == "bce":
        p, y = _check_binary_targets(probs, target)
        return ((p - y) / p.size).reshape(probs.shape).astype(probs.dtype)
    if kind == "cce":
        p, y = _check_onehot_targets(probs, target)
        return ((p - y) / p.shape[0]).astype(probs.dtype)
    raise ArgumentError(f"unknown loss {kind!r}")


# --------------------------------------------------------------------------
# gradient checking

def relative_error(analytic, numeric) -> np.ndarray:
    a = np.abs(analytic)
    n = np.abs(numeric)
    return np.abs(analytic - numeric) / np.maximum(np.maximum(a, n), 1e-8)


def _dropouts(target):
    layers = getattr(target, "layers", [target])
    return [layer for layer in layers if isinstance(layer, Dropout)]


def _buffers(target):
    layers = getattr(target, "layers", [target])
    return [(layer, {k: v.copy() for k, v in layer.buffers.items()}, getattr(layer, "stats_ready", None))
            for layer in layers if layer.buffers]


def gradient_check(target, x, epsilon=1e-5, seed=0, train=True, objective=None,
                   numeric_dtype=np.longdouble, return_details=False):
    """Compare ``target.backward`` with central differences.

    ``target`` is a layer or a model (anything exposing ``forward``,
    ``backward`` and ``named_parameters``). The scalar being differentiated is
    ``objective(out) -> (value, d value / d out)``; by default a fixed random
    projection ``sum(r * out)``. Dropout masks are frozen after the first
    forward and batchnorm running statistics are restored afterwards.

    Finite differences are evaluated with activations in ``numeric_dtype``
    (extended precision where the platform has it), so the oracle's roundoff
    stays well below the analytic 64-bit gradients being checked.

    Returns the maximum relative error over every parameter and input element.
    """
    x = np.array(x, dtype=np.float64)
    x_num = x.astype(numeric_dtype)
    rng = np.random.default_rng(seed)
    saved = _buffers(target)
    drops = _dropouts(target)

    try:
        out = target.forward(x, train=train, rng=np.random.default_rng(seed + 1))
        for d in drops:
            d.frozen = True
        if objective is None:
            r = rng.standard_normal(out.shape)

            def objective(o):
                return np.sum(r * o), r

        def f():
            value, _ = objective(target.forward(x_num, train=train))
            if not np.isfinite(value):
                raise NumericError("objective is not finite")
            return value

        value, g_out = objective(out)
        if not np.isfinite(value):
            raise NumericError("objective is not finite")
        bundle = target.backward(g_out)
        params = target.named_parameters()

        details = {}
        checks = [(name, params[name], bundle.grads[name]) for name in params]
        checks.append(("input", x_num, bundle.input_grad))
        worst = 0.0
        for name, arr, analytic in checks:
            numeric = np.zeros(arr.shape, dtype=np.float64)
            flat = arr.reshape(-1)
            nflat = numeric.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + epsilon
                plus = f()
                flat[i] = orig - epsilon
                minus = f()
                flat[i] = orig
                nflat[i] = (plus - minus) / (2 * epsilon)
            if not np.all(np.isfinite(analytic)):
                raise NumericError(f"non-finite analytic gradient for {name}")
            err = float(relative_error(np.asarray(analytic, np.float64), numeric).max(initial=0.0))
            details[name] = err
            worst = max(worst, err)
    finally:
        for d in drops:
            d.frozen = False
        for layer, bufs, ready in saved:
            for k, v in bufs.items():
                layer.buffers[k][...] = v
            if ready is not None:
                layer.stats_ready = ready
    return (worst, details) if return_details else worst
