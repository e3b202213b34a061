"""Differentiable sequence-model building blocks with hand-written backward passes.

Sequence tensors are (batch, channels, time) float64 arrays. Each layer caches
whatever its backward pass needs during forward; ``backward`` accumulates
parameter gradients into ``grads`` and returns the gradient w.r.t. the layer
input. All convolution contractions go through ``np.einsum`` with the default
(non-optimized) kernels so that full-sequence evaluation and windowed streaming
evaluation produce bitwise-identical numbers.
"""

import math

import numpy as np

from .errors import DataError, DimensionError, ParameterError

ACTIVATIONS = ("relu", "sigmoid", "tanh")
NORM_KINDS = ("batch", "weight", "none")


def he_uniform(rng, shape, fan_in):
    limit = math.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, shape)


def glorot_uniform(rng, shape, fan_in, fan_out):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, shape)


def _init_weight(rng, shape, fan_in, fan_out, init):
    if init == "he":
        return he_uniform(rng, shape, fan_in)
    if init == "glorot":
        return glorot_uniform(rng, shape, fan_in, fan_out)
    raise ParameterError(f"unknown init kind '{init}'")


def weight_norm_forward(v, g):
    """Effective weight g * v / ||v||, row-wise over the first axis."""
    flat = v.reshape(v.shape[0], -1)
    norms = np.sqrt(np.sum(flat * flat, axis=1))
    if np.any(norms == 0.0):
        raise ParameterError("weight norm direction has a zero-norm row")
    scale = (g / norms).reshape((-1,) + (1,) * (v.ndim - 1))
    return v * scale


def weight_norm_backward(v, g, d_w):
    """Chain rule from dL/dW to (dL/dv, dL/dg) for W = g * v / ||v||."""
    rows = v.shape[0]
    v_flat = v.reshape(rows, -1)
    dw_flat = d_w.reshape(rows, -1)
    norms = np.sqrt(np.sum(v_flat * v_flat, axis=1))
    dots = np.sum(dw_flat * v_flat, axis=1)
    d_g = dots / norms
    coef = (g / norms)[:, None]
    d_v_flat = coef * (dw_flat - (dots / (norms * norms))[:, None] * v_flat)
    return d_v_flat.reshape(v.shape), d_g


class Layer:
    """Base: parameter/grad dicts plus the forward/backward/stream protocol."""

    def __init__(self):
        self.params = {}
        self.grads = {}

    def _register(self, name, value):
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)

    def zero_grads(self):
        for g in self.grads.values():
            g[...] = 0.0
        for sub in self.sublayers():
            sub.zero_grads()

    def sublayers(self):
        return ()

    def named_parameters(self, prefix=""):
        for name, p in self.params.items():
            yield prefix + name, p
        for i, sub in enumerate(self.sublayers()):
            yield from sub.named_parameters(f"{prefix}{self._subname(i)}.")

    def named_grads(self, prefix=""):
        for name, g in self.grads.items():
            yield prefix + name, g
        for i, sub in enumerate(self.sublayers()):
            yield from sub.named_grads(f"{prefix}{self._subname(i)}.")

    def named_state(self, prefix=""):
        for i, sub in enumerate(self.sublayers()):
            yield from sub.named_state(f"{prefix}{self._subname(i)}.")

    def _subname(self, i):
        return f"sub{i}"

    def begin_stream(self, batch_size):
        for sub in self.sublayers():
            sub.begin_stream(batch_size)

    def step(self, col):
        """Evaluation-mode streaming: one (batch, channels) column in and out."""
        raise NotImplementedError


class CausalConv1d(Layer):
    """Dilated causal convolution over (batch, channels, time).

    Tap i reads the input i*dilation samples in the past (tap 0 is the current
    sample); times before the sequence start are zero. Output length equals
    input length. With ``weight_norm`` the kernel is reparameterized per output
    channel as W = g * v / ||v||.
    """

    def __init__(self, in_channels, out_channels, kernel_size, dilation=1,
                 rng=None, init="glorot", weight_norm=False):
        super().__init__()
        if kernel_size < 1:
            raise ParameterError(f"kernel size must be >= 1, got {kernel_size}")
        if dilation < 1:
            raise ParameterError(f"dilation must be >= 1, got {dilation}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.dilation = dilation
        self.weight_norm = weight_norm
        shape = (out_channels, in_channels, kernel_size)
        fan_in = in_channels * kernel_size
        fan_out = out_channels * kernel_size
        w = _init_weight(rng, shape, fan_in, fan_out, init)
        if weight_norm:
            flat = w.reshape(out_channels, -1)
            self._register("v", w)
            self._register("g", np.sqrt(np.sum(flat * flat, axis=1)))
        else:
            self._register("W", w)
        self._register("b", np.zeros(out_channels))
        self._cache = None
        self._buf = None

    @property
    def receptive_field(self):
        return (self.kernel_size - 1) * self.dilation + 1

    def effective_weight(self):
        if self.weight_norm:
            return weight_norm_forward(self.params["v"], self.params["g"])
        return self.params["W"]

    def _check_input(self, x):
        if x.ndim != 3 or x.shape[1] != self.in_channels:
            raise DimensionError(
                f"conv expects (batch, {self.in_channels}, time), got {x.shape}"
            )

    def forward(self, x, training=False):
        self._check_input(x)
        b_sz, _, t_len = x.shape
        pad = (self.kernel_size - 1) * self.dilation
        if pad:
            xpad = np.concatenate(
                [np.zeros((b_sz, self.in_channels, pad)), x], axis=2
            )
        else:
            xpad = x
        w = self.effective_weight()
        out = np.zeros((b_sz, self.out_channels, t_len))
        for i in range(self.kernel_size):
            start = pad - i * self.dilation
            out += np.einsum("oc,bct->bot", w[:, :, i], xpad[:, :, start:start + t_len])
        out += self.params["b"][None, :, None]
        self._cache = (xpad, w, t_len)
        return out

    def backward(self, grad):
        if self._cache is None:
            raise ParameterError("backward called before forward")
        xpad, w, t_len = self._cache
        if grad.shape != (xpad.shape[0], self.out_channels, t_len):
            raise DimensionError(
                f"upstream grad shape {grad.shape} does not match forward output"
            )
        pad = (self.kernel_size - 1) * self.dilation
        d_w = np.zeros_like(w)
        d_xpad = np.zeros_like(xpad)
        for i in range(self.kernel_size):
            start = pad - i * self.dilation
            xi = xpad[:, :, start:start + t_len]
            d_w[:, :, i] = np.einsum("bot,bct->oc", grad, xi)
            d_xpad[:, :, start:start + t_len] += np.einsum("oc,bot->bct", w[:, :, i], grad)
        self.grads["b"] += grad.sum(axis=(0, 2))
        if self.weight_norm:
            d_v, d_g = weight_norm_backward(self.params["v"], self.params["g"], d_w)
            self.grads["v"] += d_v
            self.grads["g"] += d_g
        else:
            self.grads["W"] += d_w
        return d_xpad[:, :, pad:] if pad else d_xpad

    def begin_stream(self, batch_size):
        # zero history doubles as this layer's left zero-padding; the window
        # never drops below 2 columns so streaming hits the same einsum kernel
        # as full-sequence evaluation (bitwise-identical results).
        window = max(self.receptive_field, 2)
        self._buf = np.zeros((batch_size, self.in_channels, window))

    def step(self, col):
        buf = self._buf
        buf[:, :, :-1] = buf[:, :, 1:]
        buf[:, :, -1] = col
        return self.forward(buf, training=False)[:, :, -1]


class Dense(Layer):
    """Affine map over (batch, features): out = x W^T + b."""

    def __init__(self, in_features, out_features, rng=None, init="glorot",
                 weight_norm=False):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.weight_norm = weight_norm
        w = _init_weight(rng, (out_features, in_features), in_features,
                         out_features, init)
        if weight_norm:
            self._register("v", w)
            self._register("g", np.sqrt(np.sum(w * w, axis=1)))
        else:
            self._register("W", w)
        self._register("b", np.zeros(out_features))
        self._cache = None

    def effective_weight(self):
        if self.weight_norm:
            return weight_norm_forward(self.params["v"], self.params["g"])
        return self.params["W"]

    def forward(self, x, training=False):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise DimensionError(
                f"dense expects (batch, {self.in_features}), got {x.shape}"
            )
        w = self.effective_weight()
        self._cache = (x, w)
        return x @ w.T + self.params["b"]

    def backward(self, grad):
        x, w = self._cache
        if grad.shape != (x.shape[0], self.out_features):
            raise DimensionError(
                f"upstream grad shape {grad.shape} does not match forward output"
            )
        d_w = grad.T @ x
        self.grads["b"] += grad.sum(axis=0)
        if self.weight_norm:
            d_v, d_g = weight_norm_backward(self.params["v"], self.params["g"], d_w)
            self.grads["v"] += d_v
            self.grads["g"] += d_g
        else:
            self.grads["W"] += d_w
        return grad @ w


def _sigmoid(x):
    # piecewise-stable logistic; same formula everywhere for reproducibility
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Activation(Layer):
    """Elementwise nonlinearity: relu, sigmoid or tanh."""

    def __init__(self, kind):
        super().__init__()
        if kind not in ACTIVATIONS:
            raise ParameterError(f"unknown activation '{kind}'")
        self.kind = kind
        self._out = None

    def apply(self, x):
        if self.kind == "relu":
            return np.maximum(x, 0.0)
        if self.kind == "sigmoid":
            return _sigmoid(x)
        return np.tanh(x)

    def forward(self, x, training=False):
        out = self.apply(x)
        # relu backward needs the input sign; the others only the output
        self._out = (x > 0.0) if self.kind == "relu" else out
        return out

    def backward(self, grad):
        if self.kind == "relu":
            return grad * self._out
        if self.kind == "sigmoid":
            return grad * self._out * (1.0 - self._out)
        return grad * (1.0 - self._out * self._out)

    def step(self, col):
        return self.apply(col)


class Dropout(Layer):
    """Inverted dropout: train-time masking with 1/(1-p) rescale, eval identity."""

    def __init__(self, rate, rng=None):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ParameterError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.rng = rng
        self._scaled_mask = None

    def forward(self, x, training=False):
        if not training or self.rate == 0.0:
            self._scaled_mask = None
            return x
        keep = self.rng.random(x.shape) >= self.rate
        self._scaled_mask = keep / (1.0 - self.rate)
        return x * self._scaled_mask

    def backward(self, grad):
        if self._scaled_mask is None:
            return grad
        return grad * self._scaled_mask

    def step(self, col):
        return col


class BatchNorm(Layer):
    """Per-channel standardization over batch x time with learned scale/shift.

    Training mode normalizes with batch statistics (biased variance) and
    updates running statistics by exponential moving average; evaluation mode
    normalizes with the stored running statistics.
    """

    def __init__(self, channels, eps=1e-5, momentum=0.1):
        super().__init__()
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self._register("gamma", np.ones(channels))
        self._register("beta", np.zeros(channels))
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self._cache = None

    def named_state(self, prefix=""):
        yield prefix + "running_mean", self.running_mean
        yield prefix + "running_var", self.running_var

    def _check_input(self, x):
        if x.ndim != 3 or x.shape[1] != self.channels:
            raise DimensionError(
                f"batch norm expects (batch, {self.channels}, time), got {x.shape}"
            )

    def forward(self, x, training=False):
        self._check_input(x)
        if training:
            count = x.shape[0] * x.shape[2]
            if count < 2:
                raise DataError(
                    "batch norm needs at least 2 samples per channel in training mode"
                )
            mu = x.mean(axis=(0, 2))
            var = x.var(axis=(0, 2))
            self.running_mean *= 1.0 - self.momentum
            self.running_mean += self.momentum * mu
            self.running_var *= 1.0 - self.momentum
            self.running_var += self.momentum * var
            inv = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - mu[None, :, None]) * inv[None, :, None]
            self._cache = ("train", xhat, inv, count)
            return self.params["gamma"][None, :, None] * xhat + self.params["beta"][None, :, None]
        out, xc, inv = self._eval_apply(x)
        self._cache = ("eval", xc, inv, None)
        return out

    def _eval_apply(self, x):
        # shared by batch forward and streaming step: identical expression
        inv = 1.0 / np.sqrt(self.running_var + self.eps)
        if x.ndim == 3:
            xc = x - self.running_mean[None, :, None]
            out = self.params["gamma"][None, :, None] * (xc * inv[None, :, None]) \
                + self.params["beta"][None, :, None]
        else:
            xc = x - self.running_mean[None, :]
            out = self.params["gamma"][None, :] * (xc * inv[None, :]) \
                + self.params["beta"][None, :]
        return out, xc, inv

    def backward(self, grad):
        mode, cached, inv, count = self._cache
        if mode == "eval":
            xc = cached
            self.grads["beta"] += grad.sum(axis=(0, 2))
            self.grads["gamma"] += (grad * xc * inv[None, :, None]).sum(axis=(0, 2))
            return grad * (self.params["gamma"] * inv)[None, :, None]
        xhat = cached
        self.grads["beta"] += grad.sum(axis=(0, 2))
        self.grads["gamma"] += (grad * xhat).sum(axis=(0, 2))
        dxhat = grad * self.params["gamma"][None, :, None]
        m1 = dxhat.mean(axis=(0, 2))
        m2 = (dxhat * xhat).mean(axis=(0, 2))
        return inv[None, :, None] * (dxhat - m1[None, :, None] - xhat * m2[None, :, None])

    def step(self, col):
        return self._eval_apply(col)[0]


class ResidualBlock(Layer):
    """Two causal convolutions with norm/activation/dropout, plus a skip path.

    Body: [conv -> norm -> activation -> dropout] x 2, both convolutions
    sharing the block dilation. Skip: identity when the channel counts match,
    otherwise a learned 1x1 channel projection.
    """

    def __init__(self, in_channels, out_channels, kernel_size, dilation,
                 norm="none", dropout=0.0, activation="relu", rng=None):
        super().__init__()
        if norm not in NORM_KINDS:
            raise ParameterError(f"unknown norm kind '{norm}'")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.dilation = dilation
        self.kernel_size = kernel_size
        self.norm = norm
        init = "he" if activation == "relu" else "glorot"
        wn = norm == "weight"
        self.conv1 = CausalConv1d(in_channels, out_channels, kernel_size,
                                  dilation, rng, init=init, weight_norm=wn)
        self.conv2 = CausalConv1d(out_channels, out_channels, kernel_size,
                                  dilation, rng, init=init, weight_norm=wn)
        self.bn1 = BatchNorm(out_channels) if norm == "batch" else None
        self.bn2 = BatchNorm(out_channels) if norm == "batch" else None
        self.act1 = Activation(activation)
        self.act2 = Activation(activation)
        self.drop1 = Dropout(dropout, rng.split() if rng is not None else None)
        self.drop2 = Dropout(dropout, rng.split() if rng is not None else None)
        if in_channels != out_channels:
            self.skip = CausalConv1d(in_channels, out_channels, 1, 1, rng,
                                     init="glorot")
        else:
            self.skip = None

    def sublayers(self):
        subs = [self.conv1]
        if self.bn1 is not None:
            subs.append(self.bn1)
        subs.extend([self.act1, self.drop1, self.conv2])
        if self.bn2 is not None:
            subs.append(self.bn2)
        subs.extend([self.act2, self.drop2])
        if self.skip is not None:
            subs.append(self.skip)
        return subs

    def _subname(self, i):
        names = ["conv1"]
        if self.bn1 is not None:
            names.append("bn1")
        names.extend(["act1", "drop1", "conv2"])
        if self.bn2 is not None:
            names.append("bn2")
        names.extend(["act2", "drop2"])
        if self.skip is not None:
            names.append("skip")
        return names[i]

    @property
    def receptive_field(self):
        return 2 * (self.kernel_size - 1) * self.dilation + 1

    def forward(self, x, training=False):
        h = self.conv1.forward(x, training)
        if self.bn1 is not None:
            h = self.bn1.forward(h, training)
        h = self.act1.forward(h, training)
        h = self.drop1.forward(h, training)
        h = self.conv2.forward(h, training)
        if self.bn2 is not None:
            h = self.bn2.forward(h, training)
        h = self.act2.forward(h, training)
        h = self.drop2.forward(h, training)
        s = x if self.skip is None else self.skip.forward(x, training)
        return h + s

    def backward(self, grad):
        g = self.drop2.backward(grad)
        g = self.act2.backward(g)
        if self.bn2 is not None:
            g = self.bn2.backward(g)
        g = self.conv2.backward(g)
        g = self.drop1.backward(g)
        g = self.act1.backward(g)
        if self.bn1 is not None:
            g = self.bn1.backward(g)
        dx = self.conv1.backward(g)
        dx = dx + (grad if self.skip is None else self.skip.backward(grad))
        return dx

    def step(self, col):
        h = self.conv1.step(col)
        if self.bn1 is not None:
            h = self.bn1.step(h)
        h = self.drop1.step(self.act1.step(h))
        h = self.conv2.step(h)
        if self.bn2 is not None:
            h = self.bn2.step(h)
        h = self.drop2.step(self.act2.step(h))
        s = col if self.skip is None else self.skip.step(col)
        return h + s
