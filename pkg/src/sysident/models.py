"""Model families (TCN, NARX-MLP, LSTM) over a shared sequence interface.

Every model maps an input sequence x (batch, channels, time) to an output
sequence of the same length, where the column at time k is the prediction of
the measured output one step ahead. In NARX mode x stacks the input and
output channels, x[k] = (u[k], y[k]); in FIR mode x carries u only.

``predict_one_step`` feeds measured data shifted right by one sample (zero
history at the start), so its output aligns index-for-index with y.
``simulate_free_run`` replaces the measured outputs in the feedback channels
with the model's own past predictions, evaluating one time step at a time on
a receptive-field-sized input window.
"""

import base64
import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, DataError, DimensionError, UnsupportedError
from .layers import (ACTIVATIONS, NORM_KINDS, Activation, CausalConv1d,
                     Dropout, Layer, ResidualBlock, _sigmoid)
from .tensor import Rng

FAMILIES = ("tcn", "mlp", "lstm")


@dataclass
class ModelConfig:
    """Architecture hyperparameters; parameter count is a pure function of this."""

    family: str = "tcn"
    nu: int = 1
    ny: int = 1
    narx: bool = True          # feed y back as input channels; False = FIR (x = u)
    hidden: int = 16
    depth: int = 1             # residual blocks / hidden layers / stacked cells
    kernel_size: int = 2
    dilations: bool = False    # d_l = 2**(l-1) when on, 1 when off
    order: int = 2             # MLP window length (lags of the regression vector)
    dropout: float = 0.0
    norm: str = "none"
    activation: str = "relu"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown model family '{self.family}'")
        if self.norm not in NORM_KINDS:
            raise ConfigError(f"unknown norm kind '{self.norm}'")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation '{self.activation}'")
        for name in ("nu", "ny", "hidden", "depth", "kernel_size", "order"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def in_channels(self):
        return self.nu + self.ny if self.narx else self.nu

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class _SequenceModel(Layer):
    """Shared plumbing: parameter traversal plus per-layer streaming.

    ``begin_stream`` resets the ring buffers (or recurrent state) of every
    sublayer; ``step`` then advances the whole model one time step at a cost
    proportional to the receptive field.
    """

    def __init__(self, config):
        super().__init__()
        self.config = config

    def num_parameters(self):
        return sum(p.size for _, p in self.named_parameters())

    def begin_stream(self, batch_size=1):
        for sub in self.sublayers():
            sub.begin_stream(batch_size)


class TCN(_SequenceModel):
    """Stacked residual blocks of dilated causal convolutions + 1x1 output map."""

    def __init__(self, config, rng):
        super().__init__(config)
        c = config
        self.blocks = []
        cin = c.in_channels
        for l in range(c.depth):
            d = 2 ** l if c.dilations else 1
            self.blocks.append(ResidualBlock(
                cin, c.hidden, c.kernel_size, d, norm=c.norm,
                dropout=c.dropout, activation=c.activation, rng=rng))
            cin = c.hidden
        self.head = CausalConv1d(c.hidden, c.ny, 1, 1, rng, init="glorot")

    @property
    def dilation_factors(self):
        return [b.dilation for b in self.blocks]

    def sublayers(self):
        return (*self.blocks, self.head)

    def _subname(self, i):
        return f"blocks.{i}" if i < len(self.blocks) else "head"

    def forward(self, x, training=False):
        h = x
        for block in self.blocks:
            h = block.forward(h, training)
        return self.head.forward(h, training)

    def backward(self, grad):
        g = self.head.backward(grad)
        for block in reversed(self.blocks):
            g = block.backward(g)
        return g

    def step(self, col):
        h = col
        for block in self.blocks:
            h = block.step(h)
        return self.head.step(h)


class MLPNet(_SequenceModel):
    """NARX multilayer perceptron applied along the sequence.

    The first layer is a kernel-n causal convolution, which is exactly a dense
    layer on the window of the last n regression vectors; deeper hidden layers
    and the output map are 1x1 convolutions (per-time-step dense maps).
    """

    def __init__(self, config, rng):
        super().__init__(config)
        c = config
        init = "he" if c.activation == "relu" else "glorot"
        self.layers = [CausalConv1d(c.in_channels, c.hidden, c.order, 1, rng,
                                    init=init)]
        self.layers.append(Activation(c.activation))
        for _ in range(c.depth - 1):
            self.layers.append(CausalConv1d(c.hidden, c.hidden, 1, 1, rng,
                                            init=init))
            self.layers.append(Activation(c.activation))
        self.head = CausalConv1d(c.hidden, c.ny, 1, 1, rng, init="glorot")

    def sublayers(self):
        return (*self.layers, self.head)

    def _subname(self, i):
        return f"layers.{i}" if i < len(self.layers) else "head"

    def forward(self, x, training=False):
        h = x
        for layer in self.layers:
            h = layer.forward(h, training)
        return self.head.forward(h, training)

    def backward(self, grad):
        g = self.head.backward(grad)
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    def step(self, col):
        h = col
        for layer in self.layers:
            h = layer.step(h)
        return self.head.step(h)


def lstm_cell_step(x_t, h_prev, c_prev, w_x, w_h, b):
    """One LSTM cell update; returns (h, c, cache) with gate order i, f, g, o."""
    hidden = h_prev.shape[1]
    z = x_t @ w_x.T + h_prev @ w_h.T + b
    i = _sigmoid(z[:, :hidden])
    f = _sigmoid(z[:, hidden:2 * hidden])
    g = np.tanh(z[:, 2 * hidden:3 * hidden])
    o = _sigmoid(z[:, 3 * hidden:])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    cache = (x_t, h_prev, c_prev, i, f, g, o, tc)
    return h, c, cache


def lstm_cell_backward(cache, d_h, d_c, w_x, w_h):
    """Adjoint of one cell step.

    Returns (d_x, d_h_prev, d_c_prev, d_wx, d_wh, d_b) where d_h/d_c are the
    gradients flowing into this step's outputs.
    """
    x_t, h_prev, c_prev, i, f, g, o, tc = cache
    d_o = d_h * tc
    d_c_total = d_c + d_h * o * (1.0 - tc * tc)
    d_f = d_c_total * c_prev
    d_i = d_c_total * g
    d_g = d_c_total * i
    dz_i = d_i * i * (1.0 - i)
    dz_f = d_f * f * (1.0 - f)
    dz_g = d_g * (1.0 - g * g)
    dz_o = d_o * o * (1.0 - o)
    dz = np.concatenate([dz_i, dz_f, dz_g, dz_o], axis=1)
    d_wx = dz.T @ x_t
    d_wh = dz.T @ h_prev
    d_b = dz.sum(axis=0)
    d_x = dz @ w_x
    d_h_prev = dz @ w_h
    d_c_prev = d_c_total * f
    return d_x, d_h_prev, d_c_prev, d_wx, d_wh, d_b


class LstmCell(Layer):
    def __init__(self, in_size, hidden, rng):
        super().__init__()
        self.in_size = in_size
        self.hidden = hidden
        lim_x = np.sqrt(6.0 / (in_size + hidden))
        lim_h = np.sqrt(6.0 / (2 * hidden))
        self._register("Wx", rng.uniform(-lim_x, lim_x, (4 * hidden, in_size)))
        self._register("Wh", rng.uniform(-lim_h, lim_h, (4 * hidden, hidden)))
        self._register("b", np.zeros(4 * hidden))


class LSTMNet(_SequenceModel):
    """Stacked LSTM cells with inter-layer dropout and a 1x1 linear output map."""

    def __init__(self, config, rng):
        super().__init__(config)
        c = config
        self.cells = []
        in_size = c.in_channels
        for _ in range(c.depth):
            self.cells.append(LstmCell(in_size, c.hidden, rng))
            in_size = c.hidden
        # dropout between stacked layers only (none after the last cell)
        self.drops = [Dropout(c.dropout, rng.split()) for _ in range(c.depth - 1)]
        self.head = CausalConv1d(c.hidden, c.ny, 1, 1, rng, init="glorot")
        self._caches = None
        self._drop_masks = None
        self._state = None

    def sublayers(self):
        return (*self.cells, self.head)

    def _subname(self, i):
        return f"cells.{i}" if i < len(self.cells) else "head"

    def init_state(self, batch_size):
        return [(np.zeros((batch_size, self.config.hidden)),
                 np.zeros((batch_size, self.config.hidden)))
                for _ in self.cells]

    def _step_stack(self, col, state, training, record=True):
        """Advance every stacked cell one time step; returns top output column."""
        masks = []
        h = col
        for li, cell in enumerate(self.cells):
            h_prev, c_prev = state[li]
            h, c, cache = lstm_cell_step(h, h_prev, c_prev, cell.params["Wx"],
                                         cell.params["Wh"], cell.params["b"])
            state[li] = (h, c)
            if record:
                self._layer_caches[li].append(cache)
            if li < len(self.cells) - 1:
                drop = self.drops[li]
                h = drop.forward(h, training)
                masks.append(drop._scaled_mask)
        if record:
            self._drop_masks.append(masks)
        return h

    def forward(self, x, training=False):
        if x.ndim != 3 or x.shape[1] != self.config.in_channels:
            raise DimensionError(
                f"lstm expects (batch, {self.config.in_channels}, time), got {x.shape}"
            )
        b_sz, _, t_len = x.shape
        state = self.init_state(b_sz)
        self._layer_caches = [[] for _ in self.cells]
        self._drop_masks = []
        tops = np.zeros((b_sz, self.config.hidden, t_len))
        for t in range(t_len):
            tops[:, :, t] = self._step_stack(x[:, :, t], state, training)
        self._state = state
        return self.head.forward(tops, training)

    def backward(self, grad):
        d_tops = self.head.backward(grad)
        b_sz = d_tops.shape[0]
        t_len = d_tops.shape[2]
        n_layers = len(self.cells)
        hidden = self.config.hidden
        d_h = [np.zeros((b_sz, hidden)) for _ in range(n_layers)]
        d_c = [np.zeros((b_sz, hidden)) for _ in range(n_layers)]
        d_x = np.zeros((b_sz, self.config.in_channels, t_len))
        for t in range(t_len - 1, -1, -1):
            down = d_tops[:, :, t]
            for li in range(n_layers - 1, -1, -1):
                cell = self.cells[li]
                if li < n_layers - 1:
                    mask = self._drop_masks[t][li]
                    if mask is not None:
                        down = down * mask
                dh_in = d_h[li] + down
                cache = self._layer_caches[li][t]
                dxt, dhp, dcp, dwx, dwh, db = lstm_cell_backward(
                    cache, dh_in, d_c[li], cell.params["Wx"], cell.params["Wh"])
                cell.grads["Wx"] += dwx
                cell.grads["Wh"] += dwh
                cell.grads["b"] += db
                d_h[li] = dhp
                d_c[li] = dcp
                down = dxt
            d_x[:, :, t] = down
        return d_x

    # recurrent streaming keeps (h, c) instead of input ring buffers
    def begin_stream(self, batch_size=1):
        self._stream_state = self.init_state(batch_size)
        self._layer_caches = [[] for _ in self.cells]
        self._drop_masks = []
        self.head.begin_stream(batch_size)

    def step(self, col):
        top = self._step_stack(col, self._stream_state, training=False,
                               record=False)
        return self.head.step(top)


def build_model(config, rng):
    """Instantiate a model family from its configuration; deterministic in rng."""
    if config.family == "tcn":
        return TCN(config, rng)
    if config.family == "mlp":
        return MLPNet(config, rng)
    if config.family == "lstm":
        return LSTMNet(config, rng)
    raise ConfigError(f"unknown model family '{config.family}'")


def count_parameters(config):
    return build_model(config, Rng(0)).num_parameters()


def receptive_field(model):
    """Number of past samples (current one included) that can move one output."""
    c = model.config
    if c.family == "tcn":
        return 1 + sum(2 * (c.kernel_size - 1) * b.dilation for b in model.blocks)
    if c.family == "mlp":
        return c.order
    raise UnsupportedError("receptive field is unbounded for recurrent models")


def stack_model_input(record, narx):
    """Input channels for a record: (u, y) stacked in NARX mode, u alone in FIR."""
    if record.u.shape[1] != record.y.shape[1]:
        raise DataError(
            f"u and y lengths differ: {record.u.shape[1]} vs {record.y.shape[1]}"
        )
    if narx:
        return np.concatenate([record.u, record.y], axis=0)
    return record.u


def shift_right(x):
    """Prepend a zero column and drop the last one: x'[k] = x[k-1]."""
    out = np.zeros_like(x)
    out[:, 1:] = x[:, :-1]
    return out


def predict_one_step(model, record):
    """One-step-ahead predictions aligned with the measured output.

    yhat[k] is the model's prediction of y[k] from measured data up to k-1;
    the earliest predictions see zero-padded history.
    """
    x = stack_model_input(record, model.config.narx)
    xs = shift_right(x)
    if xs.shape[1] == 1:
        # right-pad to two columns (causality makes the pad inert) so the
        # contraction kernels match the streaming ones
        xs = np.concatenate([xs, np.zeros_like(xs)], axis=1)
        return model.forward(xs[None], training=False)[0][:, :1]
    return model.forward(xs[None], training=False)[0]


def simulate_free_run(model, u, y_init=None):
    """Free-run simulation: past measured outputs replaced by past predictions.

    ``y_init`` optionally supplies measured outputs for the first columns of
    the feedback channels (zero-padded when absent or shorter than the
    receptive field). Ignored in FIR mode.
    """
    c = model.config
    u = np.asarray(u, dtype=np.float64)
    if u.ndim == 1:
        u = u[None, :]
    if u.shape[0] != c.nu:
        raise DimensionError(f"expected {c.nu} input channels, got {u.shape[0]}")
    t_len = u.shape[1]
    yhat = np.zeros((c.ny, t_len))
    init_len = 0 if y_init is None else y_init.shape[1]
    model.begin_stream(1)
    col = np.zeros((1, c.in_channels))
    for k in range(t_len):
        # feed x[k-1]; the model emits the prediction of y[k]
        if k == 0:
            col[:] = 0.0
        else:
            col[0, :c.nu] = u[:, k - 1]
            if c.narx:
                if k - 1 < init_len:
                    col[0, c.nu:] = y_init[:, k - 1]
                else:
                    col[0, c.nu:] = yhat[:, k - 1]
        yhat[:, k] = model.step(col)[0]
    return yhat


def free_run_naive(model, u, y_init=None):
    """Sliding-window re-evaluation oracle for ``simulate_free_run``.

    Rebuilds the full input history at every step and runs a whole forward
    pass over it; O(T^2) and only meant for cross-checking.
    """
    c = model.config
    u = np.asarray(u, dtype=np.float64)
    if u.ndim == 1:
        u = u[None, :]
    t_len = u.shape[1]
    yhat = np.zeros((c.ny, t_len))
    init_len = 0 if y_init is None else y_init.shape[1]
    for k in range(t_len):
        # columns 1..k hold x[0..k-1], column 0 the zero history; trailing
        # zero columns (ignored thanks to causality) keep the width >= 2 so
        # the contraction kernels match the streaming ones
        x = np.zeros((1, c.in_channels, max(k + 1, 2)))
        for j in range(k):
            x[0, :c.nu, j + 1] = u[:, j]
            if c.narx:
                x[0, c.nu:, j + 1] = y_init[:, j] if j < init_len else yhat[:, j]
        out = model.forward(x, training=False)
        yhat[:, k] = out[0, :, k]
    return yhat


# ---------------------------------------------------------------------------
# checkpoints: single JSON document, bit-exact float64 payloads
# ---------------------------------------------------------------------------

CHECKPOINT_FORMAT = "sysident-checkpoint-v1"


def _encode_array(arr):
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    return {"shape": list(arr.shape),
            "data": base64.b64encode(arr.astype("<f8").tobytes()).decode("ascii")}


def _decode_array(entry):
    raw = base64.b64decode(entry["data"])
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(entry["shape"])


def save_checkpoint(model, path, normalization=None):
    doc = {
        "format": CHECKPOINT_FORMAT,
        "config": model.config.to_dict(),
        "params": {name: _encode_array(p) for name, p in model.named_parameters()},
        "state": {name: _encode_array(s) for name, s in model.named_state()},
    }
    if normalization is not None:
        doc["normalization"] = normalization
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_checkpoint(path):
    """Rebuild a model (plus optional normalization dict) from a checkpoint file."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"not a model checkpoint: {path}")
    model = build_model(ModelConfig.from_dict(doc["config"]), Rng(0))
    params = dict(model.named_parameters())
    if set(params) != set(doc["params"]):
        raise DataError("checkpoint parameter names do not match the configuration")
    for name, entry in doc["params"].items():
        arr = _decode_array(entry)
        if arr.shape != params[name].shape:
            raise DataError(f"checkpoint parameter '{name}' has shape "
                            f"{arr.shape}, expected {params[name].shape}")
        params[name][...] = arr
    state = dict(model.named_state())
    for name, entry in doc.get("state", {}).items():
        state[name][...] = _decode_array(entry)
    return model, doc.get("normalization")
