"""Evaluation metrics, Volterra kernel extraction and error spectra.

Kernel extraction turns a trained single-hidden-layer FIR network into the
constant, first- and second-order kernels of the equivalent polynomial series
with memory, by Taylor-expanding the hidden activations around their bias
values. ``fd_volterra_oracle`` recovers the same kernels from input-pulse
finite differences and serves as the independent cross-check.
"""

import json
from dataclasses import dataclass

import numpy as np

from .errors import DataError, DimensionError, UnsupportedError
from .models import predict_one_step, receptive_field, simulate_free_run
from .data import Dataset, denormalize_output, normalize_dataset


def rmse(yhat, y):
    """Root mean square error per channel plus the mean across channels."""
    yhat = np.atleast_2d(np.asarray(yhat, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if yhat.shape != y.shape:
        raise DimensionError(f"rmse shape mismatch: {yhat.shape} vs {y.shape}")
    if yhat.shape[1] == 0:
        raise DataError("rmse of an empty sequence")
    diff = yhat - y
    per_channel = np.sqrt(np.mean(diff * diff, axis=1))
    return per_channel, float(per_channel.mean())


@dataclass
class EvalReport:
    mode: str
    rmse_per_channel: list
    rmse_mean: float
    sample_count: int
    warmup_skipped: int

    def to_json(self):
        return json.dumps({
            "mode": self.mode,
            "rmse_per_channel": self.rmse_per_channel,
            "rmse_mean": self.rmse_mean,
            "sample_count": self.sample_count,
            "warmup_skipped": self.warmup_skipped,
        }, indent=1)


def evaluate(model, dataset, mode="one-step", warmup=0, normalization=None):
    """RMSE of a model over a dataset in one-step or free-run mode.

    With ``normalization`` the records are transformed into model units for
    prediction and the predictions mapped back, so the report stays in the
    data's original units. ``warmup`` samples are dropped from the start of
    each record before scoring.
    """
    if mode not in ("one-step", "free-run"):
        raise DataError(f"unknown evaluation mode '{mode}'")
    preds, meas = [], []
    for record in dataset.records:
        rec = record
        if normalization is not None:
            rec = normalize_dataset(Dataset(records=[record], role=dataset.role),
                                    normalization).records[0]
        if mode == "one-step":
            yhat = predict_one_step(model, rec)
        else:
            yhat = simulate_free_run(model, rec.u)
        if normalization is not None:
            yhat = denormalize_output(yhat, normalization)
        preds.append(yhat[:, warmup:])
        meas.append(record.y[:, warmup:])
    per_channel, mean = rmse(np.concatenate(preds, axis=1),
                             np.concatenate(meas, axis=1))
    return EvalReport(mode=mode, rmse_per_channel=list(per_channel),
                      rmse_mean=mean,
                      sample_count=sum(p.shape[1] for p in preds),
                      warmup_skipped=warmup)


# ---------------------------------------------------------------------------
# Volterra kernels of single-hidden-layer FIR networks
# ---------------------------------------------------------------------------

@dataclass
class VolterraKernels:
    h0: float
    h1: np.ndarray          # over lag tau in [0, memory)
    h2: np.ndarray          # symmetric over (tau1, tau2)
    memory: int
    degree: int = 2


def _activation_derivatives(kind, b):
    if kind == "tanh":
        t = np.tanh(b)
        return t, 1.0 - t * t, -2.0 * t * (1.0 - t * t)
    if kind == "sigmoid":
        s = 1.0 / (1.0 + np.exp(-b))
        return s, s * (1.0 - s), s * (1.0 - s) * (1.0 - 2.0 * s)
    raise UnsupportedError(
        f"kernel extraction needs a smooth activation, got '{kind}'")


def _fir_weights(model):
    """Pull (W1, b1, w2, b_out) out of a single-hidden-layer FIR network."""
    cfg = model.config
    if cfg.family != "mlp" or cfg.depth != 1:
        raise UnsupportedError(
            "kernel extraction supports single-hidden-layer networks only")
    if cfg.narx:
        raise UnsupportedError("kernel extraction needs a FIR model (x = u)")
    if cfg.nu != 1 or cfg.ny != 1:
        raise UnsupportedError("kernel extraction is single-input single-output")
    first = model.layers[0]
    w1 = first.effective_weight()[:, 0, :]      # (hidden, memory), tap = lag
    b1 = first.params["b"]
    w2 = model.head.effective_weight()[0, :, 0]
    b_out = float(model.head.params["b"][0])
    return w1, b1, w2, b_out


def extract_volterra_kernels(model, degree=2):
    """Kernels from the network weights, expanding activations at the biases.

    h0       = b_out + sum_j w2[j] sigma(b[j])
    h1[t]    = sum_j w2[j] sigma'(b[j]) W1[j,t]
    h2[t,s]  = 1/2 sum_j w2[j] sigma''(b[j]) W1[j,t] W1[j,s]
    """
    if degree > 2:
        raise UnsupportedError("kernel extraction is truncated at degree 2")
    w1, b1, w2, b_out = _fir_weights(model)
    s0, s1, s2 = _activation_derivatives(model.config.activation, b1)
    memory = w1.shape[1]
    h0 = b_out + float(np.sum(w2 * s0))
    h1 = np.einsum("j,jt->t", w2 * s1, w1)
    # per-unit outer products are exactly symmetric, so the sum is too
    outer = w1[:, :, None] * w1[:, None, :]
    h2 = 0.5 * np.sum((w2 * s2)[:, None, None] * outer, axis=0)
    return VolterraKernels(h0=h0, h1=h1, h2=h2, memory=memory, degree=degree)


def _fir_response(model, window):
    """Model output for one input window; window[tau] is the lag-tau sample."""
    x = window[::-1].copy()[None, None, :]
    return float(model.forward(x, training=False)[0, 0, -1])


def fd_volterra_oracle(model, degree=2, amplitude=1e-3):
    """Kernels from central finite differences of the network response.

    Independent of the weight-based extraction: only forward evaluations of
    pulse inputs are used. ``amplitude`` is the probe pulse height.
    """
    memory = receptive_field(model)
    a = amplitude

    def f(window):
        return _fir_response(model, window)

    zero = np.zeros(memory)
    f0 = f(zero)
    h0 = f0
    h1 = np.zeros(memory)
    h2 = np.zeros((memory, memory))
    for t in range(memory):
        pulse = np.zeros(memory)
        pulse[t] = a
        fp = f(pulse)
        fm = f(-pulse)
        h1[t] = (fp - fm) / (2.0 * a)
        if degree >= 2:
            h2[t, t] = (fp - 2.0 * f0 + fm) / (2.0 * a * a)
    if degree >= 2:
        for t in range(memory):
            for s in range(t + 1, memory):
                pp = np.zeros(memory); pp[t] = a; pp[s] = a
                pm = np.zeros(memory); pm[t] = a; pm[s] = -a
                mp = np.zeros(memory); mp[t] = -a; mp[s] = a
                mm = np.zeros(memory); mm[t] = -a; mm[s] = -a
                mixed = (f(pp) - f(pm) - f(mp) + f(mm)) / (8.0 * a * a)
                h2[t, s] = mixed
                h2[s, t] = mixed
    return VolterraKernels(h0=h0, h1=h1, h2=h2, memory=memory, degree=degree)


def error_spectrum(err, sample_rate=1.0, band=None):
    """Discrete Fourier magnitude of an error sequence.

    Returns (frequencies in Hz, magnitudes) over all DFT bins; ``band``
    restricts the output to frequencies in [f_lo, f_hi].
    """
    err = np.asarray(err, dtype=np.float64).reshape(-1)
    if err.size < 2:
        raise DataError("error spectrum needs at least 2 samples")
    spectrum = np.fft.fft(err)
    freqs = np.fft.fftfreq(err.size, d=1.0 / sample_rate)
    mags = np.abs(spectrum)
    if band is not None:
        f_lo, f_hi = band
        keep = (freqs >= f_lo) & (freqs <= f_hi)
        return freqs[keep], mags[keep]
    return freqs, mags
