"""Datasets: toy-system simulation, excitation signals, CSV ingestion,
normalization.

Records carry channel-major arrays u (nu, T) and y (ny, T); the toy system
additionally keeps its noiseless output so noise-floor studies can compare
against ground truth.
"""

import csv
import json
import math
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DataError, NumericError, ParameterError, SchemaError
from .tensor import Rng


@dataclass
class SequenceRecord:
    u: np.ndarray
    y: np.ndarray
    y_clean: Optional[np.ndarray] = None
    sample_rate: Optional[float] = None

    def __post_init__(self):
        self.u = np.atleast_2d(np.asarray(self.u, dtype=np.float64))
        self.y = np.atleast_2d(np.asarray(self.y, dtype=np.float64))
        if self.y_clean is not None:
            self.y_clean = np.atleast_2d(np.asarray(self.y_clean, dtype=np.float64))
        if self.u.shape[1] != self.y.shape[1]:
            raise DataError(
                f"u and y lengths differ: {self.u.shape[1]} vs {self.y.shape[1]}")

    @property
    def length(self):
        return self.u.shape[1]


@dataclass
class NormConstants:
    u_mean: np.ndarray
    u_scale: np.ndarray
    y_mean: np.ndarray
    y_scale: np.ndarray

    def to_dict(self):
        return {k: list(getattr(self, k)) for k in
                ("u_mean", "u_scale", "y_mean", "y_scale")}

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: np.asarray(d[k], dtype=np.float64) for k in
                      ("u_mean", "u_scale", "y_mean", "y_scale")})


@dataclass
class Dataset:
    records: list
    role: str = "training"
    normalization: Optional[NormConstants] = None

    def __post_init__(self):
        if self.role not in ("training", "validation", "test"):
            raise DataError(f"unknown dataset role '{self.role}'")

    @property
    def num_samples(self):
        return sum(r.length for r in self.records)


@dataclass
class NoiseSpec:
    sigma_v: float = 0.0   # process noise, enters the state recursion
    sigma_w: float = 0.0   # additive measurement noise
    seed: int = 0

    def __post_init__(self):
        if self.sigma_v < 0 or self.sigma_w < 0:
            raise ParameterError("noise standard deviations must be >= 0")


CHEN_BLOWUP_LIMIT = 1e6


def simulate_chen(u, noise, rng):
    """Simulate the second-order exponential-autoregressive toy system.

    State recursion (zero initial conditions, indices below zero read 0):
      s[k] = (0.8 - 0.5 exp(-s[k-1]^2)) s[k-1] - (0.3 + 0.9 exp(-s[k-1]^2)) s[k-2]
             + u[k-1] + 0.2 u[k-2] + 0.1 u[k-1] u[k-2] + v[k]
      y[k] = s[k] + w[k]
    with v, w i.i.d. Gaussian of the given standard deviations.
    """
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    t_len = u.size
    v = rng.gaussian(t_len, std=noise.sigma_v) if noise.sigma_v > 0 else np.zeros(t_len)
    w = rng.gaussian(t_len, std=noise.sigma_w) if noise.sigma_w > 0 else np.zeros(t_len)
    s = np.zeros(t_len)
    s1 = 0.0   # s[k-1]
    s2 = 0.0   # s[k-2]
    for k in range(t_len):
        u1 = u[k - 1] if k >= 1 else 0.0
        u2 = u[k - 2] if k >= 2 else 0.0
        e = math.exp(-s1 * s1)
        sk = (0.8 - 0.5 * e) * s1 - (0.3 + 0.9 * e) * s2 \
            + u1 + 0.2 * u2 + 0.1 * u1 * u2 + v[k]
        if not math.isfinite(sk) or abs(sk) > CHEN_BLOWUP_LIMIT:
            raise NumericError(f"toy-system simulation blew up at sample {k}")
        s[k] = sk
        s2 = s1
        s1 = sk
    return SequenceRecord(u=u[None, :], y=(s + w)[None, :], y_clean=s[None, :])


def generate_held_gaussian_input(length, hold, rng):
    """Standard-normal draws, each held for ``hold`` consecutive samples."""
    if hold < 1:
        raise ParameterError(f"hold must be >= 1, got {hold}")
    draws = rng.gaussian(-(-length // hold))
    return np.repeat(draws, hold)[:length]


def make_chen_dataset(num_records, record_length, noise, seed, hold=5,
                      role="training"):
    """Independent toy-system records, each with fresh input and noise draws."""
    if num_records < 1 or record_length < 3:
        raise ParameterError("need at least 1 record of length >= 3")
    master = Rng(seed)
    records = []
    for _ in range(num_records):
        u = generate_held_gaussian_input(record_length, hold, master.split())
        records.append(simulate_chen(u, noise, master.split()))
    return Dataset(records=records, role=role)


# ---------------------------------------------------------------------------
# CSV ingestion / serialization
# ---------------------------------------------------------------------------

def _meta_path(path):
    return os.fspath(path) + ".meta.json"


def load_csv_dataset(path, u_cols=None, y_cols=None, role="test"):
    """Load one dataset file: header row naming channels, one sample per row.

    Column names default to the ``u*``/``y*`` prefixes found in the header.
    A sidecar ``<file>.meta.json`` may declare ``sample_rate`` and
    ``segments`` ([start, stop) pairs splitting the file into records).
    """
    path = os.fspath(path)
    if not os.path.exists(path):
        raise DataError(f"dataset file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"empty dataset file: {path}") from None
        header = [h.strip() for h in header]
        if u_cols is None:
            u_cols = [h for h in header if h.startswith("u")]
        if y_cols is None:
            y_cols = [h for h in header if h.startswith("y") and
                      not h.startswith("ystar")]
        for col in list(u_cols) + list(y_cols):
            if col not in header:
                raise SchemaError(f"column '{col}' not present in {path} "
                                  f"(header: {header})")
        if not u_cols or not y_cols:
            raise SchemaError(f"no input/output columns declared for {path}")
        u_idx = [header.index(c) for c in u_cols]
        y_idx = [header.index(c) for c in y_cols]
        u_rows, y_rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                u_rows.append([float(row[i]) for i in u_idx])
                y_rows.append([float(row[i]) for i in y_idx])
            except (ValueError, IndexError) as exc:
                raise DataError(f"{path}: malformed row at line {lineno}: "
                                f"{row}") from exc
    if not u_rows:
        raise SchemaError(f"dataset file has no data rows: {path}")
    u = np.asarray(u_rows).T
    y = np.asarray(y_rows).T
    sample_rate = None
    segments = None
    if os.path.exists(_meta_path(path)):
        with open(_meta_path(path), encoding="utf-8") as fh:
            meta = json.load(fh)
        sample_rate = meta.get("sample_rate")
        segments = meta.get("segments")
    if segments:
        records = [SequenceRecord(u=u[:, a:b], y=y[:, a:b],
                                  sample_rate=sample_rate) for a, b in segments]
    else:
        records = [SequenceRecord(u=u, y=y, sample_rate=sample_rate)]
    return Dataset(records=records, role=role)


def save_csv_dataset(dataset, path):
    """One file per dataset: concatenated records plus a segment sidecar.

    Values are written with repr() so a load round-trips them exactly.
    """
    path = os.fspath(path)
    records = dataset.records
    nu = records[0].u.shape[0]
    ny = records[0].y.shape[0]
    has_clean = all(r.y_clean is not None for r in records)
    header = [f"u{i + 1}" for i in range(nu)] + [f"y{i + 1}" for i in range(ny)]
    if has_clean:
        header += [f"ystar{i + 1}" for i in range(ny)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for rec in records:
            for k in range(rec.length):
                vals = [repr(float(v)) for v in rec.u[:, k]]
                vals += [repr(float(v)) for v in rec.y[:, k]]
                if has_clean:
                    vals += [repr(float(v)) for v in rec.y_clean[:, k]]
                fh.write(",".join(vals) + "\n")
    meta = {"segments": []}
    start = 0
    for rec in records:
        meta["segments"].append([start, start + rec.length])
        start += rec.length
    if records[0].sample_rate is not None:
        meta["sample_rate"] = records[0].sample_rate
    with open(_meta_path(path), "w", encoding="utf-8") as fh:
        json.dump(meta, fh)
        fh.write("\n")


# ---------------------------------------------------------------------------
# normalization (training-split statistics only)
# ---------------------------------------------------------------------------

def compute_norm_constants(dataset):
    """Per-channel mean/std over all records; must come from the training split."""
    u_all = np.concatenate([r.u for r in dataset.records], axis=1)
    y_all = np.concatenate([r.y for r in dataset.records], axis=1)
    consts = NormConstants(u_mean=u_all.mean(axis=1), u_scale=u_all.std(axis=1),
                           y_mean=y_all.mean(axis=1), y_scale=y_all.std(axis=1))
    for name, scale in (("u", consts.u_scale), ("y", consts.y_scale)):
        if np.any(scale == 0.0):
            raise DataError(f"zero-variance {name} channel cannot be normalized")
    return consts


def normalize_dataset(dataset, constants=None):
    """Affine per-channel transform using training-set statistics.

    When ``constants`` is None they are computed from this dataset (which must
    then be the training split); otherwise the given constants are applied.
    """
    if constants is None:
        constants = compute_norm_constants(dataset)
    records = []
    for rec in dataset.records:
        u = (rec.u - constants.u_mean[:, None]) / constants.u_scale[:, None]
        y = (rec.y - constants.y_mean[:, None]) / constants.y_scale[:, None]
        clean = None
        if rec.y_clean is not None:
            clean = (rec.y_clean - constants.y_mean[:, None]) / constants.y_scale[:, None]
        records.append(SequenceRecord(u=u, y=y, y_clean=clean,
                                      sample_rate=rec.sample_rate))
    return Dataset(records=records, role=dataset.role, normalization=constants)


def denormalize_output(yhat, constants):
    return yhat * constants.y_scale[:, None] + constants.y_mean[:, None]
