"""Grid-search harness: Cartesian hyperparameter sweeps with journaling,
deterministic per-configuration seeds and parallel workers.

Results are invariant (as a set of rows) to the worker count because each
configuration trains from a seed derived only from the base seed and its own
index, never from scheduling order.
"""

import csv
import json
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, replace
from itertools import product
from typing import Optional

import numpy as np

from .analysis import evaluate
from .errors import ConfigError, DataError, SysidentError
from .models import ModelConfig, build_model, count_parameters
from .tensor import Rng, derive_seed
from .training import train


@dataclass
class GridSpace:
    """Named hyperparameter axes; expansion is their Cartesian product."""

    axes: dict

    def __post_init__(self):
        for name, values in self.axes.items():
            if not values:
                raise ConfigError(f"grid axis '{name}' is empty")

    @property
    def size(self):
        n = 1
        for values in self.axes.values():
            n *= len(values)
        return n

    def to_json(self):
        return json.dumps({"axes": self.axes}, indent=1)

    @classmethod
    def from_json(cls, text):
        return cls(axes=json.loads(text)["axes"])


def grid_expand(space, base=None):
    """All axis combinations as ModelConfigs, in lexicographic axis order."""
    base = base if base is not None else ModelConfig()
    names = sorted(space.axes)
    configs = []
    for combo in product(*(space.axes[n] for n in names)):
        configs.append(replace(base, **dict(zip(names, combo))))
    return configs


# Appendix-style sweep definitions for the toy problem and the aircraft
# benchmark (axis names match ModelConfig fields).

def chen_tcn_space():
    return GridSpace(axes={
        "hidden": [16, 32, 64, 128, 256],
        "dropout": [0.0, 0.3, 0.5, 0.8],
        "depth": [1, 2, 4, 8],
        "kernel_size": [2, 4, 8, 16],
        "dilations": [True, False],
        "norm": ["batch", "weight", "none"],
    })


def chen_mlp_space():
    return GridSpace(axes={
        "hidden": [16, 32, 64, 128, 256],
        "order": [2, 4, 8, 16, 32, 64, 128],
        "activation": ["relu", "sigmoid"],
    })


def chen_lstm_space():
    return GridSpace(axes={
        "hidden": [16, 32, 64, 128],
        "depth": [1, 2, 3],
        "dropout": [0.0, 0.3, 0.5, 0.8],
    })


def f16_tcn_space():
    return GridSpace(axes={
        "hidden": [16, 32, 64, 128],
        "dropout": [0.0, 0.3, 0.5, 0.8],
        "depth": [1, 2, 4, 8],
        "kernel_size": [2, 4, 8, 16],
        "dilations": [True, False],
        "norm": ["batch", "weight", "none"],
    })


@dataclass
class GridRow:
    index: int
    repetition: int
    config: dict
    seed: int
    status: str                      # "ok" or "failed"
    rmse_one_step: Optional[float]
    rmse_free_run: Optional[float]
    best_epoch: Optional[int]
    wall_clock: float

    _FIELDS = ("index", "repetition", "config", "seed", "status",
               "rmse_one_step", "rmse_free_run", "best_epoch", "wall_clock")

    def to_csv_row(self):
        return [self.index, self.repetition, json.dumps(self.config, sort_keys=True),
                self.seed, self.status,
                "" if self.rmse_one_step is None else repr(float(self.rmse_one_step)),
                "" if self.rmse_free_run is None else repr(float(self.rmse_free_run)),
                "" if self.best_epoch is None else self.best_epoch,
                f"{self.wall_clock:.3f}"]

    @classmethod
    def from_csv_row(cls, row):
        return cls(index=int(row[0]), repetition=int(row[1]),
                   config=json.loads(row[2]), seed=int(row[3]), status=row[4],
                   rmse_one_step=float(row[5]) if row[5] else None,
                   rmse_free_run=float(row[6]) if row[6] else None,
                   best_epoch=int(row[7]) if row[7] else None,
                   wall_clock=float(row[8]))


def _run_single(payload):
    """Train and score one configuration (runs inside a worker process)."""
    index, repetition, config, seed, train_set, valid_set, train_config = payload
    t0 = time.perf_counter()
    try:
        model = build_model(config, Rng(seed))
        tc = replace(train_config, seed=seed)
        model, history = train(model, train_set, valid_set, tc)
        one_step = evaluate(model, valid_set, mode="one-step").rmse_mean
        free_run = evaluate(model, valid_set, mode="free-run").rmse_mean
        return GridRow(index=index, repetition=repetition,
                       config=config.to_dict(), seed=seed, status="ok",
                       rmse_one_step=one_step, rmse_free_run=free_run,
                       best_epoch=history.best_epoch,
                       wall_clock=time.perf_counter() - t0)
    except SysidentError:
        return GridRow(index=index, repetition=repetition,
                       config=config.to_dict(), seed=seed, status="failed",
                       rmse_one_step=None, rmse_free_run=None, best_epoch=None,
                       wall_clock=time.perf_counter() - t0)


def _journal_append(path, row):
    with open(path, "a", newline="", encoding="utf-8") as fh:
        csv.writer(fh).writerow(row.to_csv_row())


def _journal_load(path):
    rows = {}
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            for raw in csv.reader(fh):
                if not raw:
                    continue
                row = GridRow.from_csv_row(raw)
                rows[(row.index, row.repetition)] = row
    except FileNotFoundError:
        pass
    return rows


def run_grid(space, train_set, valid_set, train_config, base=None, jobs=1,
             journal_path=None, repetitions=1):
    """Train every configuration of the grid; returns rows sorted by index.

    Per-configuration seeds derive from (train_config.seed, index, repetition)
    only, so results do not depend on worker count or on other axes being
    added. With ``journal_path`` completed rows survive interruption and are
    not re-run.
    """
    configs = grid_expand(space, base) if isinstance(space, GridSpace) else list(space)
    done = _journal_load(journal_path) if journal_path else {}
    tasks = []
    for rep in range(repetitions):
        for i, cfg in enumerate(configs):
            if (i, rep) in done:
                continue
            seed = derive_seed(train_config.seed, i, rep)
            tasks.append((i, rep, cfg, seed, train_set, valid_set, train_config))
    fresh = []
    if jobs <= 1 or not tasks:
        for payload in tasks:
            row = _run_single(payload)
            if journal_path:
                _journal_append(journal_path, row)
            fresh.append(row)
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_single, payload) for payload in tasks]
            for fut in as_completed(futures):
                row = fut.result()
                if journal_path:
                    _journal_append(journal_path, row)
                fresh.append(row)
    rows = list(done.values()) + fresh
    rows.sort(key=lambda r: (r.index, r.repetition))
    return rows


def select_best(rows, metric="one-step"):
    """Configuration with the lowest validation RMSE under the chosen metric.

    Ties break toward fewer parameters, then lexicographic configuration order.
    """
    attr = {"one-step": "rmse_one_step", "free-run": "rmse_free_run"}[metric]
    ok = [r for r in rows if r.status == "ok" and getattr(r, attr) is not None]
    if not ok:
        raise DataError("no successful grid rows to select from")

    def key(row):
        cfg = ModelConfig.from_dict(row.config)
        return (getattr(row, attr), count_parameters(cfg),
                json.dumps(row.config, sort_keys=True))

    best = min(ok, key=key)
    return ModelConfig.from_dict(best.config), getattr(best, attr)


def marginal_quartiles(rows, axis, metric="one-step"):
    """Box-plot aggregation: quartiles of the metric per value of one axis,
    marginalizing over every other hyperparameter."""
    attr = {"one-step": "rmse_one_step", "free-run": "rmse_free_run"}[metric]
    groups = {}
    for row in rows:
        if row.status != "ok" or getattr(row, attr) is None:
            continue
        groups.setdefault(row.config[axis], []).append(getattr(row, attr))
    out = {}
    for value, metrics in groups.items():
        q1, q2, q3 = np.quantile(np.asarray(metrics), [0.25, 0.5, 0.75],
                                 method="median_unbiased")
        out[value] = (float(q1), float(q2), float(q3))
    return out


def write_results_csv(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(GridRow._FIELDS)
        for row in rows:
            writer.writerow(row.to_csv_row())


def load_results_csv(path):
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        for raw in reader:
            if raw:
                rows.append(GridRow.from_csv_row(raw))
    return rows
