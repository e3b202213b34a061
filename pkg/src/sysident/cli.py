"""Command-line entry point for reproducible identification runs.

Subcommands: generate, train, eval, gridsearch, volterra. Every run writes a
manifest (resolved arguments, seed, input digests, outputs, timestamps) next
to its outputs. Exit codes: 0 success, 2 input error, 3 unsupported
operation, 4 numeric failure.
"""

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import replace

import numpy as np

from . import __version__
from .analysis import (error_spectrum, evaluate, extract_volterra_kernels,
                       fd_volterra_oracle)
from .data import (Dataset, NoiseSpec, NormConstants, compute_norm_constants,
                   denormalize_output, load_csv_dataset, make_chen_dataset,
                   normalize_dataset, save_csv_dataset)
from .errors import (ConfigError, DataError, NumericError, ParameterError,
                     UnsupportedError)
from .gridsearch import GridSpace, run_grid, select_best, write_results_csv
from .models import (ModelConfig, build_model, load_checkpoint,
                     predict_one_step, save_checkpoint, simulate_free_run)
from .tensor import Rng, derive_seed
from .training import TrainConfig, train

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_UNSUPPORTED = 3
EXIT_NUMERIC = 4


def _digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_dir, command, args, seed, inputs, outputs):
    manifest = {
        "command": command,
        "args": {k: v for k, v in sorted(vars(args).items()) if k != "func"},
        "seed": seed,
        "version": __version__,
        "inputs": {os.fspath(p): _digest(p) for p in inputs},
        "outputs": [os.fspath(p) for p in outputs],
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, default=str)
        fh.write("\n")


def _resolve_seed(args):
    if args.seed is not None:
        return args.seed
    # unseeded runs draw a seed and record it in the manifest
    return int.from_bytes(os.urandom(4), "little")


def _load_dataset(path, args, role):
    u_cols = args.u_cols.split(",") if getattr(args, "u_cols", None) else None
    y_cols = args.y_cols.split(",") if getattr(args, "y_cols", None) else None
    return load_csv_dataset(path, u_cols=u_cols, y_cols=y_cols, role=role)


def cmd_generate(args):
    if args.system != "chen":
        raise ConfigError(f"unknown system '{args.system}'")
    seed = _resolve_seed(args)
    os.makedirs(args.out, exist_ok=True)
    noise = NoiseSpec(sigma_v=args.sigma_v, sigma_w=args.sigma_w, seed=seed)
    train_ds = make_chen_dataset(args.records, args.length, noise,
                                 seed=derive_seed(seed, "train"),
                                 hold=args.hold, role="training")
    valid_ds = make_chen_dataset(args.val_records, args.length, noise,
                                 seed=derive_seed(seed, "validation"),
                                 hold=args.hold, role="validation")
    train_path = os.path.join(args.out, "train.csv")
    valid_path = os.path.join(args.out, "valid.csv")
    save_csv_dataset(train_ds, train_path)
    save_csv_dataset(valid_ds, valid_path)
    _write_manifest(args.out, "generate", args, seed, [],
                    [train_path, valid_path])
    print(f"wrote {train_ds.num_samples} training and "
          f"{valid_ds.num_samples} validation samples to {args.out}")
    return EXIT_OK


def _model_config_from_args(args, nu, ny):
    return ModelConfig(
        family=args.family, nu=nu, ny=ny, narx=not args.fir,
        hidden=args.hidden, depth=args.depth, kernel_size=args.kernel_size,
        dilations=args.dilations, order=args.order, dropout=args.dropout,
        norm=args.norm, activation=args.activation)


def _train_config_from_args(args, seed):
    return TrainConfig(
        lr=args.lr, max_epochs=args.epochs, batch_size=args.batch_size,
        subseq_len=args.subseq_len, seed=seed,
        plateau_patience=args.plateau_patience, lr_factor=args.lr_factor,
        early_stop_patience=args.early_stop_patience, optimizer=args.optimizer)


def cmd_train(args):
    seed = _resolve_seed(args)
    os.makedirs(args.out, exist_ok=True)
    train_ds = _load_dataset(args.data, args, "training")
    valid_ds = _load_dataset(args.val, args, "validation") if args.val else None
    nu = train_ds.records[0].u.shape[0]
    ny = train_ds.records[0].y.shape[0]
    config = _model_config_from_args(args, nu, ny)
    norm = None
    if args.normalize:
        norm = compute_norm_constants(train_ds)
        train_ds = normalize_dataset(train_ds, norm)
        if valid_ds is not None:
            valid_ds = normalize_dataset(valid_ds, norm)
    model = build_model(config, Rng(seed))
    model, history = train(model, train_ds, valid_ds,
                           _train_config_from_args(args, seed))
    ckpt_path = os.path.join(args.out, "checkpoint.json")
    hist_path = os.path.join(args.out, "history.csv")
    save_checkpoint(model, ckpt_path,
                    normalization=norm.to_dict() if norm else None)
    history.to_csv(hist_path)
    inputs = [args.data] + ([args.val] if args.val else [])
    _write_manifest(args.out, "train", args, seed, inputs,
                    [ckpt_path, hist_path])
    best = history.best_epoch
    print(f"trained {args.family} for {len(history)} epochs; "
          f"best epoch {best}; checkpoint at {ckpt_path}")
    return EXIT_OK


def cmd_eval(args):
    seed = _resolve_seed(args)
    os.makedirs(args.out, exist_ok=True)
    model, norm_dict = load_checkpoint(args.checkpoint)
    dataset = _load_dataset(args.data, args, "test")
    ny = dataset.records[0].y.shape[0]
    nu = dataset.records[0].u.shape[0]
    if ny != model.config.ny or nu != model.config.nu:
        raise DataError(
            f"checkpoint expects {model.config.nu} inputs / {model.config.ny} "
            f"outputs but the dataset has {nu} / {ny}")
    norm = NormConstants.from_dict(norm_dict) if norm_dict else None
    modes = ["one-step", "free-run"] if args.mode == "both" else [args.mode]
    outputs = []
    for mode in modes:
        report = evaluate(model, dataset, mode=mode, warmup=args.warmup,
                          normalization=norm)
        tag = mode.replace("-", "_")
        report_path = os.path.join(args.out, f"report_{tag}.json")
        with open(report_path, "w", encoding="utf-8") as fh:
            fh.write(report.to_json() + "\n")
        outputs.append(report_path)
        pred_path = os.path.join(args.out, f"predictions_{tag}.csv")
        _write_predictions(model, dataset, mode, norm, pred_path)
        outputs.append(pred_path)
        if args.band is not None:
            spec_path = os.path.join(args.out, f"spectrum_{tag}.csv")
            _write_spectrum(model, dataset, mode, norm, args.band, spec_path)
            outputs.append(spec_path)
        print(f"{mode}: mean RMSE {report.rmse_mean:.6g} over "
              f"{report.sample_count} samples")
    _write_manifest(args.out, "eval", args, seed,
                    [args.checkpoint, args.data], outputs)
    return EXIT_OK


def _predict(model, record, mode, norm):
    rec = record
    if norm is not None:
        rec = normalize_dataset(Dataset(records=[record], role="test"), norm).records[0]
    if mode == "one-step":
        yhat = predict_one_step(model, rec)
    else:
        yhat = simulate_free_run(model, rec.u)
    if norm is not None:
        yhat = denormalize_output(yhat, norm)
    return yhat


def _write_predictions(model, dataset, mode, norm, path):
    ny = dataset.records[0].y.shape[0]
    with open(path, "w", encoding="utf-8") as fh:
        cols = ["record", "k"]
        cols += [f"y{i + 1}" for i in range(ny)]
        cols += [f"yhat{i + 1}" for i in range(ny)]
        fh.write(",".join(cols) + "\n")
        for ri, record in enumerate(dataset.records):
            yhat = _predict(model, record, mode, norm)
            for k in range(record.length):
                vals = [str(ri), str(k)]
                vals += [repr(float(v)) for v in record.y[:, k]]
                vals += [repr(float(v)) for v in yhat[:, k]]
                fh.write(",".join(vals) + "\n")


def _write_spectrum(model, dataset, mode, norm, band, path):
    ny = dataset.records[0].y.shape[0]
    record = dataset.records[0]
    yhat = _predict(model, record, mode, norm)
    err = yhat - record.y
    rate = record.sample_rate if record.sample_rate else 1.0
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("frequency," + ",".join(f"mag_y{i + 1}" for i in range(ny)) + "\n")
        freqs, first = error_spectrum(err[0], sample_rate=rate, band=band)
        mags = [first] + [error_spectrum(err[i], sample_rate=rate, band=band)[1]
                          for i in range(1, ny)]
        for j in range(freqs.size):
            fh.write(",".join([repr(float(freqs[j]))] + [repr(float(m[j])) for m in mags]) + "\n")


def cmd_gridsearch(args):
    seed = _resolve_seed(args)
    os.makedirs(args.out, exist_ok=True)
    with open(args.grid, encoding="utf-8") as fh:
        doc = json.load(fh)
    space = GridSpace(axes=doc["axes"])
    base = ModelConfig.from_dict(doc["base"]) if "base" in doc else ModelConfig()
    train_ds = _load_dataset(args.data, args, "training")
    valid_ds = _load_dataset(args.val, args, "validation")
    nu = train_ds.records[0].u.shape[0]
    ny = train_ds.records[0].y.shape[0]
    base = replace(base, nu=nu, ny=ny)
    tc = _train_config_from_args(args, seed)
    journal = os.path.join(args.out, "journal.csv")
    rows = run_grid(space, train_ds, valid_ds, tc, base=base, jobs=args.jobs,
                    journal_path=journal, repetitions=args.repetitions)
    results_path = os.path.join(args.out, "results.csv")
    write_results_csv(rows, results_path)
    best_config, best_score = select_best(rows, metric=args.metric)
    best_path = os.path.join(args.out, "best.json")
    with open(best_path, "w", encoding="utf-8") as fh:
        json.dump({"config": best_config.to_dict(), "metric": args.metric,
                   "rmse": best_score}, fh, indent=1)
        fh.write("\n")
    _write_manifest(args.out, "gridsearch", args, seed,
                    [args.grid, args.data, args.val],
                    [results_path, journal, best_path])
    print(f"{len(rows)} grid rows; best {args.metric} RMSE {best_score:.6g}")
    return EXIT_OK


def cmd_volterra(args):
    seed = _resolve_seed(args)
    os.makedirs(args.out, exist_ok=True)
    model, _ = load_checkpoint(args.checkpoint)
    kernels = extract_volterra_kernels(model, degree=args.degree)
    outputs = []
    h0_path = os.path.join(args.out, "h0.csv")
    with open(h0_path, "w", encoding="utf-8") as fh:
        fh.write("h0\n" + repr(float(kernels.h0)) + "\n")
    outputs.append(h0_path)
    h1_path = os.path.join(args.out, "h1.csv")
    with open(h1_path, "w", encoding="utf-8") as fh:
        fh.write("tau,h1\n")
        for t, v in enumerate(kernels.h1):
            fh.write(f"{t},{repr(float(v))}\n")
    outputs.append(h1_path)
    if args.degree >= 2:
        h2_path = os.path.join(args.out, "h2.csv")
        with open(h2_path, "w", encoding="utf-8") as fh:
            fh.write(",".join(f"tau{t}" for t in range(kernels.memory)) + "\n")
            for row in kernels.h2:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
        outputs.append(h2_path)
    if args.verify:
        oracle = fd_volterra_oracle(model, degree=args.degree)
        tol0 = 1e-4 * max(abs(oracle.h0), 1.0)
        tol1 = 1e-4 * max(np.max(np.abs(oracle.h1), initial=0.0), 1.0)
        tol2 = 1e-4 * max(np.max(np.abs(oracle.h2), initial=0.0), 1.0)
        dev = max(abs(kernels.h0 - oracle.h0) / tol0,
                  np.max(np.abs(kernels.h1 - oracle.h1), initial=0.0) / tol1,
                  np.max(np.abs(kernels.h2 - oracle.h2), initial=0.0) / tol2)
        if dev > 1.0:
            raise NumericError(
                f"extracted kernels deviate from the finite-difference oracle "
                f"by {dev:.3g}x the tolerance")
        print(f"verification passed (worst deviation {dev:.3g}x tolerance)")
    _write_manifest(args.out, "volterra", args, seed, [args.checkpoint], outputs)
    print(f"kernels written to {args.out} (memory {kernels.memory})")
    return EXIT_OK


def _add_column_flags(parser):
    parser.add_argument("--u-cols", help="comma-separated input column names")
    parser.add_argument("--y-cols", help="comma-separated output column names")


def _add_model_flags(parser):
    parser.add_argument("--family", choices=["tcn", "mlp", "lstm"], default="tcn")
    parser.add_argument("--hidden", type=int, default=16)
    parser.add_argument("--depth", type=int, default=1)
    parser.add_argument("--kernel-size", type=int, default=2)
    parser.add_argument("--dilations", action="store_true")
    parser.add_argument("--order", type=int, default=2)
    parser.add_argument("--dropout", type=float, default=0.0)
    parser.add_argument("--norm", choices=["batch", "weight", "none"],
                        default="none")
    parser.add_argument("--activation", choices=["relu", "sigmoid", "tanh"],
                        default="relu")
    parser.add_argument("--fir", action="store_true",
                        help="input-only model (no output feedback)")


def _add_train_flags(parser):
    parser.add_argument("--lr", type=float, default=0.001)
    parser.add_argument("--epochs", type=int, default=300)
    parser.add_argument("--batch-size", type=int, default=32)
    parser.add_argument("--subseq-len", type=int, default=100)
    parser.add_argument("--plateau-patience", type=int, default=10)
    parser.add_argument("--lr-factor", type=float, default=0.1)
    parser.add_argument("--early-stop-patience", type=int, default=30)
    parser.add_argument("--optimizer",
                        choices=["adam", "rmsprop", "sgd_momentum"],
                        default="adam")
    parser.add_argument("--normalize", action="store_true",
                        help="standardize channels with training statistics")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sysident",
        description="Nonlinear system identification with TCN/MLP/LSTM models.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="simulate a toy-system dataset")
    p.add_argument("system", choices=["chen"])
    p.add_argument("--records", type=int, default=20)
    p.add_argument("--val-records", type=int, default=2)
    p.add_argument("--length", type=int, default=100)
    p.add_argument("--hold", type=int, default=5)
    p.add_argument("--sigma-v", type=float, default=0.3)
    p.add_argument("--sigma-w", type=float, default=0.3)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="out_generate")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a model on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--val")
    _add_column_flags(p)
    _add_model_flags(p)
    _add_train_flags(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="out_train")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    _add_column_flags(p)
    p.add_argument("--mode", choices=["one-step", "free-run", "both"],
                   default="both")
    p.add_argument("--warmup", type=int, default=0)
    p.add_argument("--band", type=float, nargs=2, metavar=("F_LO", "F_HI"))
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="out_eval")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gridsearch", help="hyperparameter sweep")
    p.add_argument("--grid", required=True, help="JSON file listing axes")
    p.add_argument("--data", required=True)
    p.add_argument("--val", required=True)
    _add_column_flags(p)
    _add_train_flags(p)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--repetitions", type=int, default=1)
    p.add_argument("--metric", choices=["one-step", "free-run"],
                   default="one-step")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="out_grid")
    p.set_defaults(func=cmd_gridsearch)

    p = sub.add_parser("volterra", help="extract Volterra kernels")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--degree", type=int, default=2)
    p.add_argument("--verify", action="store_true",
                   help="cross-check against the finite-difference oracle")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="out_volterra")
    p.set_defaults(func=cmd_volterra)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UnsupportedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNSUPPORTED
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, DataError, ParameterError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
