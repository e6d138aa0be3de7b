"""Command-line front end.

Subcommands: train, evaluate, predict, bench, inspect-embeddings, check-pe.
Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric
failure. Heavy imports stay inside handlers so `bench` can pin the BLAS
thread count before numpy loads.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

_SPLIT_INDEX = {"train": 0, "val": 1, "test": 2}


def _add_config_flags(sp):
    sp.add_argument("--config", metavar="JSON",
                    help="config file; flags below override its values")
    sp.add_argument("--dataset", help="benchmark-format CSV path")
    sp.add_argument("--lookback", type=int)
    sp.add_argument("--pred-len", type=int, dest="pred_len")
    sp.add_argument("--pyramidal-windows", type=int, nargs="+",
                    dest="pyramidal_windows", metavar="W")
    sp.add_argument("--e-layers", type=int, dest="e_layers")
    sp.add_argument("--d-model", type=int, dest="d_model")
    sp.add_argument("--d-ff", type=int, dest="d_ff")
    sp.add_argument("--heads", type=int)
    sp.add_argument("--conv-channels", type=int, dest="conv_channels")
    sp.add_argument("--dropout", type=float)
    sp.add_argument("--batch-size", type=int, dest="batch_size")
    sp.add_argument("--lr", type=float)
    sp.add_argument("--temperature", type=float)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--variant", choices=("full", "V1", "V2", "V3"))
    sp.add_argument("--split-scheme", choices=("6:2:2", "7:1:2"),
                    dest="split_scheme")
    sp.add_argument("--strict-split", action="store_true", default=None,
                    dest="strict_split")
    sp.add_argument("--max-epochs", type=int, dest="max_epochs")
    sp.add_argument("--patience", type=int)
    sp.add_argument("--lr-decay", type=float, dest="lr_decay")
    sp.add_argument("--normalized-loss", action="store_true", default=None,
                    dest="normalized_loss")
    sp.add_argument("--grad-clip", type=float, dest="grad_clip")


def resolve_config(args):
    """Merge config file, CLI overrides, and the seed fallback chain."""
    from .config import ConfigError, RunConfig

    merged = {}
    if args.config:
        try:
            with open(args.config) as fh:
                merged = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"{args.config} is not valid JSON: {e}") from None
        if not isinstance(merged, dict):
            raise ConfigError(f"{args.config} must hold a JSON object")
    for name in RunConfig.field_names():
        value = getattr(args, name, None)
        if value is not None:
            merged[name] = value
    if "seed" not in merged:
        env = os.environ.get("PRFORMER_SEED")
        if env is not None:
            try:
                merged["seed"] = int(env)
            except ValueError:
                raise ConfigError(f"PRFORMER_SEED must be an integer, "
                                  f"got {env!r}") from None
    config = RunConfig.from_dict(merged)
    config.validate()
    return config


def _load_table(path):
    from .config import ConfigError
    from .data import load_csv

    if not path:
        raise ConfigError("a dataset path is required (--dataset or config)")
    return load_csv(path)


def _split_range(table, config, name):
    from .data import split_ranges

    ranges = split_ranges(table.length, config.split_scheme, config.lookback,
                          config.pred_len, config.strict_split)
    return ranges[_SPLIT_INDEX[name]]


def _check_channels(model, table):
    from .data import DataError

    if model.channels != table.n_channels:
        raise DataError(f"checkpoint expects {model.channels} channels, dataset "
                        f"has {table.n_channels}")


def cmd_train(args):
    from .training import save_checkpoint, train, write_history

    config = resolve_config(args)
    table = _load_table(args.dataset or config.dataset)

    def progress(row):
        print(f"epoch {row['epoch']:3d}  lr {row['lr']:.2e}  "
              f"train_mae {row['train_mae']:.5f}  val_mae {row['val_mae']:.5f}  "
              f"val_mse {row['val_mse']:.5f}  {row['seconds']:.1f}s")

    result = train(config, table, progress=progress)
    save_checkpoint(args.checkpoint, result.model)
    write_history(args.history, result.history)
    stop = "early stop" if result.stopped_early else "epoch cap"
    print(f"done ({stop}) after {result.epochs_run} epochs; "
          f"best val_mae {result.best_val_mae:.5f}")
    print(f"checkpoint: {args.checkpoint}")
    print(f"history: {args.history}")
    return EXIT_OK


def cmd_evaluate(args):
    from .training import evaluate, load_checkpoint

    model = load_checkpoint(args.checkpoint)
    table = _load_table(args.dataset or model.config.dataset)
    _check_channels(model, table)
    row_range = _split_range(table, model.config, args.split)
    metrics = evaluate(model, table.values, row_range, model.config,
                       per_horizon=args.per_horizon)
    print(f"{args.split} mse {metrics.mse:.6f} mae {metrics.mae:.6f}")
    if args.per_horizon:
        for step, (mse, mae) in enumerate(metrics.per_horizon, start=1):
            print(f"  h{step:03d} mse {mse:.6f} mae {mae:.6f}")
    return EXIT_OK


def cmd_predict(args):
    from .data import write_predictions
    from .training import load_checkpoint, predict_over_range

    model = load_checkpoint(args.checkpoint)
    table = _load_table(args.dataset or model.config.dataset)
    _check_channels(model, table)
    row_range = _split_range(table, model.config, args.split)
    batches = predict_over_range(model, table.values, row_range, model.config)
    write_predictions(args.out, batches, table.channels)
    print(f"predictions: {args.out}")
    return EXIT_OK


def cmd_bench(args):
    from .analysis import scaling_bench, write_bench_csv
    from .data import DataError

    try:
        rows = scaling_bench(args.lookbacks, args.windows, d_model=args.d_model,
                             channels=args.channels,
                             conv_channels=args.conv_channels,
                             e_layers=args.e_layers, heads=args.heads,
                             repetitions=args.repetitions,
                             batch_size=args.batch_size,
                             include_backward=args.backward, seed=args.seed)
    except MemoryError:
        raise DataError("benchmark ran out of memory; reduce lookbacks or "
                        "d_model") from None
    print(f"{'lookback':>9} {'median_s':>10} {'mean_s':>10} {'ratio':>7}")
    for row in rows:
        ratio = "" if row["ratio"] is None else f"{row['ratio']:.2f}"
        print(f"{row['lookback']:9d} {row['median_s']:10.5f} "
              f"{row['mean_s']:10.5f} {ratio:>7}")
    write_bench_csv(args.out, rows)
    print(f"bench csv: {args.out}")
    return EXIT_OK


def cmd_inspect_embeddings(args):
    import csv as csv_mod

    import numpy as np

    from . import revin
    from .data import window_iter
    from .tensor import Tensor, no_grad
    from .training import load_checkpoint

    model = load_checkpoint(args.checkpoint)
    table = _load_table(args.dataset or model.config.dataset)
    _check_channels(model, table)
    row_range = _split_range(table, model.config, args.split)
    batch = next(window_iter(table.values, row_range, model.config.lookback,
                             model.config.pred_len, batch_size=args.count))
    with no_grad():
        x_norm, _ = revin.normalize(Tensor(batch.inputs), model.params.revin)
        tokens = model.embed(x_norm).data  # (windows, C, D)
    with open(args.out, "w", newline="") as fh:
        writer = csv_mod.writer(fh)
        writer.writerow(["window_start", "variable"]
                        + [f"e{i}" for i in range(tokens.shape[2])])
        for i, start in enumerate(batch.starts):
            for c, name in enumerate(table.channels):
                writer.writerow([int(start), name]
                                + [repr(float(v)) for v in tokens[i, c]])
    print(f"embeddings: {args.out} ({tokens.shape[0]} windows x "
          f"{tokens.shape[1]} variables, D={tokens.shape[2]})")
    return EXIT_OK


def cmd_check_pe(args):
    from .analysis import check_pe

    worst = check_pe(trials=args.trials, d_model=args.d_model, seed=args.seed)
    print(f"max deviation over {args.trials} trials: {worst:.3e} "
          f"(tolerance {args.tolerance:.0e})")
    if worst < args.tolerance:
        print("translation invariance holds")
        return EXIT_OK
    print("translation invariance violated", file=sys.stderr)
    return EXIT_NUMERIC


def build_parser():
    parser = argparse.ArgumentParser(
        prog="prformer",
        description="Multivariate forecasting with pyramidal RNN variate "
                    "embeddings and a Transformer encoder")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a model and write checkpoint + history")
    _add_config_flags(p)
    p.add_argument("--checkpoint", default="model.ckpt")
    p.add_argument("--history", default="history.csv")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("evaluate", help="metrics for a checkpoint on one split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset")
    p.add_argument("--split", choices=tuple(_SPLIT_INDEX), default="test")
    p.add_argument("--per-horizon", action="store_true", dest="per_horizon")
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("predict", help="write per-window forecasts as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset")
    p.add_argument("--split", choices=tuple(_SPLIT_INDEX), default="test")
    p.add_argument("--out", default="predictions.csv")
    p.set_defaults(handler=cmd_predict)

    p = sub.add_parser("bench", help="forward-time scaling across lookbacks")
    p.add_argument("--lookbacks", type=int, nargs="+",
                   default=[720, 1440, 2880])
    p.add_argument("--windows", type=int, nargs="+", default=[24, 48, 96])
    p.add_argument("--d-model", type=int, default=64, dest="d_model")
    p.add_argument("--channels", type=int, default=3)
    p.add_argument("--conv-channels", type=int, default=16, dest="conv_channels")
    p.add_argument("--e-layers", type=int, default=1, dest="e_layers")
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--repetitions", type=int, default=5)
    p.add_argument("--batch-size", type=int, default=1, dest="batch_size")
    p.add_argument("--backward", action="store_true",
                   help="time forward+backward instead of forward only")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-pin", action="store_true",
                   help="skip pinning numerics to one thread")
    p.add_argument("--out", default="bench.csv")
    p.set_defaults(handler=cmd_bench)

    p = sub.add_parser("inspect-embeddings",
                       help="export variate-token embeddings as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset")
    p.add_argument("--split", choices=tuple(_SPLIT_INDEX), default="test")
    p.add_argument("--count", type=int, default=1,
                   help="number of windows to export")
    p.add_argument("--out", default="embeddings.csv")
    p.set_defaults(handler=cmd_inspect_embeddings)

    p = sub.add_parser("check-pe",
                       help="verify positional-encoding translation invariance")
    p.add_argument("--d-model", type=int, default=None, dest="d_model",
                   help="fixed width; default draws random even widths")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-9)
    p.set_defaults(handler=cmd_check_pe)

    return parser


def main(argv=None):
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    if argv[:1] == ["bench"] and "--no-pin" not in argv:
        # must happen before numpy is first imported to take effect
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ.setdefault(var, "1")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE

    from .config import ConfigError
    from .data import DataError
    from .training import DivergenceError

    try:
        return args.handler(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        print(parser.format_usage(), end="", file=sys.stderr)
        return EXIT_USAGE
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
