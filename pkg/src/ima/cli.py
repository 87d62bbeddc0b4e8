"""Command-line entry point: ``ima {synth,ssr-train,train,eval,bench,grid}``.

Flags override the matching keys of the JSON config given with ``--config``.
Exit codes: 0 success, 2 configuration error, 3 data error, 4 training error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

from ima.augment import ALL_TAGS, AugStrategy
from ima.config import ExperimentConfig, build_config, load_config_dict
from ima.data import SyntheticSpec, gen_synthetic, write_csv
from ima.errors import ConfigError, DataError, TrainingError
from ima.experiment import grid_search, prepare_data, run_experiment
from ima.models import DLinearForecaster, LinearImputer, MlpImputer, load_checkpoint, save_checkpoint
from ima.numerics import Rng
from ima.pipeline import evaluate, make_forecaster, train_forecaster, train_imputer, write_history

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_TRAINING = 0, 2, 3, 4

log = logging.getLogger("ima")


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _strs(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


# (flag, config key path, type)
_OVERRIDES: list[tuple[str, tuple[str, ...], Any]] = [
    ("--csv", ("data", "csv"), str),
    ("--seq-len", ("seq_len",), int),
    ("--pred-len", ("pred_len",), int),
    ("--stride", ("stride",), int),
    ("--strategies", ("strategies",), _strs),
    ("--backbones", ("backbones",), _strs),
    ("--seeds", ("seeds",), _ints),
    ("--epochs", ("train", "epochs"), int),
    ("--batch-size", ("train", "batch_size"), int),
    ("--lr", ("train", "lr"), float),
    ("--patience", ("train", "patience"), int),
    ("--kernel-size", ("train", "kernel_size"), int),
    ("--ssr-epochs", ("ssr", "epochs"), int),
    ("--ssr-lr", ("ssr", "lr"), float),
    ("--hidden", ("ssr", "hidden"), int),
    ("--mask-rate", ("ima", "mask_rate"), float),
    ("--imputation-rate", ("ima", "imputation_rate"), float),
    ("--alpha", ("ima", "alpha"), float),
    ("--mask-rates", ("grid", "mask_rates"), _floats),
    ("--imputation-rates", ("grid", "imputation_rates"), _floats),
    ("--target-channel", ("target_channel",), int),
    ("--out", ("out",), str),
    ("--format", ("report_format",), str),
]


def _dest(flag: str) -> str:
    return flag.lstrip("-").replace("-", "_")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON experiment config")
    for flag, _, kind in _OVERRIDES:
        p.add_argument(flag, dest=_dest(flag), type=kind, default=None)
    p.add_argument("--recompose", dest="recompose", action="store_true", default=None)
    p.add_argument("--no-recompose", dest="recompose", action="store_false")


def _config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    doc = load_config_dict(args.config) if args.config else {}
    for flag, path, _ in _OVERRIDES:
        value = getattr(args, _dest(flag))
        if value is None:
            continue
        node = doc
        for key in path[:-1]:
            node = node.setdefault(key, {})
        node[path[-1]] = value
        if path == ("data", "csv"):
            doc["data"].pop("synthetic", None)
    if args.recompose is not None:
        doc.setdefault("ima", {})["recompose"] = args.recompose
    return build_config(doc)


def _print_json(obj: Any) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


# --- subcommands --------------------------------------------------------------------


def cmd_synth(args: argparse.Namespace) -> int:
    try:
        spec = SyntheticSpec(
            n_channels=args.channels,
            length=args.length,
            periods=tuple(args.periods),
            slopes=tuple(args.slopes),
            noise_sigma=args.noise_sigma,
        )
        raw = gen_synthetic(spec, Rng(args.seed))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    write_csv(raw, args.output)
    print(f"wrote {raw.length} rows x {raw.n_features} channels to {args.output}")
    return EXIT_OK


def cmd_ssr_train(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    data = prepare_data(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    backbones = [args.backbone] if args.backbone else cfg.backbones
    summary = {}
    for backbone in backbones:
        f, history = train_imputer(backbone, data.train, cfg.ssr_config(), hidden=cfg.ssr.hidden)
        path = out / f"checkpoint_{backbone}.bin"
        save_checkpoint(f, path)
        lines = ["epoch,ssr_loss"] + [f"{i},{v!r}" for i, v in enumerate(history)]
        (out / f"ssr_history_{backbone}.csv").write_text("\n".join(lines) + "\n")
        summary[backbone] = {"checkpoint": str(path), "final_loss": history[-1] if history else None}
    _print_json(summary)
    return EXIT_OK


def _strategy_from_args(cfg: ExperimentConfig, tag: str, backbone: str | None) -> AugStrategy:
    if tag in ("ia", "ima"):
        backbone = backbone or cfg.backbones[0]
        entry: Any = {"tag": tag, "backbone": backbone}
    else:
        entry = tag
    try:
        probe = cfg.model_copy(update={"strategies": [entry]})
        (strategy,) = probe.resolve_strategies()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return strategy


def _load_imputer(path: str, seq_len: int) -> LinearImputer | MlpImputer:
    try:
        f = load_checkpoint(path)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot load checkpoint: {exc}") from None
    if not isinstance(f, (LinearImputer, MlpImputer)):
        raise ConfigError(f"{path} is not an imputer checkpoint")
    if f.seq_len != seq_len:
        raise ConfigError(f"imputer expects seq_len={f.seq_len}; config has {seq_len}")
    return f


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    if args.strategy not in ALL_TAGS:
        raise ConfigError(f"unknown strategy {args.strategy!r}; valid tags: {', '.join(ALL_TAGS)}")
    imputer = None
    backbone = args.backbone
    if args.imputer and args.strategy in ("ia", "ima"):
        imputer = _load_imputer(args.imputer, cfg.seq_len)
        found = "linear" if isinstance(imputer, LinearImputer) else "mlp"
        if backbone is not None and backbone != found:
            raise ConfigError(f"--backbone {backbone} does not match the {found} imputer in {args.imputer}")
        backbone = found
    strategy = _strategy_from_args(cfg, args.strategy, backbone)
    data = prepare_data(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    if strategy.needs_imputer:
        if imputer is None:
            imputer, _ = train_imputer(strategy.params["backbone"], data.train, cfg.ssr_config(strategy.params["mask_rate"]), hidden=cfg.ssr.hidden)
    seed = cfg.seeds[0]
    g = make_forecaster(cfg.seq_len, cfg.pred_len, cfg.train.kernel_size, seed)
    g, history = train_forecaster(g, data.train, data.val, strategy, imputer, cfg.train_config(seed), channel=cfg.target_channel)
    ckpt = out / f"forecaster_{strategy.name}_{seed}.bin"
    save_checkpoint(g, ckpt)
    write_history(history, out / f"history_{strategy.name}_{seed}.csv")
    val_mse, val_mae = evaluate(g, data.val, channel=cfg.target_channel)
    zero = make_forecaster(cfg.seq_len, cfg.pred_len, cfg.train.kernel_size, seed)
    for key in zero.params:
        zero.params[key][...] = 0.0
    zero_mse, _ = evaluate(zero, data.val, channel=cfg.target_channel)
    _print_json({
        "strategy": strategy.name,
        "checkpoint": str(ckpt),
        "epochs": len(history),
        "val_mse": val_mse,
        "val_mae": val_mae,
        "zero_predictor_val_mse": zero_mse,
    })
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    try:
        g = load_checkpoint(args.checkpoint)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot load checkpoint: {exc}") from None
    if not isinstance(g, DLinearForecaster):
        raise ConfigError(f"{args.checkpoint} is not a forecaster checkpoint")
    if (g.seq_len, g.pred_len) != (cfg.seq_len, cfg.pred_len):
        raise ConfigError(
            f"checkpoint expects seq_len={g.seq_len}, pred_len={g.pred_len}; config has {cfg.seq_len}, {cfg.pred_len}"
        )
    data = prepare_data(cfg)
    ds = {"train": data.train, "val": data.val, "test": data.test}[args.split]
    mse, mae = evaluate(g, ds, channel=cfg.target_channel)
    _print_json({"split": args.split, "mse": mse, "mae": mae})
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    table = run_experiment(cfg)
    path = Path(cfg.out) / f"report.{cfg.report_format}"
    print(path.read_text(), end="")
    log.info("report written to %s (%d strategy rows)", path, len(table.rows))
    return EXIT_OK


def cmd_grid(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    result = grid_search(cfg)
    _print_json({
        b: {"mask_rate": c.mask_rate, "imputation_rate": c.imputation_rate, "val_mse": c.val_mse}
        for b, c in result.best.items()
    })
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ima", description="Imputation-based mixup augmentation benchmark")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic ETT-format CSV")
    p.add_argument("output")
    p.add_argument("--channels", type=int, default=4)
    p.add_argument("--length", type=int, default=3000)
    p.add_argument("--periods", type=_floats, default=[24.0, 48.0, 12.0, 168.0])
    p.add_argument("--slopes", type=_floats, default=[0.0])
    p.add_argument("--noise-sigma", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ssr-train", help="pretrain imputers by masked reconstruction")
    _add_config_flags(p)
    p.add_argument("--backbone", choices=["linear", "mlp"])
    p.set_defaults(func=cmd_ssr_train)

    p = sub.add_parser("train", help="train one forecaster with one strategy")
    _add_config_flags(p)
    p.add_argument("--strategy", required=True)
    p.add_argument("--backbone", choices=["linear", "mlp"])
    p.add_argument("--imputer", help="imputer checkpoint (IA/IMA); trained on the fly when omitted")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a forecaster checkpoint")
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="full strategy sweep and delta report")
    _add_config_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("grid", help="grid search over mask_rate x imputation_rate")
    _add_config_flags(p)
    p.set_defaults(func=cmd_grid)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingError as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
