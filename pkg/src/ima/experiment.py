"""Orchestration: SSR pretraining, strategy sweeps, grid search."""

from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, TypeVar

import numpy as np

from ima.augment import AugStrategy
from ima.config import ExperimentConfig
from ima.data import Scaler, WindowDataset, apply_scaler, fit_scaler, gen_synthetic, load_csv, make_windows, split
from ima.errors import ConfigError, ImaError
from ima.models import Model, save_checkpoint
from ima.numerics import Rng
from ima.pipeline import evaluate, make_forecaster, train_forecaster, train_imputer, write_history
from ima.report import ResultTable, emit_report

log = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


@dataclass
class PreparedData:
    train: WindowDataset
    val: WindowDataset
    test: WindowDataset
    scaler: Scaler
    label: str


def prepare_data(cfg: ExperimentConfig) -> PreparedData:
    if cfg.data.csv is not None:
        raw = load_csv(cfg.data.csv)
    else:
        syn = cfg.data.synthetic
        raw = gen_synthetic(syn.to_spec(), Rng(syn.seed))
    if cfg.target_channel is not None and cfg.target_channel >= raw.n_features:
        raise ConfigError(f"target_channel {cfg.target_channel} out of range for {raw.n_features} features")
    tr, va, te = split(raw, cfg.split)
    scaler = fit_scaler(tr)
    windows = [
        make_windows(apply_scaler(scaler, part), cfg.seq_len, cfg.pred_len, cfg.stride)
        for part in (tr, va, te)
    ]
    return PreparedData(*windows, scaler=scaler, label=cfg.data.label)


def _worker_count() -> int:
    try:
        return max(1, int(os.environ.get("IMA_BENCH_THREADS", "1")))
    except ValueError:
        return 1


def _map_ordered(fn: Callable[[T], R], items: Iterable[T]) -> list[R]:
    items = list(items)
    workers = min(_worker_count(), len(items)) or 1
    if workers == 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _imputer_path(out: Path, backbone: str, mask_rate: float, default_rate: float) -> Path:
    if mask_rate == default_rate:
        return out / f"checkpoint_{backbone}.bin"
    return out / f"checkpoint_{backbone}_mask{mask_rate:g}.bin"


def pretrain_imputers(
    cfg: ExperimentConfig, data: PreparedData, keys: Iterable[tuple[str, float]], out: Path | None
) -> dict[tuple[str, float], Model]:
    """SSR-train one imputer per (backbone, mask_rate), checkpointing each."""
    imputers = {}
    for backbone, mask_rate in dict.fromkeys(keys):
        log.info("SSR pretraining %s imputer (mask_rate=%g)", backbone, mask_rate)
        f, history = train_imputer(backbone, data.train, cfg.ssr_config(mask_rate), hidden=cfg.ssr.hidden)
        imputers[(backbone, mask_rate)] = f
        if out is not None:
            path = _imputer_path(out, backbone, mask_rate, cfg.ima.mask_rate)
            save_checkpoint(f, path)
            lines = ["epoch,ssr_loss"] + [f"{i},{v!r}" for i, v in enumerate(history)]
            path.with_name(path.stem.replace("checkpoint", "ssr_history") + ".csv").write_text("\n".join(lines) + "\n")
    return imputers


@dataclass
class RunResult:
    strategy: str
    seed: int
    test_mse: float
    test_mae: float
    val_mse: float
    val_mae: float
    epochs: int


def run_one(
    cfg: ExperimentConfig,
    data: PreparedData,
    strategy: AugStrategy,
    seed: int,
    imputer: Model | None,
    out: Path | None,
) -> RunResult:
    try:
        g = make_forecaster(cfg.seq_len, cfg.pred_len, cfg.train.kernel_size, seed)
        g, history = train_forecaster(
            g, data.train, data.val, strategy, imputer, cfg.train_config(seed), channel=cfg.target_channel
        )
        val_mse, val_mae = evaluate(g, data.val, channel=cfg.target_channel)
        test_mse, test_mae = evaluate(g, data.test, channel=cfg.target_channel)
    except ImaError as exc:
        raise type(exc)(f"strategy {strategy.name!r}, seed {seed}: {exc}") from exc
    if out is not None:
        write_history(history, out / f"history_{strategy.name}_{seed}.csv")
    return RunResult(strategy.name, seed, test_mse, test_mae, val_mse, val_mae, len(history))


def run_experiment(cfg: ExperimentConfig, out: str | Path | None = None) -> ResultTable:
    """Pretrain imputers, train every (strategy, seed), and write the delta report."""
    out_dir = Path(out if out is not None else cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    data = prepare_data(cfg)
    strategies = cfg.resolve_strategies()
    baseline = AugStrategy("baseline")
    if not any(s.tag == "baseline" for s in strategies):
        runs = [baseline, *strategies]
    else:
        runs = strategies
    imputers = pretrain_imputers(
        cfg,
        data,
        ((s.params["backbone"], s.params["mask_rate"]) for s in runs if s.needs_imputer),
        out_dir,
    )

    def job(item: tuple[AugStrategy, int]) -> RunResult:
        strategy, seed = item
        f = imputers[(strategy.params["backbone"], strategy.params["mask_rate"])] if strategy.needs_imputer else None
        return run_one(cfg, data, strategy, seed, f, out_dir)

    results = _map_ordered(job, [(s, seed) for s in runs for seed in cfg.seeds])
    write_seed_results(results, out_dir / "report_seeds.csv")

    def mean_of(name: str, attr: str) -> float:
        return float(np.mean([getattr(r, attr) for r in results if r.strategy == name]))

    table = ResultTable(
        dataset=data.label,
        model="DLinear",
        baseline_mse=mean_of("baseline", "test_mse"),
        baseline_mae=mean_of("baseline", "test_mae"),
    )
    for s in strategies:
        table.add(s.name, mean_of(s.name, "test_mse"), mean_of(s.name, "test_mae"))
    emit_report(table, cfg.report_format, out_dir / f"report.{cfg.report_format}")
    return table


def write_seed_results(results: list[RunResult], path: Path) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["strategy", "seed", "test_mse", "test_mae", "val_mse", "val_mae", "epochs"])
        for r in results:
            writer.writerow([r.strategy, r.seed, repr(r.test_mse), repr(r.test_mae), repr(r.val_mse), repr(r.val_mae), r.epochs])


# --- grid search ----------------------------------------------------------------------


@dataclass
class GridCell:
    backbone: str
    mask_rate: float
    imputation_rate: float
    val_mse: float
    val_mae: float
    test_mse: float
    test_mae: float


def select_best(cells: Iterable[GridCell]) -> GridCell:
    """Lowest validation MSE; ties go to the smaller mask_rate, then the smaller imputation_rate."""
    cells = list(cells)
    if not cells:
        raise ValueError("no grid cells to choose from")
    return min(cells, key=lambda c: (c.val_mse, c.mask_rate, c.imputation_rate))


@dataclass
class GridResult:
    cells: list[GridCell]
    best: dict[str, GridCell]


def grid_search(
    cfg: ExperimentConfig,
    mask_rates: list[float] | None = None,
    imputation_rates: list[float] | None = None,
    out: str | Path | None = None,
) -> GridResult:
    """Run IMA for every (mask_rate, imputation_rate) cell and backbone."""
    mask_rates = list(cfg.grid.mask_rates if mask_rates is None else mask_rates)
    imputation_rates = list(cfg.grid.imputation_rates if imputation_rates is None else imputation_rates)
    if not mask_rates or not imputation_rates:
        raise ValueError("grid search needs nonempty mask_rates and imputation_rates")
    for r in (*mask_rates, *imputation_rates):
        if not 0.0 <= r <= 1.0:
            raise ValueError(f"grid value {r} outside [0, 1]")
    out_dir = Path(out if out is not None else cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    data = prepare_data(cfg)
    imputers = pretrain_imputers(cfg, data, ((b, m) for b in cfg.backbones for m in mask_rates), None)

    plan = [(b, m, r) for b in cfg.backbones for m in mask_rates for r in imputation_rates]

    def job(item: tuple[str, float, float]) -> GridCell:
        backbone, mask_rate, rate = item
        strategy = AugStrategy(
            "ima",
            {
                "backbone": backbone,
                "mask_rate": mask_rate,
                "imputation_rate": rate,
                "alpha": cfg.ima.alpha,
                "recompose": cfg.ima.recompose,
                "per_sample": cfg.ima.per_sample,
            },
        )
        runs = [run_one(cfg, data, strategy, seed, imputers[(backbone, mask_rate)], None) for seed in cfg.seeds]
        return GridCell(
            backbone,
            mask_rate,
            rate,
            float(np.mean([r.val_mse for r in runs])),
            float(np.mean([r.val_mae for r in runs])),
            float(np.mean([r.test_mse for r in runs])),
            float(np.mean([r.test_mae for r in runs])),
        )

    cells = _map_ordered(job, plan)
    best = {b: select_best(c for c in cells if c.backbone == b) for b in cfg.backbones}
    with (out_dir / "grid.csv").open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["backbone", "mask_rate", "imputation_rate", "val_mse", "val_mae", "test_mse", "test_mae", "best"])
        for c in cells:
            writer.writerow([
                c.backbone, repr(c.mask_rate), repr(c.imputation_rate),
                repr(c.val_mse), repr(c.val_mae), repr(c.test_mse), repr(c.test_mae),
                int(best[c.backbone] is c),
            ])
    summary = {b: {"mask_rate": c.mask_rate, "imputation_rate": c.imputation_rate, "val_mse": c.val_mse} for b, c in best.items()}
    (out_dir / "grid_best.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return GridResult(cells, best)
