"""Masked self-supervised imputer training and augmented forecaster training.

Randomness discipline: every stochastic consumer (initialisation, batch
shuffling, classical augmentation, gate, mask, mixup) reads from its own
stream derived from the run seed, see :class:`Streams`. Switching one
consumer off therefore never shifts the draws seen by the others, which is
what makes ``imputation_rate = 0`` reproduce the un-imputed run bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ima.augment import AugStrategy, MixupDraw, apply_classical, draw_mixup, mix_inputs
from ima.data import Batch, WindowDataset, batch_iter
from ima.errors import ConfigError, ShapeError, TrainingError
from ima.models import Adam, DLinearForecaster, Model, make_imputer
from ima.numerics import Rng

STREAM_IDS = {"init": 0, "shuffle": 1, "augment": 2, "gate": 3, "mask": 4, "mixup": 5}


@dataclass
class Streams:
    """One independent generator per stochastic consumer."""

    seed: int
    init: Rng = field(init=False)
    shuffle: Rng = field(init=False)
    augment: Rng = field(init=False)
    gate: Rng = field(init=False)
    mask: Rng = field(init=False)
    mixup: Rng = field(init=False)

    def __post_init__(self) -> None:
        for name, sid in STREAM_IDS.items():
            setattr(self, name, Rng.derive(self.seed, sid))


@dataclass
class SsrConfig:
    mask_rate: float = 0.375
    epochs: int = 20
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0
    normalization: str = "literal"  # or "masked_mean"

    def __post_init__(self) -> None:
        if not 0.0 <= self.mask_rate <= 1.0:
            raise ValueError(f"mask_rate must lie in [0, 1], got {self.mask_rate}")
        if self.normalization not in ("literal", "masked_mean"):
            raise ValueError(f"normalization must be 'literal' or 'masked_mean', got {self.normalization!r}")


@dataclass
class ImaConfig:
    imputation_rate: float = 0.125
    mask_rate: float = 0.375
    alpha: float = 0.2
    recompose: bool = True
    per_sample: bool = False
    backbone: str = "mlp"

    def __post_init__(self) -> None:
        for key in ("imputation_rate", "mask_rate"):
            value = getattr(self, key)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{key} must lie in [0, 1], got {value}")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")

    @classmethod
    def from_strategy(cls, strategy: AugStrategy) -> "ImaConfig":
        p = strategy.params
        return cls(
            imputation_rate=p["imputation_rate"],
            mask_rate=p["mask_rate"],
            alpha=p.get("alpha", 0.2),
            recompose=p["recompose"],
            per_sample=p.get("per_sample", False),
            backbone=p["backbone"],
        )


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    lr: float = 1e-3
    patience: int = 3
    seed: int = 0


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_mse: float
    val_mae: float


# --- masking and Eq.-1 loss -------------------------------------------------------


def gen_mask(shape: tuple[int, ...], mask_rate: float, rng: Rng) -> np.ndarray:
    """Binary mask: 0 (masked) where a uniform draw falls below ``mask_rate``."""
    if not 0.0 <= mask_rate <= 1.0:
        raise ValueError(f"mask_rate must lie in [0, 1], got {mask_rate}")
    return (rng.uniform(size=tuple(shape)) >= mask_rate).astype(np.float64)


def apply_mask(x: np.ndarray, m: np.ndarray) -> np.ndarray:
    if np.shape(x) != np.shape(m):
        raise ShapeError(f"mask shape {np.shape(m)} does not match input {np.shape(x)}")
    return x * m


def masked_sse(x: np.ndarray, x_imp: np.ndarray, m: np.ndarray, normalization: str = "literal") -> float:
    """Squared reconstruction error over masked entries, divided by the batch size.

    With ``normalization="masked_mean"`` the sum is divided by the number of
    masked entries instead (0 when nothing is masked).
    """
    if not (np.shape(x) == np.shape(x_imp) == np.shape(m)):
        raise ShapeError(f"shape mismatch: x {np.shape(x)}, x_imp {np.shape(x_imp)}, mask {np.shape(m)}")
    sse = float(np.sum((1.0 - m) * (x - x_imp) ** 2))
    return sse / _loss_denominator(m, normalization)


def _loss_denominator(m: np.ndarray, normalization: str) -> float:
    if normalization == "literal":
        return float(m.shape[0])
    if normalization == "masked_mean":
        return max(float(np.sum(1.0 - m)), 1.0)
    raise ValueError(f"unknown normalization {normalization!r}")


def masked_sse_grad(x: np.ndarray, x_imp: np.ndarray, m: np.ndarray, normalization: str = "literal") -> np.ndarray:
    """Gradient of :func:`masked_sse` with respect to ``x_imp``."""
    return 2.0 * (x_imp - x) * (1.0 - m) / _loss_denominator(m, normalization)


def mean_fill(x_m: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Fill masked entries with the observed mean of their (window, channel) series."""
    observed = m.sum(axis=1, keepdims=True)
    means = np.divide((x_m * m).sum(axis=1, keepdims=True), observed, out=np.zeros_like(observed), where=observed > 0)
    return m * x_m + (1.0 - m) * means


def reconstruction_report(f: Model, ds: WindowDataset, mask_rate: float, rng: Rng, batch_size: int = 256) -> dict[str, float]:
    """Mean masked error per masked entry for the imputer and the mean/zero-fill oracles."""
    totals = {"imputer": 0.0, "mean_fill": 0.0, "zero_fill": 0.0}
    count = 0.0
    for batch in batch_iter(ds, batch_size):
        m = gen_mask(batch.x.shape, mask_rate, rng)
        x_m = apply_mask(batch.x, m)
        hole = 1.0 - m
        count += hole.sum()
        totals["imputer"] += float(np.sum(hole * (batch.x - f.forward(x_m)) ** 2))
        totals["mean_fill"] += float(np.sum(hole * (batch.x - mean_fill(x_m, m)) ** 2))
        totals["zero_fill"] += float(np.sum(hole * batch.x**2))
    return {k: v / max(count, 1.0) for k, v in totals.items()}


# --- SSR phase --------------------------------------------------------------------


def ssr_train(f: Model, ds: WindowDataset, cfg: SsrConfig) -> tuple[Model, list[float]]:
    """Train ``f`` to reconstruct randomly masked windows; returns per-epoch mean loss."""
    if len(ds) == 0:
        raise ShapeError("SSR training set has no windows")
    streams = Streams(cfg.seed)
    opt = Adam(lr=cfg.lr)
    history: list[float] = []
    for epoch in range(cfg.epochs):
        losses = []
        for step, batch in enumerate(batch_iter(ds, cfg.batch_size, shuffle=True, rng=streams.shuffle)):
            m = gen_mask(batch.x.shape, cfg.mask_rate, streams.mask)
            x_m = apply_mask(batch.x, m)
            x_imp = f.forward(x_m)
            loss = masked_sse(batch.x, x_imp, m, cfg.normalization)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite SSR loss at epoch {epoch}, batch {step}")
            f.backward(x_m, masked_sse_grad(batch.x, x_imp, m, cfg.normalization))
            opt.step(f.params, f.grads)
            losses.append(loss)
        history.append(float(np.mean(losses)))
    return f, history


# --- IA / IMA -----------------------------------------------------------------------


def impute_batch(
    f: Model, batch: Batch, mask_rate: float, recompose: bool, rng: Rng
) -> Batch:
    """Replace inputs by imputer reconstructions of freshly masked copies."""
    m = gen_mask(batch.x.shape, mask_rate, rng)
    x_m = apply_mask(batch.x, m)
    recon = f.forward(x_m)
    x_new = np.where(m == 1.0, batch.x, recon) if recompose else recon
    return Batch(x_new, batch.y, batch.indices)


def gated(imputation_rate: float, rng: Rng) -> int:
    """One gate bit per batch: 1 when a uniform draw is below ``imputation_rate``."""
    if not 0.0 <= imputation_rate <= 1.0:
        raise ValueError(f"imputation_rate must lie in [0, 1], got {imputation_rate}")
    return int(rng.uniform() < imputation_rate)


def forecast_loss(y_hat: np.ndarray, y: np.ndarray) -> float:
    if np.shape(y_hat) != np.shape(y):
        raise ShapeError(f"prediction shape {np.shape(y_hat)} does not match target {np.shape(y)}")
    return float(np.mean((y_hat - y) ** 2))


def forecast_mae(y_hat: np.ndarray, y: np.ndarray) -> float:
    if np.shape(y_hat) != np.shape(y):
        raise ShapeError(f"prediction shape {np.shape(y_hat)} does not match target {np.shape(y)}")
    return float(np.mean(np.abs(y_hat - y)))


def mixed_loss(
    y_hat: np.ndarray, y: np.ndarray, pairing: np.ndarray, lam: float | np.ndarray
) -> tuple[float, np.ndarray]:
    """``lam * L(y_hat, y) + (1 - lam) * L(y_hat, y[pairing])`` and its gradient in ``y_hat``."""
    y_j = y[pairing]
    n = y_hat.size
    if np.ndim(lam) == 0:
        lam = float(lam)
        loss = lam * forecast_loss(y_hat, y) + (1.0 - lam) * forecast_loss(y_hat, y_j)
        grad = (lam * 2.0 / n) * (y_hat - y) + ((1.0 - lam) * 2.0 / n) * (y_hat - y_j)
        return loss, grad
    w = np.asarray(lam, dtype=np.float64)[:, None, None]
    se_i = (y_hat - y) ** 2
    se_j = (y_hat - y_j) ** 2
    loss = float(np.sum(w * se_i + (1.0 - w) * se_j) / n)
    grad = (2.0 / n) * (w * (y_hat - y) + (1.0 - w) * (y_hat - y_j))
    return loss, grad


def _fit_step(g: Model, opt: Adam, x: np.ndarray, loss: float, grad: np.ndarray) -> float:
    if not math.isfinite(loss):
        raise TrainingError(f"non-finite forecasting loss {loss}")
    g.backward(x, grad)
    opt.step(g.params, g.grads)
    return loss


def plain_step(g: Model, opt: Adam, x: np.ndarray, y: np.ndarray) -> float:
    y_hat = g.forward(x)
    return _fit_step(g, opt, x, forecast_loss(y_hat, y), 2.0 * (y_hat - y) / y_hat.size)


def mixup_step(
    g: Model,
    opt: Adam,
    batch: Batch,
    alpha: float,
    streams: Streams,
    per_sample: bool = False,
    draw: MixupDraw | None = None,
) -> float:
    if draw is None:
        draw = draw_mixup(batch.size, alpha, streams.mixup, per_sample)
    x_mix = mix_inputs(batch.x, draw.pairing, draw.lam)
    y_hat = g.forward(x_mix)
    loss, grad = mixed_loss(y_hat, batch.y, draw.pairing, draw.lam)
    return _fit_step(g, opt, x_mix, loss, grad)


def ia_step(
    g: Model,
    opt: Adam,
    f: Model,
    batch: Batch,
    cfg: ImaConfig,
    streams: Streams,
    gate: int | None = None,
) -> float:
    if gate is None:
        gate = gated(cfg.imputation_rate, streams.gate)
    if gate:
        batch = impute_batch(f, batch, cfg.mask_rate, cfg.recompose, streams.mask)
    return plain_step(g, opt, batch.x, batch.y)


def ima_step(
    g: Model,
    opt: Adam,
    f: Model,
    batch: Batch,
    cfg: ImaConfig,
    streams: Streams,
    gate: int | None = None,
    draw: MixupDraw | None = None,
) -> float:
    """Gate, optionally impute, then mix and take one optimiser step on ``g``.

    ``gate`` and ``draw`` force the corresponding random choices; the
    associated streams are then left untouched.
    """
    if gate is None:
        gate = gated(cfg.imputation_rate, streams.gate)
    if gate:
        batch = impute_batch(f, batch, cfg.mask_rate, cfg.recompose, streams.mask)
    return mixup_step(g, opt, batch, cfg.alpha, streams, cfg.per_sample, draw)


def train_step(
    g: Model,
    opt: Adam,
    batch: Batch,
    strategy: AugStrategy,
    streams: Streams,
    imputer: Model | None = None,
) -> float:
    tag = strategy.tag
    if tag == "mixup":
        return mixup_step(g, opt, batch, strategy.params["alpha"], streams, strategy.params["per_sample"])
    if tag == "ia":
        return ia_step(g, opt, imputer, batch, ImaConfig.from_strategy(strategy), streams)
    if tag == "ima":
        return ima_step(g, opt, imputer, batch, ImaConfig.from_strategy(strategy), streams)
    x = apply_classical(strategy, batch.x, streams.augment)
    return plain_step(g, opt, x, batch.y)


# --- training / evaluation ------------------------------------------------------------


def make_forecaster(seq_len: int, pred_len: int, kernel_size: int, seed: int) -> DLinearForecaster:
    return DLinearForecaster(seq_len, pred_len, kernel_size, rng=Streams(seed).init)


def evaluate(
    g: Model, ds: WindowDataset, batch_size: int = 256, channel: int | None = None
) -> tuple[float, float]:
    """(MSE, MAE) over every window, horizon step and channel, no augmentation."""
    if len(ds) == 0:
        raise ShapeError("evaluation set has no windows")
    sq = ab = 0.0
    count = 0
    for batch in batch_iter(ds, batch_size):
        err = g.forward(batch.x) - batch.y
        if channel is not None:
            err = err[:, :, channel]
        sq += float(np.sum(err**2))
        ab += float(np.sum(np.abs(err)))
        count += err.size
    return sq / count, ab / count


def train_forecaster(
    g: Model,
    ds_train: WindowDataset,
    ds_val: WindowDataset,
    strategy: AugStrategy,
    imputer: Model | None = None,
    cfg: TrainConfig | None = None,
    channel: int | None = None,
) -> tuple[Model, list[EpochRecord]]:
    """Train with early stopping on validation MSE; returns the best snapshot."""
    cfg = cfg or TrainConfig()
    if strategy.needs_imputer and imputer is None:
        raise ConfigError(f"strategy {strategy.name!r} needs a trained imputer")
    if not strategy.needs_imputer and imputer is not None:
        raise ConfigError(f"strategy {strategy.name!r} does not take an imputer")
    streams = Streams(cfg.seed)
    opt = Adam(lr=cfg.lr)
    history: list[EpochRecord] = []
    best = g.copy()
    best_mse = math.inf
    stale = 0
    for epoch in range(cfg.epochs):
        losses = []
        for step, batch in enumerate(batch_iter(ds_train, cfg.batch_size, shuffle=True, rng=streams.shuffle)):
            try:
                losses.append(train_step(g, opt, batch, strategy, streams, imputer))
            except TrainingError as exc:
                raise TrainingError(f"epoch {epoch}, batch {step}: {exc}") from exc
        val_mse, val_mae = evaluate(g, ds_val, channel=channel)
        history.append(EpochRecord(epoch, float(np.mean(losses)), val_mse, val_mae))
        if val_mse < best_mse:
            best_mse, best, stale = val_mse, g.copy(), 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return best, history


def train_imputer(backbone: str, ds: WindowDataset, cfg: SsrConfig, hidden: int | None = None) -> tuple[Model, list[float]]:
    f = make_imputer(backbone, ds.seq_len, rng=Streams(cfg.seed).init, hidden=hidden)
    return ssr_train(f, ds, cfg)


def write_history(history: list[EpochRecord], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["epoch,train_loss,val_mse,val_mae"]
    lines += [f"{r.epoch},{r.train_loss!r},{r.val_mse!r},{r.val_mae!r}" for r in history]
    path.write_text("\n".join(lines) + "\n")
