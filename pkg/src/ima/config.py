"""Experiment configuration: a JSON document validated with pydantic.

Schema (all keys optional; unknown keys are rejected)::

    {
      "data": {"csv": "ETTh1.csv"}                        # or
      "data": {"synthetic": {"n_channels": 4, "length": 3000,
                             "periods": [24, 48, 12, 168], "slopes": [0.0],
                             "noise_sigma": 0.1, "seed": 0}},
      "seq_len": 96, "pred_len": 96, "stride": 1,
      "split": [0.7, 0.1, 0.2],
      "strategies": ["baseline", "jitter", {"tag": "scaling", "sigma": 0.2}, "ima"],
      "backbones": ["linear", "mlp"],
      "seeds": [0],
      "train": {"epochs": 10, "batch_size": 32, "lr": 0.001, "patience": 3, "kernel_size": 25},
      "ssr": {"epochs": 20, "batch_size": 32, "lr": 0.001, "seed": 0,
              "normalization": "literal", "hidden": null},
      "ima": {"imputation_rate": 0.125, "mask_rate": 0.375, "alpha": 0.2,
              "recompose": true, "per_sample": false},
      "grid": {"mask_rates": [0.125, 0.25, 0.375, 0.5],
               "imputation_rates": [0.125, 0.25, 0.375, 0.5]},
      "target_channel": null,
      "out": "runs/ima",
      "report_format": "md"
    }

``ia`` and ``ima`` entries without an explicit ``backbone`` expand to one
strategy per configured backbone, parameterised from the ``ima`` block.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Literal, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from ima.augment import ALL_TAGS, AugStrategy
from ima.data import SyntheticSpec
from ima.errors import ConfigError
from ima.pipeline import ImaConfig, SsrConfig, TrainConfig

DEFAULT_GRID = [0.125, 0.25, 0.375, 0.5]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SyntheticSettings(_Strict):
    n_channels: int = Field(4, ge=1)
    length: int = Field(3000, ge=2)
    periods: list[float] = Field(default_factory=lambda: [24.0, 48.0, 12.0, 168.0], min_length=1)
    slopes: list[float] = Field(default_factory=lambda: [0.0], min_length=1)
    noise_sigma: float = Field(0.1, ge=0)
    seed: int = 0

    @field_validator("periods")
    @classmethod
    def _positive_periods(cls, v: list[float]) -> list[float]:
        if any(p <= 0 for p in v):
            raise ValueError("periods must be positive")
        return v

    def to_spec(self) -> SyntheticSpec:
        return SyntheticSpec(
            n_channels=self.n_channels,
            length=self.length,
            periods=tuple(self.periods),
            slopes=tuple(self.slopes),
            noise_sigma=self.noise_sigma,
        )


class DataSettings(_Strict):
    csv: str | None = None
    synthetic: SyntheticSettings | None = None

    @model_validator(mode="after")
    def _one_source(self) -> "DataSettings":
        if self.csv is not None and self.synthetic is not None:
            raise ValueError("give either 'csv' or 'synthetic', not both")
        if self.csv is None and self.synthetic is None:
            self.synthetic = SyntheticSettings()
        if self.csv is not None and not Path(self.csv).is_file():
            raise ValueError(f"CSV file not found: {self.csv}")
        return self

    @property
    def label(self) -> str:
        return Path(self.csv).stem if self.csv else "synthetic"


class TrainSettings(_Strict):
    epochs: int = Field(10, ge=0)
    batch_size: int = Field(32, ge=1)
    lr: float = Field(1e-3, gt=0)
    patience: int = Field(3, ge=1)
    kernel_size: int = Field(25, ge=1)

    @field_validator("kernel_size")
    @classmethod
    def _odd(cls, v: int) -> int:
        if v % 2 == 0:
            raise ValueError("kernel_size must be odd")
        return v


class SsrSettings(_Strict):
    epochs: int = Field(20, ge=0)
    batch_size: int = Field(32, ge=1)
    lr: float = Field(1e-3, gt=0)
    seed: int = 0
    normalization: Literal["literal", "masked_mean"] = "literal"
    hidden: int | None = Field(None, ge=1)


class ImaSettings(_Strict):
    imputation_rate: float = Field(0.125, ge=0, le=1)
    mask_rate: float = Field(0.375, ge=0, le=1)
    alpha: float = Field(0.2, gt=0)
    recompose: bool = True
    per_sample: bool = False


class GridSettings(_Strict):
    mask_rates: list[float] = Field(default_factory=lambda: list(DEFAULT_GRID))
    imputation_rates: list[float] = Field(default_factory=lambda: list(DEFAULT_GRID))

    @field_validator("mask_rates", "imputation_rates")
    @classmethod
    def _rates(cls, v: list[float]) -> list[float]:
        if not v:
            raise ValueError("grid must be nonempty")
        if any(not 0.0 <= r <= 1.0 for r in v):
            raise ValueError("grid values must lie in [0, 1]")
        return v


StrategyEntry = Union[str, dict[str, Any]]


class ExperimentConfig(_Strict):
    data: DataSettings = Field(default_factory=DataSettings)
    seq_len: int = Field(96, ge=1)
    pred_len: int = Field(96, ge=1)
    stride: int = Field(1, ge=1)
    split: tuple[float, float, float] = (0.7, 0.1, 0.2)
    strategies: list[StrategyEntry] = Field(default_factory=lambda: list(ALL_TAGS), min_length=1)
    backbones: list[Literal["linear", "mlp"]] = Field(default_factory=lambda: ["linear", "mlp"], min_length=1)
    seeds: list[int] = Field(default_factory=lambda: [0], min_length=1)
    train: TrainSettings = Field(default_factory=TrainSettings)
    ssr: SsrSettings = Field(default_factory=SsrSettings)
    ima: ImaSettings = Field(default_factory=ImaSettings)
    grid: GridSettings = Field(default_factory=GridSettings)
    target_channel: int | None = Field(None, ge=0)
    out: str = "runs/ima"
    report_format: Literal["csv", "md", "json"] = "md"

    @field_validator("split")
    @classmethod
    def _split(cls, v: tuple[float, float, float]) -> tuple[float, float, float]:
        if any(r <= 0 for r in v):
            raise ValueError("split ratios must be positive")
        if abs(sum(v) - 1.0) > 1e-9:
            raise ValueError("split ratios must sum to 1")
        return v

    @field_validator("strategies")
    @classmethod
    def _known_tags(cls, v: list[StrategyEntry]) -> list[StrategyEntry]:
        for entry in v:
            tag = entry if isinstance(entry, str) else entry.get("tag")
            if tag not in ALL_TAGS:
                raise ValueError(f"unknown strategy {tag!r}; valid tags: {', '.join(ALL_TAGS)}")
        return v

    @model_validator(mode="after")
    def _strategies_build(self) -> "ExperimentConfig":
        self.resolve_strategies()
        return self

    def resolve_strategies(self) -> list[AugStrategy]:
        """Concrete strategies in declaration order."""
        out: list[AugStrategy] = []
        for entry in self.strategies:
            if isinstance(entry, str):
                tag, params = entry, {}
            else:
                params = {k: v for k, v in entry.items() if k != "tag"}
                tag = entry["tag"]
            if tag in ("ia", "ima"):
                base = self.ima.model_dump()
                if tag == "ia":
                    base.pop("alpha")
                    base.pop("per_sample")
                backbones = [params["backbone"]] if "backbone" in params else self.backbones
                for backbone in backbones:
                    out.append(AugStrategy(tag, {**base, **params, "backbone": backbone}))
            elif tag == "mixup":
                base = {"alpha": self.ima.alpha, "per_sample": self.ima.per_sample}
                out.append(AugStrategy(tag, {**base, **params}))
            else:
                out.append(AugStrategy(tag, params))
        names = [s.name for s in out]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise ValueError(f"duplicate strategy rows: {dupes}")
        return out

    def train_config(self, seed: int) -> TrainConfig:
        t = self.train
        return TrainConfig(epochs=t.epochs, batch_size=t.batch_size, lr=t.lr, patience=t.patience, seed=seed)

    def ssr_config(self, mask_rate: float | None = None) -> SsrConfig:
        s = self.ssr
        return SsrConfig(
            mask_rate=self.ima.mask_rate if mask_rate is None else mask_rate,
            epochs=s.epochs,
            batch_size=s.batch_size,
            lr=s.lr,
            seed=s.seed,
            normalization=s.normalization,
        )

    def ima_config(self, backbone: str) -> ImaConfig:
        return ImaConfig(backbone=backbone, **self.ima.model_dump())


def _format_error(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def build_config(doc: dict[str, Any]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(doc)
    except ValidationError as exc:
        raise ConfigError(_format_error(exc)) from None


def load_config_dict(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return doc


def parse_config(path: str | Path) -> ExperimentConfig:
    return build_config(load_config_dict(path))
