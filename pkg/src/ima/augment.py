"""Batch augmentations for forecasting inputs.

Every transform maps an input tensor ``x`` of shape ``(B, T, N)`` to a new
tensor of the same shape; targets are never touched. Randomness comes only
from the ``rng`` argument.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from ima.numerics import Rng

CLASSICAL_TAGS = (
    "jitter",
    "hflip",
    "vflip",
    "scaling",
    "window_warp",
    "window_slide",
    "permutation",
)
IMPUTATION_TAGS = ("ia", "ima")
ALL_TAGS = ("baseline", *CLASSICAL_TAGS, "mixup", *IMPUTATION_TAGS)
BACKBONES = ("linear", "mlp")

DEFAULT_PARAMS: dict[str, dict[str, Any]] = {
    "baseline": {},
    "jitter": {"sigma": 0.03},
    "hflip": {},
    "vflip": {},
    "scaling": {"sigma": 0.1},
    "window_warp": {"ratio": 0.1, "scale_choices": (0.5, 2.0)},
    "window_slide": {"ratio": 0.9},
    "permutation": {"max_segments": 5},
    "mixup": {"alpha": 0.2, "per_sample": False},
    "ia": {"backbone": "mlp", "imputation_rate": 0.125, "mask_rate": 0.375, "recompose": True},
    "ima": {
        "backbone": "mlp",
        "imputation_rate": 0.125,
        "mask_rate": 0.375,
        "alpha": 0.2,
        "recompose": True,
        "per_sample": False,
    },
}


def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def _check_3d(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"expected a (B, T, N) tensor, got shape {x.shape}")
    return x


@dataclass
class AugStrategy:
    """A training-time strategy tag plus its hyperparameters."""

    tag: str
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.tag not in DEFAULT_PARAMS:
            raise ValueError(f"unknown strategy {self.tag!r}; valid tags: {', '.join(ALL_TAGS)}")
        defaults = DEFAULT_PARAMS[self.tag]
        unknown = set(self.params) - set(defaults)
        if unknown:
            raise ValueError(
                f"unknown parameter(s) {sorted(unknown)} for {self.tag!r}; "
                f"accepted: {sorted(defaults)}"
            )
        self.params = {**defaults, **self.params}
        if "scale_choices" in self.params:
            self.params["scale_choices"] = tuple(float(s) for s in self.params["scale_choices"])
        self._validate()

    def _validate(self) -> None:
        p = self.params
        for key in ("imputation_rate", "mask_rate"):
            if key in p and not 0.0 <= p[key] <= 1.0:
                raise ValueError(f"{self.tag}.{key} must lie in [0, 1], got {p[key]}")
        if "sigma" in p and not p["sigma"] >= 0:
            raise ValueError(f"{self.tag}.sigma must be >= 0, got {p['sigma']}")
        if "alpha" in p and not p["alpha"] > 0:
            raise ValueError(f"{self.tag}.alpha must be > 0, got {p['alpha']}")
        if "ratio" in p and not 0.0 < p["ratio"] <= 1.0:
            raise ValueError(f"{self.tag}.ratio must lie in (0, 1], got {p['ratio']}")
        if "max_segments" in p and not (int(p["max_segments"]) == p["max_segments"] and p["max_segments"] >= 1):
            raise ValueError(f"{self.tag}.max_segments must be an integer >= 1, got {p['max_segments']}")
        if "scale_choices" in p and (not p["scale_choices"] or min(p["scale_choices"]) <= 0):
            raise ValueError(f"{self.tag}.scale_choices must be nonempty and positive")
        if "backbone" in p and p["backbone"] not in BACKBONES:
            raise ValueError(f"{self.tag}.backbone must be one of {BACKBONES}, got {p['backbone']!r}")

    @property
    def name(self) -> str:
        if self.tag in IMPUTATION_TAGS:
            return f"{self.params['backbone']}_{self.tag}"
        return self.tag

    @property
    def needs_imputer(self) -> bool:
        return self.tag in IMPUTATION_TAGS

    def with_params(self, **overrides: Any) -> "AugStrategy":
        return AugStrategy(self.tag, {**self.params, **overrides})


# --- point transforms ---------------------------------------------------------


def jitter(x: np.ndarray, sigma: float, rng: Rng) -> np.ndarray:
    x = _check_3d(x)
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return x.copy()
    return x + rng.normal(0.0, sigma, size=x.shape)


def hflip(x: np.ndarray) -> np.ndarray:
    return _check_3d(x)[:, ::-1, :].copy()


def vflip(x: np.ndarray) -> np.ndarray:
    return -_check_3d(x)


def scaling(x: np.ndarray, sigma: float, rng: Rng) -> np.ndarray:
    """Multiply each (sample, channel) series by a factor drawn from N(1, sigma^2)."""
    x = _check_3d(x)
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return x.copy()
    factors = rng.normal(1.0, sigma, size=(x.shape[0], 1, x.shape[2]))
    return x * factors


# --- time-axis resampling -------------------------------------------------------


def resample_linear(series: np.ndarray, new_len: int) -> np.ndarray:
    """Piecewise-linear resampling of ``(L, N)`` onto ``new_len`` evenly spaced points.

    Both endpoints map onto the endpoints of the input, so integer positions
    are reproduced exactly.
    """
    series = np.asarray(series, dtype=np.float64)
    length = series.shape[0]
    if new_len < 1:
        raise ValueError(f"new_len must be >= 1, got {new_len}")
    if length == 1:
        return np.repeat(series, new_len, axis=0)
    if new_len == 1:
        return series[:1].copy()
    pos = np.arange(new_len) * ((length - 1) / (new_len - 1))
    lo = np.minimum(np.floor(pos).astype(np.int64), length - 2)
    frac = (pos - lo)[:, None]
    return series[lo] * (1.0 - frac) + series[lo + 1] * frac


def warp_series(series: np.ndarray, start: int, length: int, scale: float) -> np.ndarray:
    """Stretch ``series[start:start+length]`` by ``scale`` and resample back to the original length."""
    total = series.shape[0]
    segment = series[start : start + length]
    warped = resample_linear(segment, max(1, _round_half_up(length * scale)))
    spliced = np.concatenate([series[:start], warped, series[start + length :]], axis=0)
    return resample_linear(spliced, total)


def window_warp(
    x: np.ndarray,
    ratio: float = 0.1,
    scale_choices: Sequence[float] = (0.5, 2.0),
    rng: Rng | None = None,
) -> np.ndarray:
    x = _check_3d(x)
    total = x.shape[1]
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"ratio must lie in (0, 1], got {ratio}")
    if not scale_choices or min(scale_choices) <= 0:
        raise ValueError("scale_choices must be nonempty and positive")
    length = _round_half_up(ratio * total)
    if length == 0:
        raise ValueError(f"ratio {ratio} selects an empty segment for T={total}")
    out = np.empty_like(x)
    for i in range(x.shape[0]):
        start = rng.integers(total - length + 1)
        scale = scale_choices[rng.integers(len(scale_choices))]
        out[i] = warp_series(x[i], start, length, scale)
    return out


def slide_series(series: np.ndarray, start: int, length: int) -> np.ndarray:
    """Crop ``series[start:start+length]`` and stretch it back to full length."""
    return resample_linear(series[start : start + length], series.shape[0])


def window_slide(x: np.ndarray, ratio: float = 0.9, rng: Rng | None = None) -> np.ndarray:
    x = _check_3d(x)
    total = x.shape[1]
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"ratio must lie in (0, 1], got {ratio}")
    length = min(total, _round_half_up(ratio * total))
    if ratio == 1.0 or length == total:
        return x.copy()
    if length < 2:
        raise ValueError(f"ratio {ratio} leaves a crop shorter than 2 steps for T={total}")
    out = np.empty_like(x)
    for i in range(x.shape[0]):
        start = rng.integers(total - length + 1)
        out[i] = slide_series(x[i], start, length)
    return out


def permute_segments(series: np.ndarray, k: int, order: Sequence[int]) -> np.ndarray:
    """Split the time axis into ``k`` near-equal pieces and emit them in ``order``."""
    pieces = np.array_split(np.arange(series.shape[0]), k)
    return series[np.concatenate([pieces[j] for j in order])]


def permutation(x: np.ndarray, max_segments: int = 5, rng: Rng | None = None) -> np.ndarray:
    x = _check_3d(x)
    if max_segments < 1:
        raise ValueError(f"max_segments must be >= 1, got {max_segments}")
    if max_segments > x.shape[1]:
        raise ValueError(f"max_segments={max_segments} exceeds series length {x.shape[1]}")
    if max_segments == 1:
        return x.copy()
    out = np.empty_like(x)
    for i in range(x.shape[0]):
        k = 1 + rng.integers(max_segments)
        out[i] = permute_segments(x[i], k, rng.permutation(k))
    return out


# --- mixup ------------------------------------------------------------------------


@dataclass
class MixupDraw:
    lam: float | np.ndarray
    pairing: np.ndarray


def mix_inputs(x: np.ndarray, pairing: np.ndarray, lam: float | np.ndarray) -> np.ndarray:
    a, b = x, x[pairing]
    lam_b = np.asarray(lam, dtype=np.float64)
    if lam_b.ndim == 1:
        lam_b = lam_b[:, None, None]
    mixed = lam_b * a + (1.0 - lam_b) * b
    # rounding may step one ulp outside the parents' envelope
    return np.clip(mixed, np.minimum(a, b), np.maximum(a, b))


def draw_mixup(batch_size: int, alpha: float, rng: Rng, per_sample: bool = False) -> MixupDraw:
    """Shuffle to form pairs, then draw the mixing weight(s) from Beta(alpha, alpha)."""
    if not alpha > 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    pairing = rng.permutation(batch_size)
    lam = rng.beta_symmetric(alpha, size=batch_size) if per_sample else rng.beta_symmetric(alpha)
    return MixupDraw(lam, pairing)


def mixup_pair(
    x: np.ndarray,
    y: np.ndarray,
    alpha: float,
    rng: Rng,
    per_sample: bool = False,
) -> tuple[np.ndarray, np.ndarray, float | np.ndarray]:
    """Mix each input with a shuffled partner; ``y`` is returned untouched for the loss."""
    x = _check_3d(x)
    if x.shape[0] < 1:
        raise ValueError("mixup needs a nonempty batch")
    draw = draw_mixup(x.shape[0], alpha, rng, per_sample)
    return mix_inputs(x, draw.pairing, draw.lam), draw.pairing, draw.lam


def apply_classical(strategy: AugStrategy, x: np.ndarray, rng: Rng) -> np.ndarray:
    """Apply a baseline or classical strategy to ``x``."""
    p = strategy.params
    tag = strategy.tag
    if tag == "baseline":
        return x
    if tag == "jitter":
        return jitter(x, p["sigma"], rng)
    if tag == "hflip":
        return hflip(x)
    if tag == "vflip":
        return vflip(x)
    if tag == "scaling":
        return scaling(x, p["sigma"], rng)
    if tag == "window_warp":
        return window_warp(x, p["ratio"], p["scale_choices"], rng)
    if tag == "window_slide":
        return window_slide(x, p["ratio"], rng)
    if tag == "permutation":
        return permutation(x, int(p["max_segments"]), rng)
    raise ValueError(f"{tag!r} is not a classical augmentation")
