"""Hand-differentiated forecaster, imputers and the Adam optimiser.

All models act channel-independently: a ``(B, T, N)`` tensor is treated as
``B * N`` univariate series and the same time-axis weights are applied to
each one.
"""

from __future__ import annotations

import copy
import json
import struct
from functools import lru_cache
from pathlib import Path

import numpy as np

from ima.errors import ShapeError, TrainingError
from ima.numerics import Rng

CHECKPOINT_MAGIC = b"IMA1"
DEFAULT_KERNEL_SIZE = 25


def _check_input(x: np.ndarray, length: int, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[1] != length:
        raise ShapeError(f"{what}: expected input of shape (B, {length}, N), got {x.shape}")
    return x


def _rows(x: np.ndarray) -> np.ndarray:
    """(B, T, N) -> (B*N, T)."""
    b, t, n = x.shape
    return x.transpose(0, 2, 1).reshape(b * n, t)


def _unrows(r: np.ndarray, b: int, n: int) -> np.ndarray:
    """(B*N, T) -> (B, T, N)."""
    return r.reshape(b, n, -1).transpose(0, 2, 1)


def _uniform_init(rng: Rng, shape: tuple[int, int]) -> np.ndarray:
    bound = 1.0 / np.sqrt(shape[1])
    return rng.uniform(size=shape) * (2.0 * bound) - bound


class Model:
    """Parameter/gradient bookkeeping shared by every network here."""

    tag = "model"

    def __init__(self) -> None:
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def hyperparams(self) -> dict:
        raise NotImplementedError

    def zero_grad(self) -> None:
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def copy(self):
        return copy.deepcopy(self)

    @property
    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())

    def get_flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.params.values()])

    def set_flat(self, flat: np.ndarray) -> None:
        offset = 0
        for key, value in self.params.items():
            self.params[key] = np.asarray(flat[offset : offset + value.size], dtype=np.float64).reshape(value.shape).copy()
            offset += value.size

    def flat_grad(self) -> np.ndarray:
        return np.concatenate([self.grads[k].ravel() for k in self.params])


# --- decomposition forecaster ---------------------------------------------------


@lru_cache(maxsize=64)
def moving_average_matrix(length: int, kernel_size: int) -> np.ndarray:
    """Linear map taking a length-``T`` series to its replicate-padded moving average."""
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise ValueError(f"kernel_size must be a positive odd integer, got {kernel_size}")
    half = (kernel_size - 1) // 2
    a = np.zeros((length, length))
    for t in range(length):
        for j in range(t - half, t + half + 1):
            a[t, min(max(j, 0), length - 1)] += 1.0
    a /= kernel_size
    a.setflags(write=False)
    return a


def moving_average_decompose(x: np.ndarray, kernel_size: int) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(trend, seasonal)`` with ``seasonal = x - trend``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeError(f"expected (B, T, N), got {x.shape}")
    a = moving_average_matrix(x.shape[1], kernel_size)
    if kernel_size == 1:
        trend = x.copy()
    else:
        trend = np.einsum("st,btn->bsn", a, x)
    return trend, x - trend


class DLinearForecaster(Model):
    """Two linear heads on the seasonal and trend parts of a moving-average split."""

    tag = "dlinear"

    def __init__(
        self,
        seq_len: int,
        pred_len: int,
        kernel_size: int = DEFAULT_KERNEL_SIZE,
        rng: Rng | None = None,
    ):
        super().__init__()
        if kernel_size < 1 or kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be a positive odd integer, got {kernel_size}")
        self.seq_len = seq_len
        self.pred_len = pred_len
        self.kernel_size = kernel_size
        shape = (pred_len, seq_len)
        if rng is None:
            ws, wt = np.zeros(shape), np.zeros(shape)
        else:
            ws, wt = _uniform_init(rng, shape), _uniform_init(rng, shape)
        self.params = {
            "W_seasonal": ws,
            "b_seasonal": np.zeros(pred_len),
            "W_trend": wt,
            "b_trend": np.zeros(pred_len),
        }
        self.zero_grad()

    def hyperparams(self) -> dict:
        return {"seq_len": self.seq_len, "pred_len": self.pred_len, "kernel_size": self.kernel_size}

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = _check_input(x, self.seq_len, "dlinear_forward")
        trend, seasonal = moving_average_decompose(x, self.kernel_size)
        p = self.params
        out = np.einsum("yt,btn->byn", p["W_seasonal"], seasonal)
        out += np.einsum("yt,btn->byn", p["W_trend"], trend)
        out += (p["b_seasonal"] + p["b_trend"])[None, :, None]
        return out

    def backward(self, x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
        """Fill ``self.grads`` for upstream ``grad_out`` and return the input gradient."""
        x = _check_input(x, self.seq_len, "dlinear_backward")
        g = np.asarray(grad_out, dtype=np.float64)
        expected = (x.shape[0], self.pred_len, x.shape[2])
        if g.shape != expected:
            raise ShapeError(f"dlinear_backward: upstream gradient must be {expected}, got {g.shape}")
        trend, seasonal = moving_average_decompose(x, self.kernel_size)
        p = self.params
        self.grads = {
            "W_seasonal": np.einsum("byn,btn->yt", g, seasonal),
            "b_seasonal": g.sum(axis=(0, 2)),
            "W_trend": np.einsum("byn,btn->yt", g, trend),
            "b_trend": g.sum(axis=(0, 2)),
        }
        d_seasonal = np.einsum("yt,byn->btn", p["W_seasonal"], g)
        d_trend = np.einsum("yt,byn->btn", p["W_trend"], g)
        a = moving_average_matrix(self.seq_len, self.kernel_size)
        # seasonal = x - A x, trend = A x
        return d_seasonal + np.einsum("st,bsn->btn", a, d_trend - d_seasonal)


# --- imputers ---------------------------------------------------------------------


class LinearImputer(Model):
    """Affine map along the time axis, shared across channels."""

    tag = "linear"

    def __init__(self, seq_len: int, rng: Rng | None = None):
        super().__init__()
        self.seq_len = seq_len
        w = np.eye(seq_len) if rng is None else _uniform_init(rng, (seq_len, seq_len))
        self.params = {"W": w, "b": np.zeros(seq_len)}
        self.zero_grad()

    def hyperparams(self) -> dict:
        return {"seq_len": self.seq_len}

    def forward(self, x_m: np.ndarray) -> np.ndarray:
        x_m = _check_input(x_m, self.seq_len, "imputer_forward")
        b, _, n = x_m.shape
        out = _rows(x_m) @ self.params["W"].T + self.params["b"]
        return _unrows(out, b, n)

    def backward(self, x_m: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
        x_m = _check_input(x_m, self.seq_len, "imputer_backward")
        if np.shape(grad_out) != x_m.shape:
            raise ShapeError(f"imputer_backward: upstream gradient must be {x_m.shape}, got {np.shape(grad_out)}")
        b, _, n = x_m.shape
        r, g = _rows(x_m), _rows(np.asarray(grad_out, dtype=np.float64))
        self.grads = {"W": g.T @ r, "b": g.sum(axis=0)}
        return _unrows(g @ self.params["W"], b, n)


class MlpImputer(Model):
    """One hidden rectifier layer along the time axis, shared across channels."""

    tag = "mlp"

    def __init__(self, seq_len: int, hidden: int | None = None, rng: Rng | None = None):
        super().__init__()
        hidden = 2 * seq_len if hidden is None else hidden
        if hidden < 1:
            raise ValueError(f"hidden must be >= 1, got {hidden}")
        self.seq_len = seq_len
        self.hidden = hidden
        rng = rng if rng is not None else Rng(0)
        self.params = {
            "W1": _uniform_init(rng, (hidden, seq_len)),
            "b1": np.zeros(hidden),
            "W2": _uniform_init(rng, (seq_len, hidden)),
            "b2": np.zeros(seq_len),
        }
        self.zero_grad()

    def hyperparams(self) -> dict:
        return {"seq_len": self.seq_len, "hidden": self.hidden}

    def _pre(self, rows: np.ndarray) -> np.ndarray:
        return rows @ self.params["W1"].T + self.params["b1"]

    def forward(self, x_m: np.ndarray) -> np.ndarray:
        x_m = _check_input(x_m, self.seq_len, "imputer_forward")
        b, _, n = x_m.shape
        h = np.maximum(self._pre(_rows(x_m)), 0.0)
        return _unrows(h @ self.params["W2"].T + self.params["b2"], b, n)

    def backward(self, x_m: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
        x_m = _check_input(x_m, self.seq_len, "imputer_backward")
        if np.shape(grad_out) != x_m.shape:
            raise ShapeError(f"imputer_backward: upstream gradient must be {x_m.shape}, got {np.shape(grad_out)}")
        b, _, n = x_m.shape
        r, g = _rows(x_m), _rows(np.asarray(grad_out, dtype=np.float64))
        pre = self._pre(r)
        h = np.maximum(pre, 0.0)
        dh = g @ self.params["W2"]
        dpre = np.where(pre > 0.0, dh, 0.0)  # subgradient 0 at the kink
        self.grads = {
            "W1": dpre.T @ r,
            "b1": dpre.sum(axis=0),
            "W2": g.T @ h,
            "b2": g.sum(axis=0),
        }
        return _unrows(dpre @ self.params["W1"], b, n)


def make_imputer(backbone: str, seq_len: int, rng: Rng | None = None, hidden: int | None = None) -> Model:
    if backbone == "linear":
        return LinearImputer(seq_len, rng=rng)
    if backbone == "mlp":
        return MlpImputer(seq_len, hidden=hidden, rng=rng)
    raise ValueError(f"unknown imputer backbone {backbone!r}; expected 'linear' or 'mlp'")


# --- optimiser --------------------------------------------------------------------


class Adam:
    """Bias-corrected Adam over a dict of parameter arrays (updated in place)."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if not lr > 0 or not eps > 0:
            raise ValueError(f"lr and eps must be > 0, got lr={lr}, eps={eps}")
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ValueError(f"betas must lie in [0, 1), got {beta1}, {beta2}")
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for key, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient in parameter block {key!r}")
            if g.shape != params[key].shape:
                raise ShapeError(f"gradient for {key!r} has shape {g.shape}, parameter {params[key].shape}")
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for key, g in grads.items():
            if key not in self.m:
                self.m[key] = np.zeros_like(g)
                self.v[key] = np.zeros_like(g)
            self.m[key] = self.beta1 * self.m[key] + (1.0 - self.beta1) * g
            self.v[key] = self.beta2 * self.v[key] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[key] / bc1
            v_hat = self.v[key] / bc2
            params[key] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def adam_step(opt: Adam, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    opt.step(params, grads)
    return params


# --- checkpoints ------------------------------------------------------------------

_MODEL_CLASSES = {cls.tag: cls for cls in (DLinearForecaster, LinearImputer, MlpImputer)}


def save_checkpoint(model: Model, path: str | Path) -> None:
    """Write ``IMA1`` + u32 header length + JSON header + little-endian float64 blocks."""
    header = {
        "backbone": model.tag,
        "hyperparams": model.hyperparams(),
        "dtype": "<f8",
        "params": [{"name": k, "shape": list(v.shape)} for k, v in model.params.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for value in model.params.values():
            fh.write(np.ascontiguousarray(value, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> Model:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not an IMA1 checkpoint")
    (size,) = struct.unpack("<I", raw[4:8])
    header = json.loads(raw[8 : 8 + size].decode("utf-8"))
    cls = _MODEL_CLASSES.get(header["backbone"])
    if cls is None:
        raise ValueError(f"{path}: unknown backbone {header['backbone']!r}")
    model = cls(**header["hyperparams"])
    offset = 8 + size
    params = {}
    for entry in header["params"]:
        count = int(np.prod(entry["shape"]))
        block = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
        params[entry["name"]] = block.astype(np.float64).reshape(entry["shape"])
        offset += 8 * count
    if offset != len(raw):
        raise ValueError(f"{path}: {len(raw) - offset} trailing bytes")
    model.params = params
    model.zero_grad()
    return model
