"""Deterministic random streams, samplers and a finite-difference gradient oracle.

The generator is Vigna's xorshift64* (shifts 12/25/27, multiplier
0x2545F4914F6CDD1D). Seeds are scrambled through the SplitMix64 finaliser so
that small integer seeds produce well-mixed, non-zero states. Child streams
are obtained with :meth:`Rng.derive`, which hashes ``(seed, stream_id)``
into a fresh state; distinct stream ids give unrelated sequences.

Uniform doubles use the top 53 bits of each output: ``(x >> 11) * 2**-53``.
Gaussians use the Marsaglia polar method (both values of an accepted pair are
used when filling arrays; a scalar draw discards the second one). Gamma
variates use Marsaglia-Tsang with the ``U**(1/alpha)`` boost for
``alpha < 1``; symmetric Beta variates are ``g1 / (g1 + g2)``.

Hot loops are compiled with numba so that millions of draws stay cheap.
"""

from __future__ import annotations

from typing import Callable

import numba
import numpy as np

ALGORITHM = "xorshift64*"

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_STREAM_SALT = 0xD1B54A32D192ED03


def _splitmix64(z: int) -> int:
    z = (z + _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def _nonzero(state: int) -> int:
    # xorshift has a fixed point at zero
    return state if state != 0 else _GOLDEN


# --- compiled kernels -------------------------------------------------------

_S12 = np.uint64(12)
_S25 = np.uint64(25)
_S27 = np.uint64(27)
_S11 = np.uint64(11)
_MULT = np.uint64(0x2545F4914F6CDD1D)
_INV53 = 1.0 / 9007199254740992.0


@numba.njit(cache=True)
def _next_u64(state):
    x = state
    x ^= x >> _S12
    x ^= x << _S25
    x ^= x >> _S27
    return x, x * _MULT


@numba.njit(cache=True)
def _next_f64(state):
    state, out = _next_u64(state)
    return state, (out >> _S11) * _INV53


@numba.njit(cache=True)
def _polar_pair(state):
    while True:
        state, u1 = _next_f64(state)
        state, u2 = _next_f64(state)
        a = 2.0 * u1 - 1.0
        b = 2.0 * u2 - 1.0
        s = a * a + b * b
        if 0.0 < s < 1.0:
            f = np.sqrt(-2.0 * np.log(s) / s)
            return state, a * f, b * f


@numba.njit(cache=True)
def _gamma(state, alpha):
    boost = 1.0
    if alpha < 1.0:
        state, u = _next_f64(state)
        # U ** (1/alpha) with U in (0, 1]
        boost = (1.0 - u) ** (1.0 / alpha)
        alpha = alpha + 1.0
    d = alpha - 1.0 / 3.0
    c = 1.0 / np.sqrt(9.0 * d)
    while True:
        state, z, _unused = _polar_pair(state)
        v = 1.0 + c * z
        if v <= 0.0:
            continue
        v = v * v * v
        state, u = _next_f64(state)
        if u < 1.0 - 0.0331 * z * z * z * z:
            return state, d * v * boost
        if u > 0.0 and np.log(u) < 0.5 * z * z + d * (1.0 - v + np.log(v)):
            return state, d * v * boost


@numba.njit(cache=True)
def _fill_uniform(state, out):
    for i in range(out.shape[0]):
        state, out[i] = _next_f64(state)
    return state


@numba.njit(cache=True)
def _fill_normal(state, out):
    n = out.shape[0]
    i = 0
    while i < n:
        state, a, b = _polar_pair(state)
        out[i] = a
        if i + 1 < n:
            out[i + 1] = b
        i += 2
    return state


@numba.njit(cache=True)
def _fill_beta_symmetric(state, alpha, out):
    for i in range(out.shape[0]):
        while True:
            state, g1 = _gamma(state, alpha)
            state, g2 = _gamma(state, alpha)
            total = g1 + g2
            if total > 0.0:
                out[i] = g1 / total
                break
    return state


@numba.njit(cache=True)
def _fill_below(state, high, out):
    for i in range(out.shape[0]):
        state, u = _next_f64(state)
        k = np.int64(u * high)
        out[i] = k if k < high else high - 1
    return state


@numba.njit(cache=True)
def _permutation(state, out):
    for i in range(out.shape[0] - 1, 0, -1):
        state, u = _next_f64(state)
        j = np.int64(u * (i + 1))
        if j > i:
            j = i
        tmp = out[i]
        out[i] = out[j]
        out[j] = tmp
    return state


def _size_to_shape(size: int | tuple[int, ...]) -> tuple[int, ...]:
    return (size,) if isinstance(size, (int, np.integer)) else tuple(size)


class Rng:
    """A single xorshift64* stream.

    Never share one instance between concurrent consumers; derive a child
    stream for each instead.
    """

    algorithm = ALGORITHM

    def __init__(self, seed: int = 0):
        self.seed = int(seed) & _MASK64
        self.state = _nonzero(_splitmix64(self.seed))

    @classmethod
    def derive(cls, seed: int, stream_id: int) -> "Rng":
        """Child stream ``stream_id`` of ``seed``."""
        rng = cls.__new__(cls)
        rng.seed = int(seed) & _MASK64
        salt = _splitmix64((int(stream_id) * _STREAM_SALT + 1) & _MASK64)
        rng.state = _nonzero(_splitmix64(_splitmix64(rng.seed) ^ salt))
        return rng

    def spawn(self, stream_id: int) -> "Rng":
        """Child stream keyed by the current state (does not advance self)."""
        return Rng.derive(self.state, stream_id)

    def copy(self) -> "Rng":
        other = Rng.__new__(Rng)
        other.seed = self.seed
        other.state = self.state
        return other

    def next_u64(self) -> int:
        state, out = _next_u64(np.uint64(self.state))
        self.state = int(state)
        return int(out)

    def uniform(self, size: int | tuple[int, ...] | None = None):
        """Uniform draws on [0, 1)."""
        if size is None:
            state, u = _next_f64(np.uint64(self.state))
            self.state = int(state)
            return float(u)
        shape = _size_to_shape(size)
        out = np.empty(int(np.prod(shape)), dtype=np.float64)
        self.state = int(_fill_uniform(np.uint64(self.state), out))
        return out.reshape(shape)

    def normal(
        self,
        mu: float = 0.0,
        sigma: float = 1.0,
        size: int | tuple[int, ...] | None = None,
    ):
        if sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {sigma}")
        if size is None:
            state, z, _ = _polar_pair(np.uint64(self.state))
            self.state = int(state)
            return mu if sigma == 0 else mu + sigma * float(z)
        shape = _size_to_shape(size)
        z = np.empty(int(np.prod(shape)), dtype=np.float64)
        self.state = int(_fill_normal(np.uint64(self.state), z))
        if sigma == 0:
            return np.full(shape, float(mu))
        return (mu + sigma * z).reshape(shape)

    def beta_symmetric(self, alpha: float, size: int | tuple[int, ...] | None = None):
        """Beta(alpha, alpha) draws via the two-Gamma ratio."""
        if not alpha > 0:
            raise ValueError(f"alpha must be > 0, got {alpha}")
        n = 1 if size is None else int(np.prod(_size_to_shape(size)))
        out = np.empty(n, dtype=np.float64)
        self.state = int(_fill_beta_symmetric(np.uint64(self.state), float(alpha), out))
        if size is None:
            return float(out[0])
        return out.reshape(_size_to_shape(size))

    def integers(self, high: int, size: int | tuple[int, ...] | None = None):
        """Integers uniform on ``[0, high)``."""
        if high < 1:
            raise ValueError(f"high must be >= 1, got {high}")
        n = 1 if size is None else int(np.prod(_size_to_shape(size)))
        out = np.empty(n, dtype=np.int64)
        self.state = int(_fill_below(np.uint64(self.state), np.int64(high), out))
        if size is None:
            return int(out[0])
        return out.reshape(_size_to_shape(size))

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of ``arange(n)``."""
        out = np.arange(n, dtype=np.int64)
        self.state = int(_permutation(np.uint64(self.state), out))
        return out

    def __repr__(self) -> str:
        return f"Rng(algorithm={self.algorithm!r}, state=0x{self.state:016x})"


def rng_new(seed: int) -> Rng:
    return Rng(seed)


def derive(seed: int, stream_id: int) -> Rng:
    return Rng.derive(seed, stream_id)


def sample_uniform(rng: Rng) -> float:
    return rng.uniform()


def sample_gaussian(rng: Rng, mu: float, sigma: float) -> float:
    return rng.normal(mu, sigma)


def sample_beta_symmetric(rng: Rng, alpha: float) -> float:
    return rng.beta_symmetric(alpha)


def finite_diff_grad(
    f: Callable[[np.ndarray], float], p: np.ndarray, eps: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``p``.

    Raises:
        FloatingPointError: if any evaluation of ``f`` is non-finite.
    """
    if not eps > 0:
        raise ValueError(f"eps must be > 0, got {eps}")
    p = np.array(p, dtype=np.float64)
    flat = p.reshape(-1)
    grad = np.empty_like(flat)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + eps
        hi = float(f(p))
        flat[k] = orig - eps
        lo = float(f(p))
        flat[k] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise FloatingPointError(f"non-finite function value near coordinate {k}")
        grad[k] = (hi - lo) / (2.0 * eps)
    return grad.reshape(p.shape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Norm-wise relative error, ``|a - n| / max(|a|, |n|)``; 0 when both vanish."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(a - n) / scale)
