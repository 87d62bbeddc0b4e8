"""Slow, obviously-correct reference implementations used only by the tests."""

from __future__ import annotations

import numpy as np


def matmul_loops(a, b):
    n, k = len(a), len(a[0])
    m = len(b[0])
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for t in range(k):
                s += a[i][t] * b[t][j]
            out[i, j] = s
    return out


def masked_sse_loops(x, x_imp, m):
    b, t, n = x.shape
    total = 0.0
    for i in range(b):
        for s in range(t):
            for j in range(n):
                total += (1.0 - m[i, s, j]) * (x[i, s, j] - x_imp[i, s, j]) ** 2
    return total / b


def moving_average_loops(series, kernel_size):
    """Replicate-padded centred moving average of a 1-D list."""
    half = (kernel_size - 1) // 2
    t = len(series)
    out = []
    for s in range(t):
        acc = 0.0
        for j in range(s - half, s + half + 1):
            acc += series[min(max(j, 0), t - 1)]
        out.append(acc / kernel_size)
    return out


def dlinear_loops(params, x, kernel_size):
    b, t, n = x.shape
    pred = params["W_seasonal"].shape[0]
    out = np.zeros((b, pred, n))
    for i in range(b):
        for c in range(n):
            series = [x[i, s, c] for s in range(t)]
            trend = moving_average_loops(series, kernel_size)
            seasonal = [series[s] - trend[s] for s in range(t)]
            for y in range(pred):
                acc = params["b_seasonal"][y] + params["b_trend"][y]
                for s in range(t):
                    acc += params["W_seasonal"][y, s] * seasonal[s] + params["W_trend"][y, s] * trend[s]
                out[i, y, c] = acc
    return out


def linear_imputer_loops(params, x):
    b, t, n = x.shape
    out = np.zeros_like(x)
    for i in range(b):
        for c in range(n):
            for r in range(t):
                acc = params["b"][r]
                for s in range(t):
                    acc += params["W"][r, s] * x[i, s, c]
                out[i, r, c] = acc
    return out


def mlp_imputer_loops(params, x):
    b, t, n = x.shape
    hidden = params["W1"].shape[0]
    out = np.zeros_like(x)
    for i in range(b):
        for c in range(n):
            h = []
            for k in range(hidden):
                acc = params["b1"][k]
                for s in range(t):
                    acc += params["W1"][k, s] * x[i, s, c]
                h.append(max(acc, 0.0))
            for r in range(t):
                acc = params["b2"][r]
                for k in range(hidden):
                    acc += params["W2"][r, k] * h[k]
                out[i, r, c] = acc
    return out


def piecewise_linear(values, positions):
    """Evaluate the polyline through (k, values[k]) at each position."""
    out = []
    last = len(values) - 1
    for p in positions:
        if p <= 0:
            out.append(values[0])
            continue
        if p >= last:
            out.append(values[last])
            continue
        k = int(p)
        w = p - k
        out.append(values[k] + w * (values[k + 1] - values[k]))
    return out


def stretch(values, new_len):
    n = len(values)
    if n == 1:
        return [values[0]] * new_len
    return piecewise_linear(values, [i * (n - 1) / (new_len - 1) for i in range(new_len)])


def metrics_loops(y_hat, y):
    b, t, n = y.shape
    sq = ab = 0.0
    for i in range(b):
        for s in range(t):
            for c in range(n):
                d = y_hat[i, s, c] - y[i, s, c]
                sq += d * d
                ab += abs(d)
    count = b * t * n
    return sq / count, ab / count
