"""Interpolation and quadrature helpers on uniform log grids."""
from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

# log of the smallest subnormal double; log-values at or below are "zero"
LOG_FLOOR = -745.0
# stencils whose log-values spread wider than this are interpolated linearly
ROUGH_SPAN = 100.0


def safe_log(values):
    v = np.asarray(values, dtype=float)
    out = np.full(v.shape, LOG_FLOOR)
    pos = v > 0.0
    out[pos] = np.maximum(np.log(v[pos]), LOG_FLOOR)
    return out


def _lagrange_weights(u: np.ndarray, m: int) -> np.ndarray:
    """Weights of the ``m`` nodes ``0..m-1`` at offsets ``u``."""
    w = []
    for k in range(m):
        c = np.ones_like(u)
        for j in range(m):
            if j != k:
                c = c * (u - j) / (k - j)
        w.append(c)
    return np.stack(w)


def lagrange(t0: float, h: float, vals: np.ndarray, t, points: int = 6) -> np.ndarray:
    """``points``-point Lagrange interpolation of samples on ``t0 + h*i``.

    Queries outside the node range are clamped to the end stencils (callers
    handle extrapolation). Stencils touching ``LOG_FLOOR`` or spreading more
    than ``ROUGH_SPAN`` fall back to linear interpolation so jumps cannot
    overshoot.
    """
    t = np.asarray(t, dtype=float)
    n = vals.shape[-1]
    m = min(points, n)
    s = (t - t0) / h
    i = np.clip(np.floor(s).astype(np.int64), 0, n - 2)
    i0 = np.clip(i - (m // 2 - 1), 0, n - m)
    w = _lagrange_weights(s - i0, m)
    out = np.zeros(np.broadcast(t, vals[..., 0]).shape)
    low = np.full(out.shape, np.inf)
    high = np.full(out.shape, -np.inf)
    for k in range(m):
        v = vals[..., i0 + k]
        out = out + w[k] * v
        low = np.minimum(low, v)
        high = np.maximum(high, v)
    rough = (low <= LOG_FLOOR + 1.0) | (high - low > ROUGH_SPAN)
    if np.any(rough):
        a = vals[..., i]
        b = vals[..., i + 1]
        lin = a + (b - a) * (s - i)
        out = np.where(rough, lin, out)
    return out


def lagrange_2d(t0: float, h: float, table: np.ndarray, ty, ts, points: int = 6) -> np.ndarray:
    """Tensor-product Lagrange on a square uniform table.

    Stencils touching ``LOG_FLOOR`` or spreading more than ``ROUGH_SPAN``
    fall back to bilinear interpolation.
    """
    n = table.shape[0]
    m = min(points, n)
    ty = np.asarray(ty, dtype=float)
    ts = np.asarray(ts, dtype=float)

    def stencil(t):
        s = (t - t0) / h
        i = np.clip(np.floor(s).astype(np.int64), 0, n - 2)
        i0 = np.clip(i - (m // 2 - 1), 0, n - m)
        return i0, _lagrange_weights(s - i0, m)

    iy, wy = stencil(ty)
    js, ws = stencil(ts)
    out = np.zeros(np.broadcast(ty, ts).shape)
    low = np.full(out.shape, np.inf)
    high = np.full(out.shape, -np.inf)
    for a in range(m):
        row = np.zeros(out.shape)
        for b in range(m):
            v = table[iy + a, js + b]
            row += ws[b] * v
            low = np.minimum(low, v)
            high = np.maximum(high, v)
        out += wy[a] * row
    rough = (low <= LOG_FLOOR + 1.0) | (high - low > ROUGH_SPAN)
    if np.any(rough):
        sy = np.clip((ty - t0) / h, 0, n - 1 - 1e-12)
        ss = np.clip((ts - t0) / h, 0, n - 1 - 1e-12)
        i = np.floor(sy).astype(np.int64)
        j = np.floor(ss).astype(np.int64)
        fy = sy - i
        fs = ss - j
        lin = (
            table[i, j] * (1 - fy) * (1 - fs)
            + table[i + 1, j] * fy * (1 - fs)
            + table[i, j + 1] * (1 - fy) * fs
            + table[i + 1, j + 1] * fy * fs
        )
        out = np.where(rough, lin, out)
    return out


def simpson_weights(n: int, h: float) -> np.ndarray:
    """Composite Simpson weights for ``n`` equispaced samples.

    With an odd number of intervals the last three use Simpson's 3/8 rule.
    """
    if n < 4:
        raise ValueError("need at least four samples")
    w = np.zeros(n)
    m = n - 1 if (n - 1) % 2 == 0 else n - 4
    if m > 0:
        w[1:m:2] = 4.0
        w[2:m:2] = 2.0
        w[0] = 1.0
        w[m] = 1.0
        w[: m + 1] *= h / 3.0
    if m != n - 1:
        w[m : m + 4] += 3.0 * h / 8.0 * np.array([1.0, 3.0, 3.0, 1.0])
    return w


@lru_cache(maxsize=None)
def gauss_legendre(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return x, w


@lru_cache(maxsize=None)
def gauss_laguerre(n: int):
    x, w = np.polynomial.laguerre.laggauss(n)
    return x, w


def panel_nodes(a: float, b: float, width: float, order: int = 6):
    """Gauss-Legendre nodes and weights on ``[a, b]`` split into equal panels."""
    if b <= a:
        return np.empty(0), np.empty(0)
    npanel = max(1, int(math.ceil((b - a) / width)))
    edges = np.linspace(a, b, npanel + 1)
    gx, gw = gauss_legendre(order)
    half = 0.5 * (edges[1:] - edges[:-1])
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * gx[None, :]).ravel()
    weights = (half[:, None] * gw[None, :]).ravel()
    return nodes, weights


def fsum(values) -> float:
    """Compensated, order-fixed summation."""
    return math.fsum(np.asarray(values, dtype=float).ravel().tolist())
