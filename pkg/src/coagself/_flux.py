"""Coagulation flux ``F(x) = int_0^x y f(y) int_{x-y}^inf K(y, z) f(z) dz dy``.

The inner integral ``G(y, s) = int_s^inf K(y, z) f(z) dz`` is tabulated once
per profile on the profile's log grid, extended downwards so that size
ratios down to ``RATIO_FLOOR`` are covered. Homogeneity makes the kernel
matrix Toeplitz in the log grid, so only ``K(1, e^d)`` on a stencil is
evaluated. The outer integral is split at ``x/2``: below it ``log y`` is
the variable, above it ``log(x - y)``, which keeps both endpoint
behaviours (``y -> 0`` and ``z -> 0``) resolved.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from ._numerics import LOG_FLOOR, gauss_laguerre, gauss_legendre, lagrange, lagrange_2d, panel_nodes, safe_log
from .errors import DivergentTailError
from .kernel import CoagulationKernel
from .profile import Profile

RATIO_FLOOR = 1e-8
_CELL_ORDER = 4
_PANEL_WIDTH = 0.5
_PANEL_ORDER = 6
_PAD_HI = 6
# the inner table and the strong-form integration reach this far past x_max
TAIL_EXTENT = 1.5
GAIN_RATIO_FLOOR = 1e-16
_GAIN_PANEL_WIDTH = 2.0
_GAIN_PANEL_ORDER = 12
_CHUNK = 64


@dataclass(frozen=True)
class InnerTable:
    """``log G`` on the square grid ``t0 + h*i`` (both arguments in log)."""

    t0: float
    h: float
    log_g: np.ndarray

    @property
    def t_max(self) -> float:
        return self.t0 + self.h * (self.log_g.shape[0] - 1)

    def log_eval(self, ty, ts) -> np.ndarray:
        return lagrange_2d(self.t0, self.h, self.log_g, ty, ts)

    def log_loss_rate(self, ty) -> np.ndarray:
        """``log A(y)``, ``A(y) = int_0^inf K(y, z) f(z) dz``.

        The first column holds ``G(y, s)`` at the smallest tabulated ``s``;
        the missing piece below it is below double precision for the
        profiles and kernels handled here.
        """
        return lagrange(self.t0, self.h, self.log_g[:, 0], ty)


def inner_table(k: CoagulationKernel, p: Profile) -> InnerTable:
    g = p.grid
    h = g.step
    pad_lo = int(math.ceil((math.log(1.0 / RATIO_FLOOR) + math.log(2.0)) / h)) + 4
    pad_hi = int(math.ceil(math.log(TAIL_EXTENT) / h)) + _PAD_HI
    n = g.count + pad_lo + pad_hi
    t0 = g.log_nodes[0] - pad_lo * h
    t = t0 + h * np.arange(n)

    gx, gw = gauss_legendre(_CELL_ORDER)
    frac = 0.5 * (gx + 1.0)
    # phi[k, q]: f(z) dz mass of Gauss point q in cell k
    tau = t[:-1, None] + frac[None, :] * h
    phi = np.exp(p.log_eval(np.exp(tau)) + tau) * (0.5 * h * gw)[None, :]
    phi = np.where(p.log_eval(np.exp(tau)) <= LOG_FLOOR, 0.0, phi)

    offsets = np.arange(-(n - 1), n - 1)
    rows = np.arange(n)[:, None]
    cols = np.arange(n - 1)[None, :]
    idx = cols - rows + (n - 1)
    cells = np.zeros((n, n - 1))
    for q in range(_CELL_ORDER):
        kap = k.ratio_profile((offsets + frac[q]) * h)
        cells += kap[idx] * phi[None, :, q]

    remainder = np.zeros(n)
    if p.tail_amp > 0.0:
        a = p.tail_rate
        if not a > 0.0:
            raise DivergentTailError("tail rate must be positive")
        z_end = math.exp(t[-1])
        u, w = gauss_laguerre(48)
        z = z_end + u / a
        coef = math.exp(math.log(p.tail_amp) - a * z_end) / a
        kap = k.ratio_profile(np.log(z)[None, :] - t[:, None])
        remainder = coef * (kap @ w)

    tab = np.empty((n, n))
    tab[:, :-1] = np.cumsum(cells[:, ::-1], axis=1)[:, ::-1]
    tab += remainder[:, None]
    tab[:, -1] = remainder
    return InnerTable(float(t0), h, safe_log(tab))


def _relative_nodes(refinement: int = 0):
    width = _PANEL_WIDTH / 2**refinement
    return panel_nodes(math.log(RATIO_FLOOR), math.log(0.5), width, _PANEL_ORDER)


def flux(
    k: CoagulationKernel,
    p: Profile,
    x_out,
    table: InnerTable | None = None,
    mapper: Callable[[Callable, Iterable], Iterable] = map,
    refinement: int = 0,
) -> np.ndarray:
    """Coagulation flux at each size in ``x_out``.

    ``mapper`` may be an ordered parallel map; chunks are concatenated in
    input order so results do not depend on it.
    """
    x_out = np.asarray(x_out, dtype=float)
    g = p.grid
    if x_out.size and (x_out.min() < 0.5 * g.x_min or x_out.max() > g.x_max * math.exp(4 * g.step)):
        raise ValueError("flux requested outside the profile grid")
    if table is None:
        table = inner_table(k, p)
    r, w = _relative_nodes(refinement)
    er = np.exp(r)
    l1 = np.log1p(-er)

    def chunk(xs):
        lx = np.log(xs)[:, None]
        # part one: y = x e^r, s = x (1 - e^r)
        ly, ls = lx + r, lx + l1
        a = np.exp(p.log_eval(np.exp(ly)) + table.log_eval(ly, ls) + 2.0 * ly)
        # part two: s = x e^r, y = x (1 - e^r)
        b = np.exp(p.log_eval(np.exp(ls)) + table.log_eval(ls, ly) + ls + ly)
        body = (a + b) @ w
        # remainders on [0, x*RATIO_FLOOR] in either variable
        x = xs
        lo = x * RATIO_FLOOR
        rem = lo * x * p(x) * np.exp(table.log_eval(np.log(x), np.log(lo)))
        rem += 0.5 * lo * lo * p(lo) * np.exp(table.log_eval(np.log(lo), np.log(x)))
        return body + rem

    parts = [x_out[i : i + _CHUNK] for i in range(0, x_out.size, _CHUNK)]
    out = list(mapper(chunk, parts))
    return np.concatenate(out) if out else np.empty(0)


def gain(
    k: CoagulationKernel,
    p: Profile,
    y_out,
    mapper: Callable[[Callable, Iterable], Iterable] = map,
    refinement: int = 0,
) -> np.ndarray:
    """Birth term ``(1/2) int_0^y K(z, y - z) f(z) f(y - z) dz`` at each ``y``.

    By symmetry this is the integral over ``z < y/2``; with ``z = y e^r`` the
    kernel factor ``K(1, e^{-r} - 1)`` does not depend on ``y``.
    """
    y_out = np.asarray(y_out, dtype=float)
    r, w = panel_nodes(math.log(GAIN_RATIO_FLOOR), math.log(0.5), _GAIN_PANEL_WIDTH / 2**refinement, _GAIN_PANEL_ORDER)
    er = np.exp(r)
    l1 = np.log1p(-er)
    kap = k.ratio_profile(l1 - r)
    wk = w * kap

    def chunk(ys):
        ly = np.log(ys)[:, None]
        lf = p.log_eval(np.exp(ly + r)) + p.log_eval(np.exp(ly + l1)) + ly + r
        return np.exp(lf) @ wk

    parts = [y_out[i : i + _CHUNK] for i in range(0, y_out.size, _CHUNK)]
    out = list(mapper(chunk, parts))
    return np.concatenate(out) if out else np.empty(0)
