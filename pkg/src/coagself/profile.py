"""Profiles on geometric grids with an analytic exponential tail.

Values live on nodes ``x_i = x_min * r**i``. Between nodes ``log f`` is
interpolated as a cubic in ``log x``; below ``x_min`` the first cell's power
law is continued, above ``x_max`` the tail ``C*exp(-a*x)`` takes over.
Quadrature is composite Simpson in ``log x`` plus closed forms at both ends.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable

import numpy as np

from ._numerics import (
    LOG_FLOOR,
    fsum,
    gauss_laguerre,
    lagrange,
    panel_nodes,
    safe_log,
    simpson_weights,
)
from .errors import DivergenceError, DivergentTailError, NonPositiveValuesError, ZeroProfileError

__all__ = [
    "Grid",
    "Profile",
    "integrate",
    "mass",
    "normalize_mass",
    "moment",
    "rescale",
    "negative_moment",
    "fit_tail",
    "l1_mass_distance",
    "read_csv",
    "write_csv",
]

DEFAULT_X_MIN = 1e-6
DEFAULT_X_MAX = 80.0
DEFAULT_N = 512
_LAGUERRE_ORDER = 48


@dataclass(frozen=True)
class Grid:
    """Geometric grid on ``[x_min, x_max]`` with ``count`` nodes."""

    x_min: float = DEFAULT_X_MIN
    x_max: float = DEFAULT_X_MAX
    count: int = DEFAULT_N

    def __post_init__(self):
        if not (0.0 < self.x_min < self.x_max) or self.count < 8:
            raise ValueError(f"invalid grid {self}")

    @cached_property
    def step(self) -> float:
        """Spacing in ``log x``."""
        return math.log(self.x_max / self.x_min) / (self.count - 1)

    @cached_property
    def log_nodes(self) -> np.ndarray:
        t = math.log(self.x_min) + self.step * np.arange(self.count)
        t[-1] = math.log(self.x_max)
        t.setflags(write=False)
        return t

    @cached_property
    def nodes(self) -> np.ndarray:
        x = np.exp(self.log_nodes)
        x[0] = self.x_min
        x[-1] = self.x_max
        x.setflags(write=False)
        return x

    @cached_property
    def weights(self) -> np.ndarray:
        """``w`` with ``sum(w * x * g(x)) ~ integral of g over [x_min, x_max]``."""
        w = simpson_weights(self.count, self.step)
        w.setflags(write=False)
        return w

    @cached_property
    def dx_weights(self) -> np.ndarray:
        """Quadrature weights for ``dx`` directly (``weights * nodes``)."""
        w = self.weights * self.nodes
        w.setflags(write=False)
        return w

    @classmethod
    def from_nodes(cls, nodes) -> "Grid":
        nodes = np.asarray(nodes, dtype=float)
        grid = cls(float(nodes[0]), float(nodes[-1]), int(nodes.size))
        if not np.allclose(grid.nodes, nodes, rtol=1e-12, atol=0.0):
            raise ValueError("nodes are not a geometric grid")
        return grid


@dataclass(frozen=True, eq=False)
class Profile:
    """Nonnegative density sampled on a :class:`Grid`, with exponential tail.

    ``tail_amp == 0`` means the profile vanishes beyond ``x_max``; its
    ``tail_rate`` is then ``inf``.
    """

    grid: Grid
    values: np.ndarray
    tail_rate: float
    tail_amp: float
    _log: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.grid.count,):
            raise ValueError("values do not match grid")
        if np.any(~np.isfinite(v)) or np.any(v < 0.0):
            raise ValueError("profile values must be finite and >= 0")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if self.tail_amp < 0.0 or not self.tail_rate > 0.0:
            raise ValueError("tail requires rate > 0 and amplitude >= 0")
        if self.tail_amp == 0.0:
            object.__setattr__(self, "tail_rate", math.inf)
        logv = safe_log(v)
        logv.setflags(write=False)
        object.__setattr__(self, "_log", logv)

    # -- construction -------------------------------------------------
    @classmethod
    def from_values(cls, grid: Grid, values, tail_rate: float | None = None) -> "Profile":
        """Build from node values, fitting the tail on the last decade.

        With ``tail_rate`` given only the amplitude is matched at ``x_max``.
        """
        values = np.asarray(values, dtype=float)
        rate, amp = _tail_from_values(grid, values, tail_rate)
        return cls(grid, values, rate, amp)

    @classmethod
    def from_function(
        cls, func: Callable[[np.ndarray], np.ndarray], grid: Grid | None = None, tail_rate: float | None = None
    ) -> "Profile":
        grid = grid or Grid()
        return cls.from_values(grid, func(grid.nodes), tail_rate)

    def with_values(self, values, refit_tail: bool = True) -> "Profile":
        if refit_tail:
            return Profile.from_values(self.grid, values)
        scale = values[-1] / self.values[-1] if self.values[-1] > 0 else 0.0
        return Profile(self.grid, values, self.tail_rate if scale else 1.0, self.tail_amp * scale)

    def scaled(self, c: float) -> "Profile":
        return Profile(self.grid, self.values * c, self.tail_rate if c > 0 else 1.0, self.tail_amp * c)

    # -- evaluation ---------------------------------------------------
    @property
    def log_values(self) -> np.ndarray:
        return self._log

    @cached_property
    def low_exponent(self) -> float:
        """Power ``p`` of the continuation ``f ~ x**p`` below ``x_min``."""
        a, b = self._log[0], self._log[1]
        if a <= LOG_FLOOR or b <= LOG_FLOOR:
            return 0.0
        return float((b - a) / self.grid.step)

    def log_eval(self, x) -> np.ndarray:
        """``log f(x)`` (``LOG_FLOOR`` where ``f`` vanishes)."""
        x = np.asarray(x, dtype=float)
        t = np.log(x)
        g = self.grid
        t0, t1 = g.log_nodes[0], g.log_nodes[-1]
        out = lagrange(t0, g.step, self._log, t)
        lo = t < t0
        if np.any(lo):
            out = np.where(lo, self._log[0] + self.low_exponent * (t - t0), out)
        hi = t > t1
        if np.any(hi):
            if self.tail_amp > 0.0:
                tail = math.log(self.tail_amp) - self.tail_rate * x
            else:
                tail = np.full(x.shape, LOG_FLOOR)
            out = np.where(hi, tail, out)
        return np.maximum(out, LOG_FLOOR)

    def __call__(self, x) -> np.ndarray:
        lv = self.log_eval(x)
        return np.where(lv <= LOG_FLOOR, 0.0, np.exp(lv))


def _tail_from_values(grid: Grid, values: np.ndarray, tail_rate: float | None):
    fmax = float(values[-1])
    if fmax <= 0.0:
        return math.inf, 0.0
    if tail_rate is None:
        window = grid.nodes >= grid.x_max / 10.0
        xs, vs = grid.nodes[window], values[window]
        if np.any(vs <= 0.0):
            return math.inf, 0.0
        slope = np.polyfit(xs, np.log(vs), 1)[0]
        tail_rate = -float(slope)
        if not tail_rate > 0.0:
            raise DivergentTailError(f"fitted tail rate {tail_rate} is not positive")
    amp = math.exp(math.log(fmax) + tail_rate * grid.x_max)
    return float(tail_rate), amp


# -- quadrature -------------------------------------------------------

def _tail_integral(p: Profile, power: float, rate: float, lower: float) -> float:
    """``int_lower^inf x**power exp(-rate x) C exp(-a x) dx`` for ``lower >= x_max``."""
    if p.tail_amp == 0.0:
        return 0.0
    beta = p.tail_rate + rate
    if not beta > 0.0:
        raise DivergentTailError(
            f"weight rate {-rate} is not below the tail decay rate {p.tail_rate}"
        )
    u, w = gauss_laguerre(_LAGUERRE_ORDER)
    x = lower + u / beta
    # C*exp(-beta*lower) folded into logs to avoid overflow of the amplitude
    logc = math.log(p.tail_amp) - beta * lower
    vals = w * np.exp(power * np.log(x) + logc) / beta
    return fsum(vals)


def _low_integral(p: Profile, power: float, rate: float, upper: float) -> float:
    """Closed form below ``upper <= x_min`` using the power-law continuation."""
    s = 1.0 + power + p.low_exponent
    g0 = p.values[0]
    if g0 == 0.0:
        return 0.0
    if s <= 0.0:
        raise DivergenceError(f"integrand ~ x**{s - 1:.3g} is not integrable at 0")
    x0 = p.grid.x_min
    # exp(-rate x) ~ 1 below x_min for every rate used here
    return float(g0 * x0 ** (power + 1.0) * (upper / x0) ** s / s * math.exp(-rate * upper))


def _weighted_nodes(p: Profile, power: float, rate: float) -> np.ndarray:
    x = p.grid.nodes
    return p.values * x ** (1.0 + power) * np.exp(-rate * x)


def integrate(p: Profile, power: float = 0.0, rate: float = 0.0, lower: float = 0.0, upper: float = math.inf) -> float:
    """``int_lower^upper x**power * exp(-rate*x) * f(x) dx``.

    Raises :class:`DivergentTailError` when the weight grows at least as fast
    as the tail decays and :class:`DivergenceError` when the integrand is not
    integrable at 0.
    """
    g = p.grid
    if lower == 0.0 and upper == math.inf:
        body = fsum(g.weights * _weighted_nodes(p, power, rate))
        return body + _low_integral(p, power, rate, g.x_min) + _tail_integral(p, power, rate, g.x_max)
    return _window_integral(p, power, rate, lower, upper)


def _window_integral(p: Profile, power: float, rate: float, lower: float, upper: float) -> float:
    g = p.grid
    total = 0.0
    if lower < g.x_min:
        total += _low_integral(p, power, rate, min(upper, g.x_min)) - (
            _low_integral(p, power, rate, lower) if lower > 0.0 else 0.0
        )
    a = max(lower, g.x_min)
    b = min(upper, g.x_max)
    if b > a:
        t, w = panel_nodes(math.log(a), math.log(b), 2.0 * g.step, order=6)
        x = np.exp(t)
        vals = w * np.exp(p.log_eval(x) + (1.0 + power) * t - rate * x)
        vals = np.where(p.log_eval(x) <= LOG_FLOOR, 0.0, vals)
        total += fsum(vals)
    if upper > g.x_max:
        start = max(lower, g.x_max)
        total += _tail_integral(p, power, rate, start)
        if math.isfinite(upper):
            total -= _tail_integral(p, power, rate, upper)
    return total


def mass(p: Profile) -> float:
    return integrate(p, power=1.0)


def normalize_mass(p: Profile) -> Profile:
    m = mass(p)
    if not m > 0.0:
        raise ZeroProfileError("profile has zero mass")
    return p.scaled(1.0 / m)


def moment(p: Profile, gamma: float) -> float:
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    return integrate(p, power=gamma)


def negative_moment(p: Profile, alpha: float) -> float:
    """``int_0^1 x**(-alpha) f(x) dx``."""
    if not 0.0 <= alpha < 1.0:
        raise ValueError("alpha must lie in [0, 1)")
    return integrate(p, power=-alpha, upper=1.0)


def rescale(p: Profile, a: float) -> Profile:
    """``g(x) = a * f(a*x)`` on the same grid."""
    if not a > 0.0:
        raise ValueError("rescale factor must be positive")
    if a == 1.0:
        return p
    x = p.grid.nodes
    vals = a * p(a * x)
    if p.tail_amp == 0.0:
        return Profile(p.grid, vals, math.inf, 0.0)
    return Profile(p.grid, vals, p.tail_rate * a, p.tail_amp * a)


def fit_tail(p: Profile, window: tuple[float, float]) -> tuple[float, float, float]:
    """Least-squares fit of ``log f = log C - a x`` over nodes in ``window``.

    Returns ``(a, C, residual)`` with ``residual`` the RMS misfit in ``log f``.
    """
    lo, hi = window
    x = p.grid.nodes
    sel = (x >= lo) & (x <= hi)
    if np.count_nonzero(sel) < 2:
        raise ValueError("window holds fewer than two nodes")
    v = p.values[sel]
    if np.any(v <= 0.0):
        raise NonPositiveValuesError("fit window contains nonpositive values")
    xs = x[sel]
    ly = np.log(v)
    slope, icpt = np.polyfit(xs, ly, 1)
    resid = ly - (icpt + slope * xs)
    return float(-slope), float(math.exp(icpt)), float(math.sqrt(np.mean(resid**2)))


def l1_mass_distance(p: Profile, other) -> float:
    """``int x |f - g| dx`` with ``other`` a profile or a callable."""
    g = other if callable(other) else other
    x = p.grid.nodes
    diff = np.abs(p.values - np.asarray(g(x), dtype=float))
    body = fsum(p.grid.weights * x * x * diff)
    # beyond x_max both tails are ~e^{-x_max}; bound by their sum
    tail = 0.0
    if p.tail_amp > 0:
        tail += _tail_integral(p, 1.0, 0.0, p.grid.x_max)
    return body + tail


# -- CSV -----------------------------------------------------------

def profile_to_csv(p: Profile) -> str:
    buf = io.StringIO()
    buf.write("x,f\n")
    for x, v in zip(p.grid.nodes, p.values):
        buf.write(f"{x:.17g},{v:.17g}\n")
    buf.write(f"# tail_rate={p.tail_rate:.17g}\n")
    buf.write(f"# tail_amp={p.tail_amp:.17g}\n")
    return buf.getvalue()


def profile_from_csv(text: str) -> Profile:
    xs, fs = [], []
    meta = {}
    lines = text.splitlines()
    if not lines or lines[0].strip() != "x,f":
        raise ValueError("profile CSV must start with header 'x,f'")
    for line in lines[1:]:
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, val = line[1:].strip().partition("=")
            meta[key.strip()] = float(val)
            continue
        a, b = line.split(",")
        xs.append(float(a))
        fs.append(float(b))
    grid = Grid.from_nodes(xs)
    if "tail_rate" not in meta or "tail_amp" not in meta:
        return Profile.from_values(grid, fs)
    rate, amp = meta["tail_rate"], meta["tail_amp"]
    return Profile(grid, np.array(fs), rate if amp > 0 else math.inf, amp)


def write_csv(p: Profile, path) -> None:
    from ._io import atomic_write_text

    atomic_write_text(Path(path), profile_to_csv(p))


def read_csv(path) -> Profile:
    return profile_from_csv(Path(path).read_text())
