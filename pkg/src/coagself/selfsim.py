"""Self-similar profiles as fixed points of the integrated profile equation.

The map is ``T[f](x) = x**-2 int_0^x dy int_{x-y}^inf K(y, z) y f(y) f(z) dz``
and a profile solves ``T[f] = f`` with unit mass.

``T`` commutes with dilations up to a factor (``T[a**2 f(a.)] = a * a**2 f(a.)``),
keeps the small-size power and the tail rate of its input, so mass-normalised
substitution with ``T`` drifts. The solver instead iterates the strong form
``x h' = (A[f] - 2) h - B[f]`` (loss rate ``A``, birth term ``B``), integrated
backwards from beyond the grid; with the mass normalisation its only fixed
points are profiles. ``T`` is still used for the residual.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable

import numpy as np

from . import _flux
from ._numerics import gauss_legendre
from .errors import CoagError, ZeroProfileError
from .kernel import CoagulationKernel
from .profile import Grid, Profile, normalize_mass

__all__ = [
    "SolveSettings",
    "SolveResult",
    "apply_map",
    "solve",
    "residual",
    "builtin_seed",
    "BUILTIN_SEEDS",
]

RESIDUAL_WINDOW = (1e-3, 40.0)
_CELL_ORDER = 8


@dataclass(frozen=True)
class SolveSettings:
    """Parameters of the damped fixed-point iteration.

    Attributes
    ----------
    omega : float
        Relaxation weight of the new iterate, in ``(0, 1]``.
    max_iterations : int
    tolerance : float
        Bound on the weighted sup change ``max |f_{n+1} - f_n| x (1+x)**2``.
    refinement : int
        Halves the outer quadrature panels this many times.
    """

    omega: float = 0.5
    max_iterations: int = 200
    tolerance: float = 1e-10
    refinement: int = 0

    def __post_init__(self):
        if not 0.0 < self.omega <= 1.0:
            raise ValueError("omega must lie in (0, 1]")
        if not self.tolerance > 0.0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.refinement < 0:
            raise ValueError("refinement must be >= 0")


@dataclass(frozen=True)
class SolveResult:
    profile: Profile
    residual: float
    iterations: int
    converged: bool
    history: tuple = field(default=(), repr=False)
    message: str = ""


def _weighted_change(grid: Grid, a: np.ndarray, b: np.ndarray) -> float:
    x = grid.nodes
    return float(np.max(np.abs(a - b) * x * (1.0 + x) ** 2))


def apply_map(
    k: CoagulationKernel,
    p: Profile,
    refinement: int = 0,
    mapper: Callable[[Callable, Iterable], Iterable] = map,
) -> Profile:
    """``T[f]`` at every node of ``p.grid``, with a refitted exponential tail."""
    x = p.grid.nodes
    vals = _flux.flux(k, p, x, mapper=mapper, refinement=refinement) / (x * x)
    return Profile.from_values(p.grid, np.maximum(vals, 0.0))


@lru_cache(maxsize=None)
def _cell_rule(order: int = _CELL_ORDER):
    """Gauss points on ``[0, 1]``, weights, and partial-integral matrix.

    ``part[q, j]`` integrates the Lagrange basis through the points ``j``
    from 0 up to point ``q``, so ``part @ v`` gives running integrals of a
    cubic sampled at the points.
    """
    gx, gw = gauss_legendre(order)
    c = 0.5 * (gx + 1.0)
    w = 0.5 * gw
    part = np.zeros((order, order))
    for j in range(order):
        others = np.delete(c, j)
        poly = np.poly1d(np.poly(others) / np.prod(c[j] - others)).integ()
        part[:, j] = poly(c) - poly(0.0)
    return c, w, part


def strong_form_map(k: CoagulationKernel, p: Profile, refinement: int = 0, mapper=map) -> Profile:
    """Solve ``x h' = (A - 2) h - B`` backwards from ``TAIL_EXTENT * x_max``.

    ``B`` is the birth term and ``A`` the loss rate of ``p``; a solution of
    the profile equation is a fixed point. Unlike ``T`` this map fixes the
    behaviour near 0 (it sets ``h(0)`` from the whole profile for the
    constant kernel and produces ``exp(-c x**-alpha)`` decay when small
    particles are lost fast) instead of carrying over that of ``p``.
    """
    g = p.grid
    h = g.step
    extra = int(math.ceil(math.log(_flux.TAIL_EXTENT) / h))
    t = g.log_nodes[0] + h * np.arange(g.count + extra)
    c, w, part = _cell_rule()
    tau = t[:-1, None] + h * c[None, :]

    table = _flux.inner_table(k, p)
    rate = np.exp(table.log_loss_rate(tau)) - 2.0
    birth = _flux.gain(k, p, np.exp(tau).ravel(), mapper=mapper, refinement=refinement).reshape(tau.shape)

    # exponent of the integrating factor from the cell start to each point
    rise = h * (rate @ part.T)
    cell_rise = h * (rate @ w)
    contrib = h * ((birth * np.exp(-rise)) @ w)
    decay = np.exp(-cell_rise)

    out = np.zeros(t.size)
    for i in range(t.size - 2, -1, -1):
        out[i] = out[i + 1] * decay[i] + contrib[i]
    return Profile.from_values(g, np.maximum(out[: g.count], 0.0))


def substitution_step(k: CoagulationKernel, p: Profile, omega: float, refinement: int = 0, mapper=map) -> Profile:
    """``normalize_mass((1 - omega) p + omega S[p])`` for the strong-form map ``S``."""
    s = strong_form_map(k, p, refinement, mapper)
    mixed = (1.0 - omega) * p.values + omega * s.values
    return normalize_mass(Profile.from_values(p.grid, mixed))


def residual(k: CoagulationKernel, p: Profile, refinement: int = 0, mapper=map) -> float:
    """Largest relative defect ``|f - T[f]| / f`` over nodes in ``[1e-3, 40]``."""
    x = p.grid.nodes
    sel = (x >= RESIDUAL_WINDOW[0]) & (x <= RESIDUAL_WINDOW[1])
    xs = x[sel]
    t = _flux.flux(k, p, xs, mapper=mapper, refinement=refinement) / (xs * xs)
    f = p.values[sel]
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.abs(f - t) / f
    rel = np.where(f > 0.0, rel, np.where(t > 0.0, np.inf, 0.0))
    return float(np.max(rel)) if rel.size else 0.0


def solve(
    k: CoagulationKernel,
    seed: Profile,
    settings: SolveSettings | None = None,
    mapper=map,
    callback: Callable[[int, float], None] | None = None,
) -> SolveResult:
    """Damped, mass-normalised substitution with the strong-form map.

    The weighted change barely sees the far tail, so once it is below the
    tolerance the defect of the integrated equation is also required to be
    at most ``10 * tolerance`` before the run counts as converged.
    Non-convergence is reported through ``converged=False``, never raised.
    ``callback(iteration, change)`` is called after every step.
    """
    s = settings or SolveSettings()
    if seed.values.max(initial=0.0) <= 0.0:
        raise ZeroProfileError("seed must be positive somewhere")
    p = normalize_mass(seed)
    history = []
    converged = False
    message = "maximum iterations reached"
    res = math.inf
    it = 0
    for it in range(1, s.max_iterations + 1):
        try:
            nxt = substitution_step(k, p, s.omega, s.refinement, mapper)
        except (CoagError, FloatingPointError, ValueError) as exc:
            message = f"iteration {it} failed: {exc}"
            it -= 1
            break
        change = _weighted_change(p.grid, nxt.values, p.values)
        history.append(change)
        if callback is not None:
            callback(it, change)
        p = nxt
        if not math.isfinite(change):
            message = "iteration diverged"
            break
        if change <= s.tolerance:
            res = residual(k, p, s.refinement, mapper)
            if res <= 10.0 * s.tolerance:
                converged = True
                message = "converged"
                break
    if not math.isfinite(res) or not converged:
        res = residual(k, p, s.refinement, mapper)
    return SolveResult(p, res, it, converged, tuple(history), message)


def _exp(x):
    return np.exp(-x)


def _gamma2(x):
    return 4.0 * x * np.exp(-2.0 * x)


def _halfnormal(x):
    return np.exp(-0.5 * x * x)


def _wide(x):
    return np.exp(-0.5 * x)


BUILTIN_SEEDS = {
    "exp": _exp,
    "gamma2": _gamma2,
    "halfnormal": _halfnormal,
    "wide": _wide,
}


def builtin_seed(name: str, grid: Grid | None = None) -> Profile:
    """Unit-mass builtin seed: ``exp``, ``gamma2``, ``halfnormal`` or ``wide``."""
    try:
        func = BUILTIN_SEEDS[name]
    except KeyError:
        raise ValueError(f"unknown builtin seed {name!r}; choose from {sorted(BUILTIN_SEEDS)}") from None
    return normalize_mass(Profile.from_function(func, grid or Grid()))
