"""Time-dependent coagulation equation in conservative flux form.

With ``J[phi](xi)`` the mass flux through size ``xi`` (the same double
integral that defines the profile map), the equation reads
``d/dt (xi phi) = -d/dxi J[phi]``. Cells are the log-cells around the grid
nodes and the fluxes at the two outer edges are zero, so the discrete mass
``sum xi phi dxi`` telescopes and is conserved to rounding.

Time stepping runs in scaled variables ``x = xi/(1+t)``,
``tau = log(1+t)``, ``phi = (1+t)**-2 g(x)``, where the equation becomes
``d/dtau (x g) = d/dx (x**2 g - J[g])``. The grid moves with ``1+t``, so
sizes that grow like ``t`` stay resolved and a self-similar solution is a
steady state.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from . import _flux
from ._numerics import fsum, safe_log
from .errors import CoagError, DivergentTailError
from .kernel import CoagulationKernel
from .profile import Grid, Profile

__all__ = [
    "State",
    "Trajectory",
    "StepCollapseError",
    "DYNAMICS_GRID",
    "cell_widths",
    "discrete_mass",
    "collision_operator",
    "evolve",
    "scaled_profile",
    "initial_state",
]

DYNAMICS_GRID = Grid(1e-5, 60.0, 256)
MAX_RELATIVE_CHANGE = 0.01
CFL = 0.5
MIN_STEP = 1e-12
# exponents of the power law continuing a state below the grid
LOW_EXPONENT_RANGE = (-1.0, 4.0)
# relative change is measured against at least this fraction of the largest
# cell; far-tail cells grow by orders of magnitude without affecting accuracy
_SIGNIFICANT = 1e-6


class StepCollapseError(CoagError, RuntimeError):
    """The adaptive step fell below the minimum."""


@dataclass(frozen=True, eq=False)
class State:
    """Density ``phi`` on a size grid at time ``time``."""

    grid: Grid
    phi: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        v = np.array(self.phi, dtype=float)
        if v.shape != (self.grid.count,):
            raise ValueError("phi does not match the grid")
        if np.any(~np.isfinite(v)) or np.any(v < 0.0):
            raise ValueError("phi must be finite and >= 0")
        if not self.time >= 0.0:
            raise ValueError("time must be >= 0")
        v.setflags(write=False)
        object.__setattr__(self, "phi", v)

    @property
    def mass(self) -> float:
        return discrete_mass(self.grid, self.phi)

    def to_csv(self) -> str:
        lines = ["xi,phi"]
        lines += [f"{a:.17g},{b:.17g}" for a, b in zip(self.grid.nodes, self.phi)]
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class Trajectory:
    states: tuple
    times: tuple
    masses: tuple
    steps: int
    clip_events: int
    rejected_steps: int = 0
    history: tuple = field(default=(), repr=False)

    @property
    def final(self) -> State:
        return self.states[-1]

    @property
    def mass_drift(self) -> float:
        m0 = self.masses[0]
        return max(abs(m / m0 - 1.0) for m in self.masses) if m0 else 0.0


def _edges(grid: Grid) -> np.ndarray:
    half = 0.5 * grid.step
    t = np.concatenate([[grid.log_nodes[0] - half], grid.log_nodes + half])
    return np.exp(t)


def cell_widths(grid: Grid) -> np.ndarray:
    """Lengths of the log-cells around each node."""
    return np.diff(_edges(grid))


def discrete_mass(grid: Grid, phi) -> float:
    return fsum(grid.nodes * np.asarray(phi, dtype=float) * cell_widths(grid))


def _passive_first(values: np.ndarray, step: float) -> np.ndarray:
    """Replace the first value by the power law through the next two.

    The flux near ``x_min`` integrates the power-law continuation below the
    grid, whose exponent would otherwise come from the first two values; the
    first cell then feeds back on itself with a rate ~ 1/step that explicit
    stepping cannot follow. Seen through this substitution the first cell
    only receives mass. The exponent is held in ``LOW_EXPONENT_RANGE`` so
    arbitrary states cannot imply a divergent sub-grid continuation.
    """
    out = np.array(values, dtype=float)
    if out[1] > 0.0 and out[2] > 0.0:
        power = np.clip((math.log(out[2]) - math.log(out[1])) / step, *LOW_EXPONENT_RANGE)
        out[0] = out[1] * math.exp(-power * step)
    else:
        out[0] = out[1]
    return out


def _edge_flux(k: CoagulationKernel, grid: Grid, values: np.ndarray, mapper) -> np.ndarray:
    """Coagulation flux at every cell edge, zero at the two outer edges."""
    out = np.zeros(grid.count + 1)
    if not np.any(values > 0.0):
        return out
    v = _passive_first(values, grid.step)
    try:
        p = Profile.from_values(grid, v)
    except DivergentTailError:
        # no decaying tail to continue: the density stops at the grid end
        p = Profile(grid, v, 1.0, 0.0)
    out[1:-1] = _flux.flux(k, p, _edges(grid)[1:-1], mapper=mapper)
    return out


def collision_operator(
    k: CoagulationKernel,
    s: State,
    mapper: Callable[[Callable, Iterable], Iterable] = map,
) -> np.ndarray:
    """``d phi / dt`` at each node: ``(J_left - J_right) / (xi dxi)``.

    ``sum(xi * rate * cell_widths)`` vanishes up to rounding for any state.
    """
    flux = _edge_flux(k, s.grid, s.phi, mapper)
    return (flux[:-1] - flux[1:]) / (s.grid.nodes * cell_widths(s.grid))


def _upwind_edges(grid: Grid, g: np.ndarray) -> np.ndarray:
    """``g`` at interior edges from the larger-size side.

    Dilation in scaled variables carries information from large to small
    sizes; quadratic interpolation of ``log g`` through nodes ``i, i+1,
    i+2`` (linear at the last edge) keeps the explicit scheme stable. The
    first edge is extrapolated from nodes 1 and 2: the first cell has no
    outflow on its left, and any weight on its own value would feed back.
    """
    lg = safe_log(g)
    e = np.empty(grid.count - 1)
    e[:-1] = 0.375 * lg[:-2] + 0.75 * lg[1:-1] - 0.125 * lg[2:]
    e[-1] = 0.5 * (lg[-2] + lg[-1])
    low = np.minimum(lg[:-1], lg[1:]) <= -700.0
    e = np.where(low, 0.5 * (lg[:-1] + lg[1:]), e)
    e[0] = lg[1] if min(lg[1], lg[2]) <= -700.0 else 1.5 * lg[1] - 0.5 * lg[2]
    return np.exp(e)


def _scaled_rate(k, grid: Grid, cells: np.ndarray, mapper) -> np.ndarray:
    """``d(cell mass)/dtau`` in scaled variables."""
    x = grid.nodes
    g = np.maximum(cells, 0.0) / (x * cell_widths(grid))
    flux = _edge_flux(k, grid, g, mapper)
    edges = _edges(grid)
    total = -flux
    total[1:-1] += edges[1:-1] ** 2 * _upwind_edges(grid, g)
    return total[1:] - total[:-1]


def _clip(cells: np.ndarray) -> tuple[np.ndarray, bool]:
    """Zero negative cells and take their mass from the positive ones."""
    neg = cells < 0.0
    if not np.any(neg):
        return cells, False
    deficit = -cells[neg].sum()
    out = np.where(neg, 0.0, cells)
    out *= 1.0 - deficit / out.sum()
    return out, True


def evolve(
    k: CoagulationKernel,
    s0: State,
    t_end: float,
    max_change: float = MAX_RELATIVE_CHANGE,
    snapshots: Iterable[float] = (),
    mapper: Callable[[Callable, Iterable], Iterable] = map,
    callback: Callable[[float, float], None] | None = None,
) -> Trajectory:
    """Integrate from ``s0.time`` to ``t_end`` with Heun's method.

    Each step in ``tau`` is limited by ``max_change`` relative change of any
    significant cell and by ``CFL`` cells of dilation; a step that would
    produce a negative cell is halved. Returned states are at ``s0.time``,
    every requested snapshot time and ``t_end``. ``callback(t, dtau)``
    runs after each accepted step.
    """
    if not t_end >= s0.time:
        raise ValueError("t_end must not precede the initial time")
    if t_end == s0.time:
        return Trajectory((s0,), (s0.time,), (s0.mass,), 0, 0)
    targets = sorted({float(v) for v in snapshots if s0.time < v < t_end} | {float(t_end)})
    s_scale = 1.0 + s0.time
    xgrid = Grid(s0.grid.x_min / s_scale, s0.grid.x_max / s_scale, s0.grid.count)
    widths = cell_widths(xgrid)
    cells = s0.phi * s_scale**2 * xgrid.nodes * widths
    tau = math.log(s_scale)
    states = [s0]
    times = [s0.time]
    masses = [fsum(cells)]
    steps = clips = rejected = 0
    history = []
    dtau = CFL * xgrid.step
    for target in targets:
        tau_target = math.log1p(target)
        while tau_target - tau > 1e-14 * max(1.0, tau_target):
            r0 = _scaled_rate(k, xgrid, cells, mapper)
            floor = _SIGNIFICANT * cells.max()
            sig = cells > floor
            rel = float(np.max(np.abs(r0) / np.maximum(cells, floor))) if floor > 0.0 else 0.0
            limit = CFL * xgrid.step
            if rel > 0.0:
                limit = min(limit, max_change / rel)
            dtau = min(limit, tau_target - tau)
            while True:
                if dtau < MIN_STEP:
                    raise StepCollapseError(f"step {dtau:.3g} collapsed at tau={tau:.6g}")
                pred = cells + dtau * r0
                if np.any(pred[sig] < 0.0):
                    dtau *= 0.5
                    rejected += 1
                    continue
                pred, c1 = _clip(pred)
                r1 = _scaled_rate(k, xgrid, pred, mapper)
                new = cells + 0.5 * dtau * (r0 + r1)
                if np.any(new[sig] < 0.0):
                    dtau *= 0.5
                    rejected += 1
                    continue
                new, c2 = _clip(new)
                clips += int(c1) + int(c2)
                break
            cells = new
            tau += dtau
            steps += 1
            history.append(dtau)
            if callback is not None:
                callback(math.expm1(tau), dtau)
        tau = tau_target
        scale = 1.0 + target
        grid = Grid(xgrid.x_min * scale, xgrid.x_max * scale, xgrid.count)
        phi = cells / (xgrid.nodes * widths) / scale**2
        states.append(State(grid, np.maximum(phi, 0.0), target))
        times.append(target)
        masses.append(fsum(cells))
    return Trajectory(tuple(states), tuple(times), tuple(masses), steps, clips, rejected, tuple(history))


def initial_state(func: Callable[[np.ndarray], np.ndarray] | None = None, grid: Grid | None = None) -> State:
    """State at ``t = 0``; the default density is ``e^{-xi}``."""
    grid = grid or DYNAMICS_GRID
    func = func or (lambda x: np.exp(-x))
    return State(grid, func(grid.nodes), 0.0)


def scaled_profile(s: State, grid: Grid | None = None) -> Profile:
    """``x -> t**2 phi(x t, t)`` interpolated onto ``grid`` (default grid)."""
    if not s.time > 0.0:
        raise ValueError("scaled_profile needs t > 0")
    t = s.time
    p = Profile.from_values(s.grid, s.phi)
    return Profile.from_function(lambda x: t * t * p(x * t), grid or Grid())
