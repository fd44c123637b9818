"""Finite-volume integration of LWR traffic coupled to one flux-constraining AV.

Cells are indexed ``0..n-1``; interface ``k`` sits at ``x = k * dx`` so cell
``j`` lies between interfaces ``j`` and ``j + 1``. Every interface carries the
Godunov flux except the two faces of the cell holding the AV:

* the downstream face (the *AV interface*) is capped at
  ``min(F_alpha(ydot) + ydot * rho_up, f(rho_check(ydot)))``, the second term
  only while the constraint is active;
* the upstream face is capped at ``f(rho_hat(ydot))`` while the constraint is
  active.

The constraint is active when the classical Riemann solution between the AV
cell and its downstream neighbour, sampled along the AV path ``x/t = ydot``,
violates ``f(rho) - ydot * rho <= F_alpha(ydot)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from . import fundamental_diagram as fd
from .errors import CFLError, DomainError, IntegrityError
from .fundamental_diagram import FlowParams

ROUNDOFF = 1e-12
CONSTRAINT_TOL = 1e-10


@dataclass(frozen=True)
class Periodic:
    pass


@dataclass(frozen=True)
class Dirichlet:
    """Ghost cells held at ``rho_in`` (left) and ``rho_out`` (right)."""

    rho_in: float
    rho_out: float


Boundary = Union[Periodic, Dirichlet]


@dataclass(frozen=True)
class Grid:
    length: float
    n_cells: int
    boundary: Boundary = field(default_factory=Periodic)

    def __post_init__(self):
        if not (self.length > 0 and math.isfinite(self.length)):
            raise DomainError(f"grid length must be > 0, got {self.length}")
        if int(self.n_cells) != self.n_cells or self.n_cells < 4:
            raise DomainError(f"n_cells must be an integer >= 4, got {self.n_cells}")

    @property
    def dx(self) -> float:
        return self.length / self.n_cells

    @property
    def periodic(self) -> bool:
        return isinstance(self.boundary, Periodic)

    def centers(self) -> np.ndarray:
        return (np.arange(self.n_cells) + 0.5) * self.dx


@dataclass
class TrafficState:
    densities: np.ndarray
    time: float = 0.0

    def mass(self, grid: Grid) -> float:
        return float(np.sum(self.densities) * grid.dx)

    def copy(self) -> "TrafficState":
        return TrafficState(self.densities.copy(), self.time)


@dataclass
class AvState:
    """Position ``y``, commanded speed ``v_cmd`` and realized speed ``y_dot``.

    On a Dirichlet grid ``y >= length`` means the vehicle has left the road and
    no longer constrains the flow.
    """

    y: float
    v_cmd: float
    y_dot: float = 0.0


@dataclass
class InterfaceReport:
    """What happened at the AV interface during one step."""

    index: Optional[int]
    flux: float
    rho_up: float
    y_dot: float
    active: bool

    def residual(self, p: FlowParams) -> float:
        """``F - ydot * rho_up - F_alpha(ydot)``; must stay <= 0 up to round-off."""
        if self.index is None:
            return -math.inf
        return self.flux - self.y_dot * self.rho_up - fd.f_alpha_unchecked(self.y_dot, p)


def cfl_timestep(grid: Grid, p: FlowParams, cfl: float = 0.9) -> float:
    if not (0.0 < cfl <= 1.0):
        raise DomainError(f"cfl must lie in (0, 1], got {cfl}")
    # |f'(rho)| <= v_max for the Greenshields flux
    return cfl * grid.dx / p.v_max


def godunov_flux(rho_left, rho_right, p: FlowParams):
    """Exact Riemann flux at ``x = 0``: ``min(demand(left), supply(right))``."""
    left = fd._check_density(rho_left, p)
    right = fd._check_density(rho_right, p)
    return fd._out(_godunov(left, right, p))


def _godunov(left, right, p):
    return np.minimum(fd.demand_unchecked(left, p), fd.supply_unchecked(right, p))


def riemann_state(rho_left: float, rho_right: float, xi: float, p: FlowParams) -> float:
    """Entropy solution of the classical Riemann problem sampled at ``x / t = xi``."""
    if rho_left <= rho_right:
        shock_speed = p.v_max * (1.0 - (rho_left + rho_right) / p.rho_max)
        return rho_left if xi < shock_speed else rho_right
    if xi <= p.v_max * (1.0 - 2.0 * rho_left / p.rho_max):
        return rho_left
    if xi >= p.v_max * (1.0 - 2.0 * rho_right / p.rho_max):
        return rho_right
    return 0.5 * p.rho_max * (1.0 - xi / p.v_max)


def constraint_active(rho_left: float, rho_right: float, y_dot: float, p: FlowParams) -> bool:
    """True when the unconstrained solution overtakes the AV faster than ``F_alpha`` allows."""
    r = riemann_state(rho_left, rho_right, y_dot, p)
    return fd.flux_unchecked(r, p) - y_dot * r > fd.f_alpha_unchecked(y_dot, p)


def constrained_interface_flux(rho_left: float, rho_right: float, y_dot: float,
                               p: FlowParams) -> float:
    """Flux across the interface just downstream of the AV."""
    fd._check_density([rho_left, rho_right], p)
    fd._check_speed(y_dot, p)
    return _av_face_flux(rho_left, rho_right, y_dot, p)[0]


def _av_face_flux(rho_left, rho_right, y_dot, p):
    g = float(_godunov(rho_left, rho_right, p))
    cap = fd.f_alpha_unchecked(y_dot, p) + y_dot * rho_left
    active = constraint_active(rho_left, rho_right, y_dot, p)
    if active:
        cap = min(cap, fd.flux_unchecked(fd.rho_check_unchecked(y_dot, p), p))
    return min(g, cap), active


def av_cell(av: AvState, grid: Grid) -> Optional[int]:
    """Index of the cell holding the AV, or None once it has left an open road."""
    j = int(math.floor(av.y / grid.dx))
    if grid.periodic:
        return j % grid.n_cells
    if j >= grid.n_cells or av.y < 0:
        return None
    return j


def downstream_density(av: AvState, state: TrafficState, grid: Grid) -> float:
    """Density of the cell ahead of the AV's cell (``rho(t, y+)``)."""
    j = av_cell(av, grid)
    n = grid.n_cells
    if grid.periodic:
        return float(state.densities[(j + 1) % n])
    if j is None or j + 1 >= n:
        return float(grid.boundary.rho_out)
    return float(state.densities[j + 1])


def av_realized_speed(av: AvState, state: TrafficState, grid: Grid, p: FlowParams) -> float:
    """``min(V, v(rho_down))``: the AV cannot outrun the traffic ahead of it."""
    v_down = fd.velocity_unchecked(downstream_density(av, state, grid), p)
    return float(min(av.v_cmd, max(v_down, 0.0)))


def interface_fluxes(state: TrafficState, av: Optional[AvState], grid: Grid,
                     p: FlowParams) -> tuple[np.ndarray, InterfaceReport]:
    """All ``n + 1`` interface fluxes, with the AV caps applied.

    For periodic grids ``F[n]`` duplicates ``F[0]``.
    """
    rho = state.densities
    n = grid.n_cells
    if grid.periodic:
        ext = np.concatenate(([rho[-1]], rho, [rho[0]]))
    else:
        b = grid.boundary
        ext = np.concatenate(([b.rho_in], rho, [b.rho_out]))
    F = _godunov(ext[:-1], ext[1:], p)

    j = None if av is None else av_cell(av, grid)
    if j is None:
        return F, InterfaceReport(None, math.nan, math.nan, 0.0, False)

    y_dot = av_realized_speed(av, state, grid, p)
    face = j + 1
    flux, active = _av_face_flux(ext[face], ext[face + 1], y_dot, p)
    F[face] = flux
    if active:
        F[j] = min(F[j], fd.flux_unchecked(fd.rho_hat_unchecked(y_dot, p), p))
    if grid.periodic:
        if face == n:
            F[0] = F[n]
        if j == 0:
            F[n] = F[0]
    report = InterfaceReport(face % n if grid.periodic else face, float(flux),
                             float(ext[face]), y_dot, active)
    return F, report


def step(state: TrafficState, av: Optional[AvState], grid: Grid, p: FlowParams,
         dt: float) -> tuple[TrafficState, Optional[AvState]]:
    """Advance density and AV by one explicit step of length ``dt``."""
    dt_max = cfl_timestep(grid, p, 1.0)
    if not (0.0 < dt <= dt_max * (1.0 + 1e-12)):
        raise CFLError(f"dt={dt} violates the CFL bound {dt_max}")
    _check_state(state, p)
    new, _ = _step(state, av, grid, p, dt)
    return new


def _step(state, av, grid, p, dt):
    F, report = interface_fluxes(state, av, grid, p)
    if report.residual(p) > CONSTRAINT_TOL:
        raise IntegrityError(f"flux constraint violated at interface {report.index}: "
                             f"residual {report.residual(p):.3e}")

    rho = state.densities - (dt / grid.dx) * (F[1:] - F[:-1])
    rho = _repair(rho, p)
    new_state = TrafficState(rho, state.time + dt)

    new_av = None
    if av is not None:
        y_dot = report.y_dot if report.index is not None else av_realized_speed(av, state, grid, p)
        y = av.y + y_dot * dt
        if grid.periodic:
            y %= grid.length
        new_av = AvState(y, av.v_cmd, 0.0)
        new_av.y_dot = av_realized_speed(new_av, new_state, grid, p)
    return (new_state, new_av), report


def _check_state(state, p):
    rho = state.densities
    if not np.all(np.isfinite(rho)):
        raise IntegrityError("non-finite density in the input state")
    if rho.size and (rho.min() < 0.0 or rho.max() > p.rho_max):
        raise IntegrityError(f"input density outside [0, {p.rho_max}]")


def _repair(rho: np.ndarray, p: FlowParams) -> np.ndarray:
    if not np.all(np.isfinite(rho)):
        raise IntegrityError("non-finite density after step")
    lo, hi = rho.min(), rho.max()
    if lo < -ROUNDOFF or hi > p.rho_max + ROUNDOFF:
        raise IntegrityError(f"density left [0, {p.rho_max}]: min={lo:.3e}, max={hi:.3e}")
    if lo < 0.0 or hi > p.rho_max:
        rho = np.clip(rho, 0.0, p.rho_max)
    return rho


@dataclass
class Trace:
    """Snapshots of a simulation, one row per recorded time."""

    times: list = field(default_factory=list)
    densities: list = field(default_factory=list)
    y: list = field(default_factory=list)
    y_dot: list = field(default_factory=list)
    v_cmd: list = field(default_factory=list)

    def record(self, state: TrafficState, av: Optional[AvState]):
        self.times.append(state.time)
        self.densities.append(state.densities.copy())
        self.y.append(math.nan if av is None else av.y)
        self.y_dot.append(math.nan if av is None else av.y_dot)
        self.v_cmd.append(math.nan if av is None else av.v_cmd)

    def __len__(self):
        return len(self.times)

    def density_matrix(self) -> np.ndarray:
        return np.vstack(self.densities)


Schedule = Union[float, Callable[[float], float]]


def n_substeps(duration: float, grid: Grid, p: FlowParams, cfl: float = 0.9) -> int:
    """Number of equal steps covering ``duration`` without exceeding the CFL step."""
    return max(1, math.ceil(duration / cfl_timestep(grid, p, cfl) - 1e-9))


def run(state: TrafficState, av: Optional[AvState], grid: Grid, p: FlowParams,
        t_end: float, speed_schedule: Schedule = None, stride: int = 1,
        cfl: float = 0.9) -> Trace:
    """Integrate to ``t_end`` under an open-loop speed schedule.

    ``speed_schedule`` is a constant or a callable of time; it is sampled at the
    start of each step. Without one the AV keeps its current command. Snapshots are kept every ``stride`` steps, and the
    initial and final states are always kept.
    """
    if t_end < state.time:
        raise DomainError(f"t_end={t_end} precedes the state time {state.time}")
    if stride < 1:
        raise DomainError("stride must be >= 1")
    _check_state(state, p)
    if speed_schedule is None:
        speed_schedule = p.v_max if av is None else av.v_cmd
    schedule = speed_schedule if callable(speed_schedule) else (lambda t, v=float(speed_schedule): v)

    trace = Trace()
    trace.record(state, av)
    duration = t_end - state.time
    if duration == 0:
        return trace

    n = n_substeps(duration, grid, p, cfl)
    dt = duration / n
    t0 = state.time
    for k in range(n):
        if av is not None:
            v = float(np.clip(schedule(state.time), 0.0, p.v_max))
            av = AvState(av.y, v, av.y_dot)
        (state, av), _ = _step(state, av, grid, p, dt)
        state.time = t0 + (k + 1) * dt
        if (k + 1) % stride == 0 or k == n - 1:
            trace.record(state, av)
    return trace
