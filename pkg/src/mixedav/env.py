"""Episodic decision process around the PDE-ODE simulator.

The agent picks a normalized speed command in [0, 1] once per control
interval. The command is held over the interval while the solver advances in
CFL-limited substeps, and the reward is averaged over those substeps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import fundamental_diagram as fd
from .errors import DomainError, EpisodeDoneError
from .fundamental_diagram import FlowParams
from .scenario import RewardWeights, ScenarioConfig, build
from .solver import AvState, Grid, Trace, TrafficState, _step, n_substeps

__all__ = [
    "RewardWeights", "EnvStep", "TrafficEnv",
    "min_flux", "total_variation", "reward", "observe",
]


def min_flux(state: TrafficState, p: FlowParams) -> float:
    """Smallest cell flux on the road."""
    return float(np.min(fd.flux_unchecked(state.densities, p)))


def total_variation(values) -> float:
    """Sum of absolute successive differences, without wrap-around."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise DomainError("total variation of an empty sequence")
    return float(np.sum(np.abs(np.diff(values))))


def speed_variation(state: TrafficState, p: FlowParams) -> float:
    return total_variation(fd.velocity_unchecked(state.densities, p))


def reward(state: TrafficState, av: AvState, weights: RewardWeights, p: FlowParams) -> float:
    """``w1 * min_flux + w2 * ego_speed - w3 * TV(speed field)``.

    The ego term uses the realized speed ``av.y_dot``.
    """
    return (weights.w1 * min_flux(state, p)
            + weights.w2 * av.y_dot
            - weights.w3 * speed_variation(state, p))


def observe(state: TrafficState, av: AvState, grid: Grid, p: FlowParams, n_obs: int) -> np.ndarray:
    """Pooled density bins, then AV position and realized speed, all scaled to [0, 1]."""
    pooled = state.densities.reshape(n_obs, -1).mean(axis=1) / p.rho_max
    y = min(av.y / grid.length, 1.0)
    return np.concatenate((pooled, [y, av.y_dot / p.v_max]))


@dataclass
class EnvStep:
    observation: np.ndarray
    reward: float
    done: bool
    info: dict = field(default_factory=dict)


class TrafficEnv:
    """One AV on one road; ``reset`` then ``step`` until ``done``."""

    def __init__(self, config: ScenarioConfig, record: bool = False):
        """``record=True`` keeps every solver substep in ``self.trace``."""
        self.config = config.validate()
        self.record = record
        self.state = self.av = self.grid = self.p = None
        self._k = 0
        self.reset()

    @property
    def obs_dim(self) -> int:
        return self.config.n_obs + 2

    @property
    def episode_length(self) -> int:
        return math.ceil(self.config.horizon / self.config.dt_ctrl - 1e-9)

    @property
    def done(self) -> bool:
        return self._k >= self.episode_length

    def reset(self, config: ScenarioConfig | None = None, seed: int | None = None) -> np.ndarray:
        if config is not None:
            self.config = config.validate()
        cfg = self.config
        # the world is fully determined by the config; the seed is kept for bookkeeping
        self.seed = cfg.seed if seed is None else seed
        self.state, self.av, self.grid, self.p = build(cfg)
        self._k = 0
        self._substeps = n_substeps(cfg.dt_ctrl, self.grid, self.p, cfg.cfl)
        self.trace = Trace()
        self.commands = []
        if self.record:
            self.trace.record(self.state, self.av)
        return self.observation()

    def observation(self) -> np.ndarray:
        return observe(self.state, self.av, self.grid, self.p, self.config.n_obs)

    def _interval(self) -> float:
        cfg = self.config
        t_next = min((self._k + 1) * cfg.dt_ctrl, cfg.horizon)
        return t_next - self._k * cfg.dt_ctrl

    def step(self, action: float) -> EnvStep:
        if self.done:
            raise EpisodeDoneError("episode is finished; call reset()")
        action = float(action)
        if math.isnan(action):
            raise DomainError("action is NaN")
        a = min(max(action, 0.0), 1.0)
        p, grid, w = self.p, self.grid, self.config.reward

        duration = self._interval()
        n = self._substeps if duration == self.config.dt_ctrl else n_substeps(
            duration, grid, p, self.config.cfl)
        dt = duration / n
        self.av = AvState(self.av.y, a * p.v_max, self.av.y_dot)
        t0 = self.state.time

        total = phi = tv = ego = 0.0
        n_active = 0
        residual = -math.inf
        for i in range(n):
            (self.state, self.av), report = _step(self.state, self.av, grid, p, dt)
            self.state.time = t0 + (i + 1) * dt
            f_min = min_flux(self.state, p)
            v_tv = speed_variation(self.state, p)
            total += w.w1 * f_min + w.w2 * self.av.y_dot - w.w3 * v_tv
            phi += f_min
            tv += v_tv
            ego += self.av.y_dot
            residual = max(residual, report.residual(p))
            n_active += bool(report.active)
            if self.record:
                self.trace.record(self.state, self.av)
        self.commands.append(self.av.v_cmd)
        self._k += 1
        info = {"min_flux": phi / n, "tv": tv / n, "ego_speed": ego / n,
                "v_cmd": self.av.v_cmd, "substeps": n, "constraint_residual": residual,
                "active_fraction": n_active / n}
        return EnvStep(self.observation(), total / n, self.done, info)


class QuadraticBandit:
    """One state, one step per episode, reward ``-(a - target)**2``.

    The action is not clamped so the optimum is reachable from either side.
    """

    obs_dim = 1

    def __init__(self, target: float = 0.7):
        self.target = target
        self.done = True

    def reset(self) -> np.ndarray:
        self.done = False
        return np.ones(1)

    def step(self, action: float) -> EnvStep:
        if self.done:
            raise EpisodeDoneError("episode is finished; call reset()")
        self.done = True
        return EnvStep(np.ones(1), -(float(action) - self.target) ** 2, True, {})
