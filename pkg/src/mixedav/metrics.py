"""Evaluation metrics, time-space exports and learning-curve summaries."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import fundamental_diagram as fd
from .env import TrafficEnv, total_variation
from .errors import DomainError
from .fundamental_diagram import FlowParams
from .ppo import GaussianPolicy, deterministic_action, sample_action
from .scenario import ScenarioConfig
from .solver import Trace


@dataclass
class EpisodeMetrics:
    """Time averages over every solver step of an episode.

    ``avg_speed`` is the time-space mean of the cell speeds; ``vehicle_speed``
    weights each cell by its density, i.e. mean flux over mean density.
    """

    avg_flux: float
    ego_speed: float
    avg_speed: float
    avg_deviation: float
    min_flux_over_time: float
    vehicle_speed: float = math.nan
    avg_tv: float = math.nan
    command_tv: float = math.nan
    episode_return: float = math.nan

    @classmethod
    def names(cls):
        return [f.name for f in fields(cls)]


def metrics_from_trace(trace: Trace, p: FlowParams, skip_initial: bool = True,
                       commands=None, episode_return: float = math.nan) -> EpisodeMetrics:
    """Metrics of the snapshots in ``trace``; the initial one is skipped by default."""
    rho = trace.density_matrix()
    y_dot = np.asarray(trace.y_dot, dtype=float)
    if skip_initial and len(trace) > 1:
        rho, y_dot = rho[1:], y_dot[1:]
    f = fd.flux_unchecked(rho, p)
    v = fd.velocity_unchecked(rho, p)
    total_rho = rho.sum()
    return EpisodeMetrics(
        avg_flux=float(f.mean()),
        ego_speed=float(np.nanmean(y_dot)) if np.any(np.isfinite(y_dot)) else math.nan,
        avg_speed=float(v.mean()),
        avg_deviation=float(v.std(axis=1).mean()),
        min_flux_over_time=float(f.min(axis=1).min()),
        vehicle_speed=float(f.sum() / total_rho) if total_rho > 0 else p.v_max,
        avg_tv=float(np.abs(np.diff(v, axis=1)).sum(axis=1).mean()),
        command_tv=total_variation(commands) if commands is not None and len(commands) else math.nan,
        episode_return=episode_return,
    )


# -- controllers -------------------------------------------------------------------

Controller = Callable[[np.ndarray, np.random.Generator], float]


def no_control() -> Controller:
    """Always command full speed: the AV rides the flow and never binds."""
    return lambda obs, rng: 1.0


def policy_controller(policy: GaussianPolicy, mode: str = "deterministic") -> Controller:
    if mode == "deterministic":
        return lambda obs, rng: deterministic_action(policy, obs)
    if mode == "stochastic":
        return lambda obs, rng: sample_action(policy, obs, rng)[0]
    raise DomainError(f"mode must be 'stochastic' or 'deterministic', got {mode!r}")


def eval_rng(seed: int, episode: int):
    return np.random.default_rng(np.random.SeedSequence([seed, 0xE7A1, episode]))


def run_episode(config: ScenarioConfig, controller: Controller, rng) -> tuple[EpisodeMetrics, TrafficEnv]:
    env = TrafficEnv(config, record=True)
    obs = env.reset()
    total = 0.0
    while not env.done:
        out = env.step(controller(obs, rng))
        total += out.reward
        obs = out.observation
    m = metrics_from_trace(env.trace, env.p, commands=env.commands, episode_return=total)
    return m, env


@dataclass
class MetricsSummary:
    mean: EpisodeMetrics
    std: EpisodeMetrics
    episodes: list


def evaluate(policy: Optional[GaussianPolicy], config: ScenarioConfig, n_episodes: int = 1,
             mode: str = "deterministic", seed: int = 0) -> MetricsSummary:
    """Mean and spread of the metrics over ``n_episodes``.

    ``policy=None`` evaluates the no-control baseline.
    """
    if n_episodes < 1:
        raise DomainError("n_episodes must be >= 1")
    controller = no_control() if policy is None else policy_controller(policy, mode)
    episodes = [run_episode(config, controller, eval_rng(seed, e))[0] for e in range(n_episodes)]
    table = np.array([[getattr(m, k) for k in EpisodeMetrics.names()] for m in episodes])
    mean = EpisodeMetrics(*table.mean(axis=0))
    std = EpisodeMetrics(*table.std(axis=0))
    return MetricsSummary(mean, std, episodes)


# -- exports ---------------------------------------------------------------------------

COMPANION = ("t", "y", "y_dot", "v_cmd")


def _fmt(x: float) -> str:
    return format(float(x), ".9g")


def export_time_space(trace: Trace, path) -> Path:
    """Delimited text: one row per snapshot, companion columns then cell densities."""
    if len(trace) == 0:
        raise DomainError("cannot export an empty trace")
    path = Path(path)
    n = len(trace.densities[0])
    header = list(COMPANION) + [f"rho_{j}" for j in range(n)]
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for k in range(len(trace)):
                row = [trace.times[k], trace.y[k], trace.y_dot[k], trace.v_cmd[k]]
                w.writerow([_fmt(x) for x in row] + [_fmt(x) for x in trace.densities[k]])
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write time-space export to {path}: {exc.strerror}") from exc
    return path


def read_time_space(path) -> tuple[dict, np.ndarray]:
    """Companion columns as a dict of arrays, and the density matrix."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=float)
    k = len(COMPANION)
    if tuple(header[:k]) != COMPANION:
        raise DomainError(f"{path}: unexpected header {header[:k]}")
    return {name: body[:, i] for i, name in enumerate(COMPANION)}, body[:, k:]


def learning_curve_summary(curve, window: int = 5) -> tuple[float, float, float]:
    """(first-window mean, best moving-window mean, relative improvement)."""
    curve = np.asarray(curve, dtype=float)
    if curve.size < 10:
        raise DomainError(f"learning curve needs at least 10 points, got {curve.size}")
    smooth = np.convolve(curve, np.ones(window) / window, mode="valid")
    first, best = float(smooth[0]), float(smooth.max())
    if best == first:
        return first, best, 0.0
    return first, best, (best - first) / abs(first)


# -- reports ---------------------------------------------------------------------------

TABLE_COLUMNS = (("avg_flux", "Avg. Flux"), ("ego_speed", "Ego Speed"),
                 ("avg_speed", "Avg. Speed"), ("avg_deviation", "Avg. Deviation"))


def format_keyvalue(m: EpisodeMetrics, prefix: str = "") -> str:
    return "".join(f"{prefix}{k}={_fmt(v)}\n" for k, v in asdict(m).items())


def parse_keyvalue(text: str) -> dict:
    out = {}
    for line in text.splitlines():
        if line.strip() and "=" in line:
            k, v = line.split("=", 1)
            out[k.strip()] = float(v)
    return out


def format_table(rows: list[tuple[str, EpisodeMetrics]], label: str = "[w1, w2, w3]") -> str:
    """Aligned text table with one row per labelled metrics set."""
    head = [label] + [title for _, title in TABLE_COLUMNS]
    body = [[name] + [f"{getattr(m, key):.4f}" for key, _ in TABLE_COLUMNS] for name, m in rows]
    widths = [max(len(r[i]) for r in [head] + body) for i in range(len(head))]
    lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
             for r in [head] + body]
    rule = "-" * len(lines[0])
    return "\n".join([lines[0], rule] + lines[1:]) + "\n"
