"""Declarative scenario configuration and construction of the initial world."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Union

import numpy as np

from .errors import ConfigError, DomainError
from .fundamental_diagram import FlowParams
from .solver import AvState, Dirichlet, Grid, Periodic, TrafficState, av_realized_speed


@dataclass(frozen=True)
class Uniform:
    rho0: float


@dataclass(frozen=True)
class SquareWaveTrain:
    """``n_waves`` low/high pairs of equal-width plateaus, starting low at x = 0."""

    rho_low: float
    rho_high: float
    n_waves: int


@dataclass(frozen=True)
class Riemann:
    rho_left: float
    rho_right: float
    x_split: float


@dataclass(frozen=True)
class Profile:
    values: tuple


InitialCondition = Union[Uniform, SquareWaveTrain, Riemann, Profile]

_IC_TYPES = {
    "uniform": Uniform,
    "square_wave_train": SquareWaveTrain,
    "riemann": Riemann,
    "profile": Profile,
}


@dataclass(frozen=True)
class GridSpec:
    length: float = 1.0
    n_cells: int = 400
    boundary: str = "periodic"
    rho_in: float = 0.0
    rho_out: float = 0.0


@dataclass(frozen=True)
class RewardWeights:
    w1: float = 0.2
    w2: float = 0.3
    w3: float = 0.5

    def __post_init__(self):
        ws = (self.w1, self.w2, self.w3)
        if any(not math.isfinite(w) or w < 0 for w in ws) or sum(ws) <= 0:
            raise DomainError(f"reward weights must be non-negative with a positive sum, got {ws}")

    def as_tuple(self):
        return (self.w1, self.w2, self.w3)


@dataclass(frozen=True)
class ScenarioConfig:
    grid: GridSpec = field(default_factory=GridSpec)
    flow: FlowParams = field(default_factory=FlowParams)
    initial: InitialCondition = field(
        default_factory=lambda: SquareWaveTrain(0.15, 0.85, 3))
    y0: float = 0.5
    horizon: float = 2.0
    dt_ctrl: float = 0.02
    cfl: float = 0.9
    seed: int = 0
    reward: RewardWeights = field(default_factory=RewardWeights)
    n_obs: int = 40

    def validate(self):
        raise_problems(validation_problems(self))
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        ic = self.initial
        d["initial"] = {"type": _ic_name(ic), **asdict(ic)}
        if isinstance(ic, Profile):
            d["initial"]["values"] = list(ic.values)
        return d


def _ic_name(ic) -> str:
    for name, cls in _IC_TYPES.items():
        if isinstance(ic, cls):
            return name
    raise TypeError(f"unknown initial condition {ic!r}")


def validation_problems(cfg: ScenarioConfig) -> list[str]:
    """Every violated constraint of ``cfg`` as a human-readable message."""
    problems = []
    g = cfg.grid
    rho_max = cfg.flow.rho_max

    def density_ok(name, value):
        if not (isinstance(value, (int, float)) and 0.0 <= value <= rho_max):
            problems.append(f"{name}: density {value!r} outside [0, {rho_max}]")

    if not (isinstance(g.length, (int, float)) and g.length > 0):
        problems.append(f"grid.length: must be > 0, got {g.length!r}")
    if not (isinstance(g.n_cells, int) and g.n_cells >= 4):
        problems.append(f"grid.n_cells: must be an integer >= 4, got {g.n_cells!r}")
    if g.boundary not in ("periodic", "dirichlet"):
        problems.append(f"grid.boundary: must be 'periodic' or 'dirichlet', got {g.boundary!r}")
    if g.boundary == "dirichlet":
        density_ok("grid.rho_in", g.rho_in)
        density_ok("grid.rho_out", g.rho_out)

    ic = cfg.initial
    if isinstance(ic, Uniform):
        density_ok("initial.rho0", ic.rho0)
    elif isinstance(ic, SquareWaveTrain):
        density_ok("initial.rho_low", ic.rho_low)
        density_ok("initial.rho_high", ic.rho_high)
        if not (isinstance(ic.n_waves, int) and ic.n_waves >= 1):
            problems.append(f"initial.n_waves: must be an integer >= 1, got {ic.n_waves!r}")
    elif isinstance(ic, Riemann):
        density_ok("initial.rho_left", ic.rho_left)
        density_ok("initial.rho_right", ic.rho_right)
        if not (isinstance(ic.x_split, (int, float)) and 0 <= ic.x_split <= g.length):
            problems.append(f"initial.x_split: must lie in [0, {g.length}], got {ic.x_split!r}")
    elif isinstance(ic, Profile):
        if isinstance(g.n_cells, int) and len(ic.values) != g.n_cells:
            problems.append(f"initial.values: expected {g.n_cells} entries, got {len(ic.values)}")
        bad = [v for v in ic.values if not (isinstance(v, (int, float)) and 0 <= v <= rho_max)]
        if bad:
            problems.append(f"initial.values: {len(bad)} entries outside [0, {rho_max}]")
    else:
        problems.append(f"initial: unknown initial condition {ic!r}")

    if not (isinstance(cfg.y0, (int, float)) and 0 <= cfg.y0 < g.length):
        problems.append(f"y0: must lie in [0, {g.length}), got {cfg.y0!r}")
    if not (isinstance(cfg.horizon, (int, float)) and cfg.horizon > 0):
        problems.append(f"horizon: must be > 0, got {cfg.horizon!r}")
    if not (isinstance(cfg.dt_ctrl, (int, float)) and cfg.dt_ctrl > 0):
        problems.append(f"dt_ctrl: must be > 0, got {cfg.dt_ctrl!r}")
    elif isinstance(cfg.horizon, (int, float)) and 0 < cfg.horizon < cfg.dt_ctrl:
        problems.append(f"dt_ctrl: {cfg.dt_ctrl} exceeds the horizon {cfg.horizon}")
    if not (isinstance(cfg.cfl, (int, float)) and 0 < cfg.cfl <= 1):
        problems.append(f"cfl: must lie in (0, 1], got {cfg.cfl!r}")
    if not isinstance(cfg.seed, int):
        problems.append(f"seed: must be an integer, got {cfg.seed!r}")
    if not (isinstance(cfg.n_obs, int) and cfg.n_obs >= 1):
        problems.append(f"n_obs: must be an integer >= 1, got {cfg.n_obs!r}")
    elif isinstance(g.n_cells, int) and g.n_cells % cfg.n_obs != 0:
        problems.append(f"n_obs: {cfg.n_obs} must divide n_cells={g.n_cells}")
    return problems


def raise_problems(problems):
    if problems:
        raise ConfigError(problems)


def _cell_averages(breaks, values, grid: Grid) -> np.ndarray:
    """Exact cell averages of a piecewise-constant function.

    ``values[i]`` holds on ``[breaks[i], breaks[i + 1])``. Cells inside one
    piece take its value exactly; straddling cells take the overlap-weighted
    mean, clipped to the values involved so round-off cannot leave their range.
    """
    # work in cell units, snapping breaks that sit on an edge up to round-off
    breaks = np.asarray(breaks, dtype=float) / grid.dx
    nearest = np.round(breaks)
    breaks = np.where(np.abs(breaks - nearest) < 1e-13 * grid.n_cells, nearest, breaks)
    values = np.asarray(values, dtype=float)
    last = len(values) - 1
    edges = np.arange(grid.n_cells + 1, dtype=float)
    first_piece = np.clip(np.searchsorted(breaks, edges[:-1], side="right") - 1, 0, last)
    last_piece = np.clip(np.searchsorted(breaks, edges[1:], side="left") - 1, 0, last)
    out = values[first_piece].copy()
    for j in np.nonzero(last_piece > first_piece)[0]:
        k = np.arange(first_piece[j], last_piece[j] + 1)
        lo = np.maximum(breaks[k], edges[j])
        hi = np.minimum(breaks[k + 1], edges[j + 1])
        mean = np.sum(values[k] * (hi - lo))
        out[j] = np.clip(mean, values[k].min(), values[k].max())
    return out


def initial_profile(ic: InitialCondition, grid: Grid) -> np.ndarray:
    L = grid.length
    if isinstance(ic, Uniform):
        return np.full(grid.n_cells, float(ic.rho0))
    if isinstance(ic, SquareWaveTrain):
        n = 2 * ic.n_waves
        breaks = np.linspace(0.0, L, n + 1)
        values = [ic.rho_low if i % 2 == 0 else ic.rho_high for i in range(n)]
        return _cell_averages(breaks, values, grid)
    if isinstance(ic, Riemann):
        return _cell_averages([0.0, ic.x_split, L], [ic.rho_left, ic.rho_right], grid)
    if isinstance(ic, Profile):
        return np.asarray(ic.values, dtype=float).copy()
    raise ConfigError(f"initial: unknown initial condition {ic!r}")


def analytic_mass(ic: InitialCondition, grid: Grid) -> float:
    """Integral of the configured profile over the road."""
    L = grid.length
    if isinstance(ic, Uniform):
        return ic.rho0 * L
    if isinstance(ic, SquareWaveTrain):
        return 0.5 * (ic.rho_low + ic.rho_high) * L
    if isinstance(ic, Riemann):
        return ic.rho_left * ic.x_split + ic.rho_right * (L - ic.x_split)
    return float(np.sum(ic.values) * grid.dx)


def make_grid(spec: GridSpec) -> Grid:
    boundary = Periodic() if spec.boundary == "periodic" else Dirichlet(spec.rho_in, spec.rho_out)
    return Grid(float(spec.length), spec.n_cells, boundary)


def build(config: ScenarioConfig) -> tuple[TrafficState, AvState, Grid, FlowParams]:
    """Initial traffic state, AV, grid and flow parameters for ``config``."""
    config.validate()
    grid = make_grid(config.grid)
    p = config.flow
    state = TrafficState(initial_profile(config.initial, grid), 0.0)
    av = AvState(float(config.y0), p.v_max, 0.0)
    av.y_dot = av_realized_speed(av, state, grid, p)
    return state, av, grid, p


# -- presets ------------------------------------------------------------------

def benchmark(**overrides) -> ScenarioConfig:
    """Stop-and-go waves on a ring road."""
    return ScenarioConfig(**overrides).validate()


def bottleneck(**overrides) -> ScenarioConfig:
    """A dense block ahead of the AV, which starts upstream in light traffic."""
    base = dict(initial=Riemann(0.2, 0.8, 0.7), y0=0.3)
    base.update(overrides)
    return ScenarioConfig(**base).validate()


# -- file I/O -------------------------------------------------------------------

_TOP_KEYS = {f.name for f in fields(ScenarioConfig)}


def _section(data, cls, name, problems):
    if not isinstance(data, dict):
        problems.append(f"{name}: expected an object, got {type(data).__name__}")
        return None
    allowed = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - allowed)
    for key in unknown:
        problems.append(f"{name}.{key}: unknown key")
    known = {k: v for k, v in data.items() if k in allowed}
    try:
        return cls(**known)
    except (TypeError, ValueError) as exc:
        problems.append(f"{name}: {exc}")
        return None


def config_from_dict(data: dict) -> ScenarioConfig:
    """Parse a nested mapping; every problem found is reported at once."""
    if not isinstance(data, dict):
        raise ConfigError("top level: expected an object")
    problems = [f"{k}: unknown key" for k in sorted(set(data) - _TOP_KEYS)]
    kwargs = {}

    if "grid" in data:
        kwargs["grid"] = _section(data["grid"], GridSpec, "grid", problems)
    if "flow" in data:
        kwargs["flow"] = _section(data["flow"], FlowParams, "flow", problems)
    if "reward" in data:
        kwargs["reward"] = _section(data["reward"], RewardWeights, "reward", problems)
    if "initial" in data:
        ic = data["initial"]
        kind = ic.get("type") if isinstance(ic, dict) else None
        if kind not in _IC_TYPES:
            problems.append(f"initial.type: must be one of {sorted(_IC_TYPES)}, got {kind!r}")
        else:
            body = {k: v for k, v in ic.items() if k != "type"}
            if kind == "profile" and isinstance(body.get("values"), list):
                body["values"] = tuple(body["values"])
            kwargs["initial"] = _section(body, _IC_TYPES[kind], "initial", problems)
    for key in ("y0", "horizon", "dt_ctrl", "cfl", "seed", "n_obs"):
        if key in data:
            kwargs[key] = data[key]

    if problems or any(v is None for v in kwargs.values()):
        raise ConfigError(problems)
    cfg = ScenarioConfig(**kwargs)
    raise_problems(validation_problems(cfg))
    return cfg


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read ({exc.strerror})") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON at line {exc.lineno}: {exc.msg}") from exc
    return config_from_dict(data)


def save_config(config: ScenarioConfig, path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2) + "\n")
