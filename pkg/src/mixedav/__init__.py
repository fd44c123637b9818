"""Mixed-autonomy traffic lab: LWR traffic with a flux-constraining AV, and a PPO speed controller."""

from .fundamental_diagram import FlowParams
from .scenario import ScenarioConfig, benchmark, bottleneck, build, load_config
from .solver import AvState, Dirichlet, Grid, Periodic, TrafficState, run, step

__version__ = "0.1.0"
