"""Greenshields fundamental diagram and the geometry of a moving flux constraint.

All functions accept scalars or numpy arrays. Densities are checked against
``[0, rho_max]`` and speeds against ``[0, v_max]``; the ``_unchecked`` helpers
skip validation for the solver's inner loop.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class FlowParams:
    """Fundamental-diagram constants.

    Attributes:
        v_max: free-flow speed.
        rho_max: jam density.
        alpha: capacity fraction left open by a slow vehicle, in (0, 1).
    """

    v_max: float = 1.0
    rho_max: float = 1.0
    alpha: float = 0.6

    def __post_init__(self):
        problems = []
        if not (np.isfinite(self.v_max) and self.v_max > 0):
            problems.append(f"v_max must be > 0, got {self.v_max}")
        if not (np.isfinite(self.rho_max) and self.rho_max > 0):
            problems.append(f"rho_max must be > 0, got {self.rho_max}")
        if not (0.0 < self.alpha < 1.0):
            problems.append(f"alpha must lie strictly inside (0, 1), got {self.alpha}")
        if problems:
            raise DomainError("; ".join(problems))

    @property
    def capacity(self) -> float:
        """Maximum flux ``v_max * rho_max / 4``."""
        return 0.25 * self.v_max * self.rho_max


def _check_density(rho, p: FlowParams):
    rho = np.asarray(rho, dtype=float)
    if np.any(~np.isfinite(rho)) or np.any(rho < 0.0) or np.any(rho > p.rho_max):
        raise DomainError(f"density outside [0, {p.rho_max}]: {rho}")
    return rho


def _check_speed(v, p: FlowParams):
    v = np.asarray(v, dtype=float)
    if np.any(~np.isfinite(v)) or np.any(v < 0.0) or np.any(v > p.v_max):
        raise DomainError(f"speed outside [0, {p.v_max}]: {v}")
    return v


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


# -- unchecked kernels ------------------------------------------------------

def velocity_unchecked(rho, p: FlowParams):
    return p.v_max * (1.0 - rho / p.rho_max)


def flux_unchecked(rho, p: FlowParams):
    return p.v_max * rho * (1.0 - rho / p.rho_max)


def f_alpha_unchecked(v_av, p: FlowParams):
    return p.alpha * p.rho_max * (p.v_max - v_av) ** 2 / (4.0 * p.v_max)


def _roots(v_av, p: FlowParams):
    base = 0.5 * p.rho_max * (1.0 - v_av / p.v_max)
    s = np.sqrt(1.0 - p.alpha)
    return base * (1.0 - s), base * (1.0 + s)


def rho_check_unchecked(v_av, p: FlowParams):
    return _roots(v_av, p)[0]


def rho_hat_unchecked(v_av, p: FlowParams):
    return _roots(v_av, p)[1]


def demand_unchecked(rho, p: FlowParams):
    return flux_unchecked(np.minimum(rho, 0.5 * p.rho_max), p)


def supply_unchecked(rho, p: FlowParams):
    return flux_unchecked(np.maximum(rho, 0.5 * p.rho_max), p)


# -- public API ---------------------------------------------------------------

def velocity(rho, p: FlowParams):
    """Mean traffic speed ``v_max * (1 - rho / rho_max)``."""
    return _out(velocity_unchecked(_check_density(rho, p), p))


def flux(rho, p: FlowParams):
    """Traffic flux ``rho * velocity(rho)``."""
    rho = _check_density(rho, p)
    return _out(rho * velocity_unchecked(rho, p))


def f_alpha(v_av, p: FlowParams):
    """Flux allowed past a vehicle driving at ``v_av``, in that vehicle's frame.

    This is ``alpha * max_rho (f(rho) - v_av * rho)``, which for the
    Greenshields diagram equals ``alpha * rho_max * (v_max - v_av)**2 / (4 v_max)``.
    """
    return _out(f_alpha_unchecked(_check_speed(v_av, p), p))


def rho_check(v_av, p: FlowParams):
    """Lower intersection of the line ``f_alpha(V) + V rho`` with the diagram."""
    return _out(rho_check_unchecked(_check_speed(v_av, p), p))


def rho_hat(v_av, p: FlowParams):
    """Upper intersection of the line ``f_alpha(V) + V rho`` with the diagram."""
    return _out(rho_hat_unchecked(_check_speed(v_av, p), p))


def critical_density(p: FlowParams) -> float:
    return 0.5 * p.rho_max


def demand(rho, p: FlowParams):
    """Increasing envelope of the flux: ``f(min(rho, rho_c))``."""
    return _out(demand_unchecked(_check_density(rho, p), p))


def supply(rho, p: FlowParams):
    """Decreasing envelope of the flux: ``f(max(rho, rho_c))``."""
    return _out(supply_unchecked(_check_density(rho, p), p))
