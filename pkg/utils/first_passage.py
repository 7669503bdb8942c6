"""
Grid first-passage solver and the closed-form two-barrier oracle.

The evidence density is propagated on a fixed node grid spanning the
largest boundary of the horizon.  Each step moves mass between
neighbouring nodes with the transition weights of the discretised forward
equation; nodes on or beyond the current boundary are absorbing, so a
boundary that moves inwards absorbs the mass it sweeps over.  The weights
of every step sum to one, which keeps the total of absorbed plus surviving
mass at one up to rounding.
"""

from __future__ import annotations
import csv
import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from utils.ddm import DdmParams, EvidenceProfile, evidence_profile
from utils.errors import GridBudgetError, GridStabilityError, NumericalError, ValidationError
from utils.kinematics import ScenarioTimeline

logger = logging.getLogger(__name__)

MASS_TOLERANCE = 1e-6


class GridConfig(BaseModel):
    """
    Evidence-grid settings.

    ``t0`` is the timeline time at which accumulation starts; ``horizon`` is
    measured from ``t0`` and defaults to the rest of the timeline.  With
    ``auto`` the solver refines dx/dt until the stability bounds hold
    instead of raising.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    dx: float = 0.01
    dt: float = 1e-4
    t0: float = 0.0
    horizon: Optional[float] = None
    auto: bool = False
    # integration stops once the surviving mass falls below this
    survival_cutoff: float = 1e-12
    # optional caps on the node count and the planned step count
    max_nodes: Optional[int] = None
    max_steps: Optional[int] = None

    @field_validator("dx", "dt")
    @classmethod
    def _positive(cls, v: float) -> float:
        if not math.isfinite(v) or v <= 0:
            raise ValueError("must be positive")
        return v


@dataclass(frozen=True, eq=False)
class FirstPassageTable:
    """Per-step absorbed mass; ``t`` is time since accumulation start."""

    t: np.ndarray
    p_upper: np.ndarray
    p_lower: np.ndarray
    p_survive: np.ndarray
    dt: float
    t0: float = 0.0

    @property
    def upper_total(self) -> float:
        return float(self.p_upper.sum())

    @property
    def lower_total(self) -> float:
        return float(self.p_lower.sum())

    @property
    def survival(self) -> float:
        return float(self.p_survive[-1])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["t", "p_upper", "p_lower", "p_survive"])
            for row in zip(self.t, self.p_upper, self.p_lower, self.p_survive):
                w.writerow([f"{v:.10g}" for v in row])

    def summary(self) -> dict:
        return {
            "p_upper": self.upper_total,
            "p_lower": self.lower_total,
            "p_survive": self.survival,
            "dt": self.dt,
            "t0": self.t0,
            "steps": int(self.t.size - 1),
        }


def check_stability(noise: float, dx: float, dt: float, max_drift: float) -> None:
    """Raise GridStabilityError naming the first violated bound."""
    diffusion = noise * noise * dt / (dx * dx)
    if diffusion > 1.0 + 1e-12:
        raise GridStabilityError("diffusion number sigma^2*dt/dx^2", diffusion, 1.0)
    peclet = max_drift * dx / (noise * noise)
    if peclet > 1.0 + 1e-12:
        raise GridStabilityError("cell Peclet number |g|*dx/sigma^2", peclet, 1.0)


def _check_budget(what: str, needed: int, allowed: Optional[int]) -> None:
    if allowed is not None and needed > allowed:
        raise GridBudgetError(what, needed, allowed)


def solve_profile(profile: EvidenceProfile, grid: Optional[GridConfig] = None) -> FirstPassageTable:
    grid = grid or GridConfig()
    sigma = profile.noise
    t0 = grid.t0
    if t0 < 0 or t0 > profile.horizon:
        raise ValidationError(f"t0={t0} outside the timeline")
    horizon = profile.horizon - t0 if grid.horizon is None else min(grid.horizon, profile.horizon - t0)
    dx, dt = grid.dx, grid.dt

    n_steps = max(int(round(horizon / dt)), 1)
    _check_budget("steps", n_steps, grid.max_steps)
    times = t0 + dt * np.arange(n_steps + 1)
    g = profile.drift_at(times)
    b = profile.bound_at(times)
    if np.any(b <= 0) or not np.all(np.isfinite(b)) or not np.all(np.isfinite(g)):
        raise NumericalError("drift/boundary schedule is not finite and positive")

    B = float(b.max())
    max_g = float(np.abs(g).max())
    if grid.auto and max_g > 0:
        dx = min(dx, 0.9 * sigma * sigma / max_g)

    # nodes at multiples of dx with the outermost ones on +-B
    n_half = max(int(math.ceil(B / dx - 1e-9)), 2)
    dx = B / n_half
    refine = grid.auto and sigma * sigma * dt > dx * dx
    if refine:
        dt = dx * dx / (sigma * sigma)
        n_steps = max(int(round(horizon / dt)), 1)
    check_stability(sigma, dx, dt, max_g)
    # budgets are checked before the refined arrays exist
    _check_budget("nodes", 2 * n_half + 1, grid.max_nodes)
    _check_budget("steps", n_steps, grid.max_steps)
    if refine:
        times = t0 + dt * np.arange(n_steps + 1)
        g = profile.drift_at(times)
        b = profile.bound_at(times)
    x = dx * np.arange(-n_half, n_half + 1)
    tol = 1e-9 * dx

    mass = np.zeros_like(x)
    pos = (profile.z + B) / dx
    lo = min(int(math.floor(pos)), 2 * n_half - 1)
    w = pos - lo
    mass[lo] += 1.0 - w
    mass[lo + 1] += w

    up = np.zeros(n_steps + 1)
    low = np.zeros(n_steps + 1)
    surv = np.ones(n_steps + 1)
    r = sigma * sigma * dt / (dx * dx)

    def absorb(k_row: int, bk: float) -> None:
        upper = x >= bk - tol
        lower = x <= -bk + tol
        up[k_row] += mass[upper].sum()
        low[k_row] += mass[lower].sum()
        mass[upper | lower] = 0.0

    # mass starting on or beyond a boundary is absorbed in the first step
    absorb(1, b[0])
    surv[0] = 1.0
    last = n_steps
    for k in range(n_steps):
        c = g[k] * dt / dx
        p_up = 0.5 * (r + c)
        p_down = 0.5 * (r - c)
        new = mass * (1.0 - r)
        new[1:] += mass[:-1] * p_up
        new[:-1] += mass[1:] * p_down
        mass = new
        absorb(k + 1, b[k + 1])
        surv[k + 1] = mass.sum()
        if surv[k + 1] < grid.survival_cutoff:
            surv[k + 2:] = surv[k + 1]
            last = k + 1
            break

    drift = abs(up.sum() + low.sum() + surv[-1] - 1.0)
    if drift > MASS_TOLERANCE:
        raise NumericalError(f"probability mass not conserved (error {drift:.3g})")
    logger.debug("grid solve: %d nodes, %d/%d steps, upper=%.6f lower=%.6f",
                 x.size, last, n_steps, up.sum(), low.sum())
    return FirstPassageTable(times - t0, up, low, surv, dt, t0)


def first_passage_distribution(timeline: ScenarioTimeline, p: DdmParams, R_s: float = 0.0,
                               grid_config: Optional[GridConfig] = None) -> FirstPassageTable:
    return solve_profile(evidence_profile(timeline, p, R_s), grid_config)


def two_barrier_upper_probability(g: float, b: float, z: float, sigma: float = 1.0) -> float:
    """
    Probability of reaching +b before -b from z under constant drift g.

    Computed from the side that keeps the exponentials bounded.
    """
    if b <= 0 or sigma <= 0:
        raise ValidationError("b and sigma must be positive")
    if not -b <= z <= b:
        raise ValidationError("z must lie between the boundaries")
    width = 2.0 * b
    u = z + b
    if g == 0:
        return u / width
    if g < 0:
        return 1.0 - two_barrier_upper_probability(-g, b, -z, sigma)
    s2 = sigma * sigma
    return float(-math.expm1(-2.0 * g * u / s2) / -math.expm1(-2.0 * g * width / s2))
