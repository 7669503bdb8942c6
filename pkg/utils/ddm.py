"""
Drift-diffusion decision model for brake/steer choices.

Evidence x(t) is signed: positive favours Steer, negative favours Brake.
A trial has two stages.  During the non-decision period the evidence stays
at the start point Z; afterwards it follows

    dx = g(t) dt + sigma dW

until it touches +b(t) (Steer) or -b(t) (Brake).  Drift g and boundary b are
affine/sigmoid functions of the scenario kinematics, and a driver's risk
sensitivity R_s shifts drift, boundary and start point.

Evidence units are arbitrary: parameters are interpreted relative to the
noise scale (1 by default).
"""

from __future__ import annotations
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator
from scipy.special import expit

from utils.errors import ValidationError, require_finite
from utils.kinematics import (
    KinematicSnapshot,
    ScenarioKind,
    ScenarioTimeline,
    distance_series,
)

logger = logging.getLogger(__name__)

DDM_DT = float(os.getenv("DDM_DT", "0.001"))
DDM_WORKERS = int(os.getenv("DDM_WORKERS", "1"))
RT_QUANTILES = (0.1, 0.3, 0.5, 0.7, 0.9)


class Choice(str, Enum):
    BRAKE = "brake"
    STEER = "steer"
    NONE = "none"

    @classmethod
    def parse(cls, value) -> "Choice":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        for c in cls:
            if c.value == key:
                return c
        raise ValidationError(f"unknown choice {value!r}")


class DdmParams(BaseModel):
    """
    Free parameters of one scenario's model plus risk coupling.

    ``beta`` and ``delta`` exist only for the rear-end and lane-change
    scenarios.  ``boundary_theta`` keeps the extra ``-theta`` term of the
    lane-change boundary.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    scenario_kind: ScenarioKind
    alpha: float
    beta: Optional[float] = None
    delta: Optional[float] = None
    kappa: float
    gamma: float
    theta: float
    b0: float
    k: float
    tau: float
    mu_nd: float
    sigma_nd: float
    b_z: float
    nu: float
    lam: float = 0.0
    eta: float = 0.0
    rho: float = 0.0
    noise_scale: float = 1.0
    boundary_theta: bool = True

    @field_validator("scenario_kind", mode="before")
    @classmethod
    def _kind(cls, v):
        return ScenarioKind.parse(v)

    @model_validator(mode="after")
    def _check(self) -> "DdmParams":
        for name in ("alpha", "kappa", "gamma", "theta", "b0", "k", "tau", "mu_nd",
                     "sigma_nd", "b_z", "nu", "lam", "eta", "rho", "noise_scale"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.b0 <= 0:
            raise ValueError("b0 must be positive")
        if self.sigma_nd <= 0:
            raise ValueError("sigma_nd must be positive")
        if self.k < 0:
            raise ValueError("k must be non-negative")
        if self.noise_scale <= 0:
            raise ValueError("noise_scale must be positive")
        if self.scenario_kind is ScenarioKind.CUT_IN:
            if self.beta is not None or self.delta is not None:
                raise ValueError("beta and delta are not defined for the cut-in scenario")
        elif self.beta is None or self.delta is None:
            raise ValueError(f"beta and delta are required for {self.scenario_kind.value}")
        return self

    def free_names(self) -> Tuple[str, ...]:
        return free_parameter_names(self.scenario_kind)

    def updated(self, **changes) -> "DdmParams":
        """Validated copy with some fields replaced."""
        data = self.model_dump()
        data.update(changes)
        return DdmParams(**data)


def free_parameter_names(kind) -> Tuple[str, ...]:
    kind = ScenarioKind.parse(kind)
    names = ["alpha", "beta", "delta", "kappa", "gamma", "theta", "b0", "k", "tau",
             "mu_nd", "sigma_nd", "b_z", "nu"]
    if kind is ScenarioKind.CUT_IN:
        names.remove("beta")
        names.remove("delta")
    return tuple(names)


@dataclass(frozen=True)
class EvidenceState:
    t: float
    x: float
    upper_b: float

    @property
    def lower_b(self) -> float:
        return -self.upper_b


@dataclass(frozen=True, eq=False)
class DecisionOutcome:
    choice: Choice
    rt: Optional[float]
    t_nd: float
    # rows of (t, x, upper boundary)
    trace: Optional[np.ndarray] = None

    @property
    def accumulation_time(self) -> Optional[float]:
        return None if self.rt is None else self.rt - self.t_nd


# ---- Model terms -------------------------------------------------------------

_REQUIRED = {
    ScenarioKind.CUT_IN: ("hAB", "sAB"),
    ScenarioKind.REAR_END: ("hAB", "sAB", "hAC", "sAC"),
    ScenarioKind.LANE_CHANGE: ("hAB", "sAB", "hAD", "sAD"),
}


def _kinematic_term(kind: ScenarioKind, p: DdmParams, v0A, terms: Dict[str, np.ndarray]):
    """Affine combination shared by drift and boundary, without offsets."""
    if kind is ScenarioKind.CUT_IN:
        return terms["hAB"] + p.kappa * terms["sAB"] + p.gamma * v0A
    if kind is ScenarioKind.REAR_END:
        return (terms["hAB"] + p.beta * terms["sAB"] + p.delta * terms["hAC"]
                + p.kappa * terms["sAC"] + p.gamma * v0A)
    return (terms["hAB"] + p.beta * terms["sAB"] + p.delta * terms["hAD"]
            + p.kappa * terms["sAD"] + p.gamma * v0A)


def _boundary_offset(kind: ScenarioKind, p: DdmParams) -> float:
    if kind is ScenarioKind.LANE_CHANGE and p.boundary_theta:
        return p.theta + p.tau
    return p.tau


def _snapshot_terms(kind: ScenarioKind, snap: KinematicSnapshot) -> Dict[str, float]:
    snap.require(*_REQUIRED[kind])
    return {name: getattr(snap, name) for name in _REQUIRED[kind]}


def _check_kind(kind, p: DdmParams) -> ScenarioKind:
    kind = ScenarioKind.parse(kind)
    if kind is not p.scenario_kind:
        raise ValidationError(
            f"parameters are for {p.scenario_kind.value}, scenario is {kind.value}"
        )
    return kind


def drift_rate(kind, snap: KinematicSnapshot, p: DdmParams) -> float:
    kind = _check_kind(kind, p)
    terms = _snapshot_terms(kind, snap)
    return float(p.alpha * (_kinematic_term(kind, p, snap.v0A, terms) - p.theta))


def boundary(kind, snap: KinematicSnapshot, p: DdmParams) -> float:
    """Upper boundary magnitude b0 / (1 + exp(-k A)); the lower one is its negation."""
    kind = _check_kind(kind, p)
    terms = _snapshot_terms(kind, snap)
    arg = _kinematic_term(kind, p, snap.v0A, terms) - _boundary_offset(kind, p)
    return float(p.b0 * expit(p.k * arg))


def initial_bias(p: DdmParams, v0A: float) -> float:
    """Start point Z in (-b0, b0); negative values lean towards Brake."""
    return float(2.0 * p.b0 * expit(p.b_z * (v0A - p.nu)) - p.b0)


def sample_nondecision_time(p: DdmParams, rng: np.random.Generator) -> float:
    """Gaussian draw, resampled until strictly positive."""
    while True:
        t_nd = rng.normal(p.mu_nd, p.sigma_nd)
        if t_nd > 0:
            return float(t_nd)


def sample_nondecision_times(p: DdmParams, rng: np.random.Generator, size: int) -> np.ndarray:
    out = rng.normal(p.mu_nd, p.sigma_nd, size)
    bad = out <= 0
    while bad.any():
        out[bad] = rng.normal(p.mu_nd, p.sigma_nd, int(bad.sum()))
        bad = out <= 0
    return out


def _clamp_inside(z: float, b: float) -> float:
    lim = float(np.nextafter(b, 0.0))
    return min(max(z, -lim), lim)


def apply_risk_sensitivity(g: float, b: float, Z: float, R_s: float, p: DdmParams) -> Tuple[float, float, float]:
    require_finite(R_s=R_s)
    g2 = g + p.lam * R_s
    b2 = b * math.exp(-p.eta * R_s)
    return g2, b2, _clamp_inside(Z + p.rho * R_s, b2)


# ---- Evidence profile --------------------------------------------------------

@dataclass(frozen=True, eq=False)
class EvidenceProfile:
    """
    Risk-adjusted drift and boundary at knot times, plus the start point.

    Values between knots are linear interpolations.
    """

    t: np.ndarray
    drift: np.ndarray
    bound: np.ndarray
    z: float
    noise: float
    horizon: float

    def drift_at(self, t):
        return np.interp(t, self.t, self.drift)

    def bound_at(self, t):
        return np.interp(t, self.t, self.bound)

    @classmethod
    def constant(cls, g: float, b: float, z: float, noise: float = 1.0, horizon: float = 10.0) -> "EvidenceProfile":
        if b <= 0:
            raise ValidationError("boundary must be positive")
        knots = np.array([0.0, horizon])
        return cls(knots, np.full(2, float(g)), np.full(2, float(b)), _clamp_inside(z, b), noise, horizon)


def evidence_profile(timeline: ScenarioTimeline, p: DdmParams, R_s: float = 0.0) -> EvidenceProfile:
    kind = _check_kind(timeline.kind, p)
    require_finite(R_s=R_s)
    terms = distance_series(timeline)
    x = _kinematic_term(kind, p, timeline.ego_v0, terms)
    g = p.alpha * (x - p.theta) + p.lam * R_s
    b = p.b0 * expit(p.k * (x - _boundary_offset(kind, p))) * math.exp(-p.eta * R_s)
    z = initial_bias(p, timeline.ego_v0) + p.rho * R_s
    return EvidenceProfile(timeline.t, g, b, _clamp_inside(z, float(b[0])), p.noise_scale, timeline.horizon)


# ---- Simulation --------------------------------------------------------------

_CHUNK = 256


def accumulate(profile: EvidenceProfile, t_nd: float, rng: np.random.Generator,
               dt: float = DDM_DT, record_trace: bool = False) -> DecisionOutcome:
    """
    Euler-Maruyama accumulation starting at ``t_nd`` from ``profile.z``.

    Steps are drawn in vectorised chunks.  A step decides the trial when its
    end point reaches a boundary or, between the two samples, the Brownian
    bridge crosses one.
    """
    x0 = profile.z
    rows: List[np.ndarray] = []
    if record_trace:
        hold = profile.t[profile.t < t_nd]
        hb = profile.bound_at(hold)
        inside = np.abs(x0) < hb
        if not inside.all():
            cut = int(np.argmin(inside))
            hold, hb = hold[:cut], hb[:cut]
        rows.append(np.column_stack([hold, np.full(hold.size, x0), hb]))

    def done(choice: Choice, rt: Optional[float]) -> DecisionOutcome:
        trace = np.vstack(rows) if record_trace else None
        return DecisionOutcome(choice, rt, t_nd, trace)

    if t_nd > profile.horizon:
        return done(Choice.NONE, None)
    b_start = float(profile.bound_at(t_nd))
    if abs(x0) >= b_start:
        return done(Choice.STEER if x0 > 0 else Choice.BRAKE, t_nd)

    x = x0
    j = 0
    var = profile.noise * profile.noise * dt
    sq = math.sqrt(var)
    n_max = int(math.floor((profile.horizon - t_nd) / dt + 1e-9))
    size = _CHUNK
    while j < n_max:
        m = min(size, n_max - j)
        nodes = t_nd + (j + np.arange(m + 1)) * dt
        t_left, t_right = nodes[:-1], nodes[1:]
        b_nodes = profile.bound_at(nodes)
        b_left, b_right = b_nodes[:-1], b_nodes[1:]
        incr = profile.drift_at(t_left) * dt + sq * rng.standard_normal(m)
        path = x + np.cumsum(incr)
        prev = np.concatenate([[x], path[:-1]])
        # chance that the Brownian bridge between two samples touched a
        # boundary; it is 1 once a sample is on or past the boundary
        p_up = np.exp(-2.0 * np.maximum(b_left - prev, 0.0) * np.maximum(b_right - path, 0.0) / var)
        p_lo = np.exp(-2.0 * np.maximum(b_left + prev, 0.0) * np.maximum(b_right + path, 0.0) / var)
        u = rng.random((m, 2))
        up = u[:, 0] < p_up
        lo = u[:, 1] < p_lo
        hit = up | lo
        if record_trace:
            keep = int(np.argmax(hit)) + 1 if hit.any() else m
            rows.append(np.column_stack([t_left[:keep], prev[:keep], b_left[:keep]]))
        if hit.any():
            i = int(np.argmax(hit))
            steer = up[i] and (not lo[i] or path[i] > 0)
            return done(Choice.STEER if steer else Choice.BRAKE, float(t_right[i]))
        x = float(path[-1])
        j += m
        size = min(size * 2, 8192)
    return done(Choice.NONE, None)


def simulate_trial(timeline: ScenarioTimeline, p: DdmParams, R_s: float, rng: np.random.Generator,
                   record_trace: bool = False, dt: float = DDM_DT,
                   profile: Optional[EvidenceProfile] = None) -> DecisionOutcome:
    """
    One simulated decision on ``timeline``.

    ``profile`` may be passed in to reuse the drift/boundary schedule
    across many trials of the same condition.
    """
    _check_kind(timeline.kind, p)
    if profile is None:
        profile = evidence_profile(timeline, p, R_s)
    t_nd = sample_nondecision_time(p, rng)
    return accumulate(profile, t_nd, rng, dt, record_trace)


def trial_rng(master_seed: int, trial_index: int) -> np.random.Generator:
    """Independent stream per (seed, trial) so results ignore scheduling order."""
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), int(trial_index)]))


@dataclass(frozen=True, eq=False)
class ChoiceSummary:
    n_trials: int
    counts: Dict[Choice, int]
    rt_quantiles: Dict[Choice, Dict[float, float]]
    mean_rt: Dict[Choice, Optional[float]]
    mean_t_nd: float
    mean_accumulation: Optional[float]
    outcomes: Tuple[DecisionOutcome, ...] = ()

    @property
    def p_brake(self) -> float:
        return self.counts[Choice.BRAKE] / self.n_trials

    @property
    def p_steer(self) -> float:
        return self.counts[Choice.STEER] / self.n_trials

    @property
    def p_none(self) -> float:
        return self.counts[Choice.NONE] / self.n_trials

    def as_dict(self) -> Dict[str, object]:
        return {
            "n_trials": self.n_trials,
            "p_brake": self.p_brake,
            "p_steer": self.p_steer,
            "p_none": self.p_none,
            "rt_quantiles": {c.value: {str(q): v for q, v in qs.items()} for c, qs in self.rt_quantiles.items()},
            "mean_rt": {c.value: v for c, v in self.mean_rt.items()},
            "mean_t_nd": self.mean_t_nd,
            "mean_accumulation": self.mean_accumulation,
        }


def summarize_outcomes(outcomes: List[DecisionOutcome], keep: bool = False) -> ChoiceSummary:
    if not outcomes:
        raise ValidationError("no outcomes to summarise")
    counts = {c: 0 for c in Choice}
    by_choice: Dict[Choice, List[float]] = {Choice.BRAKE: [], Choice.STEER: []}
    for o in outcomes:
        counts[o.choice] += 1
        if o.rt is not None:
            by_choice[o.choice].append(o.rt)
    quantiles = {c: ({q: float(v) for q, v in zip(RT_QUANTILES, np.quantile(rts, RT_QUANTILES))} if rts else {})
                 for c, rts in by_choice.items()}
    mean_rt = {c: (float(np.mean(rts)) if rts else None) for c, rts in by_choice.items()}
    acc = [o.accumulation_time for o in outcomes if o.rt is not None]
    return ChoiceSummary(
        n_trials=len(outcomes),
        counts=counts,
        rt_quantiles=quantiles,
        mean_rt=mean_rt,
        mean_t_nd=float(np.mean([o.t_nd for o in outcomes])),
        mean_accumulation=float(np.mean(acc)) if acc else None,
        outcomes=tuple(outcomes) if keep else (),
    )


def run_trials(timeline: ScenarioTimeline, p: DdmParams, R_s: float, n_trials: int, master_seed: int,
               workers: int = DDM_WORKERS, dt: float = DDM_DT, record_trace: bool = False,
               first_index: int = 0) -> List[DecisionOutcome]:
    """Simulate trials ``first_index .. first_index + n_trials - 1`` in index order."""
    if n_trials < 1:
        raise ValidationError("n_trials must be at least 1")
    profile = evidence_profile(timeline, p, R_s)

    def one(i: int) -> DecisionOutcome:
        return simulate_trial(timeline, p, R_s, trial_rng(master_seed, i), record_trace, dt, profile)

    indices = range(first_index, first_index + n_trials)
    if workers <= 1:
        return [one(i) for i in indices]
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(one, indices))


def choice_probabilities(timeline: ScenarioTimeline, p: DdmParams, R_s: float, n_trials: int,
                         master_seed: int, workers: int = DDM_WORKERS, dt: float = DDM_DT,
                         keep_outcomes: bool = False) -> ChoiceSummary:
    outcomes = run_trials(timeline, p, R_s, n_trials, master_seed, workers, dt)
    summary = summarize_outcomes(outcomes, keep=keep_outcomes)
    logger.info(
        "%s v0A=%.2f R_s=%+.2f: brake=%.3f steer=%.3f none=%.3f (n=%d)",
        timeline.kind.value, timeline.ego_v0, R_s, summary.p_brake, summary.p_steer, summary.p_none, n_trials,
    )
    return summary
