"""
Scenario kinematics for the three disturbance scenarios.

Every scenario starts at the disturbance onset (t = 0).  Surrounding
vehicles follow open-loop scripts; the ego vehicle A holds its initial
speed unless a caller replaces its track (see ``ScenarioTimeline.with_ego``).

Lanes are straight and parallel: lane 0 is the ego lane with its centre at
y = 0, lane 1 is the adjacent lane at y = lane_width.
"""

from __future__ import annotations
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from utils.errors import ValidationError, require_finite

logger = logging.getLogger(__name__)

EGO = "A"


class ScenarioKind(str, Enum):
    CUT_IN = "cutin"
    REAR_END = "rearend"
    LANE_CHANGE = "lanechange"

    @classmethod
    def parse(cls, value) -> "ScenarioKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "").replace("_", "").replace(" ", "")
        for kind in cls:
            if kind.value == key:
                return kind
        raise ValidationError(f"unknown scenario kind {value!r}")


VEHICLES: Dict[ScenarioKind, Tuple[str, ...]] = {
    ScenarioKind.CUT_IN: ("A", "B"),
    ScenarioKind.REAR_END: ("A", "B", "C"),
    ScenarioKind.LANE_CHANGE: ("A", "B", "C", "D"),
}

# signed bumper-to-bumper gap ahead of A at t = 0 (m); negative is behind A
DEFAULT_GAPS: Dict[ScenarioKind, Dict[str, float]] = {
    ScenarioKind.CUT_IN: {"B": 20.0},
    ScenarioKind.REAR_END: {"B": -40.0, "C": 73.0},
    ScenarioKind.LANE_CHANGE: {"B": -30.0, "C": 20.0, "D": 104.0},
}

DEFAULT_SPEEDS: Dict[ScenarioKind, Dict[str, float]] = {
    ScenarioKind.CUT_IN: {"B": 33.33},
    ScenarioKind.REAR_END: {"B": 22.22, "C": 22.22},
    ScenarioKind.LANE_CHANGE: {"B": 22.22, "C": 22.22, "D": 0.0},
}

# Median ego speeds of the four experimental groups (m/s).
SPEED_GROUPS: Dict[ScenarioKind, Tuple[float, ...]] = {
    ScenarioKind.CUT_IN: (25.82, 29.39, 31.69, 33.85),
    ScenarioKind.REAR_END: (19.56, 22.10, 23.32, 25.80),
    ScenarioKind.LANE_CHANGE: (20.71, 23.27, 24.62, 27.46),
}


class ScenarioConfig(BaseModel):
    """Scenario geometry and integration settings; all units SI."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    # defaults for make_scenario when the caller leaves kind or ego_v0 out
    kind: Optional[ScenarioKind] = None
    ego_v0: Optional[float] = None
    initial_gaps: Dict[str, float] = Field(default_factory=dict)
    surrounding_speeds: Dict[str, float] = Field(default_factory=dict)
    lead_decel: float = -8.0
    lane_change_duration: float = 2.0
    dt: float = 0.01
    horizon: float = 10.0
    vehicle_length: float = 5.0
    lane_width: float = 3.5
    ego_v0_bounds: Tuple[float, float] = (19.0, 34.0)
    # headways divide by the instantaneous ego speed instead of v0A
    instantaneous_headway: bool = False

    @field_validator("kind", mode="before")
    @classmethod
    def _kind(cls, v):
        return None if v is None else ScenarioKind.parse(v)

    @field_validator("dt", "horizon", "lane_change_duration", "vehicle_length", "lane_width")
    @classmethod
    def _positive(cls, v: float) -> float:
        if not math.isfinite(v) or v <= 0:
            raise ValueError("must be a positive finite number")
        return v

    @field_validator("lead_decel")
    @classmethod
    def _decel(cls, v: float) -> float:
        if not math.isfinite(v) or v >= 0:
            raise ValueError("lead_decel must be negative")
        return v

    def gaps(self, kind: ScenarioKind) -> Dict[str, float]:
        return {**DEFAULT_GAPS[kind], **self.initial_gaps}

    def speeds(self, kind: ScenarioKind) -> Dict[str, float]:
        return {**DEFAULT_SPEEDS[kind], **self.surrounding_speeds}


DEFAULT_CONFIG = ScenarioConfig()


@dataclass(frozen=True)
class VehicleState:
    s: float
    y: float
    v: float
    a: float
    lane: int = 0


@dataclass(frozen=True, eq=False)
class Track:
    """Per-frame arrays of one vehicle; arrays are read-only."""

    s: np.ndarray
    y: np.ndarray
    v: np.ndarray
    a: np.ndarray
    lane: np.ndarray

    def __post_init__(self):
        for arr in (self.s, self.y, self.v, self.a, self.lane):
            arr.setflags(write=False)

    def state(self, i: int) -> VehicleState:
        return VehicleState(float(self.s[i]), float(self.y[i]), float(self.v[i]),
                            float(self.a[i]), int(self.lane[i]))


@dataclass(frozen=True, eq=False)
class ScenarioTimeline:
    kind: ScenarioKind
    dt: float
    ego_v0: float
    t: np.ndarray
    tracks: Dict[str, Track]
    config: ScenarioConfig = field(default=DEFAULT_CONFIG, compare=False)

    @property
    def n_frames(self) -> int:
        return int(self.t.size)

    @property
    def horizon(self) -> float:
        return float(self.t[-1])

    def frame(self, i: int) -> Dict[str, VehicleState]:
        return {name: tr.state(i) for name, tr in self.tracks.items()}

    @property
    def frames(self):
        return [self.frame(i) for i in range(self.n_frames)]

    def with_ego(self, ego: Track) -> "ScenarioTimeline":
        tracks = dict(self.tracks)
        tracks[EGO] = ego
        return ScenarioTimeline(self.kind, self.dt, self.ego_v0, self.t, tracks, self.config)


@dataclass(frozen=True)
class KinematicSnapshot:
    v0A: float
    sAB: Optional[float] = None
    sAC: Optional[float] = None
    sAD: Optional[float] = None
    hAB: Optional[float] = None
    hAC: Optional[float] = None
    hAD: Optional[float] = None

    def require(self, *names: str) -> None:
        missing = [n for n in names if getattr(self, n) is None]
        if missing:
            raise ValidationError(f"snapshot is missing {', '.join(missing)}")


# ---- Primitive operations ----------------------------------------------------

def step_vehicle(state: VehicleState, commanded_accel: float, dt: float) -> VehicleState:
    """
    Constant-acceleration update over one step, clamped at standstill.

    When braking would reverse the vehicle the position uses the exact
    stopping sub-interval v/|a| and the stored acceleration becomes 0.
    """
    require_finite(s=state.s, v=state.v, commanded_accel=commanded_accel, dt=dt)
    if dt <= 0:
        raise ValidationError("dt must be positive")
    v, a = state.v, commanded_accel
    if a < 0 and v + a * dt <= 0:
        t_stop = v / -a
        s = state.s + v * t_stop + 0.5 * a * t_stop * t_stop
        return VehicleState(s, state.y, 0.0, 0.0, state.lane)
    return VehicleState(state.s + v * dt + 0.5 * a * dt * dt, state.y, v + a * dt, a, state.lane)


def gap(rear: VehicleState, lead: VehicleState, rear_len: float = 5.0, lead_len: float = 5.0) -> float:
    """Front bumper of ``rear`` to rear bumper of ``lead``; negative on overlap."""
    return lead.s - rear.s - lead_len


def time_headway(distance: float, v0A: float) -> float:
    if not v0A > 0:
        raise ValidationError("v0A must be positive")
    return distance / v0A


def ttc(rear: VehicleState, lead: VehicleState, gap: float) -> Optional[float]:
    closing = rear.v - lead.v
    if closing <= 0:
        return None
    return gap / closing


# ---- Track builders ----------------------------------------------------------

def brake_profile(t: np.ndarray, s0: float, v0: float, accel: float, t_on: float = 0.0):
    """
    Closed-form (s, v, a) arrays for a vehicle cruising at ``v0`` that applies
    ``accel`` from ``t_on`` on, stopping (never reversing) when braking.
    """
    tau = np.clip(t - t_on, 0.0, None)
    if accel < 0:
        tau = np.minimum(tau, v0 / -accel)
    v = v0 + accel * tau
    s = s0 + v0 * np.minimum(t, t_on) + v0 * tau + 0.5 * accel * tau * tau
    a = np.where((t >= t_on) & (v > 0), accel, 0.0)
    if accel < 0:
        v = np.maximum(v, 0.0)
    return s, v, a


def lateral_profile(t: np.ndarray, y0: float, y1: float, duration: float, t_on: float = 0.0) -> np.ndarray:
    """Constant-lateral-rate lane change from y0 to y1 over ``duration``."""
    frac = np.clip((t - t_on) / duration, 0.0, 1.0)
    return y0 + (y1 - y0) * frac


def make_track(s, y, v, a, lane_width: float) -> Track:
    y = np.asarray(y, dtype=float)
    s = np.asarray(s, dtype=float)
    return Track(
        s=s.copy(),
        y=np.broadcast_to(y, s.shape).astype(float),
        v=np.asarray(v, dtype=float).copy(),
        a=np.broadcast_to(np.asarray(a, dtype=float), s.shape).astype(float),
        lane=np.rint(np.broadcast_to(y, s.shape) / lane_width).astype(int),
    )


def _from_config(name: str, given, configured):
    if given is None:
        if configured is None:
            raise ValidationError(f"{name} is neither given nor set in the scenario config")
        return configured
    if configured is not None and given != configured:
        raise ValidationError(f"{name}={given!r} contradicts the scenario config ({configured!r})")
    return given


def make_scenario(kind=None, ego_v0: Optional[float] = None, config: Optional[ScenarioConfig] = None) -> ScenarioTimeline:
    """
    Build the deterministic timeline of one scenario realisation.

    CutIn: B starts ahead in the adjacent lane and changes into A's lane at
    t = 0.  RearEnd: C leads A in the ego lane and brakes to a standstill at
    ``lead_decel``; B cruises in the adjacent lane.  LaneChange: C leaves the
    ego lane at t = 0 and reveals the stationary D; B cruises in the
    adjacent lane, behind A.

    ``kind`` and ``ego_v0`` fall back to the config's values; passing a
    value that contradicts the config is an error.
    """
    cfg = config or DEFAULT_CONFIG
    kind = _from_config("kind", None if kind is None else ScenarioKind.parse(kind), cfg.kind)
    ego_v0 = _from_config("ego_v0", ego_v0, cfg.ego_v0)
    require_finite(ego_v0=ego_v0)
    lo, hi = cfg.ego_v0_bounds
    if ego_v0 <= 0:
        raise ValidationError("ego_v0 must be positive")
    if not lo <= ego_v0 <= hi:
        raise ValidationError(f"ego_v0 {ego_v0} outside configured bounds [{lo}, {hi}]")
    speeds = cfg.speeds(kind)
    gaps = cfg.gaps(kind)
    for name, v in speeds.items():
        if not math.isfinite(v) or v < 0:
            raise ValidationError(f"speed of {name} must be non-negative")

    n = int(round(cfg.horizon / cfg.dt)) + 1
    t = np.arange(n) * cfg.dt
    L, W, D = cfg.vehicle_length, cfg.lane_width, cfg.lane_change_duration

    def lead_s(name: str) -> float:
        # rear-bumper gap -> front-bumper position relative to A
        return gaps[name] + L

    tracks: Dict[str, Track] = {}
    s, v, a = brake_profile(t, 0.0, ego_v0, 0.0)
    tracks[EGO] = make_track(s, 0.0, v, a, W)

    if kind is ScenarioKind.CUT_IN:
        s, v, a = brake_profile(t, lead_s("B"), speeds["B"], 0.0)
        tracks["B"] = make_track(s, lateral_profile(t, W, 0.0, D), v, a, W)
    elif kind is ScenarioKind.REAR_END:
        s, v, a = brake_profile(t, lead_s("B"), speeds["B"], 0.0)
        tracks["B"] = make_track(s, W, v, a, W)
        s, v, a = brake_profile(t, lead_s("C"), speeds["C"], cfg.lead_decel)
        tracks["C"] = make_track(s, 0.0, v, a, W)
    else:
        s, v, a = brake_profile(t, lead_s("B"), speeds["B"], 0.0)
        tracks["B"] = make_track(s, W, v, a, W)
        s, v, a = brake_profile(t, lead_s("C"), speeds["C"], 0.0)
        tracks["C"] = make_track(s, lateral_profile(t, 0.0, W, D), v, a, W)
        s, v, a = brake_profile(t, lead_s("D"), speeds["D"], 0.0)
        tracks["D"] = make_track(s, 0.0, v, a, W)

    logger.debug("built %s timeline: v0A=%.2f, %d frames", kind.value, ego_v0, n)
    return ScenarioTimeline(kind, cfg.dt, float(ego_v0), t, tracks, cfg)


# ---- Snapshots ---------------------------------------------------------------

_PAIRS = {"B": ("sAB", "hAB"), "C": ("sAC", "hAC"), "D": ("sAD", "hAD")}


def distance_series(timeline: ScenarioTimeline) -> Dict[str, np.ndarray]:
    """
    Per-frame distances and headways feeding the drift and boundary terms.

    Only the pairs the scenario kind defines are present.
    """
    cfg = timeline.config
    ego = timeline.tracks[EGO]
    if cfg.instantaneous_headway:
        denom = np.maximum(ego.v, 0.1)
    else:
        denom = timeline.ego_v0
    out: Dict[str, np.ndarray] = {}
    for name in VEHICLES[timeline.kind][1:]:
        d_name, h_name = _PAIRS[name]
        d = timeline.tracks[name].s - ego.s - cfg.vehicle_length
        out[d_name] = d
        out[h_name] = d / denom
    return out


def snapshot(timeline: ScenarioTimeline, t: float) -> KinematicSnapshot:
    """Distances and headways at time ``t``, linear between frames."""
    require_finite(t=t)
    if t < 0 or t > timeline.horizon + 1e-12:
        raise ValidationError(f"t={t} outside [0, {timeline.horizon}]")
    series = distance_series(timeline)
    values = {k: float(np.interp(t, timeline.t, arr)) for k, arr in series.items()}
    return KinematicSnapshot(v0A=timeline.ego_v0, **values)


# ---- Collisions --------------------------------------------------------------

@dataclass(frozen=True)
class CollisionResult:
    collided: bool
    time: Optional[float] = None
    other: Optional[str] = None

    def __bool__(self) -> bool:
        return self.collided


def detect_collision(timeline: ScenarioTimeline) -> CollisionResult:
    """
    First frame at which A overlaps another vehicle.

    Longitudinal overlap is a bumper-to-bumper gap <= 0 measured from
    whichever vehicle is ahead; lateral overlap needs |dy| < lane_width / 2.
    """
    cfg = timeline.config
    ego = timeline.tracks[EGO]
    L = cfg.vehicle_length
    first: Optional[Tuple[int, str]] = None
    for name in VEHICLES[timeline.kind][1:]:
        other = timeline.tracks[name]
        ahead = other.s >= ego.s
        g = np.where(ahead, other.s - ego.s - L, ego.s - other.s - L)
        hit = (g <= 0) & (np.abs(other.y - ego.y) < 0.5 * cfg.lane_width)
        if hit.any():
            k = int(np.argmax(hit))
            if first is None or k < first[0]:
                first = (k, name)
    if first is None:
        return CollisionResult(False)
    return CollisionResult(True, float(timeline.t[first[0]]), first[1])
