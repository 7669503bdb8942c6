"""
Classical, non-cognitive comparison models: IDM and Gipps car following and
MOBIL lane changing.

``run_baseline`` drives the ego vehicle closed-loop through a scenario
timeline (surrounding vehicles stay on their scripts) and labels the first
deliberate braking or lane-change command as the model's decision.
"""

from __future__ import annotations
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from utils.ddm import Choice, DecisionOutcome
from utils.errors import ValidationError
from utils.kinematics import (
    EGO,
    CollisionResult,
    ScenarioTimeline,
    VehicleState,
    detect_collision,
    make_track,
    step_vehicle,
)

logger = logging.getLogger(__name__)

BRAKE_LABEL_THRESHOLD = -0.5


class BaselineModel(str, Enum):
    IDM = "idm"
    GIPPS = "gipps"
    MOBIL = "mobil"

    @classmethod
    def parse(cls, value) -> "BaselineModel":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValidationError(f"unknown baseline model {value!r}") from None


class IdmParams(BaseModel):
    """IDM parameters; ``v0`` None means the scenario's initial ego speed."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    v0: Optional[float] = None
    T: float = 1.5
    s0: float = 2.0
    a: float = 1.4
    b: float = 2.0
    delta: float = 4.0
    # physical braking limit, also returned when the gap has closed
    max_braking: float = 8.0

    @model_validator(mode="after")
    def _positive(self) -> "IdmParams":
        for name in ("T", "s0", "a", "b", "delta", "max_braking"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.v0 is not None and not self.v0 > 0:
            raise ValueError("v0 must be positive")
        return self


class GippsParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    v_desired: Optional[float] = None
    a_max: float = 1.7
    b_max: float = -8.0
    b_lead: float = -8.0
    tau: float = 0.67
    s0: float = 2.0

    @model_validator(mode="after")
    def _signs(self) -> "GippsParams":
        if not (self.b_max < 0 and self.b_lead < 0):
            raise ValueError("braking values must be negative")
        if not (self.tau > 0 and self.a_max > 0 and self.s0 >= 0):
            raise ValueError("tau and a_max must be positive, s0 non-negative")
        return self


class MobilParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    politeness: float = 0.5
    threshold: float = 0.1
    b_safe: float = 4.0

    @model_validator(mode="after")
    def _ranges(self) -> "MobilParams":
        if not 0.0 <= self.politeness <= 1.0:
            raise ValueError("politeness must lie in [0, 1]")
        if not self.b_safe > 0:
            raise ValueError("b_safe must be positive")
        return self


# ---- IDM ---------------------------------------------------------------------

def desired_gap(ego: VehicleState, lead: VehicleState, p: IdmParams) -> float:
    dv = ego.v - lead.v
    return p.s0 + max(0.0, ego.v * p.T + ego.v * dv / (2.0 * math.sqrt(p.a * p.b)))


def idm_accel(ego: VehicleState, lead: Optional[VehicleState], p: IdmParams,
              desired_speed: Optional[float] = None, lead_len: float = 5.0) -> float:
    v0 = desired_speed if desired_speed is not None else p.v0
    if v0 is None or v0 <= 0:
        raise ValidationError("IDM desired speed is not set")
    acc = p.a * (1.0 - (ego.v / v0) ** p.delta)
    if lead is None:
        return acc
    s = lead.s - ego.s - lead_len
    if s <= 0:
        return -p.max_braking
    return acc - p.a * (desired_gap(ego, lead, p) / s) ** 2


# ---- Gipps -------------------------------------------------------------------

def gipps_speed(ego: VehicleState, lead: Optional[VehicleState], p: GippsParams, dt: Optional[float] = None,
                desired_speed: Optional[float] = None, lead_len: float = 5.0) -> float:
    """
    Speed commanded one reaction time ahead: the smaller of the
    acceleration-limited and the safe-braking speeds.
    """
    V = desired_speed if desired_speed is not None else p.v_desired
    if V is None or V <= 0:
        raise ValidationError("Gipps desired speed is not set")
    tau = p.tau if dt is None else dt
    v = ego.v
    ratio = v / V
    v_acc = v + 2.5 * p.a_max * tau * (1.0 - ratio) * math.sqrt(max(0.025 + ratio, 0.0))
    if lead is None:
        return max(v_acc, 0.0)
    b = p.b_max
    free = lead.s - ego.s - lead_len - p.s0
    disc = b * b * tau * tau - b * (2.0 * free - v * tau - lead.v * lead.v / p.b_lead)
    v_safe = b * tau + math.sqrt(disc) if disc > 0 else 0.0
    return max(min(v_acc, v_safe), 0.0)


# ---- MOBIL -------------------------------------------------------------------

@dataclass(frozen=True)
class Neighbors:
    lead: Optional[VehicleState] = None
    follower: Optional[VehicleState] = None
    target_lead: Optional[VehicleState] = None
    target_follower: Optional[VehicleState] = None


def mobil_decide(ego: VehicleState, neighbors: Neighbors, idm: IdmParams, p: MobilParams,
                 desired_speed: Optional[float] = None, vehicle_length: float = 5.0) -> bool:
    """
    Lane-change rule: the new follower must not brake harder than
    ``b_safe`` and the acceleration gain of the ego plus the politeness-
    weighted gain of both followers must exceed ``threshold``.

    Followers are assumed to cruise at their current speed.
    """
    def acc(veh, lead, v0=None):
        if veh is None:
            return 0.0
        return idm_accel(veh, lead, idm, v0 if v0 is not None else max(veh.v, 0.1), vehicle_length)

    nf, of = neighbors.target_follower, neighbors.follower
    nf_new = acc(nf, ego)
    if nf is not None and nf_new < -p.b_safe:
        return False
    v0 = desired_speed if desired_speed is not None else idm.v0
    ego_old = idm_accel(ego, neighbors.lead, idm, v0, vehicle_length)
    ego_new = idm_accel(ego, neighbors.target_lead, idm, v0, vehicle_length)
    nf_old = acc(nf, neighbors.target_lead)
    of_old = acc(of, ego)
    of_new = acc(of, neighbors.lead)
    gain = ego_new - ego_old + p.politeness * (nf_new - nf_old + of_new - of_old)
    return gain > p.threshold


# ---- Closed-loop rollout -----------------------------------------------------

@dataclass(frozen=True, eq=False)
class BaselineRun:
    model: BaselineModel
    outcome: DecisionOutcome
    timeline: ScenarioTimeline
    collision: CollisionResult


def _lane(y: float, width: float) -> int:
    return int(round(y / width))


def _neighbors(states: Dict[str, VehicleState], ego: VehicleState, lane: int, width: float) -> Tuple[Optional[str], Optional[str]]:
    """Names of the nearest vehicles ahead of and behind the ego in ``lane``."""
    ahead: Optional[str] = None
    behind: Optional[str] = None
    for name, st in states.items():
        if name == EGO or _lane(st.y, width) != lane:
            continue
        if st.s > ego.s:
            if ahead is None or st.s < states[ahead].s:
                ahead = name
        elif behind is None or st.s > states[behind].s:
            behind = name
    return ahead, behind


def run_baseline(timeline: ScenarioTimeline, model, params: Optional[dict] = None,
                 brake_threshold: float = BRAKE_LABEL_THRESHOLD) -> BaselineRun:
    """
    Roll the ego vehicle through ``timeline`` under a baseline controller.

    ``params`` may hold ``idm``, ``gipps`` and ``mobil`` parameter objects;
    MOBIL uses IDM for its longitudinal control.  The outcome's rt is the
    time of the first labelled command (no accumulation, no non-decision
    time).  Commands below ``brake_threshold`` are labelled Brake, and so is
    any deceleration once a vehicle has cut into the ego lane ahead.
    """
    model = BaselineModel.parse(model)
    params = params or {}
    idm: IdmParams = params.get("idm") or IdmParams()
    gipps: GippsParams = params.get("gipps") or GippsParams()
    mobil: MobilParams = params.get("mobil") or MobilParams()

    cfg = timeline.config
    dt, W, L = timeline.dt, cfg.lane_width, cfg.vehicle_length
    v_des = idm.v0 or timeline.ego_v0
    g_des = gipps.v_desired or timeline.ego_v0
    gipps_every = max(int(round(gipps.tau / dt)), 1)
    gipps_window = gipps_every * dt

    n = timeline.n_frames
    s = np.zeros(n); y = np.zeros(n); v = np.zeros(n); a = np.zeros(n)
    state = timeline.tracks[EGO].state(0)
    lane_change: Optional[tuple] = None  # (t_start, y_from, y_to)
    choice, rt = Choice.NONE, None
    accel = 0.0
    prev_lanes: Dict[str, int] = {}
    cut_in = False

    for i in range(n):
        t = float(timeline.t[i])
        if lane_change is not None:
            t0, y_from, y_to = lane_change
            frac = min(max((t - t0) / cfg.lane_change_duration, 0.0), 1.0)
            state = VehicleState(state.s, y_from + (y_to - y_from) * frac, state.v, state.a, _lane(y_from + (y_to - y_from) * frac, W))
            if frac >= 1.0:
                lane_change = None
        states = timeline.frame(i)
        states[EGO] = state
        lane = _lane(state.y, W)
        lead_name, follower_name = _neighbors(states, state, lane, W)
        lead = states[lead_name] if lead_name else None
        follower = states[follower_name] if follower_name else None
        if lead_name and lane_change is None and lead_name in prev_lanes and prev_lanes[lead_name] != lane:
            cut_in = True
        prev_lanes = {name: _lane(st.y, W) for name, st in states.items() if name != EGO}

        if model is BaselineModel.GIPPS:
            if i % gipps_every == 0:
                target = gipps_speed(state, lead, gipps, gipps_window, g_des, L)
                accel = min(max((target - state.v) / gipps_window, gipps.b_max), gipps.a_max)
        else:
            accel = idm_accel(state, lead, idm, v_des, L)
            accel = min(max(accel, -idm.max_braking), idm.a)

        if model is BaselineModel.MOBIL and lane_change is None and choice is Choice.NONE:
            target_lane = 1 if lane == 0 else 0
            other_lead, other_follower = (states[nm] if nm else None for nm in _neighbors(states, state, target_lane, W))
            nb = Neighbors(lead, follower, other_lead, other_follower)
            if mobil_decide(state, nb, idm, mobil, v_des, L):
                choice, rt = Choice.STEER, t
                lane_change = (t, state.y, target_lane * W)
                accel = min(max(idm_accel(state, other_lead, idm, v_des, L), -idm.max_braking), idm.a)

        if choice is Choice.NONE and (accel < brake_threshold or (cut_in and accel < 0.0)):
            choice, rt = Choice.BRAKE, t

        s[i], y[i], v[i], a[i] = state.s, state.y, state.v, accel
        if i + 1 < n:
            state = step_vehicle(state, accel, dt)

    rolled = timeline.with_ego(make_track(s, y, v, a, W))
    collision = detect_collision(rolled)
    outcome = DecisionOutcome(choice, rt, 0.0)
    logger.debug("%s on %s v0A=%.2f: %s at %s, collision=%s",
                 model.value, timeline.kind.value, timeline.ego_v0, choice.value, rt, collision.collided)
    return BaselineRun(model, outcome, rolled, collision)


def run_baselines(timeline: ScenarioTimeline, models: List, params: Optional[dict] = None) -> Dict[BaselineModel, BaselineRun]:
    return {BaselineModel.parse(m): run_baseline(timeline, m, params) for m in models}
