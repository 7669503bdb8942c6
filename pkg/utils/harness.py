"""
Experiment orchestration: synthetic trials, closed-loop rollouts of
decisions, per-condition metrics and model comparison reports.

Reports are deterministic for a given config and seed.  Every random draw
comes from a per-trial stream keyed on (seed, trial index), and parallel
maps keep index order, so the worker count never changes a report.
"""

from __future__ import annotations
import csv
import hashlib
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from utils.baselines import BRAKE_LABEL_THRESHOLD, BaselineModel, run_baseline
from utils.ddm import (
    DDM_DT,
    DDM_WORKERS,
    Choice,
    DdmParams,
    DecisionOutcome,
    choice_probabilities,
    evidence_profile,
    simulate_trial,
    summarize_outcomes,
    trial_rng,
)
from utils.errors import DriverModelError, ValidationError
from utils.kinematics import (
    EGO,
    SPEED_GROUPS,
    VEHICLES,
    ScenarioConfig,
    ScenarioKind,
    ScenarioTimeline,
    brake_profile,
    detect_collision,
    lateral_profile,
    make_scenario,
    make_track,
)
from utils.fixtures import fixture_digest, load_baseline_params, load_params, load_reference, parse_params
from utils.risk import MgdModel, SensitivityLevel, classify_sensitivity, sample_population
from utils.trials import TrialRecord, load_trials

logger = logging.getLogger(__name__)

REPORT_VERSION = "1.0"
DDM = "ddm"
MODELS = (DDM, "idm", "gipps", "mobil")
CURVE_STEP_S = 0.1
# tercile centres of R_s = 2p - 1
LEVEL_RS: Dict[SensitivityLevel, float] = {
    SensitivityLevel.LOW: -2.0 / 3.0,
    SensitivityLevel.MEDIUM: 0.0,
    SensitivityLevel.HIGH: 2.0 / 3.0,
}


# ---- Post-decision control ---------------------------------------------------

class ControlConfig(BaseModel):
    """Ego response once a decision is taken."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    brake_decel: float = -8.0
    # None: use the scenario's lane-change duration
    lane_change_duration: Optional[float] = None
    target_lane: int = 1

    @field_validator("brake_decel")
    @classmethod
    def _neg(cls, v: float) -> float:
        if not v < 0:
            raise ValueError("brake_decel must be negative")
        return v


# spread of per-driver responses in synthetic data; the deceleration spread
# sits inside the observed 1.5-2.3 m/s^2 range
BRAKE_DECEL_SD = 1.5
LANE_CHANGE_DURATION_CV = 0.15


def driver_control(control: ControlConfig, scenario: ScenarioConfig, rng: np.random.Generator) -> ControlConfig:
    """One synthetic driver's response: its own brake strength and lane-change duration around ``control``."""
    decel = float(np.clip(rng.normal(control.brake_decel, BRAKE_DECEL_SD), -12.0, -3.0))
    duration = control.lane_change_duration or scenario.lane_change_duration
    duration = float(np.clip(rng.normal(duration, LANE_CHANGE_DURATION_CV * duration), 0.5 * duration, 2.0 * duration))
    return control.model_copy(update={"brake_decel": decel, "lane_change_duration": duration})


def rollout_with_decision(timeline: ScenarioTimeline, outcome: DecisionOutcome,
                          control: Optional[ControlConfig] = None) -> ScenarioTimeline:
    """
    Replace the ego track with the response to ``outcome``: hold speed until
    rt, then brake to a standstill (Brake) or change lanes at constant
    lateral rate holding speed (Steer).  None keeps cruising.
    """
    control = control or ControlConfig()
    cfg = timeline.config
    t, v0, W = timeline.t, timeline.ego_v0, cfg.lane_width
    y = np.zeros_like(t)
    if outcome.choice is Choice.BRAKE and outcome.rt is not None:
        s, v, a = brake_profile(t, 0.0, v0, control.brake_decel, outcome.rt)
    else:
        s, v, a = brake_profile(t, 0.0, v0, 0.0)
        if outcome.choice is Choice.STEER and outcome.rt is not None:
            duration = control.lane_change_duration or cfg.lane_change_duration
            y = lateral_profile(t, 0.0, control.target_lane * W, duration, outcome.rt)
    return timeline.with_ego(make_track(s, y, v, a, W))


def conflict_time(timeline: ScenarioTimeline, decel: float = -8.0) -> Optional[float]:
    """
    First time at which the cruising ego can no longer stop behind a
    same-lane vehicle using ``decel``; None if that never happens.
    """
    cfg = timeline.config
    ego = timeline.tracks[EGO]
    stop_dist = ego.v * ego.v / (2.0 * -decel)
    first: Optional[int] = None
    for name in VEHICLES[timeline.kind][1:]:
        other = timeline.tracks[name]
        gap = other.s - ego.s - cfg.vehicle_length
        # leading vehicle's own stopping distance counts in the ego's favour
        room = gap + other.v * other.v / (2.0 * -decel)
        bad = (np.abs(other.y - ego.y) < 0.5 * cfg.lane_width) & (other.s > ego.s) & (room < stop_dist)
        if bad.any():
            k = int(np.argmax(bad))
            first = k if first is None else min(first, k)
    return None if first is None else float(timeline.t[first])


# ---- Behaviour metrics -------------------------------------------------------

@dataclass(frozen=True)
class BehaviorMetrics:
    min_ttc: Optional[float]
    braking_distance: Optional[float]
    max_decel: float
    brake_reaction_time: Optional[float]
    peak_lateral_accel: float
    v_b: float

    def as_dict(self) -> Dict[str, Optional[float]]:
        return {
            "min_ttc_s": self.min_ttc,
            "braking_distance_m": self.braking_distance,
            "max_decel_mps2": self.max_decel,
            "brake_reaction_time_s": self.brake_reaction_time,
            "peak_lateral_accel_mps2": self.peak_lateral_accel,
            "vb_mps": self.v_b,
        }


def lane_change_peak_accel(width: float, duration: float) -> float:
    """Peak lateral acceleration of a half-cosine lane change of the same width and duration."""
    return width * math.pi ** 2 / (2.0 * duration ** 2)


def behavior_metrics(rolled: ScenarioTimeline, outcome: DecisionOutcome,
                     control: Optional[ControlConfig] = None) -> BehaviorMetrics:
    control = control or ControlConfig()
    cfg = rolled.config
    ego = rolled.tracks[EGO]
    min_ttc = math.inf
    for name in VEHICLES[rolled.kind][1:]:
        other = rolled.tracks[name]
        gap = other.s - ego.s - cfg.vehicle_length
        closing = ego.v - other.v
        ok = (np.abs(other.y - ego.y) < 0.5 * cfg.lane_width) & (other.s > ego.s) & (closing > 0) & (gap > 0)
        if ok.any():
            min_ttc = min(min_ttc, float((gap[ok] / closing[ok]).min()))

    braking_distance = brt = None
    v_b = rolled.ego_v0
    peak_lat = 0.0
    if outcome.rt is not None:
        i0 = min(int(np.searchsorted(rolled.t, outcome.rt - 1e-9)), rolled.n_frames - 1)
        v_b = float(ego.v[i0])
        if outcome.choice is Choice.BRAKE:
            brt = outcome.rt
            stopped = np.nonzero(ego.v[i0:] <= 0)[0]
            i1 = i0 + int(stopped[0]) if stopped.size else rolled.n_frames - 1
            braking_distance = float(ego.s[i1] - ego.s[i0])
        elif outcome.choice is Choice.STEER:
            duration = control.lane_change_duration or cfg.lane_change_duration
            peak_lat = lane_change_peak_accel(cfg.lane_width * abs(control.target_lane), duration)
    return BehaviorMetrics(
        min_ttc=None if math.isinf(min_ttc) else min_ttc,
        braking_distance=braking_distance,
        max_decel=float(max(-ego.a.min(), 0.0)),
        brake_reaction_time=brt,
        peak_lateral_accel=peak_lat,
        v_b=v_b,
    )


# ---- Synthetic trials --------------------------------------------------------

def _rows_for(kind: ScenarioKind, speeds: Sequence[float], n_per_group: int) -> List[Tuple[int, int, float]]:
    return [(g * n_per_group + j, g, float(v)) for g, v in enumerate(speeds) for j in range(n_per_group)]


def synthesize_trials(p: DdmParams, kind, speed_groups: Optional[Sequence[float]] = None, n_per_group: int = 1000,
                      master_seed: int = 0, scenario_config: Optional[ScenarioConfig] = None,
                      behavior_model: Optional[MgdModel] = None, control: Optional[ControlConfig] = None,
                      workers: int = DDM_WORKERS, dt: float = DDM_DT, driver_spread: bool = True) -> List[TrialRecord]:
    """
    Simulated trials at each group speed, rolled out to score collisions.

    Without ``behavior_model`` every driver has R_s = 0 and the behaviour
    columns come from the rollout; with ``driver_spread`` each driver brakes
    and changes lanes in its own style (see ``driver_control``).  With a
    ``behavior_model``, each trial draws features from the population and
    simulates with the matching R_s.
    """

    kind = ScenarioKind.parse(kind)
    if n_per_group < 1:
        raise ValidationError("n_per_group must be at least 1")
    speeds = list(speed_groups or SPEED_GROUPS[kind])
    control = control or ControlConfig()
    timelines = [make_scenario(kind, v, scenario_config) for v in speeds]
    profiles = [evidence_profile(tl, p, 0.0) for tl in timelines]

    def one(row: Tuple[int, int, float]) -> TrialRecord:
        i, g, v = row
        tl = timelines[g]
        rng = trial_rng(master_seed, i)
        features = None
        R_s = 0.0
        profile = profiles[g]
        if behavior_model is not None:
            features = sample_population(behavior_model, 1, np.random.default_rng([int(master_seed), i, 1]))[0]
            R_s = classify_sensitivity(features, behavior_model).R_s
            profile = None
        outcome = simulate_trial(tl, p, R_s, rng, dt=dt, profile=profile)
        style = control
        if driver_spread:
            style = driver_control(control, tl.config, np.random.default_rng([int(master_seed), i, 2]))
        rolled = rollout_with_decision(tl, outcome, style)
        m = behavior_metrics(rolled, outcome, style)
        beh = {"v_b": m.v_b, "a_x": m.max_decel, "a_y": m.peak_lateral_accel}
        if features is not None:
            beh.update({f: float(x) for f, x in zip(behavior_model.features, features)})
        return TrialRecord(
            participant_id=f"syn-{kind.value}-{g}-{i:05d}",
            scenario=kind,
            v0A=v,
            choice=outcome.choice,
            rt=outcome.rt,
            collided=detect_collision(rolled).collided,
            **beh,
        )

    rows = _rows_for(kind, speeds, n_per_group)
    if workers <= 1:
        out = [one(r) for r in rows]
    else:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            out = list(executor.map(one, rows))
    logger.info("synthesised %d %s trials over %d speed groups", len(out), kind.value, len(speeds))
    return out


# ---- Metrics -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RtCurve:
    choice: Choice
    t: np.ndarray
    p: np.ndarray

    def at(self, times) -> np.ndarray:
        idx = np.searchsorted(self.t, np.asarray(times, dtype=float), side="right")
        return np.concatenate([[0.0], self.p])[idx]


def _choice_of(item) -> Choice:
    if isinstance(item, Choice):
        return item
    if hasattr(item, "choice"):
        return item.choice
    if hasattr(item, "outcome"):
        return item.outcome.choice
    return Choice.parse(item)


def cumulative_rt_curve(records: Sequence, by) -> RtCurve:
    """
    Empirical CDF of rt for one choice; every record, censored or of the
    other choice, counts in the denominator.
    """
    choice = Choice.parse(by)
    records = list(records)
    if not any(getattr(r, "rt", None) is not None for r in records):
        raise ValidationError("need at least one record with an rt")
    rts = np.sort(np.array([r.rt for r in records if r.choice is choice and r.rt is not None], dtype=float))
    return RtCurve(choice, rts, np.arange(1, rts.size + 1) / len(records))


def decision_accuracy(predicted: Sequence, observed: Sequence) -> float:
    """Percent of pairs where the prediction names the observed choice; a None prediction never matches."""
    predicted, observed = list(predicted), list(observed)
    if len(predicted) != len(observed):
        raise ValidationError(f"length mismatch: {len(predicted)} predictions, {len(observed)} observations")
    if not predicted:
        raise ValidationError("no decisions to compare")
    hits = 0
    for pr, ob in zip(predicted, observed):
        c = _choice_of(pr)
        hits += c is not Choice.NONE and c is _choice_of(ob)
    return 100.0 * hits / len(predicted)


def _collided(item) -> bool:
    if isinstance(item, (bool, np.bool_)):
        return bool(item)
    if hasattr(item, "collided"):
        return bool(item.collided)
    if hasattr(item, "collision"):
        return bool(item.collision.collided)
    raise ValidationError(f"cannot read a collision flag from {type(item).__name__}")


def collision_rate(outcomes: Iterable) -> float:
    flags = [_collided(o) for o in outcomes]
    if not flags:
        return 0.0
    return 100.0 * sum(flags) / len(flags)


def nearest_group(v0A: float, speeds: Sequence[float]) -> float:
    return float(min(speeds, key=lambda s: (abs(s - v0A), s)))


# ---- Experiment --------------------------------------------------------------

class ExperimentConfig(BaseModel):
    """Experiment document accepted by ``run_experiment`` and the compare endpoint."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    scenarios: List[ScenarioKind] = Field(default_factory=lambda: [ScenarioKind.CUT_IN])
    models: List[str] = Field(default_factory=lambda: list(MODELS))
    speed_groups: Dict[str, List[float]] = Field(default_factory=dict)
    n_per_group: int = 1000
    seed: int = 0
    trials_path: Optional[str] = None
    risk_sweep: List[float] = Field(default_factory=list)
    risk_trials: int = 1000
    params: Dict[str, Dict[str, Any]] = Field(default_factory=dict)
    scenario: ScenarioConfig = Field(default_factory=ScenarioConfig)
    control: ControlConfig = Field(default_factory=ControlConfig)
    dt: float = DDM_DT
    # execution only; excluded from the config hash
    workers: int = DDM_WORKERS

    @field_validator("scenarios", mode="before")
    @classmethod
    def _kinds(cls, v):
        return [ScenarioKind.parse(k) for k in (v or [])]

    @field_validator("models")
    @classmethod
    def _models(cls, v: List[str]) -> List[str]:
        out = [m.strip().lower() for m in v]
        unknown = [m for m in out if m not in MODELS]
        if unknown:
            raise ValueError(f"unknown models: {', '.join(unknown)}")
        return out

    @field_validator("n_per_group", "risk_trials")
    @classmethod
    def _count(cls, v: int) -> int:
        if v < 1:
            raise ValueError("must be at least 1")
        return v

    def speeds_for(self, kind: ScenarioKind) -> List[float]:
        return list(self.speed_groups.get(kind.value) or SPEED_GROUPS[kind])

    def config_hash(self) -> str:
        body = self.model_dump(mode="json", exclude={"workers"})
        return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()


@dataclass(frozen=True, eq=False)
class ExperimentReport:
    metadata: Dict[str, Any]
    conditions: List[Dict[str, Any]] = field(default_factory=list)
    risk_sweep: List[Dict[str, Any]] = field(default_factory=list)
    reference: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "metadata": self.metadata,
            "conditions": self.conditions,
            "risk_sweep": self.risk_sweep,
            "reference": self.reference,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def write_json(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ExperimentReport":
        if not isinstance(data, dict) or "metadata" not in data or "conditions" not in data:
            raise ValidationError("not an experiment report: needs metadata and conditions")
        return cls(data["metadata"], list(data["conditions"]), list(data.get("risk_sweep", [])),
                   dict(data.get("reference", {})))

    def write_tables(self, out_dir) -> List[str]:
        """One plot-ready CSV per table or curve family; returns the paths written."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = []

        def table(name: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
            path = out / name
            with open(path, "w", newline="") as f:
                w = csv.writer(f)
                w.writerow(header)
                w.writerows(rows)
            written.append(str(path))

        conds = self.conditions
        table("choice_shares.csv", ["scenario", "v0A_mps", "model", "p_brake", "p_steer", "p_none"],
              ([c["scenario"], c["v0A"], m, s["brake"], s["steer"], s["none"]]
               for c in conds for m, s in sorted(c["shares"].items())))
        table("decision_stage.csv", ["scenario", "v0A_mps", "choice", "mean_rt_s", "q10", "q30", "q50", "q70", "q90",
                                     "mean_t_nd_s", "mean_accumulation_s"],
              ([c["scenario"], c["v0A"], ch, c["ddm"]["mean_rt"].get(ch)]
               + [c["ddm"]["rt_quantiles"].get(ch, {}).get(q) for q in ("0.1", "0.3", "0.5", "0.7", "0.9")]
               + [c["ddm"]["mean_t_nd"], c["ddm"]["mean_accumulation"]]
               for c in conds if c.get("ddm") for ch in ("brake", "steer")))
        table("model_comparison.csv", ["scenario", "v0A_mps", "model", "accuracy_pct", "collision_pct"],
              ([c["scenario"], c["v0A"], m, v["accuracy_pct"], v["collision_pct"]]
               for c in conds for m, v in sorted(c["models"].items())))
        table("rt_curves.csv", ["scenario", "v0A_mps", "source", "choice", "t_s", "p"],
              ([c["scenario"], c["v0A"], src, ch, t, p]
               for c in conds for src, curves in sorted(c["rt_curves"].items())
               for ch, pts in sorted(curves.items()) for t, p in zip(c["curve_t"], pts)))
        table("observed_vs_model.csv", ["scenario", "v0A_mps", "n_observed", "obs_brake", "obs_steer", "obs_none",
                                        "model_brake", "model_steer", "model_none"],
              ([c["scenario"], c["v0A"], c["observed"]["n"], c["observed"]["brake"], c["observed"]["steer"],
                c["observed"]["none"]] + [c["shares"].get(DDM, {}).get(k) for k in ("brake", "steer", "none")]
               for c in conds))
        if self.risk_sweep:
            table("risk_sweep.csv", ["scenario", "v0A_mps", "R_s", "p_brake", "p_steer", "p_none", "mean_rt_s"],
                  ([r["scenario"], r["v0A"], r["R_s"], r["p_brake"], r["p_steer"], r["p_none"], r["mean_rt"]]
                   for r in self.risk_sweep))
        return written


def _shares(choices: Sequence[Choice]) -> Dict[str, float]:
    n = len(choices)
    return {c.value: sum(x is c for x in choices) / n for c in (Choice.BRAKE, Choice.STEER, Choice.NONE)}


def _curve_points(records: Sequence, grid: np.ndarray) -> Dict[str, List[float]]:
    out = {}
    for ch in (Choice.BRAKE, Choice.STEER):
        try:
            out[ch.value] = cumulative_rt_curve(records, ch).at(grid).tolist()
        except ValidationError:
            out[ch.value] = [0.0] * grid.size
    return out


def _mean_rt(outcomes: Sequence[DecisionOutcome]) -> Optional[float]:
    rts = [o.rt for o in outcomes if o.rt is not None]
    return float(np.mean(rts)) if rts else None


def _resolve_params(kind: ScenarioKind, config: ExperimentConfig, fixtures_dir: Optional[str]) -> DdmParams:

    base = load_params(kind, fixtures_dir)
    override = config.params.get(kind.value)
    if not override:
        return base
    return parse_params({**base.model_dump(mode="json"), **override}, f"{kind.value} parameter override")


def _run_condition(kind: ScenarioKind, speed: float, observed: list, indices: List[int], p: DdmParams,
                   config: ExperimentConfig, baseline_params: Dict[str, Any], grid: np.ndarray) -> Dict[str, Any]:
    """Simulate every requested model against the observed trials of one condition."""
    cache: Dict[float, ScenarioTimeline] = {}

    def timeline_for(v: float) -> ScenarioTimeline:
        key = round(v, 2)
        if key not in cache:
            cache[key] = make_scenario(kind, key, config.scenario)
        return cache[key]

    result: Dict[str, Any] = {"scenario": kind.value, "v0A": speed, "shares": {}, "models": {}}
    obs_choices = [tr.choice for tr in observed]
    obs = _shares(obs_choices)
    result["observed"] = {"n": len(observed), **obs}
    result["curve_t"] = grid.tolist()
    result["rt_curves"] = {"observed": _curve_points(observed, grid)}

    if DDM in config.models:
        outcomes, collided = [], []
        for tr, i in zip(observed, indices):
            tl = timeline_for(tr.v0A)
            o = simulate_trial(tl, p, 0.0, trial_rng(config.seed, i), dt=config.dt)
            outcomes.append(o)
            collided.append(detect_collision(rollout_with_decision(tl, o, config.control)).collided)
        summary = summarize_outcomes(outcomes)
        result["shares"][DDM] = _shares([o.choice for o in outcomes])
        result["ddm"] = summary.as_dict()
        result["rt_curves"][DDM] = _curve_points(outcomes, grid)
        result["models"][DDM] = {
            "accuracy_pct": decision_accuracy(outcomes, obs_choices),
            "collision_pct": collision_rate(collided),
        }

    for name in config.models:
        if name == DDM:
            continue
        runs = {}
        predicted, collided = [], []
        for tr in observed:
            key = round(tr.v0A, 2)
            if key not in runs:
                runs[key] = run_baseline(timeline_for(tr.v0A), BaselineModel.parse(name), baseline_params,
                                         baseline_params.get("brake_threshold", BRAKE_LABEL_THRESHOLD))
            predicted.append(runs[key].outcome.choice)
            collided.append(runs[key].collision.collided)
        result["shares"][name] = _shares(predicted)
        result["models"][name] = {
            "accuracy_pct": decision_accuracy(predicted, obs_choices),
            "collision_pct": collision_rate(collided),
        }
    return result


def run_experiment(config: ExperimentConfig, fixtures_dir: Optional[str] = None) -> ExperimentReport:
    """
    Synthesise (or load) observed trials, run every requested model on the
    same conditions, and collect choice shares, decision-stage metrics,
    rt curves, accuracy and collision rates per speed group.
    """

    baseline_params = load_baseline_params(fixtures_dir)
    reference = load_reference(fixtures_dir)
    empirical = load_trials(config.trials_path) if config.trials_path else None

    conditions: List[Dict[str, Any]] = []
    sweep: List[Dict[str, Any]] = []
    digests = {"baselines.json": fixture_digest("baselines.json", fixtures_dir),
               "reference.json": fixture_digest("reference.json", fixtures_dir)}

    for kind in config.scenarios:
        try:
            p = _resolve_params(kind, config, fixtures_dir)
            digests[f"{kind.value}.json"] = fixture_digest(f"{kind.value}.json", fixtures_dir)
            speeds = config.speeds_for(kind)
            grid = np.round(np.arange(0.0, config.scenario.horizon + 1e-9, CURVE_STEP_S), 10)
            if empirical is None:
                observed = synthesize_trials(p, kind, speeds, config.n_per_group, config.seed, config.scenario,
                                             control=config.control, workers=config.workers, dt=config.dt)
                indexed = list(enumerate(observed))
            else:
                indexed = [(i, tr) for i, tr in enumerate(empirical) if tr.scenario is kind]
                if not indexed:
                    raise ValidationError(f"trial file has no {kind.value} trials")
            groups: Dict[float, List[Tuple[int, Any]]] = {}
            for i, tr in indexed:
                groups.setdefault(nearest_group(tr.v0A, speeds), []).append((i, tr))

            def one(speed: float) -> Dict[str, Any]:
                members = groups.get(speed, [])
                return _run_condition(kind, speed, [tr for _, tr in members], [i for i, _ in members],
                                      p, config, baseline_params, grid)

            present = [s for s in speeds if s in groups]
            if config.workers <= 1:
                conditions.extend(one(s) for s in present)
            else:
                with ThreadPoolExecutor(max_workers=config.workers) as executor:
                    conditions.extend(executor.map(one, present))

            for R_s in config.risk_sweep:
                for speed in speeds:
                    tl = make_scenario(kind, speed, config.scenario)
                    s = choice_probabilities(tl, p, R_s, config.risk_trials, config.seed, config.workers,
                                             config.dt, keep_outcomes=True)
                    sweep.append({"scenario": kind.value, "v0A": speed, "R_s": R_s, "p_brake": s.p_brake,
                                  "p_steer": s.p_steer, "p_none": s.p_none, "mean_rt": _mean_rt(s.outcomes)})
        except DriverModelError as e:
            e.args = (f"{kind.value}: {e}",) + e.args[1:]
            raise

    metadata = {
        "version": REPORT_VERSION,
        "seed": config.seed,
        "config_hash": config.config_hash(),
        "fixtures": digests,
        "source": "trials" if empirical is not None else "synthetic",
        "models": list(config.models),
    }
    ref = {k.value: {"behavior": reference.get("behavior", {}).get(k.value),
                     "comparison": reference.get("comparison", {}).get(k.value)}
           for k in config.scenarios}
    logger.info("experiment %s: %d conditions", metadata["config_hash"][:12], len(conditions))
    return ExperimentReport(metadata, conditions, sweep, ref)


# ---- Traces ------------------------------------------------------------------

TRACE_COLUMNS = ("condition", "trial", "t", "x", "upper", "lower", "choice")


def _decimate(trace: np.ndarray, step: float) -> np.ndarray:
    if trace.size == 0:
        return trace
    k = trace[:, 0] / step
    on_grid = np.abs(k - np.rint(k)) < 1e-6
    on_grid[-1] = True
    return trace[on_grid]


def export_traces(p: DdmParams, kind, path, speeds: Optional[Sequence[float]] = None, n_traces: int = 5,
                  master_seed: int = 0, n_per_group: Optional[int] = None, R_s: float = 0.0,
                  scenario_config: Optional[ScenarioConfig] = None, dt: float = DDM_DT) -> int:
    """
    Write evidence traces of the first ``n_traces`` trials of each speed
    group.  Trial indices match ``synthesize_trials`` with the same seed and
    ``n_per_group``; rows are decimated to the kinematic step.
    """
    kind = ScenarioKind.parse(kind)
    speeds = list(speeds or SPEED_GROUPS[kind])
    n_per_group = n_per_group or n_traces
    if n_traces < 1 or n_traces > n_per_group:
        raise ValidationError("n_traces must lie between 1 and n_per_group")
    rows = 0
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(TRACE_COLUMNS)
        for g, v in enumerate(speeds):
            tl = make_scenario(kind, v, scenario_config)
            profile = evidence_profile(tl, p, R_s)
            label = f"{kind.value}@{v:.2f}"
            for j in range(n_traces):
                i = g * n_per_group + j
                o = simulate_trial(tl, p, R_s, trial_rng(master_seed, i), record_trace=True, dt=dt, profile=profile)
                for t, x, b in _decimate(o.trace, tl.dt):
                    w.writerow([label, i, f"{t:.4f}", f"{x:.6g}", f"{b:.6g}", f"{-b:.6g}", o.choice.value])
                    rows += 1
    logger.info("wrote %d trace rows to %s", rows, path)
    return rows


@dataclass(frozen=True, eq=False)
class RiskTrace:
    level: SensitivityLevel
    R_s: float
    outcome: DecisionOutcome
    mean_boundary: Optional[float]
    late: bool

    def as_dict(self) -> Dict[str, Any]:
        return {
            "level": self.level.value,
            "R_s": self.R_s,
            "choice": self.outcome.choice.value,
            "rt": self.outcome.rt,
            "t_nd": self.outcome.t_nd,
            "mean_boundary": self.mean_boundary,
            "late": self.late,
        }


def risk_sensitivity_traces(kind, v0A: float, p: DdmParams,
                            levels: Optional[Dict[SensitivityLevel, float]] = None, master_seed: int = 0,
                            scenario_config: Optional[ScenarioConfig] = None, dt: float = DDM_DT,
                            brake_decel: float = -8.0) -> List[RiskTrace]:
    """
    One traced decision per sensitivity level, all drawn from the same
    random stream so the levels differ only through R_s.

    A decision is late when it comes after the conflict time (or never).
    """
    kind = ScenarioKind.parse(kind)
    levels = levels or LEVEL_RS
    tl = make_scenario(kind, v0A, scenario_config)
    t_conflict = conflict_time(tl, brake_decel)
    out = []
    for level, R_s in levels.items():
        o = simulate_trial(tl, p, R_s, trial_rng(master_seed, 0), record_trace=True, dt=dt)
        acc = o.trace[o.trace[:, 0] >= o.t_nd] if o.trace is not None and o.trace.size else np.empty((0, 3))
        mean_b = float(acc[:, 2].mean()) if acc.size else None
        late = o.rt is None or (t_conflict is not None and o.rt > t_conflict)
        out.append(RiskTrace(level, R_s, o, mean_b, late))
        logger.debug("%s level %s: %s at %s (late=%s)", kind.value, level.value, o.choice.value, o.rt, late)
    return out
