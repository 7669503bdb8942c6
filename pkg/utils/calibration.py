"""
Parameter calibration: binned first-passage likelihood, BIC loss and a
seeded differential-evolution optimiser.

The likelihood of a trial is the probability mass the model puts in the
trial's (choice, rt-bin) cell.  Hit times come from the grid solver started
at the mean non-decision time; the non-decision spread is folded back in by
convolving with a discretised Gaussian on the same bins.  Censored trials
score the mass that never reaches a boundary within the horizon.
"""

from __future__ import annotations
import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator
from scipy.stats import norm

from utils.ddm import DDM_DT, DDM_WORKERS, Choice, DdmParams, evidence_profile, free_parameter_names, run_trials
from utils.errors import DriverModelError, NumericalError, ValidationError
from utils.first_passage import GridConfig, solve_profile
from utils.fixtures import load_params
from utils.kinematics import ScenarioConfig, ScenarioKind, ScenarioTimeline, make_scenario
from utils.trials import TrialRecord

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-12
LOG_FLOOR = math.log(PROB_FLOOR)
BACKENDS = ("grid", "mc")


def bic(loglik: float, k: int, n: int) -> float:
    if n < 1 or k < 0:
        raise ValidationError("bic needs n >= 1 and k >= 0")
    return k * math.log(n) - 2.0 * loglik


# ---- Likelihood --------------------------------------------------------------

class LikelihoodSettings(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    rt_bin_s: float = 0.05
    backend: str = "grid"
    # grid nodes per boundary half-width before stability refinement
    nodes_per_bound: int = 10
    max_nodes: int = 801
    max_steps: int = 20000
    mc_trials: int = 2000
    mc_seed: int = 0
    mc_dt: float = DDM_DT
    # trials whose speeds agree to this resolution share one solve
    speed_resolution: float = 0.01

    @field_validator("rt_bin_s", "speed_resolution", "mc_dt")
    @classmethod
    def _positive(cls, v: float) -> float:
        if not v > 0:
            raise ValueError("must be positive")
        return v

    @field_validator("backend")
    @classmethod
    def _backend(cls, v: str) -> str:
        v = v.strip().lower()
        if v not in BACKENDS:
            raise ValueError(f"backend must be one of {BACKENDS}")
        return v


@dataclass(frozen=True, eq=False)
class RtDistribution:
    """Probability mass per rt bin for each choice; bin i covers [i*w, (i+1)*w)."""

    bin_width: float
    brake: np.ndarray
    steer: np.ndarray

    @property
    def censored_mass(self) -> float:
        return max(1.0 - float(self.brake.sum()) - float(self.steer.sum()), 0.0)

    def probability(self, choice: Choice, rt: Optional[float]) -> float:
        if choice is Choice.NONE:
            return self.censored_mass
        if rt is None or rt < 0:
            return 0.0
        arr = self.steer if choice is Choice.STEER else self.brake
        i = int(rt // self.bin_width)
        return float(arr[i]) if i < arr.size else 0.0

    def log_prob(self, choice: Choice, rt: Optional[float]) -> float:
        return math.log(max(self.probability(choice, rt), PROB_FLOOR))


def _n_bins(horizon: float, width: float) -> int:
    return int(math.ceil(horizon / width - 1e-9)) + 1


def _bin_mass(t: np.ndarray, mass: np.ndarray, width: float, n_bins: int) -> np.ndarray:
    idx = np.minimum((t // width).astype(int), n_bins - 1)
    return np.bincount(idx, weights=mass, minlength=n_bins)[:n_bins]


def nondecision_kernel(p: DdmParams, width: float, n_bins: int) -> np.ndarray:
    """
    Gaussian non-decision mass nearest each multiple of ``width``, truncated
    to positive times and renormalised.

    Bin j covers [(j - 1/2) w, (j + 1/2) w), so hit-time bin i shifted by
    kernel bin j is centred on output bin i + j.
    """
    edges = np.maximum((np.arange(n_bins + 1) - 0.5) * width, 0.0)
    cdf = norm.cdf(edges, loc=p.mu_nd, scale=p.sigma_nd)
    kernel = np.diff(cdf)
    total = kernel.sum()
    if not total > 0:
        raise NumericalError("non-decision time falls outside the horizon")
    return kernel / total


def _grid_for(profile, settings: LikelihoodSettings, t0: float, span: Optional[float]) -> GridConfig:
    B = float(profile.bound.max())
    return GridConfig(
        dx=B / settings.nodes_per_bound,
        dt=settings.rt_bin_s / 5.0,
        t0=t0,
        horizon=span,
        auto=True,
        max_nodes=settings.max_nodes,
        max_steps=settings.max_steps,
    )


def grid_rt_distribution(timeline: ScenarioTimeline, p: DdmParams, R_s: float = 0.0,
                         settings: Optional[LikelihoodSettings] = None,
                         until: Optional[float] = None) -> RtDistribution:
    """
    Binned (choice, rt) mass from the grid solver.

    ``until`` caps the integration at an absolute time; the censored mass is
    then only meaningful up to that time.
    """
    settings = settings or LikelihoodSettings()
    w = settings.rt_bin_s
    end = timeline.horizon if until is None else min(until, timeline.horizon)
    n_bins = _n_bins(end, w)
    t0 = p.mu_nd
    if not 0 <= t0 < timeline.horizon:
        empty = np.zeros(n_bins)
        return RtDistribution(w, empty, empty.copy())
    profile = evidence_profile(timeline, p, R_s)
    span = None if until is None else max(end - t0, w)
    table = solve_profile(profile, _grid_for(profile, settings, t0, span))
    kernel = nondecision_kernel(p, w, n_bins)
    # hit times are measured from t0; the kernel restores the absolute rt
    steer = np.convolve(_bin_mass(table.t, table.p_upper, w, n_bins), kernel)[:n_bins]
    brake = np.convolve(_bin_mass(table.t, table.p_lower, w, n_bins), kernel)[:n_bins]
    return RtDistribution(w, brake, steer)


def mc_rt_distribution(timeline: ScenarioTimeline, p: DdmParams, R_s: float = 0.0,
                       settings: Optional[LikelihoodSettings] = None, workers: int = 1) -> RtDistribution:
    """Histogram of simulated (choice, rt) cells."""
    settings = settings or LikelihoodSettings()
    w = settings.rt_bin_s
    n_bins = _n_bins(timeline.horizon, w)
    outcomes = run_trials(timeline, p, R_s, settings.mc_trials, settings.mc_seed, workers, settings.mc_dt)
    hist = {Choice.BRAKE: np.zeros(n_bins), Choice.STEER: np.zeros(n_bins)}
    for o in outcomes:
        if o.rt is not None:
            hist[o.choice][min(int(o.rt // w), n_bins - 1)] += 1.0
    n = float(len(outcomes))
    return RtDistribution(w, hist[Choice.BRAKE] / n, hist[Choice.STEER] / n)


def rt_distribution(timeline: ScenarioTimeline, p: DdmParams, R_s: float = 0.0,
                    settings: Optional[LikelihoodSettings] = None,
                    until: Optional[float] = None) -> RtDistribution:
    settings = settings or LikelihoodSettings()
    if settings.backend == "mc":
        return mc_rt_distribution(timeline, p, R_s, settings)
    return grid_rt_distribution(timeline, p, R_s, settings, until)


def _needed_until(group: Sequence[TrialRecord], width: float) -> Optional[float]:
    """Latest time the group's likelihood looks at; None when a trial is censored."""
    if any(tr.rt is None for tr in group):
        return None
    return max(tr.rt for tr in group) + 2 * width


def trial_loglik(trial: TrialRecord, p: DdmParams, R_s: float = 0.0, settings: Optional[LikelihoodSettings] = None,
                 scenario_config: Optional[ScenarioConfig] = None) -> float:
    if trial.scenario is not p.scenario_kind:
        raise ValidationError(
            f"trial is {trial.scenario.value}, parameters are for {p.scenario_kind.value}"
        )
    settings = settings or LikelihoodSettings()
    timeline = make_scenario(trial.scenario, trial.v0A, scenario_config)
    dist = rt_distribution(timeline, p, R_s, settings, _needed_until([trial], settings.rt_bin_s))
    return dist.log_prob(trial.choice, trial.rt)


def _conditions(trials: Sequence[TrialRecord], resolution: float) -> Dict[float, List[TrialRecord]]:
    groups: Dict[float, List[TrialRecord]] = {}
    for tr in trials:
        key = round(round(tr.v0A / resolution) * resolution, 10)
        groups.setdefault(key, []).append(tr)
    return groups


def dataset_loglik(trials: Sequence[TrialRecord], p: DdmParams, settings: Optional[LikelihoodSettings] = None,
                   timelines: Optional[Dict[float, ScenarioTimeline]] = None,
                   scenario_config: Optional[ScenarioConfig] = None) -> float:
    """Summed trial log-likelihood, one solve per speed condition."""
    settings = settings or LikelihoodSettings()
    total = 0.0
    for speed, group in _conditions(trials, settings.speed_resolution).items():
        if any(tr.scenario is not p.scenario_kind for tr in group):
            raise ValidationError(f"dataset mixes scenarios; parameters are for {p.scenario_kind.value}")
        tl = timelines.get(speed) if timelines else None
        if tl is None:
            tl = make_scenario(p.scenario_kind, speed, scenario_config)
        dist = rt_distribution(tl, p, 0.0, settings, _needed_until(group, settings.rt_bin_s))
        total += sum(dist.log_prob(tr.choice, tr.rt) for tr in group)
    return total


# ---- Differential evolution --------------------------------------------------

@dataclass(frozen=True)
class ParamBounds:
    """Search box over named parameters plus values held fixed."""

    bounds: Dict[str, Tuple[float, float]]
    fixed: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for name, (lo, hi) in self.bounds.items():
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise ValidationError(f"bounds for {name} must satisfy lower < upper")
        overlap = set(self.bounds) & set(self.fixed)
        if overlap:
            raise ValidationError(f"parameters both searched and fixed: {', '.join(sorted(overlap))}")

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(self.bounds)

    @property
    def dim(self) -> int:
        return len(self.bounds)

    @property
    def lower(self) -> np.ndarray:
        return np.array([lo for lo, _ in self.bounds.values()], dtype=float)

    @property
    def upper(self) -> np.ndarray:
        return np.array([hi for _, hi in self.bounds.values()], dtype=float)

    @classmethod
    def around(cls, base: DdmParams, factor: float = 10.0, fixed: Optional[Dict[str, float]] = None) -> "ParamBounds":
        """
        Box of one order of magnitude either side of ``base``, keeping signs.
        Zero-valued parameters search [-1, 1], or [0, 1] when they must be
        non-negative.
        """
        fixed = dict(fixed or {})
        out: Dict[str, Tuple[float, float]] = {}
        for name in base.free_names():
            if name in fixed:
                continue
            v = float(getattr(base, name))
            if v > 0:
                out[name] = (v / factor, v * factor)
            elif v < 0:
                out[name] = (v * factor, v / factor)
            else:
                out[name] = (0.0, 1.0) if name == "k" else (-1.0, 1.0)
        return cls(out, fixed)

    def check_covers(self, kind) -> None:
        expected = set(free_parameter_names(kind))
        given = set(self.bounds) | set(self.fixed)
        missing = sorted(expected - given)
        extra = sorted(given - expected)
        if missing or extra:
            raise ValidationError(
                f"bounds do not match the {ScenarioKind.parse(kind).value} parameters"
                f" (missing: {', '.join(missing) or '-'}; unknown: {', '.join(extra) or '-'})"
            )

    def params_at(self, x: Sequence[float], base: DdmParams) -> DdmParams:
        values = dict(zip(self.names, map(float, x)))
        values.update(self.fixed)
        return base.updated(**values)


class DeConfig(BaseModel):
    """DE/rand/1/bin settings; ``NP`` defaults to 15 members per dimension."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    NP: Optional[int] = None
    F: float = 0.8
    CR: float = 0.9
    generations: int = 300
    log_every: int = 25

    @field_validator("F")
    @classmethod
    def _f(cls, v: float) -> float:
        if not 0 < v <= 2:
            raise ValueError("F must lie in (0, 2]")
        return v

    @field_validator("CR")
    @classmethod
    def _cr(cls, v: float) -> float:
        if not 0 <= v <= 1:
            raise ValueError("CR must lie in [0, 1]")
        return v

    @field_validator("generations")
    @classmethod
    def _gens(cls, v: int) -> int:
        if v < 0:
            raise ValueError("generations must be non-negative")
        return v


@dataclass(frozen=True, eq=False)
class DeResult:
    x: np.ndarray
    fun: float
    trace: List[float]


def _reflect(v: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    v = np.where(v < lo, 2 * lo - v, v)
    v = np.where(v > hi, 2 * hi - v, v)
    return np.clip(v, lo, hi)


def differential_evolution(objective: Callable[[np.ndarray], float], bounds, config: Optional[DeConfig] = None,
                           master_seed: int = 0, workers: int = 1) -> DeResult:
    """
    Minimise ``objective`` over a box.

    ``bounds`` is a ParamBounds or a sequence of (lower, upper) pairs.  All
    random draws of a generation happen before its members are evaluated,
    so results do not depend on ``workers``.
    """
    config = config or DeConfig()
    if isinstance(bounds, ParamBounds):
        lo, hi = bounds.lower, bounds.upper
    else:
        pairs = np.asarray(bounds, dtype=float).reshape(-1, 2)
        lo, hi = pairs[:, 0], pairs[:, 1]
        if not np.all(np.isfinite(pairs)) or np.any(lo >= hi):
            raise ValidationError("every bound needs lower < upper")
    dim = lo.size
    if dim == 0:
        raise ValidationError("nothing to optimise: no searched parameters")
    NP = config.NP or 15 * dim
    if NP < 4:
        raise ValidationError("differential evolution needs NP >= 4")

    rng = np.random.default_rng(master_seed)

    def evaluate(points: np.ndarray) -> np.ndarray:
        if workers <= 1:
            vals = [objective(x) for x in points]
        else:
            with ThreadPoolExecutor(max_workers=workers) as executor:
                vals = list(executor.map(objective, points))
        vals = np.asarray(vals, dtype=float)
        if not np.all(np.isfinite(vals)):
            raise NumericalError("objective returned a non-finite value")
        return vals

    pop = lo + rng.random((NP, dim)) * (hi - lo)
    fit = evaluate(pop)
    trace = [float(fit.min())]
    others = np.arange(NP)
    for gen in range(1, config.generations + 1):
        trials = np.empty_like(pop)
        for i in range(NP):
            r1, r2, r3 = rng.choice(others[others != i], 3, replace=False)
            mutant = _reflect(pop[r1] + config.F * (pop[r2] - pop[r3]), lo, hi)
            cross = rng.random(dim) < config.CR
            cross[rng.integers(dim)] = True
            trials[i] = np.where(cross, mutant, pop[i])
        trial_fit = evaluate(trials)
        better = trial_fit <= fit
        pop[better] = trials[better]
        fit[better] = trial_fit[better]
        trace.append(float(fit.min()))
        if config.log_every and gen % config.log_every == 0:
            logger.info("DE generation %d/%d: best %.6g", gen, config.generations, trace[-1])
    best = int(np.argmin(fit))
    return DeResult(pop[best].copy(), float(fit[best]), trace)


# ---- Calibration -------------------------------------------------------------

class CalibrationConfig(BaseModel):
    """Calibration document: search box, DE settings and likelihood binning."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    bounds: Dict[str, Tuple[float, float]] = {}
    fixed: Dict[str, float] = {}
    NP: Optional[int] = None
    F: float = 0.8
    CR: float = 0.9
    generations: int = 300
    seed: int = 0
    rt_bin_s: float = 0.05
    backend: str = "grid"
    workers: int = DDM_WORKERS

    def de_config(self) -> DeConfig:
        return DeConfig(NP=self.NP, F=self.F, CR=self.CR, generations=self.generations)

    def likelihood(self) -> LikelihoodSettings:
        return LikelihoodSettings(rt_bin_s=self.rt_bin_s, backend=self.backend, mc_seed=self.seed)


@dataclass(frozen=True, eq=False)
class CalibrationResult:
    best_params: DdmParams
    loglik: float
    bic: float
    k: int
    n: int
    trace: List[float]
    names: Tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "params": self.best_params.model_dump(mode="json"),
            "loglik": self.loglik,
            "bic": self.bic,
            "k": self.k,
            "n": self.n,
            "searched": list(self.names),
            "trace": list(self.trace),
        }

    def write_json(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)

    def write_trace_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["generation", "best_bic"])
            for g, v in enumerate(self.trace):
                w.writerow([g, f"{v:.10g}"])


def calibrate(trials: Iterable[TrialRecord], kind, bounds: Optional[ParamBounds] = None,
              config: Optional[CalibrationConfig] = None, base: Optional[DdmParams] = None,
              scenario_config: Optional[ScenarioConfig] = None) -> CalibrationResult:
    """
    Fit one scenario's parameters to pooled trials by minimising BIC.

    ``base`` supplies everything outside the search box (risk coupling,
    noise scale); it defaults to the shipped fixture for ``kind``.
    """
    kind = ScenarioKind.parse(kind)
    config = config or CalibrationConfig()
    data = [tr for tr in trials if tr.scenario is kind]
    if not data:
        raise ValidationError(f"no {kind.value} trials to calibrate on")
    if base is None:
        base = load_params(kind)
    if base.scenario_kind is not kind:
        raise ValidationError(f"base parameters are for {base.scenario_kind.value}")
    if bounds is None:
        bounds = (ParamBounds(dict(config.bounds), dict(config.fixed)) if config.bounds
                  else ParamBounds.around(base, fixed=config.fixed))
    bounds.check_covers(kind)

    settings = config.likelihood()
    k, n = bounds.dim, len(data)
    timelines = {speed: make_scenario(kind, speed, scenario_config)
                 for speed in _conditions(data, settings.speed_resolution)}
    penalty = bic(n * LOG_FLOOR, k, n)

    def loglik_at(p: DdmParams) -> float:
        try:
            return dataset_loglik(data, p, settings, timelines)
        except DriverModelError as e:
            logger.debug("likelihood floored: %s", e)
            return n * LOG_FLOOR

    def objective(x: np.ndarray) -> float:
        try:
            p = bounds.params_at(x, base)
        except ValueError:
            return penalty
        return bic(loglik_at(p), k, n)

    logger.info("calibrating %s: %d trials, %d conditions, %d searched parameters",
                kind.value, n, len(timelines), k)
    res = differential_evolution(objective, bounds, config.de_config(), config.seed, config.workers)
    best = bounds.params_at(res.x, base)
    ll = loglik_at(best)
    result = CalibrationResult(best, ll, bic(ll, k, n), k, n, res.trace, bounds.names)
    logger.info("calibration done: loglik=%.4f BIC=%.4f", result.loglik, result.bic)
    return result
