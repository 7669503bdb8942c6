"""
HTTP routes for simulation, first-passage tables, risk fitting and model
comparison.

Heavy work runs synchronously in FastAPI's thread pool.  Comparison reports
are cached in redis under their config hash and served with an ETag;
requests are rate limited per client IP.
"""

from fastapi import APIRouter, Depends, HTTPException, Request, Response
from pydantic import BaseModel, ConfigDict, Field
from typing import Any, Dict, List, Optional, Union
import hashlib
import json
import logging
import os
import time

from utils.ddm import DDM_DT, DdmParams, choice_probabilities
from utils.errors import NumericalError, ValidationError
from utils.first_passage import GridConfig, first_passage_distribution
from utils.fixtures import load_params, parse_params
from utils.harness import ExperimentConfig, run_experiment
from utils.kinematics import ScenarioConfig, ScenarioKind, make_scenario
from utils.kv import cache_get_report, cache_set_report
from utils.risk import ALL_FEATURES, DEFAULT_FEATURES, classify_sensitivity, fit_mgd

logger = logging.getLogger(__name__)

router = APIRouter()

RATE_LIMIT_PER_MIN = int(os.getenv("RATE_LIMIT_PER_MIN", "30"))
MAX_TRIALS = int(os.getenv("MAX_TRIALS_PER_REQUEST", "100000"))
_request_log: Dict[str, list] = {}


def rate_limiter(request: Request):
    """
    Limit the number of requests from a single client per minute.

    Raise HTTPException with status 429 once the client has made
    RATE_LIMIT_PER_MIN requests within the last 60 seconds.
    """
    client_ip = (request.headers.get("x-forwarded-for", "").split(",")[0].strip()
                 or (request.client.host if request.client else "unknown"))
    now = time.time()
    calls = [t for t in _request_log.get(client_ip, []) if now - t < 60]
    if len(calls) >= RATE_LIMIT_PER_MIN:
        raise HTTPException(status_code=429, detail={"error": "Rate limit exceeded. Try again later."})
    calls.append(now)
    _request_log[client_ip] = calls


def _run(fn, *args, **kwargs):
    """Call into the toolkit, translating its errors to HTTP status codes."""
    try:
        return fn(*args, **kwargs)
    except ValidationError as e:
        raise HTTPException(status_code=422, detail={"error": str(e)})
    except NumericalError as e:
        logger.error("numerical failure in %s: %s", getattr(fn, "__name__", fn), e)
        raise HTTPException(status_code=500, detail={"error": str(e)})


def _params_for(kind: ScenarioKind, overrides: Optional[Dict[str, Any]]) -> DdmParams:
    base = load_params(kind)
    if not overrides:
        return base
    return parse_params({**base.model_dump(mode="json"), **overrides}, "parameter override")


class SimulateRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: ScenarioKind
    v0A: float
    params: Optional[Dict[str, Any]] = None
    R_s: float = 0.0
    n_trials: int = Field(1000, ge=1)
    seed: int = 0
    dt: float = Field(DDM_DT, gt=0)
    scenario: ScenarioConfig = Field(default_factory=ScenarioConfig)


class FirstPassageRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: ScenarioKind
    v0A: float
    params: Optional[Dict[str, Any]] = None
    R_s: float = 0.0
    grid: GridConfig = Field(default_factory=lambda: GridConfig(auto=True))
    include_rows: bool = False
    scenario: ScenarioConfig = Field(default_factory=ScenarioConfig)


class BehaviorRow(BaseModel):
    v_b: float = 0.0
    a_x: float
    a_y: float


class FitRiskRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    samples: List[Union[BehaviorRow, List[float]]]
    features: List[str] = Field(default_factory=lambda: list(DEFAULT_FEATURES))
    unbiased: bool = False


def _simulate(req: SimulateRequest) -> Dict[str, Any]:
    if req.n_trials > MAX_TRIALS:
        raise ValidationError(f"n_trials is capped at {MAX_TRIALS}")
    kind = ScenarioKind.parse(req.kind)
    p = _params_for(kind, req.params)
    timeline = make_scenario(kind, req.v0A, req.scenario)
    summary = choice_probabilities(timeline, p, req.R_s, req.n_trials, req.seed, dt=req.dt)
    return {"kind": kind.value, "v0A": req.v0A, "R_s": req.R_s, "seed": req.seed, **summary.as_dict()}


def _first_passage(req: FirstPassageRequest) -> Dict[str, Any]:
    kind = ScenarioKind.parse(req.kind)
    p = _params_for(kind, req.params)
    table = first_passage_distribution(make_scenario(kind, req.v0A, req.scenario), p, req.R_s, req.grid)
    out: Dict[str, Any] = {"kind": kind.value, "v0A": req.v0A, "R_s": req.R_s, **table.summary()}
    if req.include_rows:
        out["rows"] = {
            "t": table.t.tolist(),
            "p_upper": table.p_upper.tolist(),
            "p_lower": table.p_lower.tolist(),
            "p_survive": table.p_survive.tolist(),
        }
    return out


def _fit_risk(req: FitRiskRequest) -> Dict[str, Any]:
    unknown = [f for f in req.features if f not in ALL_FEATURES]
    if unknown:
        raise ValidationError(f"unknown features: {', '.join(unknown)}")
    rows = [[getattr(s, f) for f in req.features] if isinstance(s, BehaviorRow) else s for s in req.samples]
    model = fit_mgd(rows, tuple(req.features), req.unbiased)
    assignments = [classify_sensitivity(r, model) for r in rows]
    return {
        "model": model.to_dict(),
        "assignments": [{"R_s": a.R_s, "level": a.level.value, "percentile": a.percentile} for a in assignments],
    }


@router.post("/simulate", dependencies=[Depends(rate_limiter)])
def simulate(req: SimulateRequest):
    """Choice probabilities, rt quantiles and decision-stage means for one condition."""
    return _run(_simulate, req)


@router.post("/first-passage", dependencies=[Depends(rate_limiter)])
def first_passage(req: FirstPassageRequest):
    """Grid first-passage totals, optionally with the per-step rows."""
    return _run(_first_passage, req)


@router.post("/fit-risk", dependencies=[Depends(rate_limiter)])
def fit_risk(req: FitRiskRequest):
    return _run(_fit_risk, req)


@router.get("/fixtures/{kind}")
def fixture(kind: str):
    p = _run(lambda: load_params(ScenarioKind.parse(kind)))
    return p.model_dump(mode="json")


@router.post("/compare", dependencies=[Depends(rate_limiter)])
def compare(config: ExperimentConfig, request: Request):
    """
    Run (or fetch) the model comparison for an experiment config.

    Reports are cached under the config hash; a matching If-None-Match
    gets 304.  `X-Cache` tells whether the report was computed.
    """
    if config.trials_path:
        raise HTTPException(status_code=422, detail={"error": "trials_path is not accepted over HTTP"})
    key = config.config_hash()
    report = cache_get_report(key)
    state = "HIT"
    if report is None:
        state = "MISS"
        report = _run(run_experiment, config).to_dict()
        cache_set_report(key, report)

    etag = hashlib.sha256(json.dumps(report, sort_keys=True).encode("utf-8")).hexdigest()
    headers = {"ETag": etag, "Cache-Control": "public, max-age=600", "X-Cache": state}
    if request.headers.get("if-none-match") == etag:
        return Response(status_code=304, headers=headers)
    return Response(content=json.dumps(report, sort_keys=True), media_type="application/json", headers=headers)
