"""Loaders for the parameter and reference fixtures shipped under ``fixtures/``."""

from __future__ import annotations
import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Optional

import pydantic

from utils.baselines import GippsParams, IdmParams, MobilParams
from utils.cache import ttl_cache
from utils.ddm import DdmParams
from utils.errors import ValidationError
from utils.kinematics import ScenarioKind

logger = logging.getLogger(__name__)

FIXTURE_DIR = os.getenv("DRIVER_DDM_FIXTURES", str(Path(__file__).resolve().parent.parent / "fixtures"))


def _dir(directory: Optional[str]) -> Path:
    return Path(directory or FIXTURE_DIR)


def read_json(path) -> Any:
    try:
        with open(path) as f:
            return json.load(f)
    except FileNotFoundError:
        raise ValidationError(f"fixture not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ValidationError(f"{path} is not valid JSON: {e}") from e


def parse_params(data: Dict[str, Any], source: str = "parameters") -> DdmParams:
    try:
        return DdmParams.model_validate(data)
    except pydantic.ValidationError as e:
        raise ValidationError(f"invalid {source}: {e}") from e


@ttl_cache()
def _load_params(kind: str, directory: str) -> DdmParams:
    path = Path(directory) / f"{kind}.json"
    p = parse_params(read_json(path), str(path))
    if p.scenario_kind.value != kind:
        raise ValidationError(f"{path} holds {p.scenario_kind.value} parameters")
    logger.debug("loaded %s", path)
    return p


def load_params(kind, directory: Optional[str] = None) -> DdmParams:
    """Calibrated parameter set of one scenario."""
    return _load_params(ScenarioKind.parse(kind).value, str(_dir(directory)))


@ttl_cache()
def _load_baselines(directory: str) -> Dict[str, Any]:
    data = read_json(Path(directory) / "baselines.json")
    try:
        return {
            "idm": IdmParams.model_validate(data.get("idm", {})),
            "gipps": GippsParams.model_validate(data.get("gipps", {})),
            "mobil": MobilParams.model_validate(data.get("mobil", {})),
            "brake_threshold": float(data.get("brake_threshold", -0.5)),
        }
    except (pydantic.ValidationError, TypeError, ValueError) as e:
        raise ValidationError(f"invalid baseline parameters: {e}") from e


def load_baseline_params(directory: Optional[str] = None) -> Dict[str, Any]:
    return dict(_load_baselines(str(_dir(directory))))


@ttl_cache()
def _load_reference(directory: str) -> Dict[str, Any]:
    return read_json(Path(directory) / "reference.json")


def load_reference(directory: Optional[str] = None) -> Dict[str, Any]:
    return _load_reference(str(_dir(directory)))


def fixture_digest(name: str, directory: Optional[str] = None) -> str:
    """Short content hash recorded in reports as the fixture version."""
    path = _dir(directory) / name
    try:
        return hashlib.sha256(path.read_bytes()).hexdigest()[:12]
    except FileNotFoundError:
        raise ValidationError(f"fixture not found: {path}") from None


def clear_cache() -> None:
    for fn in (_load_params, _load_baselines, _load_reference):
        fn.cache_clear()
