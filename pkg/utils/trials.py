"""
Trial records and their CSV form.

One row per observed or simulated decision.  The header is fixed:

    participant_id,scenario,v0A_mps,choice,rt_s,vb_mps,ax_mps2,ay_mps2,collided

Optional cells (rt for censored trials, behaviour features) are left empty.
"""

from __future__ import annotations
import csv
import logging
import math
from dataclasses import dataclass
from typing import Iterable, List, Optional

from utils.ddm import Choice
from utils.errors import ValidationError
from utils.kinematics import ScenarioKind
from utils.risk import BehaviorSample

logger = logging.getLogger(__name__)

TRIAL_COLUMNS = ("participant_id", "scenario", "v0A_mps", "choice", "rt_s",
                 "vb_mps", "ax_mps2", "ay_mps2", "collided")

_TRUE = {"1", "true", "yes", "y", "t"}
_FALSE = {"0", "false", "no", "n", "f", ""}


@dataclass(frozen=True)
class TrialRecord:
    participant_id: str
    scenario: ScenarioKind
    v0A: float
    choice: Choice
    rt: Optional[float] = None
    v_b: Optional[float] = None
    a_x: Optional[float] = None
    a_y: Optional[float] = None
    collided: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.v0A) and self.v0A > 0):
            raise ValidationError("v0A must be positive")
        if self.choice is Choice.NONE:
            if self.rt is not None:
                raise ValidationError("censored trials carry no rt")
        elif self.rt is None:
            raise ValidationError(f"{self.choice.value} trial needs an rt")
        elif not (math.isfinite(self.rt) and self.rt > 0):
            raise ValidationError("rt must be positive")
        for name in ("v_b", "a_x", "a_y"):
            val = getattr(self, name)
            if val is not None and not (math.isfinite(val) and val >= 0):
                raise ValidationError(f"{name} must be a non-negative number")

    def behavior(self) -> Optional[BehaviorSample]:
        """Behaviour features, or None unless all three are present."""
        if self.v_b is None or self.a_x is None or self.a_y is None:
            return None
        return BehaviorSample(self.v_b, self.a_x, self.a_y)

    def to_row(self) -> List[str]:
        def opt(v: Optional[float]) -> str:
            return "" if v is None else repr(float(v))
        return [self.participant_id, self.scenario.value, repr(float(self.v0A)), self.choice.value,
                opt(self.rt), opt(self.v_b), opt(self.a_x), opt(self.a_y), "1" if self.collided else "0"]


def _opt_float(cell: str, name: str) -> Optional[float]:
    cell = (cell or "").strip()
    if not cell:
        return None
    try:
        return float(cell)
    except ValueError:
        raise ValueError(f"{name} is not a number: {cell!r}") from None


def _parse_row(row: dict) -> TrialRecord:
    pid = (row.get("participant_id") or "").strip()
    if not pid:
        raise ValueError("participant_id is empty")
    v0 = _opt_float(row.get("v0A_mps"), "v0A_mps")
    if v0 is None:
        raise ValueError("v0A_mps is empty")
    flag = (row.get("collided") or "").strip().lower()
    if flag not in _TRUE and flag not in _FALSE:
        raise ValueError(f"collided must be 0/1, got {flag!r}")
    return TrialRecord(
        participant_id=pid,
        scenario=ScenarioKind.parse(row.get("scenario")),
        v0A=v0,
        choice=Choice.parse(row.get("choice")),
        rt=_opt_float(row.get("rt_s"), "rt_s"),
        v_b=_opt_float(row.get("vb_mps"), "vb_mps"),
        a_x=_opt_float(row.get("ax_mps2"), "ax_mps2"),
        a_y=_opt_float(row.get("ay_mps2"), "ay_mps2"),
        collided=flag in _TRUE,
    )


def load_trials(path) -> List[TrialRecord]:
    """
    Read and validate a trial CSV.

    Every malformed row is collected; a single ValidationError lists them
    all with their file line numbers.
    """
    try:
        f = open(path, newline="")
    except OSError as e:
        raise ValidationError(f"cannot read trial file {path}: {e}") from e
    with f:
        reader = csv.DictReader(f)
        header = reader.fieldnames or []
        missing = [c for c in TRIAL_COLUMNS if c not in header]
        if missing:
            raise ValidationError(f"trial file {path} is missing columns: {', '.join(missing)}")
        records: List[TrialRecord] = []
        problems = []
        for row in reader:
            try:
                records.append(_parse_row(row))
            except (ValueError, TypeError) as e:
                problems.append((reader.line_num, str(e)))
    if problems:
        raise ValidationError(f"{len(problems)} malformed row(s) in {path}", problems)
    logger.info("loaded %d trials from %s", len(records), path)
    return records


def write_trials(records: Iterable[TrialRecord], path) -> int:
    n = 0
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(TRIAL_COLUMNS)
        for rec in records:
            w.writerow(rec.to_row())
            n += 1
    logger.info("wrote %d trials to %s", n, path)
    return n
