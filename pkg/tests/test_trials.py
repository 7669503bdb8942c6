import pytest

from utils.ddm import Choice
from utils.errors import ValidationError
from utils.kinematics import ScenarioKind
from utils.trials import TRIAL_COLUMNS, TrialRecord, load_trials, write_trials

HEADER = "participant_id,scenario,v0A_mps,choice,rt_s,vb_mps,ax_mps2,ay_mps2,collided"


def test_header_is_fixed():
    assert ",".join(TRIAL_COLUMNS) == HEADER


def test_write_then_load(tmp_path):
    records = [
        TrialRecord("p1", ScenarioKind.CUT_IN, 25.82, Choice.BRAKE, 1.61, 24.0, 8.4, 0.3),
        TrialRecord("p2", ScenarioKind.REAR_END, 22.10, Choice.STEER, 1.2, collided=True),
        TrialRecord("p3", ScenarioKind.LANE_CHANGE, 23.27, Choice.NONE),
    ]
    path = tmp_path / "trials.csv"
    assert write_trials(records, path) == 3
    text = path.read_text().splitlines()
    assert text[0] == HEADER
    assert text[3].endswith(",none,,,,,0")
    loaded = load_trials(path)
    assert loaded == records
    assert loaded[0].behavior().a_x == pytest.approx(8.4)
    assert loaded[1].behavior() is None


def test_censored_trial_cannot_carry_rt():
    with pytest.raises(ValidationError, match="censored"):
        TrialRecord("p", ScenarioKind.CUT_IN, 25.0, Choice.NONE, rt=1.0)


def test_decision_needs_rt():
    with pytest.raises(ValidationError, match="needs an rt"):
        TrialRecord("p", ScenarioKind.CUT_IN, 25.0, Choice.BRAKE)


def test_every_bad_row_is_reported(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text(
        HEADER + "\n"
        "p1,cutin,25.8,brake,1.5,,,,0\n"
        "p2,highway,25.8,brake,1.5,,,,0\n"
        "p3,cutin,25.8,brake,,,,,0\n"
        "p4,cutin,fast,brake,1.5,,,,0\n"
        "p5,cutin,25.8,brake,1.5,,,,maybe\n"
    )
    with pytest.raises(ValidationError) as err:
        load_trials(path)
    lines = [ln for ln, _ in err.value.rows]
    assert lines == [3, 4, 5, 6]
    assert "line 3" in str(err.value)


def test_missing_columns(tmp_path):
    path = tmp_path / "short.csv"
    path.write_text("participant_id,scenario\np1,cutin\n")
    with pytest.raises(ValidationError, match="missing columns"):
        load_trials(path)


def test_missing_file(tmp_path):
    with pytest.raises(ValidationError, match="cannot read"):
        load_trials(tmp_path / "nope.csv")
