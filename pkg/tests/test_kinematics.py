import numpy as np
import pytest

from utils.errors import ValidationError
from utils.kinematics import (
    EGO,
    ScenarioConfig,
    ScenarioKind,
    VehicleState,
    brake_profile,
    detect_collision,
    distance_series,
    gap,
    make_scenario,
    make_track,
    snapshot,
    step_vehicle,
    time_headway,
    ttc,
)


def test_step_vehicle_constant_acceleration():
    s = step_vehicle(VehicleState(0.0, 0.0, 10.0, 0.0), -2.0, 1.0)
    assert s.s == pytest.approx(9.0)
    assert s.v == pytest.approx(8.0)
    assert s.a == -2.0


def test_step_vehicle_stops_without_reversing():
    s = step_vehicle(VehicleState(0.0, 0.0, 1.0, 0.0), -8.0, 1.0)
    assert s.v == 0.0
    assert s.a == 0.0
    # exact stopping distance v^2 / 2|a|
    assert s.s == pytest.approx(1.0 / 16.0)


def test_step_vehicle_rejects_bad_input():
    with pytest.raises(ValidationError):
        step_vehicle(VehicleState(0.0, 0.0, 10.0, 0.0), float("nan"), 0.1)
    with pytest.raises(ValidationError):
        step_vehicle(VehicleState(0.0, 0.0, 10.0, 0.0), 0.0, 0.0)


def test_gap_headway_and_ttc():
    rear = VehicleState(0.0, 0.0, 20.0, 0.0)
    lead = VehicleState(55.0, 0.0, 10.0, 0.0)
    d = gap(rear, lead)
    assert d == pytest.approx(50.0)
    assert time_headway(30.0, 15.0) == pytest.approx(2.0)
    assert ttc(rear, lead, d) == pytest.approx(5.0)
    assert ttc(lead, rear, d) is None


def test_time_headway_needs_positive_speed():
    with pytest.raises(ValidationError, match="v0A must be positive"):
        time_headway(20.0, 0.0)


def test_brake_profile_stops_at_exact_distance():
    t = np.arange(0, 5.0001, 0.01)
    s, v, a = brake_profile(t, 0.0, 10.0, -5.0)
    assert v.min() == 0.0
    assert s[-1] == pytest.approx(10.0)
    assert np.all(np.diff(s) >= -1e-12)
    assert a[-1] == 0.0


def test_rear_end_initial_state_and_lead_stop():
    tl = make_scenario(ScenarioKind.REAR_END, 22.10)
    assert tl.n_frames == 1001
    assert tl.horizon == pytest.approx(10.0)
    d = distance_series(tl)
    assert d["sAC"][0] == pytest.approx(73.0)
    # B cruises behind A in the adjacent lane
    assert d["sAB"][0] == pytest.approx(-40.0)
    assert d["hAC"][0] == pytest.approx(73.0 / 22.10)
    assert tl.tracks["C"].v[-1] == 0.0
    assert tl.tracks["C"].v[0] == pytest.approx(22.22)


def test_cut_in_vehicle_moves_into_ego_lane():
    tl = make_scenario("cut-in", 25.82)
    b = tl.tracks["B"]
    assert b.lane[0] == 1
    assert b.lane[-1] == 0
    assert b.y[int(round(2.0 / tl.dt))] == pytest.approx(0.0)


def test_lane_change_reveals_stationary_vehicle():
    tl = make_scenario(ScenarioKind.LANE_CHANGE, 23.27)
    assert tl.tracks["C"].lane[-1] == 1
    assert np.all(tl.tracks["D"].v == 0.0)
    assert distance_series(tl)["sAD"][0] == pytest.approx(104.0)
    assert distance_series(tl)["sAB"][0] == pytest.approx(-30.0)


def test_snapshot_at_onset_and_between_frames():
    tl = make_scenario(ScenarioKind.CUT_IN, 25.82)
    snap = snapshot(tl, 0.0)
    assert snap.sAB == pytest.approx(20.0)
    assert snap.hAB == pytest.approx(20.0 / 25.82)
    assert snap.sAC is None
    mid = snapshot(tl, 0.005)
    assert mid.sAB == pytest.approx(20.0 + (33.33 - 25.82) * 0.005)


def test_snapshot_outside_horizon():
    tl = make_scenario(ScenarioKind.CUT_IN, 25.82)
    with pytest.raises(ValidationError):
        snapshot(tl, 10.5)
    with pytest.raises(ValidationError):
        snapshot(tl, -0.1)


def test_make_scenario_validates_speed_and_kind():
    with pytest.raises(ValidationError, match="outside configured bounds"):
        make_scenario(ScenarioKind.CUT_IN, 50.0)
    with pytest.raises(ValidationError, match="positive"):
        make_scenario(ScenarioKind.CUT_IN, -1.0)
    with pytest.raises(ValidationError, match="unknown scenario kind"):
        make_scenario("highway", 25.0)


def test_config_rejects_positive_lead_decel():
    with pytest.raises(ValueError):
        ScenarioConfig(lead_decel=2.0)


def test_custom_gap_overrides_default():
    tl = make_scenario(ScenarioKind.CUT_IN, 25.82, ScenarioConfig(initial_gaps={"B": 30.0}))
    assert distance_series(tl)["sAB"][0] == pytest.approx(30.0)


def test_instantaneous_headway_uses_current_speed():
    cfg = ScenarioConfig(instantaneous_headway=True)
    tl = make_scenario(ScenarioKind.REAR_END, 22.10, cfg)
    t = tl.t
    s, v, a = brake_profile(t, 0.0, 22.10, -4.0)
    braked = tl.with_ego(make_track(s, 0.0, v, a, cfg.lane_width))
    d = distance_series(braked)
    i = 200
    assert d["hAC"][i] == pytest.approx(d["sAC"][i] / v[i])


def test_constant_speed_ego_hits_braking_lead():
    res = detect_collision(make_scenario(ScenarioKind.REAR_END, 25.80))
    assert res.collided
    assert res.other == "C"
    # C stops 30.86 m on at t = 2.78 s, A reaches it at 103.86 / 25.80 s
    assert 4.0 < res.time < 4.05


def test_no_collision_when_cut_in_vehicle_pulls_away():
    assert not detect_collision(make_scenario(ScenarioKind.CUT_IN, 25.82))


def test_stopped_ego_avoids_rear_end_collision():
    tl = make_scenario(ScenarioKind.REAR_END, 19.56)
    s, v, a = brake_profile(tl.t, 0.0, 19.56, -8.0)
    rolled = tl.with_ego(make_track(s, 0.0, v, a, tl.config.lane_width))
    assert rolled.tracks[EGO].v[-1] == 0.0
    assert not detect_collision(rolled)


def test_collision_is_monotone_in_braking_strength():
    tl = make_scenario(ScenarioKind.REAR_END, 25.80)
    collided = []
    for decel in (-1.0, -2.0, -4.0, -6.0, -8.0, -10.0):
        s, v, a = brake_profile(tl.t, 0.0, 25.80, decel, t_on=1.0)
        collided.append(detect_collision(tl.with_ego(make_track(s, 0.0, v, a, tl.config.lane_width))).collided)
    assert collided[0] and not collided[-1]
    # once a deceleration avoids the collision every stronger one does too
    assert collided == sorted(collided, reverse=True)


def test_config_supplies_kind_and_speed():
    cfg = ScenarioConfig(kind="lane-change", ego_v0=23.27)
    tl = make_scenario(config=cfg)
    assert tl.kind is ScenarioKind.LANE_CHANGE
    assert tl.ego_v0 == 23.27
    assert make_scenario(ScenarioKind.LANE_CHANGE, 23.27, cfg).n_frames == tl.n_frames
    with pytest.raises(ValidationError, match="contradicts"):
        make_scenario(ScenarioKind.CUT_IN, config=cfg)
    with pytest.raises(ValidationError, match="contradicts"):
        make_scenario(ego_v0=25.0, config=cfg)
    with pytest.raises(ValidationError, match="neither given"):
        make_scenario(ScenarioKind.CUT_IN)
    with pytest.raises(ValueError):
        ScenarioConfig(ego_speed=23.27)
