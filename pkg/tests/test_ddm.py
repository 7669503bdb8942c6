import math

import numpy as np
import pytest

from utils.ddm import (
    Choice,
    DdmParams,
    EvidenceProfile,
    accumulate,
    apply_risk_sensitivity,
    boundary,
    choice_probabilities,
    drift_rate,
    evidence_profile,
    free_parameter_names,
    initial_bias,
    run_trials,
    sample_nondecision_time,
    sample_nondecision_times,
    simulate_trial,
    summarize_outcomes,
    trial_rng,
)
from utils.errors import ValidationError
from utils.first_passage import two_barrier_upper_probability
from utils.fixtures import load_params
from utils.kinematics import SPEED_GROUPS, KinematicSnapshot, ScenarioKind, make_scenario


def cut_in_snapshot(v0A=25.82):
    return KinematicSnapshot(v0A=v0A, sAB=20.0, hAB=20.0 / v0A)


def test_params_reject_beta_for_cut_in(cutin_params):
    data = cutin_params.model_dump()
    data["beta"] = 0.5
    with pytest.raises(ValueError, match="not defined for the cut-in"):
        DdmParams(**data)


def test_params_require_beta_delta_for_rear_end(rearend_params):
    data = rearend_params.model_dump()
    data["delta"] = None
    with pytest.raises(ValueError, match="required"):
        DdmParams(**data)


def test_params_reject_non_positive_boundary(cutin_params):
    with pytest.raises(ValueError, match="b0"):
        cutin_params.updated(b0=0.0)


def test_free_parameter_names():
    assert "beta" not in free_parameter_names("cutin")
    assert len(free_parameter_names(ScenarioKind.CUT_IN)) == 11
    assert len(free_parameter_names(ScenarioKind.REAR_END)) == 13


def test_cut_in_drift_hand_value(cutin_params):
    g = drift_rate(ScenarioKind.CUT_IN, cut_in_snapshot(), cutin_params)
    assert g == pytest.approx(-3.845, abs=1e-3)


def test_rear_end_drift_with_zero_kinematics(rearend_params):
    snap = KinematicSnapshot(v0A=0.0, sAB=0.0, hAB=0.0, sAC=0.0, hAC=0.0)
    assert drift_rate(ScenarioKind.REAR_END, snap, rearend_params) == pytest.approx(-86.9275)


def test_drift_kind_mismatch(cutin_params):
    with pytest.raises(ValidationError, match="parameters are for cutin"):
        drift_rate(ScenarioKind.REAR_END, cut_in_snapshot(), cutin_params)


def test_drift_missing_snapshot_field(rearend_params):
    with pytest.raises(ValidationError, match="missing"):
        drift_rate(ScenarioKind.REAR_END, cut_in_snapshot(), rearend_params)


def test_boundary_asymptote_and_midpoint(cutin_params):
    b = boundary(ScenarioKind.CUT_IN, cut_in_snapshot(), cutin_params)
    assert b == pytest.approx(0.56, abs=1e-9)
    flat = cutin_params.updated(gamma=0.0)
    mid = KinematicSnapshot(v0A=25.82, sAB=20.0, hAB=flat.tau)
    assert boundary(ScenarioKind.CUT_IN, mid, flat) == pytest.approx(0.28)


def test_lane_change_boundary_theta_flag(lanechange_params):
    snap = KinematicSnapshot(v0A=23.27, sAB=2.0, hAB=2.0 / 23.27, sAD=36.0, hAD=36.0 / 23.27)
    with_theta = boundary(ScenarioKind.LANE_CHANGE, snap, lanechange_params)
    without = boundary(ScenarioKind.LANE_CHANGE, snap, lanechange_params.updated(boundary_theta=False))
    assert without > with_theta


def test_initial_bias_values(cutin_params, lanechange_params):
    z = initial_bias(cutin_params, 25.82)
    expected = 2 * 0.56 / (1 + math.exp(-0.12 * (25.82 - 4.07))) - 0.56
    assert z == pytest.approx(expected)
    assert 0.47 < z < 0.50
    assert initial_bias(lanechange_params, 20.71) == pytest.approx(0.029, abs=1e-3)


def test_risk_coupling_hand_values(cutin_params):
    g, b, z = apply_risk_sensitivity(-3.845, 0.56, 0.0, 1.0, cutin_params)
    assert g == pytest.approx(-3.345)
    _, b2, _ = apply_risk_sensitivity(-3.845, 0.56, 0.0, 1.0, cutin_params.updated(eta=0.2))
    assert b2 == pytest.approx(0.56 * math.exp(-0.2))
    assert b2 == pytest.approx(0.4585, abs=1e-4)


def test_risk_coupling_keeps_start_inside(cutin_params):
    _, b, z = apply_risk_sensitivity(0.0, 0.3, 0.29, 1.0, cutin_params)
    assert abs(z) < b


def test_risk_coupling_monotone_in_sensitivity(rearend_params):
    tl = make_scenario(ScenarioKind.REAR_END, 22.10)
    snap_g = drift_rate(ScenarioKind.REAR_END, KinematicSnapshot(22.10, 10.0, 42.0, None, 10 / 22.10, 42 / 22.10),
                        rearend_params)
    snap_b = boundary(ScenarioKind.REAR_END, KinematicSnapshot(22.10, 10.0, 42.0, None, 10 / 22.10, 42 / 22.10),
                      rearend_params)
    rows = [apply_risk_sensitivity(snap_g, snap_b, 0.0, r, rearend_params) for r in (-1.0, 0.0, 1.0)]
    drifts = [r[0] for r in rows]
    bounds = [r[1] for r in rows]
    assert drifts[0] < drifts[1] < drifts[2]
    assert bounds[0] > bounds[1] > bounds[2]

    profiles = [evidence_profile(tl, rearend_params, r) for r in (-1.0, 0.0, 1.0)]
    assert np.all(profiles[0].drift < profiles[1].drift)
    assert np.all(profiles[1].bound > profiles[2].bound)


def test_nondecision_draws_are_positive(rng):
    p = DdmParams(scenario_kind="cutin", alpha=0, kappa=0, gamma=0, theta=0, b0=1, k=1, tau=0,
                  mu_nd=0.05, sigma_nd=0.2, b_z=0, nu=0)
    draws = sample_nondecision_times(p, rng, 5000)
    assert np.all(draws > 0)
    assert sample_nondecision_time(p, rng) > 0


@pytest.mark.parametrize("kind", list(ScenarioKind))
def test_nondecision_fidelity(kind, rng):
    p = load_params(kind)
    draws = sample_nondecision_times(p, rng, 1_000_000)
    assert abs(draws.mean() - p.mu_nd) < 0.01 * p.mu_nd
    assert abs(draws.std() - p.sigma_nd) < 0.02 * p.sigma_nd


def test_accumulate_holds_evidence_during_nondecision(rng):
    profile = EvidenceProfile.constant(0.0, 1.0, 0.3, horizon=5.0)
    out = accumulate(profile, 0.4, rng, dt=0.001, record_trace=True)
    hold = out.trace[out.trace[:, 0] < 0.4]
    assert hold.size
    assert np.allclose(hold[:, 1], 0.3)
    assert out.rt is None or out.rt >= 0.4


def test_accumulate_past_horizon_is_censored(rng):
    out = accumulate(EvidenceProfile.constant(0.0, 1.0, 0.0, horizon=1.0), 1.5, rng)
    assert out.choice is Choice.NONE
    assert out.rt is None
    assert out.accumulation_time is None


def test_start_on_boundary_decides_immediately(rng):
    profile = EvidenceProfile(np.array([0.0, 2.0]), np.zeros(2), np.array([1.0, 0.2]), 0.5, 1.0, 2.0)
    out = accumulate(profile, 1.5, rng)
    assert out.choice is Choice.STEER
    assert out.rt == pytest.approx(1.5)


def test_zero_drift_is_symmetric():
    profile = EvidenceProfile.constant(0.0, 0.5, 0.0, horizon=10.0)
    rng = np.random.default_rng(3)
    choices = [accumulate(profile, 0.0, rng).choice for _ in range(4000)]
    p_steer = choices.count(Choice.STEER) / len(choices)
    assert abs(p_steer - 0.5) < 3 * math.sqrt(0.25 / 4000)


@pytest.mark.parametrize("g,b,z", [(1.0, 1.0, 0.0), (-1.0, 0.5, 0.25), (0.0, 1.0, -0.5)])
def test_monte_carlo_matches_two_barrier_oracle(g, b, z):
    profile = EvidenceProfile.constant(g, b, z, horizon=30.0)
    rng = np.random.default_rng(11)
    n = 5000
    steer = sum(accumulate(profile, 0.0, rng).choice is Choice.STEER for _ in range(n))
    assert steer / n == pytest.approx(two_barrier_upper_probability(g, b, z), abs=0.03)


@pytest.mark.slow
@pytest.mark.parametrize("g", [-1.0, 0.0, 1.0])
@pytest.mark.parametrize("b", [0.5, 1.0])
@pytest.mark.parametrize("frac", [-0.5, 0.0, 0.5])
def test_monte_carlo_oracle_full(g, b, frac):
    z = frac * b
    profile = EvidenceProfile.constant(g, b, z, horizon=30.0)
    rng = np.random.default_rng(12)
    n = 100_000
    steer = sum(accumulate(profile, 0.0, rng).choice is Choice.STEER for _ in range(n))
    assert steer / n == pytest.approx(two_barrier_upper_probability(g, b, z), abs=0.02)


@pytest.mark.parametrize("g,z", [(1.0, -0.25), (-1.0, 0.25)])
def test_coarse_steps_do_not_bias_choices(g, z):
    # an end-point-only hit test is off by about 0.06 at this dt
    profile = EvidenceProfile.constant(g, 0.5, z, horizon=30.0)
    rng = np.random.default_rng(99)
    n = 20_000
    steer = sum(accumulate(profile, 0.0, rng, dt=0.01).choice is Choice.STEER for _ in range(n))
    assert steer / n == pytest.approx(two_barrier_upper_probability(g, 0.5, z), abs=0.012)


def test_traces_stay_inside_the_boundaries_until_the_hit():
    profile = EvidenceProfile(np.array([0.0, 1.0, 3.0]), np.array([-0.5, 0.5, 1.5]),
                              np.array([1.2, 0.8, 0.3]), 0.1, 1.0, 3.0)
    rng = np.random.default_rng(21)
    for _ in range(50):
        out = accumulate(profile, 0.3, rng, dt=0.005, record_trace=True)
        t, x, bound = out.trace.T
        assert np.all(np.abs(x) < bound)
        assert np.all(np.diff(t) > 0)
        if out.rt is not None:
            assert t[-1] < out.rt


def test_trials_are_reproducible_and_order_free(cutin_params):
    tl = make_scenario(ScenarioKind.CUT_IN, 31.69)
    serial = run_trials(tl, cutin_params, 0.0, 40, master_seed=5, workers=1)
    threaded = run_trials(tl, cutin_params, 0.0, 40, master_seed=5, workers=4)
    assert [(o.choice, o.rt) for o in serial] == [(o.choice, o.rt) for o in threaded]
    again = simulate_trial(tl, cutin_params, 0.0, trial_rng(5, 7))
    assert (again.choice, again.rt) == (serial[7].choice, serial[7].rt)


def test_summary_fields(cutin_params):
    tl = make_scenario(ScenarioKind.CUT_IN, 29.39)
    s = choice_probabilities(tl, cutin_params, 0.0, 200, master_seed=1)
    assert s.p_brake + s.p_steer + s.p_none == pytest.approx(1.0)
    d = s.as_dict()
    assert set(d["rt_quantiles"]) == {"brake", "steer"}
    if d["rt_quantiles"]["brake"]:
        assert list(d["rt_quantiles"]["brake"]) == ["0.1", "0.3", "0.5", "0.7", "0.9"]
    assert d["mean_t_nd"] == pytest.approx(cutin_params.mu_nd, abs=0.05)
    assert d["mean_accumulation"] is None or d["mean_accumulation"] >= 0


def test_summarize_requires_outcomes():
    with pytest.raises(ValidationError):
        summarize_outcomes([])


@pytest.mark.slow
def test_cut_in_brake_dominance(cutin_params):
    brakes = total = 0
    for v in SPEED_GROUPS[ScenarioKind.CUT_IN]:
        s = choice_probabilities(make_scenario(ScenarioKind.CUT_IN, v), cutin_params, 0.0, 1000, master_seed=0)
        brakes += s.counts[Choice.BRAKE]
        total += s.n_trials
    assert 0.85 <= brakes / total <= 1.0


@pytest.mark.slow
def test_rear_end_brake_share_falls_with_speed(rearend_params):
    shares = [choice_probabilities(make_scenario(ScenarioKind.REAR_END, v), rearend_params, 0.0, 1000, 0).p_brake
              for v in SPEED_GROUPS[ScenarioKind.REAR_END]]
    for a, b in zip(shares, shares[1:]):
        assert b <= a + 0.03


@pytest.mark.slow
def test_lane_change_even_split(lanechange_params):
    shares = [choice_probabilities(make_scenario(ScenarioKind.LANE_CHANGE, v), lanechange_params, 0.0, 1000, 0).p_brake
              for v in SPEED_GROUPS[ScenarioKind.LANE_CHANGE]]
    assert all(0.35 <= s <= 0.65 for s in shares)
    assert max(shares) - min(shares) < 0.15


@pytest.mark.slow
def test_mean_rt_falls_with_sensitivity(rearend_params):
    tl = make_scenario(ScenarioKind.REAR_END, 22.10)
    means = []
    for R_s in (-1.0, 0.0, 1.0):
        outcomes = run_trials(tl, rearend_params, R_s, 10_000, master_seed=3)
        means.append(np.mean([o.rt for o in outcomes if o.rt is not None]))
    assert means[0] > means[1] > means[2]
