import numpy as np
import pytest

from utils.ddm import EvidenceProfile
from utils.errors import GridBudgetError, GridStabilityError, ValidationError
from utils.first_passage import (
    GridConfig,
    first_passage_distribution,
    solve_profile,
    two_barrier_upper_probability,
)
from utils.kinematics import ScenarioKind, make_scenario

ORACLE_GRID = GridConfig(dx=0.02, dt=4e-4)


def test_oracle_limits():
    assert two_barrier_upper_probability(0.0, 1.0, 0.0) == pytest.approx(0.5)
    assert two_barrier_upper_probability(0.0, 1.0, -0.5) == pytest.approx(0.25)
    assert two_barrier_upper_probability(1.0, 1.0, 1.0) == pytest.approx(1.0)
    assert two_barrier_upper_probability(1.0, 1.0, -1.0) == pytest.approx(0.0)
    expected = (1 - np.exp(-2.0)) / (1 - np.exp(-4.0))
    assert two_barrier_upper_probability(1.0, 1.0, 0.0) == pytest.approx(expected)
    assert two_barrier_upper_probability(-1.0, 1.0, 0.0) == pytest.approx(1 - expected)
    # large drift stays finite
    assert two_barrier_upper_probability(500.0, 1.0, 0.0) == pytest.approx(1.0)


def test_oracle_rejects_start_outside():
    with pytest.raises(ValidationError):
        two_barrier_upper_probability(1.0, 1.0, 1.5)


@pytest.mark.parametrize("g", [-1.0, 0.0, 1.0])
@pytest.mark.parametrize("b", [0.5, 1.0])
@pytest.mark.parametrize("frac", [-0.5, 0.0, 0.5])
def test_grid_matches_two_barrier_oracle(g, b, frac):
    z = frac * b
    table = solve_profile(EvidenceProfile.constant(g, b, z, horizon=10.0), ORACLE_GRID)
    assert table.upper_total == pytest.approx(two_barrier_upper_probability(g, b, z), abs=1e-3)
    assert table.upper_total + table.lower_total + table.survival == pytest.approx(1.0, abs=1e-6)


def test_start_on_upper_boundary_absorbs_at_first_step():
    profile = EvidenceProfile(np.array([0.0, 10.0]), np.zeros(2), np.full(2, 0.5), 0.5, 1.0, 10.0)
    table = solve_profile(profile, ORACLE_GRID)
    assert table.p_upper[1] == pytest.approx(1.0)
    assert table.lower_total == pytest.approx(0.0)


def test_masses_are_non_negative_on_a_scenario(cutin_params):
    table = first_passage_distribution(make_scenario(ScenarioKind.CUT_IN, 25.82), cutin_params,
                                       grid_config=GridConfig(auto=True))
    assert np.all(table.p_upper >= 0)
    assert np.all(table.p_lower >= 0)
    assert table.upper_total + table.lower_total + table.survival == pytest.approx(1.0, abs=1e-6)
    assert table.lower_total > 0.9


def test_diffusion_bound_violation_is_named():
    with pytest.raises(GridStabilityError, match="diffusion") as err:
        solve_profile(EvidenceProfile.constant(0.0, 1.0, 0.0), GridConfig(dx=0.01, dt=1e-3))
    assert err.value.value > err.value.limit


def test_peclet_bound_violation_is_named():
    with pytest.raises(GridStabilityError, match="Peclet"):
        solve_profile(EvidenceProfile.constant(5.0, 1.0, 0.0), GridConfig(dx=0.5, dt=0.01))


def test_auto_grid_refines_instead_of_failing():
    table = solve_profile(EvidenceProfile.constant(5.0, 1.0, 0.0, horizon=5.0), GridConfig(dx=0.5, dt=0.01, auto=True))
    assert table.upper_total == pytest.approx(two_barrier_upper_probability(5.0, 1.0, 0.0), abs=1e-3)


def test_budget_is_enforced():
    with pytest.raises(GridBudgetError, match="nodes"):
        solve_profile(EvidenceProfile.constant(0.0, 1.0, 0.0), GridConfig(dx=0.01, dt=1e-4, max_nodes=51))
    with pytest.raises(GridBudgetError, match="steps"):
        solve_profile(EvidenceProfile.constant(0.0, 1.0, 0.0), GridConfig(dx=0.02, dt=4e-4, max_steps=100))


def test_start_time_outside_timeline():
    with pytest.raises(ValidationError):
        solve_profile(EvidenceProfile.constant(0.0, 1.0, 0.0, horizon=2.0), GridConfig(t0=3.0))


def test_summary_and_csv(tmp_path):
    table = solve_profile(EvidenceProfile.constant(1.0, 0.5, 0.0, horizon=2.0), ORACLE_GRID)
    s = table.summary()
    assert set(s) == {"p_upper", "p_lower", "p_survive", "dt", "t0", "steps"}
    path = tmp_path / "fp.csv"
    table.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,p_upper,p_lower,p_survive"
    assert len(lines) == table.t.size + 1


def test_huge_drift_hits_the_budget_before_allocating():
    grid = GridConfig(dx=0.1, dt=0.01, auto=True, max_nodes=801, max_steps=20000)
    with pytest.raises(GridBudgetError) as err:
        solve_profile(EvidenceProfile.constant(5e4, 1.0, 0.0), grid)
    assert err.value.needed > err.value.allowed


def test_fine_start_grid_is_checked_against_the_step_budget():
    with pytest.raises(GridBudgetError, match="steps"):
        solve_profile(EvidenceProfile.constant(0.0, 1.0, 0.0), GridConfig(dx=0.5, dt=1e-9, max_steps=20000))


def test_halving_dt_converges():
    profile = EvidenceProfile(np.array([0.0, 1.0, 4.0]), np.array([-1.0, 1.0, 1.0]),
                              np.array([1.0, 0.5, 0.5]), 0.0, 1.0, 4.0)
    upper = [solve_profile(profile, GridConfig(dx=0.02, dt=dt)).upper_total for dt in (4e-4, 2e-4, 1e-4)]
    assert abs(upper[1] - upper[0]) < 5e-3
    assert abs(upper[2] - upper[1]) <= abs(upper[1] - upper[0]) + 1e-5


def test_flipping_drift_and_start_swaps_the_boundaries():
    knots = np.array([0.0, 1.0, 3.0])
    drift = np.array([-1.0, 1.5, 0.5])
    bound = np.array([1.0, 0.6, 0.6])
    toward = solve_profile(EvidenceProfile(knots, drift, bound, 0.2, 1.0, 3.0), ORACLE_GRID)
    away = solve_profile(EvidenceProfile(knots, -drift, bound, -0.2, 1.0, 3.0), ORACLE_GRID)
    assert np.allclose(toward.p_upper, away.p_lower, atol=1e-12, rtol=0)
    assert np.allclose(toward.p_lower, away.p_upper, atol=1e-12, rtol=0)
    assert np.allclose(toward.p_survive, away.p_survive, atol=1e-12, rtol=0)
