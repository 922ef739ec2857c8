import numpy as np
import pytest

from src.errors import SolverError, ValidationError
from src.fsi_system import FsiSystem
from src.linear_operators import random_solenoidal
from src.surrogates import make_normal_form
from src.time_stepper import (ImexStepper, dominant_frequency, energy_balance, growth_rate, kinematic_defect,
                              observables, refinement_order, simulate)


@pytest.fixture(scope='module')
def supercritical():
    return make_normal_form(-1)


def test_rest_state_stays_at_rest(supercritical):
    traj = simulate(supercritical, np.zeros(2), 1.0, 0.05, mu=0.05)
    assert np.all(traj.energy == 0.0)
    assert np.all(traj.balance_defect == 0.0)
    obs = observables(traj.t, traj.signal)
    assert obs['amplitude'] == 0.0
    assert obs['frequency'] is None
    assert not obs['oscillatory']


def test_limit_cycle_of_the_normal_form(supercritical):
    mu = 0.05
    traj = simulate(supercritical, np.array([0.01, 0.0]), 300.0, 0.02, mu=mu)
    obs = observables(traj.t, traj.signal)
    assert obs['amplitude'] == pytest.approx(np.sqrt(mu), rel=1e-2)
    assert obs['frequency'] == pytest.approx(1.0, rel=1e-2)
    assert energy_balance(traj)['passed']
    assert traj.signal_name == 'eta0'


def test_second_order_in_time(supercritical):
    states = [simulate(supercritical, np.array([0.1, 0.0]), 2.0, dt, mu=0.05).final_state
              for dt in (0.02, 0.01, 0.005)]
    assert refinement_order(states) == pytest.approx(2.0, abs=0.2)
    with pytest.raises(ValidationError):
        refinement_order(states[:2])


def test_blowup_reports_last_valid_time():
    system = make_normal_form(+1)
    with pytest.raises(SolverError, match='blow-up') as info:
        simulate(system, np.array([1.0, 0.0]), 5.0, 0.01, blowup=1e3)
    assert 0.3 < info.value.last_valid_time < 0.6


def test_invalid_steps(supercritical):
    with pytest.raises(ValidationError):
        ImexStepper(supercritical, 0.0)
    with pytest.raises(ValidationError):
        simulate(supercritical, np.zeros(2), -1.0, 0.1)


def test_synthetic_sine():
    t = np.arange(0.0, 200.0, 0.01)
    obs = observables(t, 0.1 * np.sin(2.0 * t))
    assert obs['amplitude'] == pytest.approx(0.1, rel=1e-3)
    assert obs['frequency'] == pytest.approx(2.0, rel=1e-3)
    assert obs['growth_rate'] == pytest.approx(0.0, abs=1e-3)


def test_decaying_oscillation():
    t = np.arange(0.0, 30.0, 0.01)
    y = np.exp(-0.3 * t) * np.sin(t)
    assert growth_rate(t, y) == pytest.approx(-0.3, abs=0.01)
    assert dominant_frequency(t, y) == pytest.approx(1.0, rel=0.1)


def test_monotone_signal_is_not_oscillatory():
    t = np.linspace(0.0, 10.0, 500)
    assert dominant_frequency(t, np.exp(-t)) is None
    assert growth_rate(t, np.exp(-t)) is None
    with pytest.raises(ValidationError):
        observables(t, np.zeros(3))


def test_fsi_steps_conserve_energy_and_kinematics(problem, rng):
    system = FsiSystem(problem, 5.0, 'linear')
    init = 1e-3 * random_solenoidal(problem.ops, rng)
    traj = simulate(system, init, 0.2, 0.05, stride=2)
    assert traj.t.size == 5
    assert energy_balance(traj)['passed']
    assert kinematic_defect(traj)['trapezoidal'] < 1e-9
    assert traj.divergence.max() < 1e-9
    assert len(traj.snapshots) == 3
    assert traj.header()[0] == 't'
    assert len(next(traj.rows())) == len(traj.header())
