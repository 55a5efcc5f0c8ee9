import numpy as np
import pytest

from satrl.attitude import angular_distance, quat_from_axis_angle, rotate_vector
from satrl.dynamics import (
    TORQUE_LIMIT, FailureMode, SatelliteParams, SatelliteState, apply_failure, clamp_torque,
    effective_wheel_torque, euler_dynamics, rad_s_to_rpm, rpm_to_rad_s, step_dynamics,
    total_angular_momentum,
)

P = SatelliteParams()
SAT = P.rw_saturation_speed


def test_reference_parameters():
    assert P.inertia_diag == (0.19, 0.23, 0.17)
    assert P.rw_inertia == 1.82e-5
    assert P.max_rw_torque == 0.004
    assert rad_s_to_rpm(SAT) == pytest.approx(7000.0)
    assert TORQUE_LIMIT == 0.5 * P.max_rw_torque


@pytest.mark.parametrize("bad", [
    dict(inertia_diag=(0.19, 0.0, 0.17)), dict(rw_inertia=0.0), dict(max_rw_torque=-1.0),
    dict(rw_saturation_speed=0.0),
])
def test_params_validation(bad):
    with pytest.raises(ValueError):
        SatelliteParams(**bad)


def test_euler_examples():
    np.testing.assert_allclose(euler_dynamics(P, np.zeros(3), [0.002, 0, 0]),
                               [0.002 / 0.19, 0, 0], rtol=1e-12)
    assert euler_dynamics(P, np.zeros(3), [0.002, 0, 0])[0] == pytest.approx(0.0105263, abs=1e-7)
    wdot = euler_dynamics(P, [0.1, 0, 0.1], np.zeros(3))
    np.testing.assert_allclose(wdot, [0, -0.0002 / 0.23, 0], atol=1e-15)
    assert wdot[1] == pytest.approx(-8.6957e-4, abs=1e-8)
    np.testing.assert_array_equal(euler_dynamics(P, [0, 0.05, 0], np.zeros(3)), np.zeros(3))


def test_euler_wheel_coupling():
    w, rw = np.array([0.01, 0.02, -0.01]), np.array([100.0, -50.0, 30.0])
    h = P.inertia * w + P.rw_inertia * rw
    np.testing.assert_allclose(euler_dynamics(P, w, np.zeros(3), rw), -np.cross(w, h) / P.inertia,
                               rtol=1e-14)
    strict = SatelliteParams(wheel_gyroscopic=False)
    np.testing.assert_allclose(euler_dynamics(strict, w, np.zeros(3), rw),
                               -np.cross(w, P.inertia * w) / P.inertia, rtol=1e-14)


def test_clamp_examples():
    np.testing.assert_array_equal(clamp_torque([0.003, 0, 0]), [0.002, 0, 0])
    np.testing.assert_array_equal(clamp_torque([0.001, -0.0015, 0.002]), [0.001, -0.0015, 0.002])
    np.testing.assert_array_equal(clamp_torque([-0.01, 0.01, 0]), [-0.002, 0.002, 0])


def test_failure_examples():
    cmd = np.array([0.001, -0.002, 0.0015])
    np.testing.assert_array_equal(apply_failure(cmd, FailureMode.NOMINAL), cmd)
    np.testing.assert_array_equal(apply_failure([0.002, 0.001, 0], FailureMode.FAILED_X),
                                  [0, 0.001, 0])
    np.testing.assert_array_equal(apply_failure([0, 0, 0.002], FailureMode.FAILED_Z), np.zeros(3))


def test_failure_mode_parse():
    assert FailureMode.parse("nominal") is FailureMode.NOMINAL
    assert FailureMode.parse("failed_y") is FailureMode.FAILED_Y
    assert FailureMode.parse("Z") is FailureMode.FAILED_Z
    with pytest.raises(ValueError):
        FailureMode.parse("w")


def test_wheel_saturation_examples():
    cmd = np.array([0.001, 0.001, -0.001])
    np.testing.assert_array_equal(effective_wheel_torque(cmd, SatelliteState(), P), cmd)
    at_sat = SatelliteState(rw_speed=[SAT, 0, 0])
    # body torque -tau spins the wheel up at +tau/I_rw: blocked
    np.testing.assert_array_equal(effective_wheel_torque([-0.001, 0, 0], at_sat, P), np.zeros(3))
    np.testing.assert_array_equal(effective_wheel_torque([0.001, 0, 0], at_sat, P),
                                  [0.001, 0, 0])


def test_step_equilibrium():
    s = SatelliteState(quat_from_axis_angle([0, 1.0, 0], 0.3))
    out = step_dynamics(s, np.zeros(3), 0.5, P)
    np.testing.assert_array_equal(out.as_vector(), s.as_vector())


def test_step_single_axis_closed_form():
    out = step_dynamics(SatelliteState(), [0.002, 0, 0], 0.5, P, substeps=100)
    assert out.omega[0] == pytest.approx(0.5 * 0.002 / 0.19, abs=1e-6)
    assert out.omega[0] == pytest.approx(0.0052632, abs=1e-6)
    assert out.rw_speed[0] == pytest.approx(-54.945, abs=1e-3)
    np.testing.assert_array_equal(out.omega[1:], 0.0)


def test_step_axis_aligned_momentum_exact():
    s = SatelliteState(omega=[0, 0.02, 0], rw_speed=[0, 40.0, 0])
    h0 = total_angular_momentum(s, P)
    out = step_dynamics(s, [0, -0.0015, 0], 0.5, P)
    np.testing.assert_allclose(total_angular_momentum(out, P), h0, rtol=1e-12)


def test_total_momentum_examples():
    np.testing.assert_array_equal(total_angular_momentum(SatelliteState(), P), np.zeros(3))
    np.testing.assert_allclose(total_angular_momentum(SatelliteState(omega=[0.01, 0, 0]), P),
                               [0.0019, 0, 0], rtol=1e-14)


def test_single_axis_momentum_stays_zero():
    rng = np.random.default_rng(3)
    s = SatelliteState()
    for _ in range(400):
        s = step_dynamics(s, [0, 0, rng.uniform(-0.002, 0.002)], 0.5, P)
        assert abs(total_angular_momentum(s, P)[2]) <= 1e-10


def _tumble_start():
    return SatelliteState(quat_from_axis_angle(np.array([1.0, -2.0, 2.0]) / 3.0, 1.0),
                          [0.03, -0.05, 0.04], [200.0, -300.0, 100.0])


def test_inertial_momentum_conserved_while_tumbling():
    rng = np.random.default_rng(0)
    s = _tumble_start()
    h0 = np.linalg.norm(rotate_vector(s.attitude, total_angular_momentum(s, P)))
    worst = 0.0
    for _ in range(2000):
        s = step_dynamics(s, rng.uniform(-0.002, 0.002, 3), 0.5, P)
        h = np.linalg.norm(rotate_vector(s.attitude, total_angular_momentum(s, P)))
        worst = max(worst, abs(h - h0) / h0)
    assert worst <= 1e-6


def test_substep_convergence():
    s = _tumble_start()
    cmd = np.array([0.0015, -0.002, 0.001])
    coarse = step_dynamics(s, cmd, 0.5, P, substeps=100)
    fine = step_dynamics(s, cmd, 0.5, P, substeps=10000)
    assert angular_distance(coarse.attitude, fine.attitude) <= 1e-6


def test_wheels_never_exceed_saturation():
    s = SatelliteState(rw_speed=[SAT - 5.0, -(SAT - 5.0), 0.0])
    for _ in range(50):
        s = step_dynamics(s, [-0.002, 0.002, 0.002], 0.5, P)
        assert np.all(np.abs(s.rw_speed) <= SAT)


def test_failed_axis_gets_no_torque():
    s = SatelliteState(quat_from_axis_angle([0, 0, 1.0], 2.0))
    for mode in (FailureMode.FAILED_X, FailureMode.FAILED_Y, FailureMode.FAILED_Z):
        state = s
        for _ in range(20):
            state, applied = step_dynamics(state, [0.002, -0.002, 0.002], 0.5, P, mode,
                                           return_torque=True)
            assert applied[mode.axis] == 0.0
        assert state.rw_speed[mode.axis] == 0.0


def test_non_finite_state_raises():
    from satrl.dynamics import NumericalFailure
    s = SatelliteState(omega=[1e300, 1e300, 0.0])
    with pytest.raises(NumericalFailure):
        step_dynamics(s, np.zeros(3), 0.5, P)


def test_rpm_round_trip():
    assert rpm_to_rad_s(60.0) == pytest.approx(2 * np.pi)
    assert rad_s_to_rpm(rpm_to_rad_s(7000.0)) == pytest.approx(7000.0, rel=1e-15)
