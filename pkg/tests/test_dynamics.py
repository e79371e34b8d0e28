import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evpinn.autodiff import Tape, check_gradient
from evpinn.data import DriveLog
from evpinn.dynamics import (
    PRESETS,
    FixedParams,
    NoIdleSegmentError,
    PhysParams,
    battery_power,
    clamp_params,
    estimate_aux_power,
    force_components,
    ground_truth_power,
    preset_from_dict,
    regen_power,
)

M3 = PRESETS["model3lr"]


def test_presets_match_published_initial_values():
    assert M3.initial.as_array().tolist() == [0.7, 0.5, 1823.0, 0.0096, 0.23]
    assert PRESETS["modelS"].initial.as_array().tolist() == [0.7, 0.5, 2250.0, 0.0096, 0.23]
    assert (M3.fixed.A, M3.fixed.P_aux, M3.fixed.rho) == (2.22, 1100.0, 1.17)
    assert (PRESETS["modelS"].fixed.A, PRESETS["modelS"].fixed.P_aux) == (2.40, 390.0)
    assert M3.fixed.beta == -0.045 and M3.fixed.theta == 0.0 and M3.fixed.g == 9.81


def test_forces_at_rest():
    f = force_components(0.0, 0.0, M3.fixed, M3.initial)
    assert f["F_drag"] == 0.0 and f["F_inertia"] == 0.0 and f["F_gravity"] == 0.0
    assert f["F_rolling"] == pytest.approx(0.0096 * 1823 * 9.81)


def test_drag_at_30():
    f = force_components(30.0, 0.0, M3.fixed, M3.initial)
    assert f["F_drag"] == pytest.approx(0.5 * 1.17 * 2.22 * 0.23 * 900, rel=1e-12)
    assert f["F_drag"] == pytest.approx(268.8, abs=0.05)


@given(st.floats(0, 50), st.floats(-3, 3))
def test_flat_road_has_no_gravity_force(v, a):
    assert force_components(v, a, M3.fixed, M3.initial)["F_gravity"] == 0.0


def test_idle_power_is_aux():
    assert battery_power(0.0, 0.0, M3.fixed, M3.initial) == 1100.0
    assert battery_power(0.0, 0.0, PRESETS["modelS"].fixed, PRESETS["modelS"].initial) == 390.0


def test_cruise_30_hand_evaluation():
    drag = 0.5 * 1.17 * 2.22 * 0.23 * 30**3
    rolling = 0.0096 * 1823 * 9.81 * 30
    assert drag == pytest.approx(8064.9, abs=0.05)
    assert rolling == pytest.approx(5150.4, abs=0.1)
    expected = (drag + rolling) / 0.7 + 1100
    got = battery_power(30.0, 0.0, M3.fixed, M3.initial)
    assert got == pytest.approx(expected, rel=1e-12)
    assert got == pytest.approx(19979, rel=1e-3)


def test_regen_braking_hand_evaluation():
    drag = 0.5 * 1.17 * 2.22 * 0.23 * 20**3
    rolling = 0.0096 * 1823 * 9.81 * 20
    inertia = 1823 * 20 * -1.0 * (1 - 0.5)
    expected = (drag + rolling + inertia) / 0.7 + 1100
    got = battery_power(20.0, -1.0, M3.fixed, M3.initial)
    assert got == pytest.approx(expected, rel=1e-12)
    assert got == pytest.approx(-16624, rel=1e-3)


def test_regen_power():
    assert regen_power(20.0, 0.0, M3.initial) == 0.0
    # mu * m * v * |dv/dt| = 0.5 * 1823 * 20 * 1
    assert regen_power(20.0, -1.0, M3.initial) == pytest.approx(18230.0, rel=1e-12)
    no_regen = PhysParams(0.7, 0.0, 1823, 0.0096, 0.23)
    assert regen_power(20.0, -2.0, no_regen) == 0.0


def test_ground_truth_power_sign_convention():
    assert ground_truth_power(10, 400) == 4000.0
    assert ground_truth_power(0, 395) == 0.0
    assert ground_truth_power(-20, 395) == -7900.0
    np.testing.assert_array_equal(ground_truth_power([1, -2], [3, 4]), [3.0, -8.0])


@settings(deadline=None)
@given(st.floats(0.1, 45), st.floats(-0.045, 3))
def test_force_balance(v, a):
    f = force_components(v, a, M3.fixed, M3.initial)
    p = battery_power(v, a, M3.fixed, M3.initial)
    motor_force = M3.initial.eta * (p - M3.fixed.P_aux) / v
    assert motor_force == pytest.approx(sum(f.values()), rel=1e-9, abs=1e-9)


def test_force_balance_with_grade():
    fixed = FixedParams(A=2.22, P_aux=1100.0, theta=0.05)
    f = force_components(15.0, 0.2, fixed, M3.initial)
    p = battery_power(15.0, 0.2, fixed, M3.initial)
    assert M3.initial.eta * (p - fixed.P_aux) / 15.0 == pytest.approx(sum(f.values()), rel=1e-12)


def test_power_increases_with_speed_at_steady_state():
    v = np.linspace(0, 45, 200)
    p = battery_power(v, np.zeros_like(v), M3.fixed, M3.initial)
    assert np.all(np.diff(p) > 0)


def test_regen_threshold_discontinuity():
    beta = M3.fixed.beta
    v = 20.0
    just_above = battery_power(v, beta, M3.fixed, M3.initial)  # indicator off at beta itself
    just_below = battery_power(v, np.nextafter(beta, -1.0), M3.fixed, M3.initial)
    inertia = M3.initial.m * v * beta / M3.initial.eta
    assert just_below - just_above == pytest.approx(-M3.initial.mu * inertia, rel=1e-9)
    assert just_above - just_below < 0  # regen cuts the (negative) inertia term


def test_tape_and_float_evaluations_agree():
    v = np.array([0.0, 5.0, 17.0, 31.0])
    a = np.array([0.0, 1.2, -0.02, -1.5])
    plain = battery_power(v, a, M3.fixed, M3.initial)
    tape = Tape()

    class P:
        pass

    phys = P()
    for name in ("eta", "mu", "m", "C_rr", "C_d"):
        setattr(phys, name, tape.lift(getattr(M3.initial, name)))
    taped = battery_power(v, a, M3.fixed, phys)
    np.testing.assert_allclose(taped.value, plain, rtol=1e-12, atol=0)


def test_power_gradient_wrt_parameters():
    def f(tape, xs):
        class P:
            pass

        phys = P()
        phys.eta, phys.m, phys.C_rr, phys.C_d = xs
        phys.mu = 0.5
        return battery_power(25.0, 0.4, M3.fixed, phys)

    at = [0.7, 1823.0, 0.0096, 0.23]
    # relative step per coordinate keeps the central difference well conditioned
    assert check_gradient(f, at, 1e-6) < 1e-6


def test_param_bounds():
    with pytest.raises(ValueError):
        PhysParams(1.2, 0.5, 1800, 0.01, 0.2)
    with pytest.raises(ValueError):
        PhysParams(0.7, 0.5, 100, 0.01, 0.2)
    clamped = clamp_params([1.5, -0.1, 9000, 0.0, 2.0])
    PhysParams.from_array(clamped)
    assert clamped[0] == 1.0 and clamped[1] == 0.0 and clamped[2] == 5000.0 and clamped[4] == 1.0


def test_fixed_params_validation():
    with pytest.raises(ValueError):
        FixedParams(A=2.0, P_aux=100.0, beta=0.1)
    with pytest.raises(ValueError):
        FixedParams(A=0.0, P_aux=100.0)


def test_inline_preset():
    p = preset_from_dict({"base": "model3lr", "initial": {"m": 2000.0}})
    assert p.initial.m == 2000.0 and p.fixed.A == 2.22
    with pytest.raises(ValueError):
        preset_from_dict({"base": "model3lr", "bogus": 1})


def test_aux_power_from_clean_idle():
    t = np.arange(60.0)
    v = np.r_[np.zeros(30), np.linspace(0.5, 10, 30)]
    P = np.r_[np.full(30, 1100.0), np.full(30, 9000.0)]
    assert estimate_aux_power(DriveLog(t, v, P=P)) == pytest.approx(1100.0)


def test_aux_power_noisy_idle():
    rng = np.random.default_rng(0)
    n = 1000
    log = DriveLog(np.arange(float(n)), np.zeros(n), P=1100.0 + rng.normal(0, 10, n))
    # standard error is 10 / sqrt(1000) ~ 0.32 W; the +-2 W band is > 6 sigma
    assert abs(estimate_aux_power(log) - 1100.0) < 2.0


def test_aux_power_needs_idle():
    t = np.arange(10.0)
    with pytest.raises(NoIdleSegmentError):
        estimate_aux_power(DriveLog(t, np.full(10, 12.0), P=np.full(10, 5000.0)))
