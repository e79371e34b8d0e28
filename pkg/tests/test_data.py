import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evpinn.data import (
    CycleSpec,
    DriveLog,
    LogFormatError,
    Phase,
    default_cycle,
    estimate_accel,
    holdout_mask,
    load_log,
    log_to_string,
    normalize,
    prepare_dataset,
    save_log,
    speed_profile,
    split,
    synth_cycle,
)
from evpinn.dynamics import PRESETS, PhysParams, battery_power

M3 = PRESETS["model3lr"]


def test_load_three_rows():
    text = "t_s,v_mps,voltage_v,current_a\n0,0,400,2\n1,1.5,399,10\n2,3.0,398,-5\n"
    log = load_log(io.StringIO(text))
    assert len(log) == 3
    np.testing.assert_array_equal(log.P, [800.0, 3990.0, -1990.0])


def test_load_without_power():
    log = load_log(io.StringIO("t_s,v_mps\n0,0\n1,1\n"))
    assert log.P is None
    with pytest.raises(ValueError, match="no ground-truth power"):
        normalize(log)


def test_non_increasing_time_reports_row():
    with pytest.raises(LogFormatError, match="row 3"):
        load_log(io.StringIO("t_s,v_mps\n0,0\n1,1\n1,2\n"))


@pytest.mark.parametrize(
    "text, message",
    [
        ("v_mps\n1\n", "missing required"),
        ("t_s,v_mps,voltage_v\n0,0,1\n", "together"),
        ("t_s,v_mps\n0,0\n1,abc\n", "line 3"),
        ("t_s,v_mps\n0,0\n1\n", "line 3"),
        ("", "empty"),
    ],
)
def test_malformed_logs(text, message):
    with pytest.raises(LogFormatError, match=message):
        load_log(io.StringIO(text))


@settings(max_examples=30)
@given(st.lists(st.floats(0, 1e4, allow_nan=False), min_size=2, max_size=20),
       st.lists(st.floats(-1e5, 1e5, allow_nan=False), min_size=20, max_size=20))
def test_save_load_round_trip(speeds, powers):
    n = len(speeds)
    log = DriveLog(np.cumsum(np.full(n, 0.7)), speeds, P=powers[:n])
    back = load_log(io.StringIO(log_to_string(log)))
    assert np.array_equal(back.t, log.t)
    assert np.array_equal(back.v, log.v)
    assert np.array_equal(back.P, log.P)


def test_round_trip_with_voltage_current():
    log = DriveLog([0.0, 0.5], [0.0, 1.25], voltage=[401.5, 400.25], current=[-3.0, 7.5])
    buf = io.StringIO()
    save_log(log, buf)
    back = load_log(io.StringIO(buf.getvalue()))
    assert np.array_equal(back.voltage, log.voltage) and np.array_equal(back.current, log.current)


def test_accel_of_constant_speed():
    log = DriveLog(np.arange(10.0), np.full(10, 7.0))
    assert np.all(estimate_accel(log, 5) == 0.0)


def test_accel_of_linear_speed():
    t = np.arange(0.0, 20.0)
    a = estimate_accel(DriveLog(t, 2 * t), 1)
    np.testing.assert_allclose(a[1:-1], 2.0, rtol=0, atol=1e-12)


def test_accel_of_quadratic_speed():
    t = np.arange(0.0, 11.0)
    a = estimate_accel(DriveLog(t, t**2), 1)
    np.testing.assert_allclose(a[1:-1], 2 * t[1:-1], rtol=0, atol=1e-12)


def test_smoothed_accel_on_linear_ramp():
    t = np.arange(0.0, 30.0)
    a = estimate_accel(DriveLog(t, 0.8 * t + 1.0), 5)
    assert np.max(np.abs(a[1:-1] - 0.8)) < 1e-6


def test_accel_needs_three_samples():
    with pytest.raises(ValueError):
        estimate_accel(DriveLog([0.0, 1.0], [0.0, 1.0]))


def test_idle_only_cycle_draws_aux_power():
    spec = CycleSpec(60.0, (Phase("idle", duration=60.0),))
    log = synth_cycle(spec, M3.fixed, M3.initial)
    assert np.all(log.P == M3.fixed.P_aux)


def test_cycle_power_matches_per_sample_evaluation():
    spec = CycleSpec(
        148.0,
        (Phase("accelerate", 25.0, 2.0), Phase("cruise", duration=60.0),
         Phase("brake", 0.0, 1.5), Phase("idle", duration=30.0)),
    )
    log = synth_cycle(spec, M3.fixed, M3.initial)
    # independent per-sample re-evaluation of the ramp kinematics and power
    for i in range(0, len(log), 7):
        t = log.t[i]
        v, a = _profile_at(t)
        assert log.v[i] == pytest.approx(v, abs=1e-9)
        assert log.dvdt[i] == pytest.approx(a, abs=1e-12)
        p = float(battery_power(v, a, M3.fixed, M3.initial))
        assert log.P[i] == pytest.approx(p, rel=1e-9, abs=1e-6)
    assert log.v.max() == pytest.approx(25.0, abs=0.05)
    assert (log.dvdt < M3.fixed.beta).sum() > 5


def _profile_at(t):
    """accelerate 0->25 at peak 2 (25 s), cruise 60 s, brake 25->0 at peak 1.5, idle."""
    import math

    def ramp(tau, length, v0, rate):
        a = rate * math.sin(math.pi * tau / length) ** 2
        v = v0 + rate * (tau / 2 - length / (4 * math.pi) * math.sin(2 * math.pi * tau / length))
        return v, a

    t_acc = 2 * 25 / 2.0
    t_brk = 2 * 25 / 1.5
    if t < t_acc:
        return ramp(t, t_acc, 0.0, 2.0)
    if t < t_acc + 60:
        return 25.0, 0.0
    if t < t_acc + 60 + t_brk:
        return ramp(t - t_acc - 60, t_brk, 25.0, -1.5)
    return 0.0, 0.0


def test_cycle_is_deterministic():
    a = synth_cycle(default_cycle(900, 0.01, 3), M3.fixed, M3.initial)
    b = synth_cycle(default_cycle(900, 0.01, 3), M3.fixed, M3.initial)
    assert np.array_equal(a.P, b.P) and np.array_equal(a.v, b.v)


def test_default_cycle_shape():
    log = synth_cycle(default_cycle(), M3.fixed, M3.initial)
    assert len(log) == 900
    assert np.all(log.v >= 0)
    assert np.any((log.v == 0) & (log.dvdt == 0))
    assert np.any(log.dvdt < M3.fixed.beta)


def test_speed_is_c1():
    spec = default_cycle()
    t = np.linspace(0, 899, 200001)
    step = t[1] - t[0]
    v, a = speed_profile(spec, t)
    peak_accel = max(p.rate for p in spec.phases if p.kind in ("accelerate", "brake"))
    assert np.max(np.abs(np.diff(v))) <= peak_accel * step * (1 + 1e-9)
    assert np.max(np.abs(np.diff(a))) < 1e-2  # no jumps in acceleration


@pytest.mark.parametrize(
    "spec",
    [
        lambda: CycleSpec(0.0, (Phase("idle", duration=5),)),
        lambda: CycleSpec(100.0, (Phase("accelerate", 10, 1.0), Phase("cruise", duration=50))),
        lambda: CycleSpec(100.0, (Phase("accelerate", 10, 1.0), Phase("idle", duration=5))),
        lambda: CycleSpec(100.0, (Phase("idle", duration=5), Phase("accelerate", 10, 1.0),
                                  Phase("brake", 0, 0.01), Phase("idle", duration=5))),
    ],
)
def test_invalid_cycles(spec):
    with pytest.raises(ValueError):
        synth_cycle(spec(), M3.fixed, M3.initial)


def test_noise_level():
    clean = synth_cycle(default_cycle(900, 0.0, 1), M3.fixed, M3.initial)
    noisy = synth_cycle(default_cycle(900, 0.01, 1), M3.fixed, M3.initial)
    sigma = 0.01 * (clean.P.max() - clean.P.min())
    assert np.std(noisy.P - clean.P) == pytest.approx(sigma, rel=0.1)


def test_normalize_power_scale():
    t = np.arange(4.0)
    log = DriveLog(t, [0.0, 5.0, 10.0, 2.0], P=[-10_000.0, 0.0, 20_000.0, 5_000.0],
                   dvdt=np.zeros(4))
    ds = normalize(log)
    assert ds.scales.P_scale == 20_000.0
    assert ds.targets.min() == -0.5 and ds.targets.max() == 1.0
    assert ds.inputs.min() >= 0.0 and ds.inputs.max() <= 1.0


def test_normalize_constant_speed_maps_to_zero():
    log = DriveLog(np.arange(5.0), np.full(5, 3.0), P=np.full(5, 900.0))
    ds = normalize(log)
    assert np.all(ds.inputs[:, 0] == 0.0)


def test_normalize_zero_power_rejected():
    with pytest.raises(ValueError, match="zero power"):
        normalize(DriveLog(np.arange(5.0), np.zeros(5), P=np.zeros(5)))


def test_normalize_uses_training_rows_only():
    log = synth_cycle(default_cycle(), M3.fixed, PhysParams(0.72, 0.65, 1900, 0.01, 0.24))
    ds = prepare_dataset(log, 0.2, 4)
    tr = ds.train
    assert tr.inputs.min() == 0.0 and tr.inputs.max() == 1.0
    assert np.max(np.abs(tr.targets)) == 1.0
    np.testing.assert_allclose(ds.scales.denorm_P(ds.targets), log.P, rtol=1e-12)


def test_split_is_contiguous_and_deterministic():
    log = synth_cycle(default_cycle(1000), M3.fixed, M3.initial)
    ds = normalize(log)
    train, val = split(ds, 0.2, seed=9)
    assert len(train) == 800 and len(val) == 200
    assert np.all(np.diff(val.t) == 1.0)
    train2, val2 = split(ds, 0.2, seed=9)
    assert np.array_equal(val.t, val2.t)


@pytest.mark.parametrize("fraction", [0.0, 1.0, -0.1])
def test_split_fraction_range(fraction):
    with pytest.raises(ValueError):
        holdout_mask(100, fraction)
