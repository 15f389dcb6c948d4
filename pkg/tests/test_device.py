import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from memstdp.device import (CalibrationError, CalibrationTargets, Device, DeviceParams, Level,
                            calibrate, classify_state, dump_params, load_params, new_device,
                            p_reset, p_set)
from memstdp.waveform import Segment, compose

P = DeviceParams()
NO_DIVIDER = P.replace(divider_enabled=False)


def binomial_ok(k, n, p, slack=0.0):
    return abs(k / n - p) <= 3 * math.sqrt(p * (1 - p) / n) + slack


# --- switching law -----------------------------------------------------------

def test_p_set_examples():
    assert p_set(1.0, 30, P) == pytest.approx(1 - math.sqrt(0.1), abs=1e-12)
    assert p_set(0.5, 1590, P) == pytest.approx(0.015, abs=1e-12)
    assert p_set(-1.0, 30, P) == 0.0
    assert p_set(0.8, 0, P) == 0.0


def test_p_reset_examples():
    # reset anchors are applied volts through the 1 kOhm divider at r_lrs_min
    v_dev = -1.0 * 3000 / 4000
    assert p_reset(v_dev, 30, P) == pytest.approx(0.99, abs=1e-12)
    assert p_reset(-1.0, 30, P) >= 0.99
    assert p_reset(1.0, 30, P) == 0.0
    assert p_reset(-1.0, 0, P) == 0.0


def test_calibration_closed_forms():
    tau1 = -30 / math.log(math.sqrt(0.1))
    assert P.tau_set(1.0) == pytest.approx(tau1, rel=1e-12)
    assert P.tau_set(1.0) == pytest.approx(26.06, abs=0.01)
    tau_half = -1590 / math.log(0.985)
    assert P.tau_set(0.5) == pytest.approx(tau_half, rel=1e-9)
    assert P.v0_set == pytest.approx(0.5 / math.log(tau_half / tau1), rel=1e-12)
    assert P.v0_set == pytest.approx(0.0602, abs=5e-5)


def test_calibration_peak_075():
    p = calibrate(CalibrationTargets(p_two_pulse_peak=0.75))
    assert p.tau_set(1.0) == pytest.approx(30 / math.log(2), rel=1e-12)


def test_calibration_round_trip():
    t = CalibrationTargets(p_two_pulse_peak=0.8, p_baseline=0.03, erase_success=0.95)
    p = calibrate(t)
    f = 3000 / 4000
    assert p_set(1.0, 30, p) == pytest.approx(1 - math.sqrt(0.2), abs=1e-9)
    assert p_set(0.5, 1590, p) == pytest.approx(0.03, abs=1e-9)
    assert p_reset(-1.0 * f, 30, p) == pytest.approx(0.95, abs=1e-9)
    assert p_reset(-0.5 * f, 1590, p) == pytest.approx(0.02, abs=1e-9)


def test_calibration_infeasible():
    with pytest.raises(CalibrationError):
        CalibrationTargets(p_two_pulse_peak=1.0)
    with pytest.raises(CalibrationError):
        CalibrationTargets(p_baseline=0.0)
    with pytest.raises(CalibrationError):
        # baseline switching faster than the write pulse is not a valid law
        calibrate(CalibrationTargets(p_two_pulse_peak=0.01, p_baseline=0.9))


def test_monotone_grid():
    vs = np.linspace(0.01, 1.5, 50)
    ws = np.linspace(0.0, 3000.0, 50)
    ps = np.array([[p_set(v, w, P) for w in ws] for v in vs])
    pr = np.array([[p_reset(-v, w, P) for w in ws] for v in vs])
    for grid in (ps, pr):
        assert (np.diff(grid, axis=0) >= 0).all()
        assert (np.diff(grid, axis=1) >= 0).all()


@settings(max_examples=300)
@given(st.floats(0.05, 1.5), st.floats(0, 2000), st.floats(0, 2000))
def test_exposure_additivity_analytic(v, w1, w2):
    whole = p_set(v, w1 + w2, P)
    split = 1 - (1 - p_set(v, w1, P)) * (1 - p_set(v, w2, P))
    assert whole == pytest.approx(split, abs=1e-12)


def test_exposure_additivity_empirical():
    n = 100_000
    one, two = Device(NO_DIVIDER, 11), Device(NO_DIVIDER, 12)
    whole = Segment.from_us(0, 30, 1.0)
    parts = (Segment.from_us(0, 12, 1.0), Segment.from_us(12, 30, 1.0))
    k1 = k2 = 0
    for _ in range(n):
        one.level = two.level = Level.HRS
        one.apply_segment(whole)
        for seg in parts:
            two.apply_segment(seg)
        k1 += one.level is Level.LRS
        k2 += two.level is Level.LRS
    p = p_set(1.0, 30, NO_DIVIDER)
    assert binomial_ok(k1, n, p)
    assert binomial_ok(k2, n, p)


# --- device behaviour ----------------------------------------------------------

def test_new_device_virgin_state():
    d = new_device(P, 42)
    assert d.level is Level.HRS
    assert d.resistance == 50e6


def test_apply_segment_polarity():
    d = Device(P, 0)
    d.level, d.resistance = Level.LRS, 5000.0
    d.apply_segment(Segment.from_us(0, 30, 1.0))
    assert d.state == (Level.LRS, 5000.0)
    d = Device(P, 0)
    d.apply_segment(Segment.from_us(0, 30, -1.0))
    assert d.state == (Level.HRS, 50e6)


def test_write_probability_single_pulse():
    n, k = 20_000, 0
    d = Device(P, 5)
    pulse = Segment.from_us(0, 30, 1.0)
    expected = p_set(1.0 * P.divider(50e6), 30, P)
    for _ in range(n):
        d.level, d.resistance = Level.HRS, 50e6
        d.apply_segment(pulse)
        k += d.level is Level.LRS
    assert expected == pytest.approx(0.6838, abs=1e-3)
    assert binomial_ok(k, n, expected)


stimuli = st.lists(st.tuples(st.floats(-1.4, 1.4).filter(lambda v: abs(v) > 1e-3),
                             st.floats(1, 3000)), min_size=1, max_size=30)


@settings(max_examples=200, deadline=None)
@given(stimuli, st.integers(0, 2**31))
def test_polarity_safety(seq, seed):
    d = Device(P, seed)
    for v, w in seq:
        before = d.level
        d.apply_segment(Segment.from_us(0, w, v))
        if v > 0:
            assert not (before is Level.LRS and d.level is Level.HRS)
        else:
            assert not (before is Level.HRS and d.level is Level.LRS)


def test_resistance_ranges():
    d = Device(P, 3)
    lrs, hrs = [], []
    for _ in range(10_000):
        d._enter(Level.LRS)
        lrs.append(d.resistance)
        d._enter(Level.HRS)
        hrs.append(d.resistance)
    assert 3e3 <= min(lrs) and max(lrs) <= 7e3
    assert 1e5 <= min(hrs) and max(hrs) <= 2e6
    # HRS is log-uniform: log10 spread uniform over [5, log10(2e6)]
    res = stats.kstest(np.log(hrs), stats.uniform(np.log(1e5), np.log(2e6) - np.log(1e5)).cdf)
    assert res.pvalue > 1e-3


def test_read_noise_and_non_mutation():
    d = Device(P.replace(read_noise_rel=0.0), 1)
    d.level, d.resistance = Level.LRS, 5000.0
    assert d.read() == 5000.0
    d = Device(P, 1)
    d.level, d.resistance = Level.HRS, 1e6
    reads = [d.read() for _ in range(5000)]
    assert d.state == (Level.HRS, 1e6)
    assert all(0.9e6 <= r <= 1.1e6 for r in reads)
    assert np.std(reads) / 1e6 == pytest.approx(0.02, rel=0.1)


def test_read_virgin_saturates_at_hrs_ceiling():
    d = Device(P, 0)
    assert d.read() == P.r_hrs_max
    assert d.resistance == 50e6


def test_classify_state():
    assert classify_state(5e3, P) is Level.LRS
    assert classify_state(1e6, P) is Level.HRS
    assert classify_state(50e3, P) is Level.HRS


def test_force_reset_from_lrs():
    for seed in range(200):
        d = Device(P, seed)
        d.level, d.resistance = Level.LRS, 5000.0
        d.force_reset()
        assert d.level is Level.HRS
        assert 1e5 <= d.resistance <= 2e6
        assert not any(e.kind == "forced_reset" for e in d.events)


def test_force_reset_on_hrs_keeps_resistance():
    d = Device(P, 0)
    d.force_reset()
    assert d.state == (Level.HRS, 50e6)


def test_force_reset_forced_path():
    weak = calibrate(CalibrationTargets(erase_success=1e-6, p_reset_stray=1e-9))
    d = Device(weak, 0)
    d.level, d.resistance = Level.LRS, 5000.0
    d.force_reset()
    assert d.level is Level.HRS
    assert [e.kind for e in d.events if e.kind.startswith("forced")] == ["forced_reset"]


def test_determinism_same_seed():
    sig = compose(1500)

    def trajectory(seed):
        d, out = Device(P, seed), []
        for _ in range(50):
            d.force_reset()
            for seg in sig:
                d.apply_segment(seg)
                out.append(d.state)
            out.append(d.read())
        return out

    assert trajectory(7) == trajectory(7)
    assert trajectory(7) != trajectory(8)
    assert trajectory((7, 1, 2)) == trajectory((7, 1, 2))
    assert trajectory((7, 1, 2)) != trajectory((7, 2, 1))


def test_safety_warning(caplog):
    d = Device(P, 0)
    d.apply_segment(Segment.from_us(0, 30, 2.0))
    assert any(e.kind == "safety" for e in d.events)
    assert "safe limit" in caplog.text


def test_params_config_round_trip():
    text = dump_params(P)
    assert load_params(text) == P
    q = load_params("[device]\nr_lrs_max_ohm = 6000\ndivider_enabled = false\n")
    assert q.r_lrs_max == 6000 and q.divider_enabled is False
    with pytest.raises(ValueError):
        load_params("[device]\nbogus = 1\n")
    with pytest.raises(ValueError):
        load_params("[device]\nclassify_threshold_ohm = 1e6\n")
