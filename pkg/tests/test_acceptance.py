"""Exit criteria. Each test prints one PASS/FAIL line in the session summary."""

import csv
import json
import math
import random
import time
from importlib import resources

import numpy as np

from memstdp.cli import main
from memstdp.device import (CalibrationTargets, Device, DeviceParams, Level, calibrate,
                            p_reset, p_set)
from memstdp.protocol import (CharacterizationConfig, StdpSweepConfig, default_characterization_configs,
                              run_characterization, run_stdp_sweep)
from memstdp.script import ScriptError, aggregate_reads, execute, parse, print_program
from memstdp.waveform import Segment, coincidence_count

from test_script import _Gen, us

P = DeviceParams()


def test_1_stdp_curve_shape(tmp_path, criterion):
    out = tmp_path / "curve"
    t0 = time.perf_counter()
    code = main(["stdp", "--seed", "0", "--trials", "100", "--out", str(out)])
    elapsed = time.perf_counter() - t0
    s = json.loads((out / "summary.json").read_text())
    with open(out / "stdp.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    above = [i for i, r in enumerate(rows) if float(r["p_analytic"]) > 0.5]
    contiguous = above == list(range(above[0], above[-1] + 1))
    inside = float(rows[above[0]]["dt_ms"]) >= 0 and float(rows[above[-1]]["dt_ms"]) <= 3.1
    ok = (code == 0 and elapsed < 10 and 0.84 <= s["peak_p"] <= 0.96
          and 0.0 <= s["baseline_p"] <= 0.04 and contiguous and inside)
    criterion("1 STDP curve shape", ok,
              f"t={elapsed:.2f}s peak={s['peak_p']:.3f} baseline={s['baseline_p']:.4f} "
              f"window=[{s['window_lo_ms']},{s['window_hi_ms']}] ms")


def test_2_oracle_agreement(criterion):
    dts = [500.0, 1000.0, 1500.0, 2000.0, 2600.0, 5000.0]
    t0 = time.perf_counter()
    worst = 0.0
    ok = True
    for dt in dts:
        curve = run_stdp_sweep(StdpSweepConfig(dt_start=dt, dt_stop=dt, dt_step=100.0,
                                               trials=10_000, seed=0), P)
        (pt,) = curve.points
        p = pt.p_analytic
        bound = 3 * math.sqrt(p * (1 - p) / 10_000) + 0.001
        worst = max(worst, abs(pt.p_hat - p) / bound)
        ok &= abs(pt.p_hat - p) <= bound
    elapsed = time.perf_counter() - t0
    criterion("2 oracle agreement", ok and elapsed < 60,
              f"t={elapsed:.1f}s worst |p_hat-p|/bound={worst:.2f}")


def test_3_coincidence_geometry(criterion):
    counts = [coincidence_count(dt) for dt in range(0, 8001)]
    rises = {dt for dt in range(1, 8001) if counts[dt] > counts[dt - 1]}
    falls = {dt for dt in range(0, 8000) if counts[dt] > counts[dt + 1]}
    ok = (set(counts) == {0, 1, 2} and rises | falls == {30, 780, 1500, 1530, 2250, 3000}
          and coincidence_count(1000) == 2)
    criterion("3 coincidence geometry", ok, f"rises={sorted(rises)} falls={sorted(falls)}")


def test_4_calibration_round_trip(criterion):
    p = calibrate(CalibrationTargets())
    tau = p.tau_set(1.0)
    a, b = p_set(1.0, 30, p), p_set(0.5, 1590, p)
    ok = (abs(tau - 26.06) <= 0.01 and abs(a - 0.6838) <= 1e-4
          and abs(a - (1 - math.sqrt(0.1))) <= 1e-6 and abs(b - 0.0150) <= 1e-6)
    criterion("4 calibration round-trip", ok, f"tau_set(1V)={tau:.4f}us p(1V,30us)={a:.6f} p(0.5V,1590us)={b:.6f}")


def test_5_characterization_ranges(criterion):
    lrs, hrs = [], []
    for cfg in default_characterization_configs(seed=0):
        for r in run_characterization(cfg, P):
            (lrs if r.state is Level.LRS else hrs).append(r.resistance)
    in_range = all(3e3 <= r <= 7e3 for r in lrs) and all(1e5 <= r <= 2e6 for r in hrs)
    cfg = CharacterizationConfig("write", "amplitude", 30.0, (1.0,) * 1000, 3, seed=0)
    rows = run_characterization(cfg, P)
    hits = sum(rows[3 * j + 2].state is Level.LRS for j in range(1000))
    criterion("5 characterization ranges", in_range and hits >= 950,
              f"LRS reads {min(lrs):.0f}-{max(lrs):.0f} ohm, HRS reads {min(hrs):.0f}-{max(hrs):.0f} ohm, "
              f"write within 3 pulses {hits}/1000")


def test_6_property_suites(tmp_path, criterion):
    details = []
    # polarity safety
    rng = random.Random(0)
    safe = True
    for seed in range(300):
        d = Device(P, seed)
        for _ in range(40):
            v = rng.choice([-1, 1]) * rng.uniform(0.05, 1.4)
            before = d.level
            d.apply_segment(Segment.from_us(0, rng.uniform(1, 3000), v))
            if v > 0 and before is Level.LRS and d.level is Level.HRS:
                safe = False
            if v < 0 and before is Level.HRS and d.level is Level.LRS:
                safe = False
    details.append(f"polarity={safe}")

    # exposure additivity, analytic and empirical
    additive = all(
        abs(p_set(v, w1 + w2, P) - (1 - (1 - p_set(v, w1, P)) * (1 - p_set(v, w2, P)))) <= 1e-12
        for v in np.linspace(0.1, 1.4, 14) for w1 in (1.0, 30.0, 700.0) for w2 in (2.0, 90.0, 1500.0))
    q = P.replace(divider_enabled=False)
    n = 100_000
    one, two = Device(q, 21), Device(q, 22)
    k1 = k2 = 0
    for _ in range(n):
        one.level = two.level = Level.HRS
        one.apply_segment(Segment.from_us(0, 30, 1.0))
        two.apply_segment(Segment.from_us(0, 10, 1.0))
        two.apply_segment(Segment.from_us(10, 30, 1.0))
        k1 += one.level is Level.LRS
        k2 += two.level is Level.LRS
    p = p_set(1.0, 30, q)
    sigma = math.sqrt(p * (1 - p) / n)
    empirical = abs(k1 / n - p) <= 3 * sigma and abs(k2 / n - p) <= 3 * sigma
    details.append(f"additivity={additive}/{empirical}")

    # monotonicity on a 50x50 grid
    vs, ws = np.linspace(0.01, 1.5, 50), np.linspace(0, 3000, 50)
    gs = np.array([[p_set(v, w, P) for w in ws] for v in vs])
    gr = np.array([[p_reset(-v, w, P) for w in ws] for v in vs])
    monotone = all((np.diff(g, axis=a) >= 0).all() for g in (gs, gr) for a in (0, 1))
    details.append(f"monotone={monotone}")

    # read does not mutate
    d = Device(P, 5)
    d.force_write()
    before = d.state
    for _ in range(1000):
        d.read()
    non_mutating = d.state == before
    details.append(f"read={non_mutating}")

    # jobs 1 vs jobs 8
    a, b = tmp_path / "j1", tmp_path / "j8"
    assert main(["stdp", "--seed", "0", "--trials", "100", "--jobs", "1", "--out", str(a)]) == 0
    assert main(["stdp", "--seed", "0", "--trials", "100", "--jobs", "8", "--out", str(b)]) == 0
    same = (a / "stdp.csv").read_bytes() == (b / "stdp.csv").read_bytes()
    details.append(f"jobs1==jobs8={same}")

    criterion("6 property suites", safe and additive and empirical and monotone and non_mutating and same,
              " ".join(details))


def test_7_parser_suite(criterion):
    gen = _Gen(7)
    round_trip = 0
    for _ in range(1000):
        prog = gen.program()
        round_trip += parse(print_program(prog)) == prog

    script = resources.files("memstdp").joinpath("examples/stdp_sweep.scr").read_text()
    agg = aggregate_reads(execute(parse(script), P, seed=0), "dt")
    curve = run_stdp_sweep(StdpSweepConfig(seed=0), P)
    same_counts = [agg[us(int(pt.dt))][1] for pt in curve.points] == curve.writes

    r = random.Random(0)
    crashes = unpositioned = 0
    for _ in range(10_000):
        raw = bytes(r.randrange(256) for _ in range(r.randint(0, 80)))
        try:
            parse(raw.decode("latin-1"))
        except ScriptError as exc:
            unpositioned += not (exc.line >= 1 and exc.col >= 1)
        except Exception:
            crashes += 1
    ok = round_trip == 1000 and same_counts and crashes == 0 and unpositioned == 0
    criterion("7 parser suite", ok,
              f"round-trip {round_trip}/1000, script==stdp {same_counts}, fuzz crashes={crashes} "
              f"unpositioned={unpositioned}")
