"""Experiment runners: STDP delta-t sweep, pulse characterization, I-V sweep.

Every Monte Carlo cell draws from its own random stream keyed by its grid
indices, so results do not depend on execution order or parallelism.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

from .device import Device, DeviceParams, Level, classify_state
from .waveform import (DEFAULT_PULSES, NS_PER_US, PulseShapeParams, Segment, Signal, compose,
                       us_to_ns)

BASELINE_FROM_US = 3200.0


class ConfigError(ValueError):
    """Invalid experiment configuration; raised before any trial runs."""


@dataclass(frozen=True)
class StdpSweepConfig:
    dt_start: float = 0.0
    dt_stop: float = 8000.0
    dt_step: float = 100.0
    trials: int = 100
    pulse_params: PulseShapeParams = DEFAULT_PULSES
    seed: int = 0

    def validate(self) -> None:
        if not self.dt_step > 0:
            raise ConfigError("dt_step must be > 0")
        if self.dt_start < 0:
            raise ConfigError("dt_start must be >= 0")
        if self.dt_stop < self.dt_start:
            raise ConfigError("dt_stop must be >= dt_start")
        if not isinstance(self.trials, int) or self.trials < 1:
            raise ConfigError("trials must be an integer >= 1")

    def grid(self) -> List[float]:
        """Inclusive dt grid in µs, computed on integer nanoseconds."""
        self.validate()
        start, stop, step = us_to_ns(self.dt_start), us_to_ns(self.dt_stop), us_to_ns(self.dt_step)
        n = (stop - start) // step + 1
        return [(start + i * step) / NS_PER_US for i in range(n)]


@dataclass(frozen=True)
class CurvePoint:
    dt: float
    trials: int
    writes: int
    p_hat: float
    p_analytic: float


@dataclass
class ProbabilityCurve:
    points: List[CurvePoint] = field(default_factory=list)

    def __len__(self):
        return len(self.points)

    @property
    def dts(self) -> List[float]:
        return [p.dt for p in self.points]

    @property
    def writes(self) -> List[int]:
        return [p.writes for p in self.points]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["dt_ms", "trials", "writes", "p_hat", "p_analytic"])
        for p in self.points:
            w.writerow([f"{p.dt / 1000:.3f}", p.trials, p.writes,
                        f"{p.p_hat:.6f}", f"{p.p_analytic:.6f}"])
        return buf.getvalue()

    def to_records(self) -> List[dict]:
        return [{"dt_ms": round(p.dt / 1000, 3), "trials": p.trials, "writes": p.writes,
                 "p_hat": round(p.p_hat, 6), "p_analytic": round(p.p_analytic, 6)}
                for p in self.points]


def analytic_probability(dt: float, pulse_params: PulseShapeParams = DEFAULT_PULSES,
                         device_params: Optional[DeviceParams] = None,
                         r_hrs: Optional[float] = None) -> float:
    """Closed-form write probability for one STDP trial starting in HRS.

    Memoryless switching makes the hazards of the positive segments add:
    ``P = 1 - exp(-sum(w_i / tau_set(v_i)))``. The divider is evaluated at
    ``r_hrs`` (default: the pre-programmed resistance a fresh trial starts at).
    """
    if dt < 0:
        raise ValueError("dt must be >= 0")
    params = device_params or DeviceParams()
    factor = params.divider(params.r_initial if r_hrs is None else r_hrs)
    hazard = 0.0
    for seg in compose(dt, pulse_params):
        v = seg.volts * factor
        if v > 0:
            hazard += seg.width_us / params.tau_set(v)
    return -math.expm1(-hazard)


def run_trial(params: DeviceParams, signal: Signal, key: Sequence[int]) -> Tuple[Device, float]:
    """One reset/apply/read cell. Returns the device and the read resistance."""
    d = Device(params, tuple(key))
    d.force_reset()
    d.apply_signal(signal)
    return d, d.read()


def _count_writes(args) -> int:
    params, signal, seed, dt_index, trials = args
    writes = 0
    for t in range(trials):
        _, r = run_trial(params, signal, (seed, dt_index, t))
        if classify_state(r, params) is Level.LRS:
            writes += 1
    return writes


def run_stdp_sweep(cfg: StdpSweepConfig = StdpSweepConfig(),
                   params: Optional[DeviceParams] = None, jobs: int = 1) -> ProbabilityCurve:
    """Measure write probability versus dt over the configured grid."""
    cfg.validate()
    if jobs < 1:
        raise ConfigError("jobs must be >= 1")
    params = params or DeviceParams()
    grid = cfg.grid()
    tasks = [(params, compose(dt, cfg.pulse_params), cfg.seed, i, cfg.trials)
             for i, dt in enumerate(grid)]
    if jobs == 1:
        counts = [_count_writes(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            counts = list(pool.map(_count_writes, tasks))
    points = [CurvePoint(dt, cfg.trials, n, n / cfg.trials,
                         analytic_probability(dt, cfg.pulse_params, params))
              for dt, n in zip(grid, counts)]
    return ProbabilityCurve(points)


@dataclass(frozen=True)
class Summary:
    peak_p: float
    peak_dt: float
    baseline_p: Optional[float]
    window_lo: Optional[float]
    window_hi: Optional[float]

    def to_dict(self) -> dict:
        ms = lambda t: None if t is None else round(t / 1000, 3)
        return {"peak_p": self.peak_p, "peak_dt_ms": ms(self.peak_dt),
                "baseline_p": self.baseline_p,
                "window_lo_ms": ms(self.window_lo), "window_hi_ms": ms(self.window_hi)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def summarize(curve: ProbabilityCurve) -> Summary:
    if not curve.points:
        raise ConfigError("cannot summarize an empty curve")
    peak = max(curve.points, key=lambda p: p.p_hat)
    tail = [p.p_hat for p in curve.points if p.dt > BASELINE_FROM_US]
    baseline = sum(tail) / len(tail) if tail else None
    window = [p.dt for p in curve.points if p.p_analytic > 0.5]
    return Summary(peak.p_hat, peak.dt, baseline,
                   window[0] if window else None, window[-1] if window else None)


# --- characterization -------------------------------------------------------

_KIND_ID = {"write": 1, "erase": 2}
_AXIS_ID = {"amplitude": 1, "width": 2}


@dataclass(frozen=True)
class CharacterizationConfig:
    """Repeated write or erase pulses, sweeping amplitude (V) or width (µs)."""

    kind: str = "write"
    sweep_axis: str = "amplitude"
    fixed_value: float = 30.0
    sweep_values: Tuple[float, ...] = (0.6, 0.8, 1.0, 1.2)
    pulses_per_point: int = 50
    seed: int = 0

    def validate(self) -> None:
        if self.kind not in _KIND_ID:
            raise ConfigError(f"kind must be 'write' or 'erase', got {self.kind!r}")
        if self.sweep_axis not in _AXIS_ID:
            raise ConfigError(f"sweep_axis must be 'amplitude' or 'width', got {self.sweep_axis!r}")
        if not isinstance(self.pulses_per_point, int) or self.pulses_per_point < 1:
            raise ConfigError("pulses_per_point must be an integer >= 1")
        if not self.sweep_values:
            raise ConfigError("sweep_values must be non-empty")
        sign = 1 if self.kind == "write" else -1
        if self.sweep_axis == "amplitude":
            volts, widths = list(self.sweep_values), [self.fixed_value]
        else:
            volts, widths = [self.fixed_value], list(self.sweep_values)
        for v in volts:
            if not v * sign > 0:
                raise ConfigError(f"{self.kind} pulses need {'positive' if sign > 0 else 'negative'} "
                                  f"amplitude, got {v!r} V")
        for w in widths:
            if not w > 0:
                raise ConfigError(f"pulse width must be > 0, got {w!r} us")

    def pulse(self, value: float) -> Segment:
        if self.sweep_axis == "amplitude":
            return Segment.from_us(0.0, self.fixed_value, value)
        return Segment.from_us(0.0, value, self.fixed_value)


def default_characterization_configs(seed: int = 0, pulses_per_point: int = 50
                                     ) -> List[CharacterizationConfig]:
    """The four panels: write/erase crossed with amplitude/width sweeps."""
    return [
        CharacterizationConfig("write", "amplitude", 30.0, (0.6, 0.8, 1.0, 1.2), pulses_per_point, seed),
        CharacterizationConfig("write", "width", 1.0, (10.0, 30.0, 100.0, 300.0), pulses_per_point, seed),
        CharacterizationConfig("erase", "amplitude", 30.0, (-0.6, -0.8, -1.0, -1.2), pulses_per_point, seed),
        CharacterizationConfig("erase", "width", -1.0, (10.0, 30.0, 100.0, 300.0), pulses_per_point, seed),
    ]


@dataclass(frozen=True)
class CharRow:
    sweep_value: float
    pulse_index: int
    resistance: float
    state: Level


def run_characterization(cfg: CharacterizationConfig,
                         params: Optional[DeviceParams] = None) -> List[CharRow]:
    """Pulse a fresh device repeatedly at each sweep value, reading after every pulse.

    Write sweeps start from HRS, erase sweeps from LRS.
    """
    cfg.validate()
    params = params or DeviceParams()
    rows: List[CharRow] = []
    for j, value in enumerate(cfg.sweep_values):
        d = Device(params, (cfg.seed, _KIND_ID[cfg.kind], _AXIS_ID[cfg.sweep_axis], j))
        if cfg.kind == "write":
            d.force_reset()
        else:
            d.force_write()
        pulse = cfg.pulse(value)
        for k in range(1, cfg.pulses_per_point + 1):
            d.apply_segment(pulse)
            r = d.read()
            rows.append(CharRow(value, k, r, classify_state(r, params)))
    return rows


def characterization_csv(rows: Sequence[CharRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sweep_value", "pulse_index", "resistance_ohm", "state"])
    for r in rows:
        w.writerow([repr(r.sweep_value), r.pulse_index, f"{r.resistance:.3f}", r.state.value])
    return buf.getvalue()


# --- I-V sweep --------------------------------------------------------------

@dataclass(frozen=True)
class IvSweepConfig:
    v_max: float = 1.0
    v_min: float = -1.0
    step: float = 0.05
    dwell: float = 1000.0
    seed: int = 0

    def validate(self) -> None:
        if not self.v_min < 0 < self.v_max:
            raise ConfigError("require v_min < 0 < v_max")
        if not self.step > 0:
            raise ConfigError("step must be > 0")
        if not self.dwell > 0:
            raise ConfigError("dwell must be > 0")

    def staircase(self) -> List[float]:
        """0 -> v_max -> 0 -> v_min -> 0 in steps of ``step``."""
        self.validate()

        def ramp(limit: float) -> List[float]:
            n = int(math.floor(abs(limit) / self.step + 1e-9))
            sign = 1.0 if limit > 0 else -1.0
            levels = [sign * k * self.step if k else 0.0 for k in range(n + 1)]
            if abs(levels[-1] - limit) > 1e-12:
                levels.append(limit)
            return levels

        up, down = ramp(self.v_max), ramp(self.v_min)
        return up + up[-2::-1] + down[1:] + down[-2::-1]


@dataclass(frozen=True)
class IvPoint:
    v: float
    i: float
    state: Level


def run_iv_sweep(cfg: IvSweepConfig = IvSweepConfig(),
                 params: Optional[DeviceParams] = None) -> List[IvPoint]:
    """Quasi-static staircase sweep; each level is held for ``dwell`` µs."""
    cfg.validate()
    params = params or DeviceParams()
    d = Device(params, cfg.seed)
    out: List[IvPoint] = []
    for v in cfg.staircase():
        if v != 0.0:
            d.apply_segment(Segment.from_us(0.0, cfg.dwell, v))
        r_total = d.resistance + (params.series_resistance if params.divider_enabled else 0.0)
        out.append(IvPoint(v, v / r_total, d.level))
    return out


def iv_csv(points: Sequence[IvPoint]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["v_volts", "i_amps", "state"])
    for p in points:
        w.writerow([f"{p.v:.6f}", f"{p.i:.6e}", p.state.value])
    return buf.getvalue()
