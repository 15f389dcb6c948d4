"""Stochastic two-state memristor model.

Switching is a Poisson process whose timescale falls exponentially with the
voltage across the device, ``tau(V) = tau0 * exp(-|V| / v0)``; a segment of
width ``w`` switches with probability ``1 - exp(-w / tau(V))``.  Resistances
are resampled on every state change, uniformly in the LRS range and
log-uniformly in the HRS range.
"""

from __future__ import annotations

import configparser
import dataclasses
import enum
import io
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .waveform import Segment, Signal

logger = logging.getLogger(__name__)

SAFE_VOLTAGE = 1.5
FORCE_ATTEMPTS = 10

SeedLike = Union[int, Sequence[int]]


class CalibrationError(ValueError):
    pass


class Level(str, enum.Enum):
    HRS = "HRS"
    LRS = "LRS"

    def __str__(self):
        return self.value


def _solve_law(v_hi: float, w_hi: float, p_hi: float,
               v_lo: float, w_lo: float, p_lo: float) -> Tuple[float, float]:
    """Fit ``(tau0, v0)`` so the switching law hits two (voltage, width, probability) anchors."""
    for p in (p_hi, p_lo):
        if not 0.0 < p < 1.0:
            raise CalibrationError(f"target probability {p!r} outside (0, 1)")
    if not v_hi > v_lo > 0:
        raise CalibrationError("anchor voltages must satisfy v_hi > v_lo > 0")
    tau_hi = -w_hi / math.log1p(-p_hi)
    tau_lo = -w_lo / math.log1p(-p_lo)
    if tau_lo <= tau_hi:
        raise CalibrationError("low-voltage anchor must switch more slowly than the high-voltage one")
    v0 = (v_hi - v_lo) / math.log(tau_lo / tau_hi)
    return tau_hi * math.exp(v_hi / v0), v0


@dataclass(frozen=True)
class CalibrationTargets:
    """Switching statistics the model is calibrated to reproduce.

    The set law is anchored at the device voltage. The reset anchors are
    applied voltages seen through the series resistor by an LRS device at
    ``r_lrs_min``, the worst case for erasing.
    """

    p_two_pulse_peak: float = 0.90
    p_baseline: float = 0.015
    baseline_exposure: float = 1590.0
    write_pulse: Tuple[float, float] = (1.0, 30.0)
    baseline_voltage: float = 0.5
    erase_success: float = 0.99
    erase_pulse: Tuple[float, float] = (-1.0, 30.0)
    p_reset_stray: float = 0.02
    stray_voltage: float = -0.5
    stray_exposure: float = 1590.0

    def __post_init__(self):
        for name in ("p_two_pulse_peak", "p_baseline", "erase_success", "p_reset_stray"):
            p = getattr(self, name)
            if not 0.0 < p < 1.0:
                raise CalibrationError(f"{name}={p!r} outside (0, 1)")

    @property
    def p_single_pulse(self) -> float:
        # Peak is two independent coincident pulses: 1 - (1 - p)^2.
        return 1.0 - math.sqrt(1.0 - self.p_two_pulse_peak)


def _divider(r_device: float, r_series: float, enabled: bool) -> float:
    return r_device / (r_device + r_series) if enabled else 1.0


_R_LRS_MIN = 3e3
_R_SERIES = 1e3


def _default_laws():
    t = CalibrationTargets()
    v, w = t.write_pulse
    tau0_set, v0_set = _solve_law(v, w, t.p_single_pulse,
                                  t.baseline_voltage, t.baseline_exposure, t.p_baseline)
    f = _divider(_R_LRS_MIN, _R_SERIES, True)
    ve, we = t.erase_pulse
    tau0_reset, v0_reset = _solve_law(-ve * f, we, t.erase_success,
                                      -t.stray_voltage * f, t.stray_exposure, t.p_reset_stray)
    return tau0_set, v0_set, tau0_reset, v0_reset


_TAU0_SET, _V0_SET, _TAU0_RESET, _V0_RESET = _default_laws()


@dataclass(frozen=True)
class DeviceParams:
    """Device model parameters. Times in µs, resistances in Ω, voltages in V."""

    tau0_set: float = _TAU0_SET
    v0_set: float = _V0_SET
    tau0_reset: float = _TAU0_RESET
    v0_reset: float = _V0_RESET
    r_lrs_min: float = _R_LRS_MIN
    r_lrs_max: float = 7e3
    r_hrs_min: float = 1e5
    r_hrs_max: float = 2e6
    r_initial: float = 50e6
    series_resistance: float = _R_SERIES
    divider_enabled: bool = True
    read_voltage: float = 0.05
    read_noise_rel: float = 0.02
    classify_threshold: float = 50e3
    compliance_write: Tuple[float, float] = (100e-9, 30e-6)
    compliance_erase: Tuple[float, float] = (100e-6, 10e-3)

    def __post_init__(self):
        for name in ("r_lrs_min", "r_lrs_max", "r_hrs_min", "r_hrs_max", "r_initial",
                     "classify_threshold"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.series_resistance < 0:
            raise ValueError("series_resistance must be >= 0")
        if not (self.r_lrs_min <= self.r_lrs_max < self.classify_threshold
                < self.r_hrs_min <= self.r_hrs_max):
            raise ValueError("require r_lrs_min <= r_lrs_max < classify_threshold < r_hrs_min <= r_hrs_max")
        for name in ("tau0_set", "v0_set", "tau0_reset", "v0_reset"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.read_noise_rel < 0:
            raise ValueError("read_noise_rel must be >= 0")

    def tau_set(self, v: float) -> float:
        return self.tau0_set * math.exp(-v / self.v0_set)

    def tau_reset(self, v: float) -> float:
        return self.tau0_reset * math.exp(-abs(v) / self.v0_reset)

    def divider(self, r_device: float) -> float:
        return _divider(r_device, self.series_resistance, self.divider_enabled)

    def replace(self, **changes) -> "DeviceParams":
        return dataclasses.replace(self, **changes)


def calibrate(targets: CalibrationTargets = CalibrationTargets(),
              base: Optional[DeviceParams] = None) -> DeviceParams:
    """Solve both switching laws from ``targets``; other fields come from ``base``."""
    base = base or DeviceParams()
    v, w = targets.write_pulse
    tau0_set, v0_set = _solve_law(v, w, targets.p_single_pulse,
                                  targets.baseline_voltage, targets.baseline_exposure,
                                  targets.p_baseline)
    f = _divider(base.r_lrs_min, base.series_resistance, base.divider_enabled)
    ve, we = targets.erase_pulse
    tau0_reset, v0_reset = _solve_law(-ve * f, we, targets.erase_success,
                                      -targets.stray_voltage * f, targets.stray_exposure,
                                      targets.p_reset_stray)
    return base.replace(tau0_set=tau0_set, v0_set=v0_set,
                        tau0_reset=tau0_reset, v0_reset=v0_reset)


def p_set(v: float, w: float, params: DeviceParams) -> float:
    """Probability that a ``v`` volt, ``w`` µs segment writes an HRS device."""
    if w < 0:
        raise ValueError("width must be >= 0")
    if v <= 0 or w == 0:
        return 0.0
    return -math.expm1(-w / params.tau_set(v))


def p_reset(v: float, w: float, params: DeviceParams) -> float:
    """Probability that a ``v`` volt, ``w`` µs segment erases an LRS device."""
    if w < 0:
        raise ValueError("width must be >= 0")
    if v >= 0 or w == 0:
        return 0.0
    return -math.expm1(-w / params.tau_reset(v))


def classify_state(r: float, params: DeviceParams) -> Level:
    """LRS iff the read resistance is strictly below the threshold."""
    if not r > 0:
        raise ValueError("resistance must be > 0")
    return Level.LRS if r < params.classify_threshold else Level.HRS


@dataclass(frozen=True)
class DeviceEvent:
    kind: str
    detail: str


def seed_sequence(seed: SeedLike) -> np.random.SeedSequence:
    """Map ``seed`` or ``(seed, i, j, ...)`` to an independent seed sequence."""
    if isinstance(seed, (int, np.integer)):
        return np.random.SeedSequence(int(seed))
    master, *key = seed
    return np.random.SeedSequence(int(master), spawn_key=tuple(int(k) for k in key))


class Device:
    """A single memristor. Mutable and single-owner.

    Three independent random streams keep the draw sequence fixed by the
    stimulus alone: one uniform per non-zero segment, one normal per read,
    and a separate stream for resampling resistance on state changes.
    """

    def __init__(self, params: DeviceParams, seed: SeedLike = 0):
        self.params = params
        self.level = Level.HRS
        self.resistance = params.r_initial
        self.events: List[DeviceEvent] = []
        switch, resist, noise = seed_sequence(seed).spawn(3)
        self._switch_rng = np.random.Generator(np.random.PCG64(switch))
        self._resist_rng = np.random.Generator(np.random.PCG64(resist))
        self._noise_rng = np.random.Generator(np.random.PCG64(noise))

    def __repr__(self):
        return f"Device(level={self.level.value}, resistance={self.resistance:.6g})"

    @property
    def state(self) -> Tuple[Level, float]:
        return self.level, self.resistance

    def _enter(self, level: Level) -> None:
        p = self.params
        self.level = level
        if level is Level.LRS:
            self.resistance = float(self._resist_rng.uniform(p.r_lrs_min, p.r_lrs_max))
        else:
            lo, hi = math.log(p.r_hrs_min), math.log(p.r_hrs_max)
            self.resistance = float(math.exp(self._resist_rng.uniform(lo, hi)))

    def effective_voltage(self, volts: float) -> float:
        return volts * self.params.divider(self.resistance)

    def apply_segment(self, seg: Segment) -> "Device":
        p = self.params
        if abs(seg.volts) > SAFE_VOLTAGE:
            msg = f"{seg.volts:+.3f} V exceeds the {SAFE_VOLTAGE} V safe limit"
            logger.warning(msg)
            self.events.append(DeviceEvent("safety", msg))
        v = self.effective_voltage(seg.volts)
        if v == 0.0:
            return self
        w = seg.width_us
        i = abs(v) / self.resistance
        limit = p.compliance_write[1] if v > 0 else p.compliance_erase[1]
        if i > limit:
            self.events.append(DeviceEvent("compliance", f"{i:.3g} A over {limit:.3g} A limit"))
        u = self._switch_rng.random()
        if self.level is Level.HRS and v > 0:
            if u < p_set(v, w, p):
                self._enter(Level.LRS)
        elif self.level is Level.LRS and v < 0:
            if u < p_reset(v, w, p):
                self._enter(Level.HRS)
        return self

    def apply_signal(self, s: Signal) -> "Device":
        for seg in s.segments:
            self.apply_segment(seg)
        return self

    def read(self) -> float:
        """Measured resistance with relative Gaussian noise; never changes state.

        Reads are limited to the measurable range of the current level, so a
        virgin 50 MΩ device reads at the HRS ceiling.
        """
        p = self.params
        eps = self._noise_rng.standard_normal() * p.read_noise_rel
        r = self.resistance * (1.0 + eps)
        if self.level is Level.LRS:
            return min(max(r, p.r_lrs_min), p.r_lrs_max)
        return min(max(r, p.r_hrs_min), p.r_hrs_max)

    def _force(self, volts: float, target: Level, kind: str) -> "Device":
        pulse = Segment.from_us(0.0, 30.0, volts)
        for _ in range(FORCE_ATTEMPTS):
            self.apply_segment(pulse)
            if classify_state(self.read(), self.params) is target:
                return self
        self._enter(target)
        self.events.append(DeviceEvent(kind, f"forced {target.value} after {FORCE_ATTEMPTS} attempts"))
        return self

    def force_reset(self) -> "Device":
        """Erase-verify loop, then a forced HRS if ten attempts did not suffice."""
        return self._force(-1.0, Level.HRS, "forced_reset")

    def force_write(self) -> "Device":
        return self._force(1.0, Level.LRS, "forced_write")


def new_device(params: DeviceParams, seed: SeedLike = 0) -> Device:
    return Device(params, seed)


def apply_segment(d: Device, seg: Segment) -> Device:
    return d.apply_segment(seg)


def apply_signal(d: Device, s: Signal) -> Device:
    return d.apply_signal(s)


def read(d: Device) -> float:
    return d.read()


def force_reset(d: Device) -> Device:
    return d.force_reset()


# Flat config keys, in file order.
CONFIG_KEYS = {
    "tau0_set_us": "tau0_set",
    "v0_set_v": "v0_set",
    "tau0_reset_us": "tau0_reset",
    "v0_reset_v": "v0_reset",
    "r_lrs_min_ohm": "r_lrs_min",
    "r_lrs_max_ohm": "r_lrs_max",
    "r_hrs_min_ohm": "r_hrs_min",
    "r_hrs_max_ohm": "r_hrs_max",
    "r_initial_ohm": "r_initial",
    "series_resistance_ohm": "series_resistance",
    "divider_enabled": "divider_enabled",
    "read_voltage_v": "read_voltage",
    "read_noise_rel": "read_noise_rel",
    "classify_threshold_ohm": "classify_threshold",
}


def params_from_mapping(values, base: Optional[DeviceParams] = None) -> DeviceParams:
    changes = {}
    for key, raw in values.items():
        if key not in CONFIG_KEYS:
            raise ValueError(f"unknown device key {key!r}")
        attr = CONFIG_KEYS[key]
        if attr == "divider_enabled":
            if isinstance(raw, bool):
                changes[attr] = raw
            else:
                text = str(raw).strip().lower()
                if text not in ("true", "false", "1", "0", "yes", "no", "on", "off"):
                    raise ValueError(f"divider_enabled: not a boolean: {raw!r}")
                changes[attr] = text in ("true", "1", "yes", "on")
        else:
            try:
                changes[attr] = float(raw)
            except ValueError:
                raise ValueError(f"{key}: not a number: {raw!r}") from None
    return (base or DeviceParams()).replace(**changes)


def params_to_mapping(params: DeviceParams) -> dict:
    return {key: getattr(params, attr) for key, attr in CONFIG_KEYS.items()}


def dump_params(params: DeviceParams) -> str:
    """Serialise to an INI ``[device]`` section."""
    cp = configparser.ConfigParser()
    cp["device"] = {k: (str(v).lower() if isinstance(v, bool) else repr(float(v)))
                    for k, v in params_to_mapping(params).items()}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def load_params(text: str, base: Optional[DeviceParams] = None) -> DeviceParams:
    cp = configparser.ConfigParser()
    cp.read_string(text)
    if not cp.has_section("device"):
        return base or DeviceParams()
    return params_from_mapping(dict(cp["device"]), base)
