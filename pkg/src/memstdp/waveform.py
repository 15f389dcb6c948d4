"""Piecewise-constant voltage waveforms for pre/post-synaptic pulse shapes.

Times are exposed in microseconds but stored as integer nanoseconds so that
interval arithmetic on the pulse geometry is exact.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, List, Sequence, Tuple

NS_PER_US = 1000
_ZERO_V = 1e-12


def us_to_ns(t_us: float) -> int:
    """Convert a time in microseconds to integer nanoseconds."""
    if not math.isfinite(t_us):
        raise ValueError(f"time must be finite, got {t_us!r}")
    return int(round(t_us * NS_PER_US))


@dataclass(frozen=True)
class Segment:
    """A constant-voltage interval ``[start, end)``, times in ns."""

    start_ns: int
    end_ns: int
    volts: float

    def __post_init__(self):
        if self.start_ns >= self.end_ns:
            raise ValueError(f"segment start must precede end: {self.start_ns} >= {self.end_ns}")
        if not math.isfinite(self.volts):
            raise ValueError("segment voltage must be finite")

    @classmethod
    def from_us(cls, start_us: float, end_us: float, volts: float) -> "Segment":
        return cls(us_to_ns(start_us), us_to_ns(end_us), float(volts))

    @property
    def start_us(self) -> float:
        return self.start_ns / NS_PER_US

    @property
    def end_us(self) -> float:
        return self.end_ns / NS_PER_US

    @property
    def width_ns(self) -> int:
        return self.end_ns - self.start_ns

    @property
    def width_us(self) -> float:
        return self.width_ns / NS_PER_US

    def to_dict(self) -> dict:
        return {"start_us": self.start_us, "end_us": self.end_us, "volts": self.volts}


def _canonical(segments: Iterable[Segment]) -> Tuple[Segment, ...]:
    out: List[Segment] = []
    for seg in sorted(segments, key=lambda s: s.start_ns):
        if abs(seg.volts) <= _ZERO_V:
            continue
        if out and out[-1].end_ns > seg.start_ns:
            raise ValueError("segments overlap")
        if out and out[-1].end_ns == seg.start_ns and out[-1].volts == seg.volts:
            out[-1] = Segment(out[-1].start_ns, seg.end_ns, seg.volts)
        else:
            out.append(seg)
    return tuple(out)


@dataclass(frozen=True)
class Signal:
    """Piecewise-constant voltage waveform, 0 V outside its segments.

    Instances are always in canonical form: sorted, non-overlapping,
    zero-voltage stretches dropped and equal-voltage neighbours merged.
    """

    segments: Tuple[Segment, ...] = ()

    def __post_init__(self):
        for seg in self.segments:
            if seg.start_ns < 0:
                raise ValueError("signal times must be >= 0")
        object.__setattr__(self, "segments", _canonical(self.segments))

    @classmethod
    def from_us(cls, triples: Iterable[Tuple[float, float, float]]) -> "Signal":
        return cls(tuple(Segment.from_us(a, b, v) for a, b, v in triples))

    def __len__(self) -> int:
        return len(self.segments)

    def __iter__(self):
        return iter(self.segments)

    def __sub__(self, other: "Signal") -> "Signal":
        return subtract(self, other)

    def to_json(self) -> str:
        return json.dumps([s.to_dict() for s in self.segments])

    @classmethod
    def from_json(cls, text: str) -> "Signal":
        return cls.from_us((d["start_us"], d["end_us"], d["volts"]) for d in json.loads(text))


@dataclass(frozen=True)
class PulseShapeParams:
    """Pre/post pulse geometry. Times in µs, amplitudes in V.

    ``post_separation`` is the start-to-start period of the post train.
    """

    pre_amplitude: float = 0.5
    pre_width: float = 1500.0
    post_amplitude: float = -0.5
    post_pulse_width: float = 30.0
    post_pulse_count: int = 3
    post_separation: float = 750.0
    post_delay: float = 1500.0

    def __post_init__(self):
        if self.pre_width <= 0 or self.post_pulse_width <= 0:
            raise ValueError("pulse widths must be > 0")
        if self.post_pulse_count < 1:
            raise ValueError("post_pulse_count must be >= 1")
        if self.post_separation < self.post_pulse_width:
            raise ValueError("post_separation must be >= post_pulse_width")
        if self.post_delay < 0:
            raise ValueError("post_delay must be >= 0")


DEFAULT_PULSES = PulseShapeParams()


def make_pre(onset: float, params: PulseShapeParams = DEFAULT_PULSES) -> Signal:
    """Single rectangular pre-synaptic pulse starting at ``onset`` µs."""
    if onset < 0:
        raise ValueError("onset must be >= 0")
    return Signal((Segment.from_us(onset, onset + params.pre_width, params.pre_amplitude),))


def make_post(onset: float, params: PulseShapeParams = DEFAULT_PULSES) -> Signal:
    """Post-synaptic train: ``post_pulse_count`` narrow pulses after ``post_delay``."""
    if onset < 0:
        raise ValueError("onset must be >= 0")
    t0 = us_to_ns(onset) + us_to_ns(params.post_delay)
    period = us_to_ns(params.post_separation)
    width = us_to_ns(params.post_pulse_width)
    return Signal(tuple(
        Segment(t0 + k * period, t0 + k * period + width, params.post_amplitude)
        for k in range(params.post_pulse_count)
    ))


def _breakpoints(*signals: Signal) -> List[int]:
    pts = set()
    for s in signals:
        for seg in s.segments:
            pts.add(seg.start_ns)
            pts.add(seg.end_ns)
    return sorted(pts)


def _value_ns(s: Signal, t_ns: int) -> float:
    # Linear scan is fine: signals here hold a handful of segments.
    for seg in s.segments:
        if seg.start_ns <= t_ns < seg.end_ns:
            return seg.volts
        if seg.start_ns > t_ns:
            break
    return 0.0


def subtract(a: Signal, b: Signal) -> Signal:
    """Pointwise difference ``a(t) - b(t)`` in canonical form."""
    pts = _breakpoints(a, b)
    pieces = []
    for lo, hi in zip(pts, pts[1:]):
        v = _value_ns(a, lo) - _value_ns(b, lo)
        if abs(v) > _ZERO_V:
            pieces.append(Segment(lo, hi, v))
    return Signal(tuple(pieces))


def compose(dt: float, params: PulseShapeParams = DEFAULT_PULSES, t2: float = 0.0) -> Signal:
    """Voltage across the device for a pre onset at ``t2 + dt`` and post onset at ``t2``."""
    return subtract(make_pre(t2 + dt, params), make_post(t2, params))


def sample(s: Signal, t: float) -> float:
    """Voltage at time ``t`` µs; segments are half-open ``[start, end)``."""
    if t < 0:
        raise ValueError("t must be >= 0")
    return _value_ns(s, us_to_ns(t))


def segments_at_least(s: Signal, threshold: float) -> List[Segment]:
    """Maximal disjoint stretches where the signal is at or above ``threshold``."""
    if threshold <= 0:
        raise ValueError("threshold must be > 0")
    out: List[Segment] = []
    for seg in s.segments:
        if seg.volts < threshold:
            continue
        if out and out[-1].end_ns == seg.start_ns:
            out[-1] = Segment(out[-1].start_ns, seg.end_ns, min(out[-1].volts, seg.volts))
        else:
            out.append(seg)
    return out


def coincidence_count(dt: float, params: PulseShapeParams = DEFAULT_PULSES) -> int:
    """Number of post pulses lying entirely inside the pre pulse.

    The pre onset is ``dt`` after the post onset, so post pulse ``k`` is
    covered when ``dt <= delay + k*sep`` and its end is ``<= dt + pre_width``.
    """
    if dt < 0:
        raise ValueError("dt must be >= 0")
    dt_ns = us_to_ns(dt)
    delay = us_to_ns(params.post_delay)
    period = us_to_ns(params.post_separation)
    width = us_to_ns(params.post_pulse_width)
    pre_w = us_to_ns(params.pre_width)
    count = 0
    for k in range(params.post_pulse_count):
        start = delay + k * period
        if dt_ns <= start and start + width <= dt_ns + pre_w:
            count += 1
    return count


def from_samples(values: Sequence[float], step_ns: int = NS_PER_US) -> Signal:
    """Rebuild a canonical signal from values sampled every ``step_ns`` from t=0."""
    pieces = [Segment(i * step_ns, (i + 1) * step_ns, v) for i, v in enumerate(values) if v != 0.0]
    return Signal(tuple(pieces))


__all__ = [
    "Segment",
    "Signal",
    "PulseShapeParams",
    "DEFAULT_PULSES",
    "make_pre",
    "make_post",
    "subtract",
    "compose",
    "sample",
    "segments_at_least",
    "coincidence_count",
    "from_samples",
    "us_to_ns",
]
