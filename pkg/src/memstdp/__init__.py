"""Virtual lab for binary stochastic STDP on a two-state memristor."""

__version__ = "0.1.0"

from .device import (CalibrationTargets, Device, DeviceParams, Level, calibrate, classify_state,
                     new_device, p_reset, p_set)
from .protocol import (CharacterizationConfig, IvSweepConfig, ProbabilityCurve, StdpSweepConfig,
                       analytic_probability, run_characterization, run_iv_sweep, run_stdp_sweep,
                       summarize)
from .waveform import (PulseShapeParams, Segment, Signal, coincidence_count, compose, make_post,
                       make_pre, sample, segments_at_least, subtract)

__all__ = [
    "CalibrationTargets", "Device", "DeviceParams", "Level", "calibrate", "classify_state",
    "new_device", "p_reset", "p_set",
    "CharacterizationConfig", "IvSweepConfig", "ProbabilityCurve", "StdpSweepConfig",
    "analytic_probability", "run_characterization", "run_iv_sweep", "run_stdp_sweep", "summarize",
    "PulseShapeParams", "Segment", "Signal", "coincidence_count", "compose", "make_post",
    "make_pre", "sample", "segments_at_least", "subtract",
]
