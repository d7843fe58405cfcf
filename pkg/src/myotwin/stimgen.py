"""Stimulation signal construction.

Builds sampled current pulse trains for the four waveform families produced
by the bench stimulator (monophasic, symmetric biphasic, charge-balanced
asymmetric biphasic, symmetric triangular) plus the two parameter-modulation
modes (staircase, linear ramp). All functions are pure over frozen protocol
values.

Shape conventions, chosen so every biphasic train is charge balanced by
construction:

* Monophasic: rectangle, +amplitude for one pulse width.
* BiphasicSymmetric: +amplitude for PW, then -amplitude for PW, no gap.
* BiphasicAsymmetricBalanced: +amplitude for PW, then a recovery phase of
  -amplitude/4 for 4xPW (1:4 leading/recovery ratio).
* TriangularBiphasic: symmetric triangle to +amplitude over PW, mirrored
  negative triangle over the next PW.

Amplitude-sign convention: the leading (stimulating) phase is emitted as
positive current in milliamps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ToolkitError

_EPS = 1e-9


class WaveformKind(str, Enum):
    MONOPHASIC = "Monophasic"
    BIPHASIC_SYMMETRIC = "BiphasicSymmetric"
    BIPHASIC_ASYMMETRIC_BALANCED = "BiphasicAsymmetricBalanced"
    TRIANGULAR_BIPHASIC = "TriangularBiphasic"


class ModulationKind(str, Enum):
    NONE = "None"
    STAIRCASE = "Staircase"
    LINEAR_RAMP = "LinearRamp"


class ModulatedParameter(str, Enum):
    AMPLITUDE = "Amplitude"
    PULSE_WIDTH = "PulseWidth"
    FREQUENCY = "Frequency"


# Envelope length of one pulse, as a multiple of the pulse width.
_ENVELOPE_PW_MULTIPLE = {
    WaveformKind.MONOPHASIC: 1.0,
    WaveformKind.BIPHASIC_SYMMETRIC: 2.0,
    WaveformKind.BIPHASIC_ASYMMETRIC_BALANCED: 5.0,
    WaveformKind.TRIANGULAR_BIPHASIC: 2.0,
}


@dataclass(frozen=True)
class ModulationSchedule:
    """Optional time variation of one stimulation parameter.

    Staircase holds ``n_steps`` endpoint-inclusive linearly spaced values for
    ``step_duration_s`` each; a linear ramp increases the parameter pulse by
    pulse until ``max_value`` is reached, then holds it there.
    """

    kind: ModulationKind = ModulationKind.NONE
    parameter: ModulatedParameter = ModulatedParameter.AMPLITUDE
    min_value: float = 0.0
    max_value: float = 0.0
    n_steps: int | None = None
    step_duration_s: float | None = None
    ramp_duration_s: float | None = None

    def __post_init__(self):
        if self.kind == ModulationKind.NONE:
            return
        if self.min_value > self.max_value:
            raise ToolkitError(
                "invalid-schedule",
                f"min_value {self.min_value} exceeds max_value {self.max_value}",
            )
        if self.kind == ModulationKind.STAIRCASE:
            if self.parameter == ModulatedParameter.FREQUENCY:
                raise ToolkitError(
                    "invalid-schedule", "staircase modulation supports amplitude and pulse width only"
                )
            if self.n_steps is None or self.n_steps < 2:
                raise ToolkitError("invalid-schedule", "staircase requires n_steps >= 2")
            if self.step_duration_s is None or self.step_duration_s <= 0:
                raise ToolkitError("invalid-schedule", "staircase requires step_duration_s > 0")
        elif self.kind == ModulationKind.LINEAR_RAMP:
            if self.ramp_duration_s is None or self.ramp_duration_s <= 0:
                raise ToolkitError("invalid-schedule", "linear ramp requires ramp_duration_s > 0")


NO_MODULATION = ModulationSchedule()


@dataclass(frozen=True)
class StimulationProtocol:
    """One stimulation experiment: waveform shape, base parameters, duration.

    For modulated protocols the scalar fields hold the nominal operating
    point, which equals the upper end of the modulated range (the schedule's
    ``min_value``/``max_value`` override the swept parameter).
    """

    waveform: WaveformKind
    amplitude_mA: float
    frequency_Hz: float
    pulse_width_ms: float
    duration_s: float
    modulation: ModulationSchedule = NO_MODULATION

    def __post_init__(self):
        if self.amplitude_mA < 0:
            raise ToolkitError("invalid-protocol", "amplitude_mA must be >= 0")
        if self.frequency_Hz <= 0 or self.pulse_width_ms <= 0 or self.duration_s <= 0:
            raise ToolkitError(
                "invalid-protocol", "frequency_Hz, pulse_width_ms and duration_s must be > 0"
            )
        envelope = envelope_ms(self.waveform, self.max_pulse_width_ms())
        period = 1000.0 / self.max_frequency_Hz()
        if envelope > period + _EPS:
            raise ToolkitError(
                "period-overflow",
                f"pulse envelope {envelope:.6g} ms exceeds the {period:.6g} ms period "
                f"of {self.waveform.value}",
            )

    def modulates(self, parameter: ModulatedParameter) -> bool:
        return self.modulation.kind != ModulationKind.NONE and self.modulation.parameter == parameter

    def min_pulse_width_ms(self) -> float:
        if self.modulates(ModulatedParameter.PULSE_WIDTH):
            return self.modulation.min_value
        return self.pulse_width_ms

    def max_pulse_width_ms(self) -> float:
        if self.modulates(ModulatedParameter.PULSE_WIDTH):
            return self.modulation.max_value
        return self.pulse_width_ms

    def max_frequency_Hz(self) -> float:
        if self.modulates(ModulatedParameter.FREQUENCY):
            return self.modulation.max_value
        return self.frequency_Hz


@dataclass(frozen=True)
class SampledSignal:
    """Uniformly sampled stimulation current, milliamps."""

    sample_rate_Hz: float
    values: np.ndarray = field(repr=False)

    def duration_s(self) -> float:
        return len(self.values) / self.sample_rate_Hz


def envelope_ms(kind: WaveformKind, pulse_width_ms: float) -> float:
    """Total duration of one pulse (all phases) in milliseconds."""
    return _ENVELOPE_PW_MULTIPLE[kind] * pulse_width_ms


def max_pulse_width_ms(kind: WaveformKind, frequency_Hz: float, guard_ms: float = 1.0) -> float:
    """Largest pulse width whose envelope fits one period, minus a guard gap.

    The available window is one period less ``guard_ms``; the per-kind
    envelope multiple (1x PW monophasic, 2x symmetric/triangular, 5x
    asymmetric) divides it down to a pulse width.
    """
    available = 1000.0 / frequency_Hz - guard_ms
    if available <= 0:
        raise ToolkitError("period-overflow", f"no room for any pulse at {frequency_Hz} Hz")
    return available / _ENVELOPE_PW_MULTIPLE[kind]


def default_sample_rate_Hz(protocol: StimulationProtocol) -> float:
    """10 kHz, or 20 kHz when the narrowest pulse is under 0.2 ms."""
    return 20000.0 if protocol.min_pulse_width_ms() < 0.2 else 10000.0


def expand_modulation(protocol: StimulationProtocol) -> list[tuple[float, float]]:
    """Expand a modulation schedule into (time_offset_s, parameter_value) pairs.

    Staircase: one pair per step, endpoint-inclusive linear spacing between
    min and max, each held for the step duration. Linear ramp on amplitude or
    pulse width: one pair per pulse, linear in pulse index across the pulses
    that fall inside the ramp window, capped at max afterwards. Linear ramp
    on frequency: one pair per pulse with the frequency increasing at the
    constant time rate (max - min) / ramp_duration, capped at max; pulse
    times follow the instantaneous frequency.
    """
    mod = protocol.modulation
    if mod.kind == ModulationKind.NONE:
        raise ToolkitError("invalid-schedule", "protocol has no modulation to expand")

    if mod.kind == ModulationKind.STAIRCASE:
        values = np.linspace(mod.min_value, mod.max_value, mod.n_steps)
        return [(k * mod.step_duration_s, float(v)) for k, v in enumerate(values)]

    if mod.parameter in (ModulatedParameter.AMPLITUDE, ModulatedParameter.PULSE_WIDTH):
        f = protocol.frequency_Hz
        n_pulses = int(math.floor(protocol.duration_s * f + _EPS))
        n_ramp = int(math.floor(mod.ramp_duration_s * f + _EPS))
        span = mod.max_value - mod.min_value
        pairs = []
        for k in range(n_pulses):
            if n_ramp >= 2:
                frac = min(k, n_ramp - 1) / (n_ramp - 1)
            else:
                frac = 1.0  # ramp window shorter than one period: jump to max
            pairs.append((k / f, mod.min_value + span * frac))
        return pairs

    # Frequency ramp: each pulse is emitted at the current frequency, and the
    # frequency is re-evaluated at the next pulse time.
    slope = (mod.max_value - mod.min_value) / mod.ramp_duration_s
    pairs = []
    t = 0.0
    while True:
        freq = min(mod.max_value, mod.min_value + slope * t)
        if t + 1.0 / freq > protocol.duration_s + _EPS:
            break
        pairs.append((t, freq))
        t += 1.0 / freq
    return pairs


def _pulse_segment(kind: WaveformKind, amplitude: float, n_lead: int) -> np.ndarray:
    """Sample values of one full pulse; n_lead samples span one pulse width."""
    if kind == WaveformKind.MONOPHASIC:
        return np.full(n_lead, amplitude)
    if kind == WaveformKind.BIPHASIC_SYMMETRIC:
        lead = np.full(n_lead, amplitude)
        return np.concatenate([lead, -lead])
    if kind == WaveformKind.BIPHASIC_ASYMMETRIC_BALANCED:
        # Recovery is 4x longer at a quarter amplitude: discretely exact balance.
        lead = np.full(n_lead, amplitude)
        recovery = np.full(4 * n_lead, -amplitude / 4.0)
        return np.concatenate([lead, recovery])
    if kind == WaveformKind.TRIANGULAR_BIPHASIC:
        j = (np.arange(n_lead) + 0.5) / n_lead
        tri = amplitude * (1.0 - np.abs(2.0 * j - 1.0))
        return np.concatenate([tri, -tri])
    raise ToolkitError("invalid-protocol", f"unknown waveform kind {kind}")


def _pulse_schedule(protocol: StimulationProtocol) -> list[tuple[float, float, float]]:
    """Resolve modulation into one (start_time_s, amplitude_mA, pw_ms) per pulse."""
    mod = protocol.modulation
    f = protocol.frequency_Hz
    n_pulses = int(math.floor(protocol.duration_s * f + _EPS))
    base = [(k / f, protocol.amplitude_mA, protocol.pulse_width_ms) for k in range(n_pulses)]

    if mod.kind == ModulationKind.NONE:
        return base

    if mod.kind == ModulationKind.STAIRCASE:
        steps = expand_modulation(protocol)
        values = [v for _, v in steps]

        def step_value(t: float) -> float:
            idx = min(int(math.floor(t / mod.step_duration_s + _EPS)), len(values) - 1)
            return values[idx]

        if mod.parameter == ModulatedParameter.AMPLITUDE:
            return [(t, step_value(t), pw) for t, _, pw in base]
        return [(t, a, step_value(t)) for t, a, _ in base]

    if mod.parameter == ModulatedParameter.FREQUENCY:
        return [(t, protocol.amplitude_mA, protocol.pulse_width_ms) for t, _ in expand_modulation(protocol)]

    per_pulse = expand_modulation(protocol)
    if mod.parameter == ModulatedParameter.AMPLITUDE:
        return [(t, v, protocol.pulse_width_ms) for t, v in per_pulse]
    return [(t, protocol.amplitude_mA, v) for t, v in per_pulse]


def sample_pulse_train(protocol: StimulationProtocol, sample_rate_Hz: float) -> SampledSignal:
    """Discretize the protocol's full stimulation current at the given rate.

    Pulses are placed at period boundaries (pulse k of an unmodulated train
    starts at k / frequency). Raises ``sample-rate-too-low`` unless every
    pulse width spans at least two samples.
    """
    min_pw_samples = protocol.min_pulse_width_ms() / 1000.0 * sample_rate_Hz
    if min_pw_samples < 2.0 - _EPS:
        raise ToolkitError(
            "sample-rate-too-low",
            f"pulse width {protocol.min_pulse_width_ms()} ms spans {min_pw_samples:.2f} "
            f"samples at {sample_rate_Hz} Hz; need >= 2",
        )

    n_samples = int(math.floor(protocol.duration_s * sample_rate_Hz + 0.5))
    values = np.zeros(n_samples)
    for t0, amplitude, pw_ms in _pulse_schedule(protocol):
        if amplitude == 0.0:
            continue
        n_lead = int(math.floor(pw_ms / 1000.0 * sample_rate_Hz + 0.5))
        segment = _pulse_segment(protocol.waveform, amplitude, n_lead)
        start = int(math.floor(t0 * sample_rate_Hz + 0.5))
        stop = min(start + len(segment), n_samples)
        if start < n_samples:
            values[start:stop] = segment[: stop - start]
    return SampledSignal(sample_rate_Hz=sample_rate_Hz, values=values)


def net_charge(signal: SampledSignal) -> float:
    """Net delivered charge in microcoulombs, by trapezoidal integration.

    The current is zero outside the sampled window, so the signal is padded
    with one zero sample on each side; a pulse edge touching the window
    boundary then integrates the same as an interior one.
    """
    if len(signal.values) == 0:
        return 0.0
    padded = np.concatenate([[0.0], signal.values, [0.0]])
    return float(np.trapezoid(padded, dx=1.0 / signal.sample_rate_Hz)) * 1000.0


# Flat key/value protocol record (JSON-compatible), the on-disk schema used
# by corpus manifests and model artifacts.

_RECORD_KEYS = (
    "waveform",
    "amplitude_mA",
    "frequency_Hz",
    "pulse_width_ms",
    "duration_s",
    "modulation.kind",
    "modulation.parameter",
    "modulation.min",
    "modulation.max",
    "modulation.n_steps",
    "modulation.step_duration_s",
    "modulation.ramp_duration_s",
)


def protocol_to_record(protocol: StimulationProtocol) -> dict:
    mod = protocol.modulation
    record = {
        "waveform": protocol.waveform.value,
        "amplitude_mA": protocol.amplitude_mA,
        "frequency_Hz": protocol.frequency_Hz,
        "pulse_width_ms": protocol.pulse_width_ms,
        "duration_s": protocol.duration_s,
        "modulation.kind": mod.kind.value,
        "modulation.parameter": None,
        "modulation.min": None,
        "modulation.max": None,
        "modulation.n_steps": None,
        "modulation.step_duration_s": None,
        "modulation.ramp_duration_s": None,
    }
    if mod.kind != ModulationKind.NONE:
        record.update(
            {
                "modulation.parameter": mod.parameter.value,
                "modulation.min": mod.min_value,
                "modulation.max": mod.max_value,
                "modulation.n_steps": mod.n_steps,
                "modulation.step_duration_s": mod.step_duration_s,
                "modulation.ramp_duration_s": mod.ramp_duration_s,
            }
        )
    return record


def record_to_protocol(record: dict) -> StimulationProtocol:
    unknown = set(record) - set(_RECORD_KEYS)
    if unknown:
        raise ToolkitError("invalid-protocol", f"unknown protocol record keys: {sorted(unknown)}")
    kind = ModulationKind(record.get("modulation.kind", "None"))
    if kind == ModulationKind.NONE:
        modulation = NO_MODULATION
    else:
        modulation = ModulationSchedule(
            kind=kind,
            parameter=ModulatedParameter(record["modulation.parameter"]),
            min_value=float(record["modulation.min"]),
            max_value=float(record["modulation.max"]),
            n_steps=None if record.get("modulation.n_steps") is None else int(record["modulation.n_steps"]),
            step_duration_s=record.get("modulation.step_duration_s"),
            ramp_duration_s=record.get("modulation.ramp_duration_s"),
        )
    return StimulationProtocol(
        waveform=WaveformKind(record["waveform"]),
        amplitude_mA=float(record["amplitude_mA"]),
        frequency_Hz=float(record["frequency_Hz"]),
        pulse_width_ms=float(record["pulse_width_ms"]),
        duration_s=float(record["duration_s"]),
        modulation=modulation,
    )
