"""Synthetic muscle-ring force simulator.

Stands in for the (unpublished) bench dataset: produces force traces at the
0.04 s measurement interval with twitch responses at low stimulation rates,
summation and tetanic fusion at high rates, per-sample parameter variability,
and a per-experiment multiplicative "vigor" drift that shows up in both the
resting baseline and the evoked force. The drift is what makes the measured
pre-stimulus baseline genuinely informative for force prediction, mirroring
the variation in baseline force across experiments seen on the bench.

Dynamics: the rectified stimulation current is low-pass filtered (first-order
lag, 15 ms) into a recruitment drive, squashed through a logistic centered on
the excitability threshold, and integrated into an activation state with
asymmetric rise/fall time constants (fixed-step RK4 on an internal 500 Hz
grid; the drive envelope is computed at the full stimulus sample rate and
block-averaged onto the grid). Force = baseline + f_max * activation^p.
"""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .errors import ToolkitError
from .stimgen import (
    ModulatedParameter,
    ModulationKind,
    ModulationSchedule,
    StimulationProtocol,
    WaveformKind,
    default_sample_rate_Hz,
    protocol_to_record,
    record_to_protocol,
    sample_pulse_train,
)

SAMPLE_PERIOD_S = 0.04
OUTPUT_RATE_HZ = 25.0

_GRID_RATE_HZ = 500.0
_GRID_DT = 1.0 / _GRID_RATE_HZ
_GRID_STRIDE = int(round(_GRID_RATE_HZ / OUTPUT_RATE_HZ))
_DRIVE_TAU_S = 0.015


@dataclass(frozen=True)
class MuscleParams:
    """Per-sample simulator parameters (fixed across a sample's experiments)."""

    sample_id: str
    f_max_N: float = 1.2e-4
    baseline_N: float = 2.0e-5
    tau_rise_s: float = 0.06
    tau_fall_s: float = 0.22
    activation_exponent: float = 1.5
    excitability_mA: float = 6.0
    noise_sd_N: float = 2.0e-6

    def __post_init__(self):
        if min(self.f_max_N, self.tau_rise_s, self.tau_fall_s, self.excitability_mA) <= 0:
            raise ToolkitError("invalid-params", "f_max, taus and excitability must be > 0")
        if self.baseline_N < 0 or self.noise_sd_N < 0:
            raise ToolkitError("invalid-params", "baseline_N and noise_sd_N must be >= 0")
        if self.tau_fall_s < self.tau_rise_s:
            raise ToolkitError("invalid-params", "tau_fall_s must be >= tau_rise_s")
        if self.activation_exponent < 1:
            raise ToolkitError("invalid-params", "activation_exponent must be >= 1")


@dataclass(frozen=True)
class ForceTrace:
    """Uniformly sampled force series with its experiment metadata."""

    forces_N: np.ndarray = field(repr=False)
    sample_id: str = ""
    protocol: StimulationProtocol | None = None
    experiment_id: str = ""
    sample_period_s: float = SAMPLE_PERIOD_S

    def __post_init__(self):
        if abs(self.sample_period_s - SAMPLE_PERIOD_S) > 1e-12:
            raise ToolkitError("invalid-trace", f"sample period must be {SAMPLE_PERIOD_S} s")

    def __len__(self) -> int:
        return len(self.forces_N)

    def times_s(self) -> np.ndarray:
        return np.arange(len(self.forces_N)) * self.sample_period_s


@dataclass(frozen=True)
class CorpusEntry:
    protocol: StimulationProtocol
    sample_id: str
    count: int = 1
    tail_s: float = 0.0

    def __post_init__(self):
        if self.count < 1:
            raise ToolkitError("invalid-spec", "entry count must be >= 1")
        if self.tail_s < 0:
            raise ToolkitError("invalid-spec", "tail_s must be >= 0")


@dataclass(frozen=True)
class CorpusSpec:
    entries: tuple[CorpusEntry, ...]
    quiet_period_s: float = 0.4
    seed: int = 0
    noise_free: bool = False

    def __post_init__(self):
        if len(self.entries) == 0:
            raise ToolkitError("empty-spec", "corpus spec has no entries")

    def n_experiments(self) -> int:
        return sum(e.count for e in self.entries)


def expected_trace_length(quiet_period_s: float, duration_s: float, tail_s: float = 0.0) -> int:
    total = quiet_period_s + duration_s + tail_s
    return int(math.floor(total * OUTPUT_RATE_HZ + 0.5 + 1e-9))


def _logistic(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def _drive(protocol: StimulationProtocol, params: MuscleParams, quiet_s: float, n_grid: int) -> np.ndarray:
    """Recruitment drive u(t) on the 500 Hz grid, n_grid + 1 points."""
    fs = default_sample_rate_Hz(protocol)
    stride = int(round(fs / _GRID_RATE_HZ))
    n_fs = (n_grid + 1) * stride

    rectified = np.zeros(n_fs)
    signal = sample_pulse_train(protocol, fs)
    start = int(round(quiet_s * fs))
    stop = min(start + len(signal.values), n_fs)
    rectified[start:stop] = np.abs(signal.values[: stop - start])

    alpha = math.exp(-1.0 / (_DRIVE_TAU_S * fs))
    lowpassed = lfilter([1.0 - alpha], [1.0, -alpha], rectified)
    blocks = lowpassed.reshape(n_grid + 1, stride).mean(axis=1)

    scale = params.excitability_mA / 6.0
    return _logistic((blocks - params.excitability_mA) / scale)


def _integrate_activation(u: np.ndarray, tau_rise: float, tau_fall: float) -> np.ndarray:
    """Fixed-step RK4 for da/dt = (u - a) / tau, tau switching on sign(u - a)."""
    n = len(u) - 1
    mid = (0.5 * (u[:-1] + u[1:])).tolist()
    u = u.tolist()
    dt = _GRID_DT
    h2 = dt / 2.0
    h6 = dt / 6.0
    traj = np.empty(n + 1)
    a = u[0]  # resting steady state
    traj[0] = a
    for i in range(n):
        u0 = u[i]
        um = mid[i]
        u1 = u[i + 1]
        d = u0 - a
        k1 = d / (tau_rise if d > 0 else tau_fall)
        d = um - (a + h2 * k1)
        k2 = d / (tau_rise if d > 0 else tau_fall)
        d = um - (a + h2 * k2)
        k3 = d / (tau_rise if d > 0 else tau_fall)
        d = u1 - (a + dt * k3)
        k4 = d / (tau_rise if d > 0 else tau_fall)
        a += h6 * (k1 + 2.0 * (k2 + k3) + k4)
        if a < 0.0:
            a = 0.0
        elif a > 1.0:
            a = 1.0
        traj[i + 1] = a
    return traj


def simulate_force(
    protocol: StimulationProtocol,
    params: MuscleParams,
    quiet_period_s: float = 0.4,
    seed: int | list[int] | np.random.Generator = 0,
    *,
    tail_s: float = 0.0,
    drift: float = 1.0,
    noise_free: bool = False,
) -> ForceTrace:
    """Simulate one experiment's force trace at 0.04 s sampling.

    The first ``quiet_period_s`` seconds are unstimulated (baseline only),
    then the protocol runs for its duration, then ``tail_s`` seconds of
    relaxation are recorded. ``drift`` multiplies f_max and baseline for this
    one experiment. Deterministic for a fixed seed.
    """
    if quiet_period_s < 0.4:
        raise ToolkitError(
            "invalid-quiet-period",
            f"quiet period {quiet_period_s} s is too short for the 0.4 s baseline window",
        )
    n_out = expected_trace_length(quiet_period_s, protocol.duration_s, tail_s)
    n_grid = n_out * _GRID_STRIDE

    u = _drive(protocol, params, quiet_period_s, n_grid)
    activation = _integrate_activation(u, params.tau_rise_s, params.tau_fall_s)
    a_out = activation[::_GRID_STRIDE][:n_out]

    forces = drift * (params.baseline_N + params.f_max_N * a_out**params.activation_exponent)
    if not noise_free and params.noise_sd_N > 0:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        forces = forces + rng.normal(0.0, params.noise_sd_N, n_out)

    return ForceTrace(forces_N=forces, sample_id=params.sample_id, protocol=protocol)


def draw_muscle_params(sample_id: str, global_seed: int) -> MuscleParams:
    """Per-sample parameter draw: a shared vigor factor scales both f_max and
    baseline (plus small independent jitters), excitability varies on its own.

    Net per-sample factors stay within roughly +/-30% of the defaults.
    """
    rng = np.random.default_rng([global_seed, 104729, zlib.crc32(sample_id.encode())])
    vigor = rng.uniform(0.85, 1.15)
    f_max_jitter = rng.uniform(0.85, 1.15)
    baseline_jitter = rng.uniform(0.85, 1.15)
    excitability_factor = rng.uniform(0.7, 1.3)
    base = MuscleParams(sample_id=sample_id)
    return replace(
        base,
        f_max_N=base.f_max_N * vigor * f_max_jitter,
        baseline_N=base.baseline_N * vigor * baseline_jitter,
        excitability_mA=base.excitability_mA * excitability_factor,
    )


def generate_corpus(spec: CorpusSpec) -> list[ForceTrace]:
    """Generate one trace per requested experiment, deterministically.

    Sample parameters are drawn once per sample id; per-experiment seeds and
    vigor drifts are derived from (global seed, experiment index), so the
    result is independent of generation order.
    """
    params_cache: dict[str, MuscleParams] = {}
    traces = []
    idx = 0
    for entry in spec.entries:
        if entry.sample_id not in params_cache:
            params_cache[entry.sample_id] = draw_muscle_params(entry.sample_id, spec.seed)
        params = params_cache[entry.sample_id]
        for _ in range(entry.count):
            drift = float(np.random.default_rng([spec.seed, 104723, idx]).uniform(0.85, 1.15))
            trace = simulate_force(
                entry.protocol,
                params,
                spec.quiet_period_s,
                seed=[spec.seed, 7919, idx],
                tail_s=entry.tail_s,
                drift=drift,
                noise_free=spec.noise_free,
            )
            traces.append(replace(trace, experiment_id=f"exp_{idx:03d}"))
            idx += 1
    return traces


# --- default corpus -------------------------------------------------------
#
# 161 experiments whose stimulation-frequency marginal is
# {50 Hz: 69, 30: 48, 20: 30, 35: 12, 70: 1, 25: 1} and whose pulse-width
# marginal is {15 ms: 53, 5: 41, 20: 17, 10: 15, 8: 13, 40: 10, 30: 9,
# 28: 3}, totalling exactly 123786 force samples. Each (frequency, PW) cell
# lists the waveforms whose pulse envelope fits the period, and a mix of
# modulation families. Modulated protocols sweep up to the cell's nominal
# values, so the marginals refer to each experiment's operating point.

_PLAIN = "plain"
_ST_AMP = "staircase-amplitude"
_ST_PW = "staircase-pulse-width"
_LIN_PW = "ramp-pulse-width"
_LIN_FREQ = "ramp-frequency"
_LIN_AMP = "ramp-amplitude"

_FAMILY_ORDER = (_PLAIN, _ST_AMP, _ST_PW, _LIN_PW, _LIN_FREQ, _LIN_AMP)

_FAMILY_SAMPLES = {
    _PLAIN: ("S4", "S5", "S6"),
    _ST_AMP: ("S7", "S8", "S9"),
    _ST_PW: ("S13", "S14", "S15"),
    _LIN_PW: ("S13", "S14"),
    _LIN_FREQ: ("S10", "S11", "S12"),
    _LIN_AMP: ("S1", "S2", "S3"),
}

_FAMILY_STIM_S = {_PLAIN: 10.0, _ST_AMP: 30.0, _ST_PW: 30.0, _LIN_PW: 30.0, _LIN_FREQ: 30.0, _LIN_AMP: 80.0}

_MONO = WaveformKind.MONOPHASIC
_SYM = WaveformKind.BIPHASIC_SYMMETRIC
_ASYM = WaveformKind.BIPHASIC_ASYMMETRIC_BALANCED
_TRI = WaveformKind.TRIANGULAR_BIPHASIC

# (frequency_Hz, pulse_width_ms, waveform cycle, {family: count})
_DEFAULT_CELLS = (
    (20.0, 40.0, (_MONO,), {_ST_AMP: 5, _ST_PW: 5}),
    (20.0, 30.0, (_MONO,), {_PLAIN: 2, _ST_AMP: 3, _ST_PW: 2, _LIN_FREQ: 2}),
    (20.0, 28.0, (_MONO,), {_PLAIN: 1, _ST_AMP: 1, _ST_PW: 1}),
    (20.0, 20.0, (_MONO, _SYM, _TRI), {_ST_AMP: 3, _ST_PW: 3, _LIN_PW: 2}),
    (30.0, 20.0, (_MONO,), {_PLAIN: 2, _ST_AMP: 3, _ST_PW: 3}),
    (30.0, 15.0, (_MONO, _SYM, _TRI), {_PLAIN: 6, _ST_AMP: 8, _ST_PW: 8, _LIN_PW: 3, _LIN_FREQ: 10, _LIN_AMP: 2}),
    (30.0, 5.0, (_ASYM,), {_PLAIN: 1, _ST_AMP: 1, _LIN_AMP: 1}),
    (35.0, 15.0, (_MONO,), {_PLAIN: 6, _LIN_FREQ: 6}),
    (50.0, 15.0, (_MONO,), {_PLAIN: 1, _ST_AMP: 2, _ST_PW: 1}),
    (50.0, 10.0, (_MONO, _SYM, _TRI), {_PLAIN: 3, _ST_AMP: 3, _ST_PW: 3, _LIN_PW: 2, _LIN_FREQ: 4}),
    (50.0, 8.0, (_MONO, _SYM, _TRI), {_PLAIN: 2, _ST_AMP: 3, _ST_PW: 2, _LIN_FREQ: 6}),
    (50.0, 5.0, (_MONO, _SYM, _TRI), {_PLAIN: 5, _ST_AMP: 7, _ST_PW: 11, _LIN_FREQ: 12, _LIN_AMP: 2}),
    (70.0, 5.0, (_SYM,), {_PLAIN: 1}),
    (25.0, 20.0, (_MONO,), {_PLAIN: 1}),
)

DEFAULT_TOTAL_SAMPLES = 123786
DEFAULT_AMPLITUDE_MA = 18.0


def _family_protocol(family: str, waveform: WaveformKind, freq: float, pw: float) -> StimulationProtocol:
    duration = _FAMILY_STIM_S[family]
    if family == _PLAIN:
        modulation = ModulationSchedule()
    elif family == _ST_AMP:
        modulation = ModulationSchedule(
            ModulationKind.STAIRCASE, ModulatedParameter.AMPLITUDE, 3.0, 18.0, n_steps=6, step_duration_s=5.0
        )
    elif family == _ST_PW:
        modulation = ModulationSchedule(
            ModulationKind.STAIRCASE, ModulatedParameter.PULSE_WIDTH, 2.0, pw, n_steps=6, step_duration_s=5.0
        )
    elif family == _LIN_PW:
        modulation = ModulationSchedule(
            ModulationKind.LINEAR_RAMP, ModulatedParameter.PULSE_WIDTH, 2.0, pw, ramp_duration_s=duration
        )
    elif family == _LIN_FREQ:
        modulation = ModulationSchedule(
            ModulationKind.LINEAR_RAMP, ModulatedParameter.FREQUENCY, 10.0, freq, ramp_duration_s=duration
        )
    elif family == _LIN_AMP:
        modulation = ModulationSchedule(
            ModulationKind.LINEAR_RAMP, ModulatedParameter.AMPLITUDE, 0.0, 18.0, ramp_duration_s=duration
        )
    else:
        raise ToolkitError("invalid-spec", f"unknown modulation family {family}")
    return StimulationProtocol(
        waveform=waveform,
        amplitude_mA=DEFAULT_AMPLITUDE_MA,
        frequency_Hz=freq,
        pulse_width_ms=pw,
        duration_s=duration,
        modulation=modulation,
    )


def default_corpus_spec(seed: int = 0, noise_free: bool = False) -> CorpusSpec:
    """The built-in 161-experiment corpus spec (123786 samples in total)."""
    quiet_samples = int(round(0.4 * OUTPUT_RATE_HZ))
    planned = []  # (family, protocol, stim_samples)
    for freq, pw, kinds, families in _DEFAULT_CELLS:
        for family in _FAMILY_ORDER:
            for k in range(families.get(family, 0)):
                waveform = kinds[k % len(kinds)]
                protocol = _family_protocol(family, waveform, freq, pw)
                stim_samples = int(round(_FAMILY_STIM_S[family] * OUTPUT_RATE_HZ))
                planned.append((family, protocol, stim_samples))

    fixed = sum(quiet_samples + s for _, _, s in planned)
    tail_total = DEFAULT_TOTAL_SAMPLES - fixed
    if tail_total < 0:
        raise ToolkitError("invalid-spec", "default cells exceed the sample budget")
    base_tail, extra = divmod(tail_total, len(planned))

    family_counters = {f: 0 for f in _FAMILY_ORDER}
    entries = []
    for idx, (family, protocol, _) in enumerate(planned):
        samples = _FAMILY_SAMPLES[family]
        sample_id = samples[family_counters[family] % len(samples)]
        family_counters[family] += 1
        tail_samples = base_tail + (1 if idx < extra else 0)
        entries.append(
            CorpusEntry(protocol=protocol, sample_id=sample_id, count=1, tail_s=tail_samples * SAMPLE_PERIOD_S)
        )
    return CorpusSpec(entries=tuple(entries), quiet_period_s=0.4, seed=seed, noise_free=noise_free)


# --- corpus spec and trace persistence ------------------------------------

def spec_to_dict(spec: CorpusSpec) -> dict:
    return {
        "format": "myotwin-corpus-spec",
        "version": 1,
        "quiet_period_s": spec.quiet_period_s,
        "seed": spec.seed,
        "noise_free": spec.noise_free,
        "entries": [
            {
                "protocol": protocol_to_record(e.protocol),
                "sample_id": e.sample_id,
                "count": e.count,
                "tail_s": e.tail_s,
            }
            for e in spec.entries
        ],
    }


def spec_from_dict(data: dict) -> CorpusSpec:
    try:
        entries = tuple(
            CorpusEntry(
                protocol=record_to_protocol(e["protocol"]),
                sample_id=e["sample_id"],
                count=int(e.get("count", 1)),
                tail_s=float(e.get("tail_s", 0.0)),
            )
            for e in data["entries"]
        )
        return CorpusSpec(
            entries=entries,
            quiet_period_s=float(data.get("quiet_period_s", 0.4)),
            seed=int(data.get("seed", 0)),
            noise_free=bool(data.get("noise_free", False)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ToolkitError("unreadable-spec", f"malformed corpus spec: {exc}") from exc


def write_trace(trace: ForceTrace, path: Path) -> None:
    columns = np.column_stack([trace.times_s(), trace.forces_N])
    np.savetxt(path, columns, fmt="%.17g", header="time_s force_N")


def load_trace(path: Path, *, sample_id: str = "", protocol=None, experiment_id: str = "") -> ForceTrace:
    path = Path(path)
    if not path.exists():
        raise ToolkitError("missing-trace", f"trace file {path} does not exist")
    data = np.loadtxt(path, ndmin=2)
    return ForceTrace(
        forces_N=data[:, 1], sample_id=sample_id, protocol=protocol, experiment_id=experiment_id
    )


def write_corpus(traces: list[ForceTrace], directory: Path, spec: CorpusSpec) -> Path:
    """Write one trace file per experiment plus the corpus manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    experiments = []
    for trace in traces:
        filename = f"{trace.experiment_id}.txt"
        write_trace(trace, directory / filename)
        record = protocol_to_record(trace.protocol)
        experiments.append(
            {
                "experiment_id": trace.experiment_id,
                "sample_id": trace.sample_id,
                "file": filename,
                "n_samples": len(trace),
                "waveform": record["waveform"],
                "frequency_Hz": record["frequency_Hz"],
                "pulse_width_ms": record["pulse_width_ms"],
                "amplitude_mA": record["amplitude_mA"],
                "modulation": record["modulation.kind"],
                "protocol": record,
            }
        )
    manifest = {
        "format": "myotwin-corpus",
        "version": 1,
        "seed": spec.seed,
        "quiet_period_s": spec.quiet_period_s,
        "noise_free": spec.noise_free,
        "n_experiments": len(traces),
        "experiments": experiments,
    }
    manifest_path = directory / "corpus_manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest_path


def load_corpus(directory: Path) -> list[ForceTrace]:
    directory = Path(directory)
    manifest_path = directory / "corpus_manifest.json"
    if not manifest_path.exists():
        raise ToolkitError("missing-corpus", f"no corpus manifest in {directory}")
    manifest = json.loads(manifest_path.read_text())
    traces = []
    for exp in manifest["experiments"]:
        traces.append(
            load_trace(
                directory / exp["file"],
                sample_id=exp["sample_id"],
                protocol=record_to_protocol(exp["protocol"]),
                experiment_id=exp["experiment_id"],
            )
        )
    return traces
