"""Feature engineering and dataset assembly.

Static path: one row per experiment (sample id, waveform, frequency, pulse
width, optional pre-stimulus baseline) with the maximum achieved force as the
target, one-hot + standardization encoding fitted on the training partition.

Dynamic path: overlapping 10-step sliding windows with next-step targets,
min-max scaled to [0, 1] with the scaler fitted on the training portion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import ToolkitError
from .mtwin import ForceTrace
from .validation import as_1d_array, check_fitted

BASELINE_WINDOW = 10
DEFAULT_WINDOW_WIDTH = 10


@dataclass(frozen=True)
class StaticFeatureRow:
    """Unencoded static inputs and max-force target for one experiment."""

    sample_id: str
    waveform: str
    frequency_Hz: float
    pulse_width_ms: float
    baseline_force_N: float | None
    target_max_force_N: float


def extract_static_row(trace: ForceTrace, include_baseline: bool = False) -> StaticFeatureRow:
    """Target = maximum force over the whole trace; baseline = mean of the
    first 10 samples (the unstimulated 0.4 s window)."""
    if len(trace) < BASELINE_WINDOW + 1:
        raise ToolkitError(
            "trace-too-short", f"trace has {len(trace)} samples, need >= {BASELINE_WINDOW + 1}"
        )
    if trace.protocol is None:
        raise ToolkitError("invalid-trace", "trace has no protocol metadata")
    baseline = float(np.mean(trace.forces_N[:BASELINE_WINDOW])) if include_baseline else None
    return StaticFeatureRow(
        sample_id=trace.sample_id,
        waveform=trace.protocol.waveform.value,
        frequency_Hz=trace.protocol.frequency_Hz,
        pulse_width_ms=trace.protocol.pulse_width_ms,
        baseline_force_N=baseline,
        target_max_force_N=float(np.max(trace.forces_N)),
    )


def extract_static_rows(traces, include_baseline: bool = False) -> list[StaticFeatureRow]:
    return [extract_static_row(t, include_baseline) for t in traces]


def targets_of(rows) -> np.ndarray:
    return np.array([r.target_max_force_N for r in rows])


class StaticEncoder(TransformerMixin, BaseEstimator):
    """One-hot + standardization encoder for static feature rows.

    Categorical features (sample id, waveform) become one-hot blocks in
    sorted-category order; numeric features are centered and divided by the
    population standard deviation (a constant feature maps to 0). Fit on the
    training partition only; transforming a category unseen at fit time is an
    error.
    """

    def __init__(self, include_baseline: bool = False):
        self.include_baseline = include_baseline
        self.sample_categories_ = None
        self.waveform_categories_ = None
        self.numeric_means_ = None
        self.numeric_sds_ = None

    def _numeric_values(self, row: StaticFeatureRow) -> list[float]:
        values = [row.frequency_Hz, row.pulse_width_ms]
        if self.include_baseline:
            if row.baseline_force_N is None:
                raise ToolkitError("missing-baseline", "row has no baseline feature; re-extract with include_baseline")
            values.append(row.baseline_force_N)
        return values

    def fit(self, rows, y=None):
        rows = list(rows)
        if not rows:
            raise ToolkitError("empty-input", "cannot fit encoder on zero rows")
        self.sample_categories_ = sorted({r.sample_id for r in rows})
        self.waveform_categories_ = sorted({r.waveform for r in rows})
        numeric = np.array([self._numeric_values(r) for r in rows])
        self.numeric_means_ = numeric.mean(axis=0)
        self.numeric_sds_ = numeric.std(axis=0)  # population sd
        return self

    def transform(self, rows) -> np.ndarray:
        check_fitted(self, "sample_categories_")
        rows = list(rows)
        out = np.zeros((len(rows), self.width_))
        n_s = len(self.sample_categories_)
        n_w = len(self.waveform_categories_)
        for i, row in enumerate(rows):
            try:
                out[i, self.sample_categories_.index(row.sample_id)] = 1.0
            except ValueError:
                raise ToolkitError("unknown-category", f"sample id {row.sample_id!r} not seen at fit time") from None
            try:
                out[i, n_s + self.waveform_categories_.index(row.waveform)] = 1.0
            except ValueError:
                raise ToolkitError("unknown-category", f"waveform {row.waveform!r} not seen at fit time") from None
            numeric = np.array(self._numeric_values(row))
            z = np.where(self.numeric_sds_ > 0, (numeric - self.numeric_means_) / np.where(self.numeric_sds_ > 0, self.numeric_sds_, 1.0), 0.0)
            out[i, n_s + n_w :] = z
        return out

    @property
    def width_(self) -> int:
        check_fitted(self, "sample_categories_")
        return len(self.sample_categories_) + len(self.waveform_categories_) + len(self.numeric_means_)

    @property
    def feature_names_(self) -> list[str]:
        check_fitted(self, "sample_categories_")
        names = [f"sample={c}" for c in self.sample_categories_]
        names += [f"waveform={c}" for c in self.waveform_categories_]
        names += ["frequency_Hz", "pulse_width_ms"]
        if self.include_baseline:
            names.append("baseline_force_N")
        return names

    def to_dict(self) -> dict:
        check_fitted(self, "sample_categories_")
        return {
            "include_baseline": self.include_baseline,
            "sample_categories": self.sample_categories_,
            "waveform_categories": self.waveform_categories_,
            "numeric_means": self.numeric_means_.tolist(),
            "numeric_sds": self.numeric_sds_.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "StaticEncoder":
        enc = cls(include_baseline=bool(data["include_baseline"]))
        enc.sample_categories_ = list(data["sample_categories"])
        enc.waveform_categories_ = list(data["waveform_categories"])
        enc.numeric_means_ = np.array(data["numeric_means"])
        enc.numeric_sds_ = np.array(data["numeric_sds"])
        return enc


class MinMaxScaler(TransformerMixin, BaseEstimator):
    """Linear map of the observed [min, max] onto [0, 1].

    No clamping on transform (out-of-range test values may leave [0, 1]).
    Degenerate fits (min == max) map every value to 0.
    """

    def __init__(self):
        self.observed_min_ = None
        self.observed_max_ = None

    def fit(self, values, y=None):
        arr = np.asarray(values, dtype=float).ravel()
        if arr.size == 0:
            raise ToolkitError("empty-input", "cannot fit scaler on zero values")
        self.observed_min_ = float(arr.min())
        self.observed_max_ = float(arr.max())
        return self

    def _span(self) -> float:
        check_fitted(self, "observed_min_")
        return self.observed_max_ - self.observed_min_

    def transform(self, values):
        span = self._span()
        arr = np.asarray(values, dtype=float)
        if span == 0.0:
            return np.zeros_like(arr)
        return (arr - self.observed_min_) / span

    def inverse_transform(self, values):
        span = self._span()
        arr = np.asarray(values, dtype=float)
        if span == 0.0:
            return np.full_like(arr, self.observed_min_)
        return arr * span + self.observed_min_

    def to_dict(self) -> dict:
        check_fitted(self, "observed_min_")
        return {"observed_min": self.observed_min_, "observed_max": self.observed_max_}

    @classmethod
    def from_dict(cls, data: dict) -> "MinMaxScaler":
        scaler = cls()
        scaler.observed_min_ = float(data["observed_min"])
        scaler.observed_max_ = float(data["observed_max"])
        return scaler


@dataclass(frozen=True)
class SlidingWindowSet:
    """Stride-1 windows with next-step targets, never crossing experiments."""

    windows: np.ndarray = field(repr=False)  # (n, width)
    targets: np.ndarray = field(repr=False)  # (n,)
    provenance: tuple = ()  # (experiment_id, start_index) per window
    scaler: MinMaxScaler | None = None

    def __len__(self) -> int:
        return len(self.windows)

    @property
    def width(self) -> int:
        return self.windows.shape[1]


def make_windows(traces, width: int = DEFAULT_WINDOW_WIDTH) -> SlidingWindowSet:
    """Per trace of length L, exactly L - width (window, next value) pairs."""
    all_windows = []
    all_targets = []
    provenance = []
    for trace in traces:
        forces = np.asarray(trace.forces_N, dtype=float)
        n = len(forces) - width
        if n < 1:
            raise ToolkitError(
                "trace-too-short",
                f"trace {trace.experiment_id or '?'} has {len(forces)} samples, need > {width}",
            )
        stacked = np.lib.stride_tricks.sliding_window_view(forces, width)[:n]
        all_windows.append(np.array(stacked))
        all_targets.append(forces[width:])
        provenance.extend((trace.experiment_id, start) for start in range(n))
    return SlidingWindowSet(
        windows=np.concatenate(all_windows),
        targets=np.concatenate(all_targets),
        provenance=tuple(provenance),
    )


def scale_windows(window_set: SlidingWindowSet, scaler: MinMaxScaler) -> SlidingWindowSet:
    return replace(
        window_set,
        windows=scaler.transform(window_set.windows),
        targets=scaler.transform(window_set.targets),
        scaler=scaler,
    )


@dataclass(frozen=True)
class SplitAssignment:
    """Partition label per item: disjoint, exhaustive, seed-deterministic."""

    labels: np.ndarray = field(repr=False)
    partitions: tuple[str, ...] = ()
    seed: int = 0

    def indices(self, partition: str) -> np.ndarray:
        return np.flatnonzero(self.labels == self.partitions.index(partition))

    def size(self, partition: str) -> int:
        return int(np.sum(self.labels == self.partitions.index(partition)))


def partition_sizes(n: int, fractions) -> tuple[int, ...]:
    """Floor allocation; the remainder goes one-per-partition in increasing
    order of fractional part (ties by position)."""
    if n <= 0:
        raise ToolkitError("empty-input", "cannot split zero items")
    fractions = [float(f) for f in fractions]
    if abs(sum(fractions) - 1.0) > 1e-9 or any(f <= 0 for f in fractions):
        raise ToolkitError("invalid-fractions", f"fractions {fractions} must be positive and sum to 1")
    raw = [n * f for f in fractions]
    sizes = [int(math.floor(r)) for r in raw]
    remainder = n - sum(sizes)
    order = sorted(range(len(fractions)), key=lambda i: (raw[i] - sizes[i], i))
    for i in order[:remainder]:
        sizes[i] += 1
    return tuple(sizes)


def _split(n: int, fractions, seed: int, partitions: tuple[str, ...]) -> SplitAssignment:
    sizes = partition_sizes(n, fractions)
    perm = np.random.default_rng(seed).permutation(n)
    labels = np.empty(n, dtype=np.int8)
    start = 0
    for p, size in enumerate(sizes):
        labels[perm[start : start + size]] = p
        start += size
    return SplitAssignment(labels=labels, partitions=partitions, seed=seed)


def _count_of(items) -> int:
    return items if isinstance(items, int) else len(items)


def split_static(rows, fractions=(0.8, 0.2), seed: int = 0) -> SplitAssignment:
    return _split(_count_of(rows), fractions, seed, ("train", "test"))


def split_dynamic(windows, fractions=(0.7, 0.15, 0.15), seed: int = 0) -> SplitAssignment:
    """Window-level split (matches the reference window counts). Adjacent
    overlapping windows can land in different partitions; use
    split_dynamic_by_experiment for the leakage-safe alternative."""
    return _split(_count_of(windows), fractions, seed, ("train", "validation", "test"))


def split_dynamic_by_experiment(window_set: SlidingWindowSet, fractions=(0.7, 0.15, 0.15), seed: int = 0) -> SplitAssignment:
    """Assign whole experiments to partitions, then label their windows.

    Partition sizes are as close to the requested fractions as whole
    experiments allow, so window counts only approximate them.
    """
    experiment_ids = []
    seen = set()
    for exp_id, _ in window_set.provenance:
        if exp_id not in seen:
            seen.add(exp_id)
            experiment_ids.append(exp_id)
    exp_split = _split(len(experiment_ids), fractions, seed, ("train", "validation", "test"))
    label_of_exp = {exp_id: exp_split.labels[i] for i, exp_id in enumerate(experiment_ids)}
    labels = np.array([label_of_exp[exp_id] for exp_id, _ in window_set.provenance], dtype=np.int8)
    return SplitAssignment(labels=labels, partitions=("train", "validation", "test"), seed=seed)


def write_static_table(path, encoder: StaticEncoder, rows) -> None:
    """Delimited text export: one column per encoded feature plus the target."""
    matrix = encoder.transform(rows)
    targets = targets_of(rows)
    header = ",".join(encoder.feature_names_ + ["target_max_force_N"])
    data = np.column_stack([matrix, targets])
    np.savetxt(path, data, fmt="%.17g", delimiter=",", header=header, comments="")
