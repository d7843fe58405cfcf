"""Metrics and residual reporting.

Conventions: residual = true - predicted; R-squared uses the population sum
of squares about the mean of the true values; histogram bins are equal width
over the observed residual range.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ToolkitError
from .validation import as_1d_array, check_equal_length


def _validated(y_true, y_pred) -> tuple[np.ndarray, np.ndarray]:
    yt = as_1d_array(y_true, "y_true")
    yp = as_1d_array(y_pred, "y_pred")
    check_equal_length(yt, yp)
    if yt.size == 0:
        raise ToolkitError("empty-input", "metrics need at least one point")
    return yt, yp


def mse(y_true, y_pred) -> float:
    yt, yp = _validated(y_true, y_pred)
    return float(np.mean((yt - yp) ** 2))


def r_squared(y_true, y_pred) -> float:
    yt, yp = _validated(y_true, y_pred)
    if yt.size < 2:
        raise ToolkitError("empty-input", "r_squared needs at least two points")
    ss_tot = float(np.sum((yt - yt.mean()) ** 2))
    if ss_tot == 0.0:
        raise ToolkitError("constant-truth", "true values are constant; R^2 is undefined")
    ss_res = float(np.sum((yt - yp) ** 2))
    return 1.0 - ss_res / ss_tot


@dataclass(frozen=True)
class MetricSummary:
    mse: float
    r2: float
    n: int


def metric_summary(y_true, y_pred) -> MetricSummary:
    yt, yp = _validated(y_true, y_pred)
    return MetricSummary(mse=mse(yt, yp), r2=r_squared(yt, yp), n=int(yt.size))


@dataclass(frozen=True)
class ResidualReport:
    residuals: np.ndarray = field(repr=False)
    mean: float = 0.0
    sd: float = 0.0
    bin_edges: np.ndarray = field(repr=False, default=None)
    counts: np.ndarray = field(repr=False, default=None)
    outlier_k: float = 3.0
    outlier_indices: np.ndarray = field(repr=False, default=None)


def residual_report(y_true, y_pred, bins: int = 30, outlier_k: float = 3.0) -> ResidualReport:
    yt, yp = _validated(y_true, y_pred)
    residuals = yt - yp
    lo = float(residuals.min())
    hi = float(residuals.max())
    if hi == lo:  # all-equal residuals still get a well-formed histogram
        lo, hi = lo - 0.5, hi + 0.5
    counts, edges = np.histogram(residuals, bins=bins, range=(lo, hi))
    sd = float(residuals.std())  # population
    threshold = outlier_k * sd
    outliers = np.flatnonzero(np.abs(residuals - residuals.mean()) > threshold) if sd > 0 else np.array([], dtype=int)
    return ResidualReport(
        residuals=residuals,
        mean=float(residuals.mean()),
        sd=sd,
        bin_edges=edges,
        counts=counts,
        outlier_k=outlier_k,
        outlier_indices=outliers,
    )


class StreamingMetrics:
    """Single-pass accumulator for MSE and R^2 over batched updates.

    Matches the two-pass formulas to within floating-point accumulation
    error; useful when predictions arrive in chunks.
    """

    def __init__(self):
        self.n = 0
        self._sum_sq_err = 0.0
        self._sum_y = 0.0
        self._sum_y_sq = 0.0

    def update(self, y_true, y_pred) -> "StreamingMetrics":
        yt, yp = _validated(y_true, y_pred)
        self.n += yt.size
        self._sum_sq_err += float(np.sum((yt - yp) ** 2))
        self._sum_y += float(np.sum(yt))
        self._sum_y_sq += float(np.sum(yt**2))
        return self

    @property
    def mse(self) -> float:
        if self.n == 0:
            raise ToolkitError("empty-input", "no points accumulated")
        return self._sum_sq_err / self.n

    @property
    def r_squared(self) -> float:
        if self.n < 2:
            raise ToolkitError("empty-input", "r_squared needs at least two points")
        ss_tot = self._sum_y_sq - self._sum_y**2 / self.n
        if ss_tot <= 0.0:
            raise ToolkitError("constant-truth", "true values are constant; R^2 is undefined")
        return 1.0 - self._sum_sq_err / ss_tot


# --- plot-ready report files (delimited, header row) ------------------------

def write_scatter(path, y_true, y_pred) -> None:
    yt, yp = _validated(y_true, y_pred)
    np.savetxt(path, np.column_stack([yt, yp]), fmt="%.17g", delimiter=",",
               header="true,predicted", comments="")


def write_residuals(path, report: ResidualReport) -> None:
    np.savetxt(path, report.residuals, fmt="%.17g", delimiter=",",
               header="residual", comments="")


def write_histogram(path, report: ResidualReport) -> None:
    rows = np.column_stack([report.bin_edges[:-1], report.bin_edges[1:], report.counts])
    np.savetxt(path, rows, fmt="%.17g", delimiter=",",
               header="bin_left,bin_right,count", comments="")


def write_summary(path, values: dict) -> None:
    lines = ["metric,value"]
    for key, value in values.items():
        lines.append(f"{key},{value:.17g}" if isinstance(value, float) else f"{key},{value}")
    Path(path).write_text("\n".join(lines) + "\n")
