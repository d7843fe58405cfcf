"""Small input-validation helpers shared by the estimators."""

from __future__ import annotations

import numpy as np
from sklearn.exceptions import NotFittedError

from .errors import ToolkitError


def as_1d_array(values, name: str = "values") -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1:
        raise ToolkitError("bad-shape", f"{name} must be 1-dimensional, got shape {arr.shape}")
    return arr


def as_2d_array(values, name: str = "X") -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ToolkitError("bad-shape", f"{name} must be 2-dimensional, got shape {arr.shape}")
    return arr


def check_equal_length(a, b, category: str = "length-mismatch") -> None:
    if len(a) != len(b):
        raise ToolkitError(category, f"length mismatch: {len(a)} vs {len(b)}")


def check_finite(arr: np.ndarray, name: str = "array") -> None:
    if not np.all(np.isfinite(arr)):
        raise ToolkitError("non-finite", f"{name} contains non-finite values")


def check_fitted(estimator, attribute: str) -> None:
    if getattr(estimator, attribute, None) is None:
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted yet; call fit() before using it"
        )
