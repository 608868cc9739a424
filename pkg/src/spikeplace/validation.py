"""Input validation shared by the estimators."""
from __future__ import annotations

from typing import Any, Mapping

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import ConfigError, DataError
from .params import SimulationParams


def resolve_params(params: SimulationParams | Mapping[str, Any] | None) -> SimulationParams:
    if params is None:
        return SimulationParams()
    if isinstance(params, SimulationParams):
        return params
    if isinstance(params, Mapping):
        return SimulationParams.from_dict(params)
    raise ConfigError(f"params must be SimulationParams or a mapping, got {type(params).__name__}")


def check_images(X, k_p: int) -> np.ndarray:
    """2-D float array of flattened images with ``k_p`` pixels each, in [0, 255]."""
    X = check_array(X, dtype=np.float64, ensure_2d=False, allow_nd=True)
    if X.ndim == 3:
        X = X.reshape(len(X), -1)
    elif X.ndim == 1:
        X = X.reshape(1, -1)
    if X.shape[1] != k_p:
        raise DataError(f"images have {X.shape[1]} pixels, expected {k_p}")
    if X.size and (X.min() < 0 or X.max() > 255):
        raise DataError("pixel intensities must lie in [0, 255]")
    return X


def check_place_labels(y, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(classes, place_ids)`` with place ids 0..n-1 in input order."""
    if y is None:
        return np.arange(n), np.arange(n)
    y = np.asarray(y)
    if y.shape != (n,):
        raise DataError("one place label per reference image required")
    classes, inverse = np.unique(y, return_inverse=True)
    if len(classes) != n:
        raise DataError("reference place labels must be unique")
    return classes, inverse.astype(np.int64)
