"""Input validation helpers shared by the estimators."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import ShapeMismatchError
from .trajectory import SnapshotMatrix


def check_trajectory_array(X, n_epochs: int | None = None, min_epochs: int = 2) -> np.ndarray:
    """Return ``X`` as a finite float64 (n_weights, n_epochs) array."""
    if isinstance(X, SnapshotMatrix):
        X = X.values
    X = check_array(
        X,
        dtype=np.float64,
        order="C",
        ensure_all_finite=True,
        ensure_min_features=min_epochs,
    )
    if n_epochs is not None and X.shape[1] != n_epochs:
        raise ShapeMismatchError(
            f"X has {X.shape[1]} epochs, the model was fit with {n_epochs}"
        )
    return X


def as_snapshot_matrix(X, layers=None) -> SnapshotMatrix:
    if isinstance(X, SnapshotMatrix):
        return X if layers is None else SnapshotMatrix(X.values, tuple(layers))
    return SnapshotMatrix(check_trajectory_array(X), tuple(layers or ()))


def check_same_shape(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = a.values if isinstance(a, SnapshotMatrix) else np.asarray(a, dtype=np.float64)
    b = b.values if isinstance(b, SnapshotMatrix) else np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b
