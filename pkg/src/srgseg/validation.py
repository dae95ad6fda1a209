"""Input checks shared by the estimators and the command-line front end."""
from __future__ import annotations

import numpy as np

from .volume import LabelVolume, ScalarVolume, check_same_geometry


def check_scalar_volume(X, spacing=None) -> ScalarVolume:
    """Accept a ``ScalarVolume`` or a 3D array (wrapped with ``spacing``)."""
    if isinstance(X, ScalarVolume):
        return X
    if isinstance(X, LabelVolume):
        raise TypeError("expected a scalar volume, got a LabelVolume")
    arr = np.asarray(X)
    if arr.ndim != 3:
        raise ValueError(f"expected a 3D intensity array, got shape {arr.shape}")
    return ScalarVolume(arr, spacing or (1.0, 1.0, 1.0))


def check_label_volume(y, spacing=None) -> LabelVolume:
    if isinstance(y, LabelVolume):
        return y
    arr = np.asarray(y)
    if arr.ndim != 3:
        raise ValueError(f"expected a 3D label array, got shape {arr.shape}")
    return LabelVolume(arr, spacing or (1.0, 1.0, 1.0))


def check_volume_pairs(X, y):
    """Normalize training inputs to two equal-length lists of matching volumes."""
    if isinstance(X, (ScalarVolume, np.ndarray)):
        X = [X]
    if isinstance(y, (LabelVolume, np.ndarray)):
        y = [y]
    X, y = list(X), list(y)
    if not X:
        raise ValueError("at least one training volume is required")
    if len(X) != len(y):
        raise ValueError(f"{len(X)} scalar volumes but {len(y)} label volumes")
    scalars = [check_scalar_volume(x) for x in X]
    labels = [check_label_volume(t, s.spacing) for t, s in zip(y, scalars)]
    for s, t in zip(scalars, labels):
        check_same_geometry(s, t)
    return scalars, labels
