"""Input validation helpers for array-shaped estimator arguments."""

from __future__ import annotations

import numpy as np

from .errors import DimensionError


def check_feature_matrix(X, *, dim: int | None = None, name: str = "X") -> np.ndarray:
    """Coerce to a finite float64 matrix of shape (n_samples, n_features)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {X.shape}")
    if X.shape[0] == 0 or X.shape[1] == 0:
        raise ValueError(f"{name} is empty (shape {X.shape})")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains non-finite values")
    if dim is not None and X.shape[1] != dim:
        raise DimensionError(f"{name} has {X.shape[1]} features, expected {dim}")
    return X


def check_labels(y, n_samples: int, *, name: str = "y") -> np.ndarray:
    """Coerce to an int64 label vector aligned with a feature matrix."""
    y = np.asarray(y)
    if y.ndim == 0:
        y = np.full(n_samples, int(y))
    if y.ndim != 1 or y.shape[0] != n_samples:
        raise ValueError(f"{name} must be 1-dimensional with {n_samples} entries")
    if not np.issubdtype(y.dtype, np.integer):
        cast = y.astype(np.int64)
        if np.any(cast != y):
            raise ValueError(f"{name} must hold integer category ids")
        y = cast
    return y.astype(np.int64)


def check_fraction(value, *, name: str = "p", minimum: float = 0.0,
                   maximum: float = 1.0, inclusive_min: bool = True,
                   inclusive_max: bool = True) -> float:
    """Validate a scalar fraction against an (open or closed) interval."""
    value = float(value)
    if not np.isfinite(value):
        raise ValueError(f"{name} must be finite")
    low_ok = value >= minimum if inclusive_min else value > minimum
    high_ok = value <= maximum if inclusive_max else value < maximum
    if not (low_ok and high_ok):
        lo = "[" if inclusive_min else "("
        hi = "]" if inclusive_max else ")"
        raise ValueError(f"{name}={value} outside {lo}{minimum}, {maximum}{hi}")
    return value
