"""Input validation helpers shared by the estimator classes and pipeline ops."""

from __future__ import annotations

import numpy as np
from sklearn.exceptions import NotFittedError


def check_fitted(estimator, attributes):
    """Raise NotFittedError unless every fitted attribute is present."""
    if isinstance(attributes, str):
        attributes = [attributes]
    missing = [a for a in attributes if getattr(estimator, a, None) is None]
    if missing:
        raise NotFittedError(
            f"This {type(estimator).__name__} instance is not fitted yet. "
            "Call 'fit' with appropriate arguments before using this estimator."
        )


def check_nonempty(seq, name):
    if len(seq) == 0:
        raise ValueError(f"{name} must be non-empty")
    return seq


def check_fractions(fractions, tol=1e-9):
    """Validate a 3-way split specification."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3:
        raise ValueError(f"expected 3 fractions, got {len(fractions)}")
    if any(f < 0 for f in fractions):
        raise ValueError(f"fractions must be non-negative, got {fractions}")
    if abs(sum(fractions) - 1.0) > tol:
        raise ValueError(f"fractions must sum to 1 +- {tol}, got sum {sum(fractions)!r}")
    return fractions


def check_unit_interval(x, name):
    x = float(x)
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"{name} must be in [0, 1], got {x}")
    return x


def check_positive(x, name):
    if x <= 0:
        raise ValueError(f"{name} must be positive, got {x}")
    return x


def check_finite_array(arr, name):
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"{name} contains non-finite values")
    return arr


def check_choice(value, choices, name):
    if value not in choices:
        raise ValueError(f"{name} must be one of {sorted(choices)}, got {value!r}")
    return value
