"""T-norms, t-conorms and soft attribute filters.

All functions accept scalars or numpy arrays and broadcast.
"""
from __future__ import annotations

import enum
import logging

import numpy as np

logger = logging.getLogger(__name__)

CLAMP_TOL = 1e-9


class TNormKind(str, enum.Enum):
    GOEDEL = "min"
    PRODUCT = "prod"
    LUKASIEWICZ = "luk"


class FilterKind(str, enum.Enum):
    LT = "lt"
    GT = "gt"
    EQ = "eq"


def _unit(x):
    x = np.asarray(x, dtype=np.float64)
    lo, hi = np.min(x, initial=0.0), np.max(x, initial=1.0)
    if lo < -CLAMP_TOL or hi > 1.0 + CLAMP_TOL or np.isnan(x).any():
        raise ValueError(f"fuzzy truth value outside [0, 1]: range [{lo}, {hi}]")
    if lo < 0.0 or hi > 1.0:
        logger.debug("clamping truth values within %g of [0, 1]", CLAMP_TOL)
        x = np.clip(x, 0.0, 1.0)
    return x


def _out(value):
    return float(value) if np.ndim(value) == 0 else value


def tnorm(kind, x, y):
    kind = TNormKind(kind)
    x, y = _unit(x), _unit(y)
    if kind is TNormKind.GOEDEL:
        r = np.minimum(x, y)
    elif kind is TNormKind.PRODUCT:
        r = x * y
    else:
        r = np.maximum(0.0, x + y - 1.0)
    return _out(r)


def tconorm(kind, x, y):
    """Dual of ``tnorm``, ``1 - T(1 - x, 1 - y)``, in closed form."""
    kind = TNormKind(kind)
    x, y = _unit(x), _unit(y)
    if kind is TNormKind.GOEDEL:
        r = np.maximum(x, y)
    elif kind is TNormKind.PRODUCT:
        r = x + y - x * y
    else:
        r = np.minimum(1.0, x + y)
    return _out(r)


def filter_raw(kind, c_hat, c, sigma):
    """Soft truth of ``c_hat <kind> c`` with scale ``sigma``."""
    kind = FilterKind(kind)
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    diff = (np.asarray(c_hat, dtype=np.float64) - c) / sigma
    if kind is FilterKind.EQ:
        r = np.exp(-np.abs(diff))
    else:
        # logistic(-diff), written to avoid overflow in exp
        lt = np.where(diff >= 0, np.exp(-np.abs(diff)) / (1.0 + np.exp(-np.abs(diff))),
                      1.0 / (1.0 + np.exp(-np.abs(diff))))
        r = lt if kind is FilterKind.LT else 1.0 - lt
    return _out(r)


def filter_score(exists, raw):
    return _out(_unit(exists) * _unit(raw))
