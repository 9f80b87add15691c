"""Recovery metrics and support-estimation rules."""
from __future__ import annotations

import numpy as np


class MetricError(ValueError):
    """Raised when a metric is undefined for its inputs."""


def to_db(value) -> float:
    with np.errstate(divide="ignore"):
        return float(10.0 * np.log10(value))


def tnmse(x_true, x_hat, return_excluded: bool = False):
    """Time-averaged normalized squared error over the T frames (columns).

    Frames whose true signal is all zero have no normalization and are left out;
    their indices are returned when ``return_excluded`` is set.
    """
    x_true, x_hat = np.asarray(x_true), np.asarray(x_hat)
    if x_true.shape != x_hat.shape:
        raise ValueError(f"shape mismatch {x_true.shape} vs {x_hat.shape}")
    if x_true.ndim == 1:
        x_true, x_hat = x_true[:, None], x_hat[:, None]
    ref = np.sum(np.abs(x_true) ** 2, axis=0)
    err = np.sum(np.abs(x_true - x_hat) ** 2, axis=0)
    ok = ref > 0
    if not np.any(ok):
        raise MetricError("TNMSE undefined: every true frame is zero")
    value = float(np.mean(err[ok] / ref[ok]))
    if return_excluded:
        return value, np.flatnonzero(~ok).tolist()
    return value


def _as_index_set(s) -> set:
    a = np.asarray(list(s) if isinstance(s, (set, frozenset)) else s)
    if a.dtype == bool:
        return set(np.flatnonzero(a).tolist())
    return set(int(i) for i in a.ravel())


def nser(s_true, s_hat) -> float:
    """Size of the symmetric difference of the two supports over ``|s_true|``.

    Supports may be index collections or boolean masks.
    """
    a, b = _as_index_set(s_true), _as_index_set(s_hat)
    if not a:
        raise MetricError("NSER undefined for an empty true support")
    return len(a ^ b) / len(a)


def estimate_support(summary, rule: str = "posterior-threshold", K=None) -> np.ndarray:
    """Sorted indices of the estimated support.

    ``summary`` needs ``x_mean`` (N x T) for the ``k-largest`` rule and ``s_post``
    (length N) for ``posterior-threshold``.
    """
    if rule == "k-largest":
        x = np.asarray(summary.x_mean)
        N = x.shape[0]
        if K is None:
            raise ValueError("the k-largest rule needs K")
        if not 0 <= K <= N:
            raise ValueError(f"K={K} outside [0, N={N}]")
        energy = np.sum(np.abs(x) ** 2, axis=1)
        # stable sort on the negated energy keeps the lower index first on ties
        order = np.argsort(-energy, kind="stable")
        return np.sort(order[:K])
    if rule == "posterior-threshold":
        return np.flatnonzero(np.asarray(summary.s_post) > 0.5)
    raise ValueError(f"unknown support rule {rule!r}")
