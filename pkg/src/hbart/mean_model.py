"""Node math for the sum-of-trees mean component.

Given per-row variances ``s2[i]`` held fixed, a mean leaf with prior
``mu ~ N(0, tau^2)`` sees the partial residuals ``r[i]`` through two sums,
``wsum_r = sum(r / s2)`` and ``wsum_1 = sum(1 / s2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

__all__ = [
    "MeanLeafStats",
    "mean_stats",
    "mean_residuals",
    "mean_log_marginal",
    "mean_log_marginal_full",
    "mean_posterior",
    "draw_mean_leaf",
]


@dataclass(frozen=True)
class MeanLeafStats:
    wsum_r: float
    wsum_1: float
    count: int


def mean_stats(r, s2) -> MeanLeafStats:
    r = np.asarray(r, dtype=float)
    w = 1.0 / np.asarray(s2, dtype=float)
    return MeanLeafStats(float(np.sum(r * w)), float(np.sum(w)), int(r.size))


@njit(cache=True, nogil=True)
def _mean_logml(wsum_r, wsum_1, tau):
    t2 = tau * tau
    return -0.5 * math.log1p(t2 * wsum_1) + 0.5 * t2 * wsum_r * wsum_r / (t2 * wsum_1 + 1.0)


@njit(cache=True, nogil=True)
def _mean_draw(wsum_r, wsum_1, tau, rng):
    prec = 1.0 / (tau * tau) + wsum_1
    return wsum_r / prec + rng.normal() / math.sqrt(prec)


def mean_log_marginal(stats: MeanLeafStats, tau: float) -> float:
    """Log of the leaf likelihood with ``mu`` integrated out, up to row terms.

    ``-0.5 log(tau^2 wsum_1 + 1) + tau^2 wsum_r^2 / (2 (tau^2 wsum_1 + 1))``.
    The omitted factor ``prod (2 pi s2)^-1/2 exp(-r^2 / (2 s2))`` depends only
    on the rows, so it cancels whenever two partitions of the same rows are
    compared at fixed ``s2``.
    """
    if not (math.isfinite(stats.wsum_r) and math.isfinite(stats.wsum_1)
            and math.isfinite(tau)):
        raise ValueError("non-finite statistics")
    if tau <= 0:
        raise ValueError("tau must be positive")
    return float(_mean_logml(stats.wsum_r, stats.wsum_1, tau))


def mean_log_marginal_full(r, s2, tau: float) -> float:
    """Exact log marginal ``log int prod N(r | mu, s2) N(mu | 0, tau^2) dmu``."""
    r = np.asarray(r, dtype=float)
    s2 = np.asarray(s2, dtype=float)
    const = -0.5 * np.sum(np.log(2 * np.pi * s2)) - 0.5 * np.sum(r * r / s2)
    return float(const + mean_log_marginal(mean_stats(r, s2), tau))


def mean_posterior(stats: MeanLeafStats, tau: float) -> tuple[float, float]:
    """Mean and variance of the Normal full conditional of a leaf value."""
    prec = 1.0 / tau**2 + stats.wsum_1
    return stats.wsum_r / prec, 1.0 / prec


def draw_mean_leaf(stats: MeanLeafStats, tau: float, rng) -> float:
    """Draw a leaf value from its Normal full conditional.

    An empty leaf (``count == 0``, zero sums) draws from the prior ``N(0, tau^2)``.
    """
    return float(_mean_draw(stats.wsum_r, stats.wsum_1, tau, rng))


def mean_residuals(state, j: int) -> np.ndarray:
    """Partial residuals ``y - sum_{q != j} g_q(x)`` for mean tree ``j``.

    Obtained from the cached total fit by adding tree ``j`` back in.
    """
    g = state.mean_param[j][state.mean_leaf[j]]
    return state.y - state.fhat + g
