"""Node math for the product-of-trees variance component.

With the mean fit and the other variance trees held fixed, rows in a
variance leaf contribute the normalised squared residuals
``e2[i] = (y[i] - f(x[i]))**2 / s2_minus[i]`` and the leaf value ``s2`` has a
scaled inverse chi-squared prior ``chi^-2(nu', lambda')``, i.e. the law of
``nu' lambda' / X`` with ``X ~ chi^2_{nu'}``; its mean is
``nu' lambda' / (nu' - 2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

__all__ = [
    "VarLeafStats",
    "var_stats",
    "var_complement",
    "var_log_marginal",
    "var_log_marginal_full",
    "var_posterior",
    "draw_var_leaf",
    "draw_sigma_homoscedastic",
]


@dataclass(frozen=True)
class VarLeafStats:
    sum_e2: float
    count: int


def var_stats(e2) -> VarLeafStats:
    e2 = np.asarray(e2, dtype=float)
    return VarLeafStats(float(np.sum(e2)), int(e2.size))


@njit(cache=True, nogil=True)
def _var_logml(sum_e2, count, nu, lam):
    if count == 0:
        return 0.0
    a = 0.5 * (nu + count)
    return (math.lgamma(a) - math.lgamma(0.5 * nu) + 0.5 * nu * math.log(0.5 * nu * lam)
            - a * math.log(0.5 * (nu * lam + sum_e2)))


@njit(cache=True, nogil=True)
def _scaled_inv_chi2(df, ss, rng):
    # ss = df * scale; draw ss / chi2_df
    return ss / (2.0 * rng.standard_gamma(0.5 * df))


@njit(cache=True, nogil=True)
def _var_draw(sum_e2, count, nu, lam, rng):
    return _scaled_inv_chi2(nu + count, nu * lam + sum_e2, rng)


def var_log_marginal(stats: VarLeafStats, nu_p: float, lambda_p: float) -> float:
    """Log of the leaf likelihood with ``s2`` integrated out, up to row terms.

    ``lgamma((nu+n)/2) - lgamma(nu/2) + (nu/2) log(nu lam / 2)
    - ((nu+n)/2) log((nu lam + sum_e2) / 2)``.  The dropped factor
    ``(2 pi)^(-n/2) prod s_minus^-1`` is fixed by the rows alone.  Zero rows give 0.
    """
    if not math.isfinite(stats.sum_e2):
        raise ValueError("non-finite sum_e2")
    if nu_p <= 0 or lambda_p <= 0:
        raise ValueError("nu' and lambda' must be positive")
    return float(_var_logml(stats.sum_e2, stats.count, nu_p, lambda_p))


def var_log_marginal_full(e, nu_p: float, lambda_p: float) -> float:
    """Exact ``log int prod N(e | 0, s2) chi^-2(s2 | nu', lambda') ds2``."""
    e = np.asarray(e, dtype=float)
    st = var_stats(e * e)
    return -0.5 * st.count * math.log(2 * math.pi) + var_log_marginal(st, nu_p, lambda_p)


def var_posterior(stats: VarLeafStats, nu_p: float, lambda_p: float) -> tuple[float, float]:
    """Degrees of freedom and scale of the ``chi^-2`` full conditional."""
    df = nu_p + stats.count
    return df, (nu_p * lambda_p + stats.sum_e2) / df


def draw_var_leaf(stats: VarLeafStats, nu_p: float, lambda_p: float, rng) -> float:
    """Draw ``s2 ~ chi^-2(nu' + n, (nu' lambda' + sum_e2) / (nu' + n))``."""
    return float(_var_draw(stats.sum_e2, stats.count, nu_p, lambda_p, rng))


def draw_sigma_homoscedastic(residuals, nu: float, lam: float, rng) -> float:
    """Draw ``sigma`` for constant-variance BART.

    ``sigma^2 ~ chi^-2(nu + n, (nu lam + sum r^2) / (nu + n))``; returns the
    standard deviation.
    """
    r = np.asarray(residuals, dtype=float)
    return math.sqrt(_var_draw(float(np.sum(r * r)), r.size, nu, lam, rng))


def var_complement(state, l: int) -> np.ndarray:
    """Product of all variance trees except ``l`` at each training row.

    Obtained by dividing the cached product by tree ``l``'s contribution.
    """
    h = state.var_param[l][state.var_leaf[l]]
    if np.any(state.s2hat <= 0) or np.any(h <= 0):
        raise FloatingPointError("non-positive variance cache entry")
    return state.s2hat / h
