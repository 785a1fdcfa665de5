"""Independent reference computations shared by the test modules.

Nothing here calls the package's node-marginal or prior code: the tiny
stationarity problem is solved by enumerating every admissible pair of tree
structures and integrating the leaf parameters numerically.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import gammaln

from hbart.data import DataSet, VarMeta, make_cutpoints
from hbart.priors import PriorConfig

# tiny problem: 20 rows on a regular grid, 2 cutpoints -> 3 cells of 7/6/7 rows
TINY_N = 20
TINY_STRUCTURES = {
    None: [[0, 1, 2]],
    (0, 0, None, None): [[0], [1, 2]],
    (0, 1, None, None): [[0, 1], [2]],
    (0, 0, None, (0, 1, None, None)): [[0], [1], [2]],
    (0, 1, (0, 0, None, None), None): [[0], [1], [2]],
}


def tiny_problem(seed: int = 3):
    x = (np.arange(TINY_N) + 0.5) / TINY_N
    rng = np.random.default_rng(seed)
    # weak signal so that every structure keeps visible posterior mass
    y = 0.5 * (x > 0.65) + (0.25 + 0.35 * (x < 0.34)) * rng.standard_normal(TINY_N)
    ds = DataSet(x[:, None], y, (VarMeta("continuous"),), ("x",), "y")
    grid = make_cutpoints(ds, max_cuts=2)
    prior = PriorConfig(m=1, m_prime=1, kappa=1.0, tau=1.0, nu=4.0, lam=0.1,
                        nu_prime=4.0, lambda_prime=0.1, alpha=0.95, beta=2.0,
                        alpha_prime=0.95, beta_prime=2.0)
    return ds, grid, prior


def tiny_log_tree_prior(structure, alpha, beta) -> float:
    """Depth prior times uniform rule choice, for the five admissible trees."""
    p = [alpha * (1.0 + d) ** -beta for d in range(3)]
    if structure is None:
        return math.log(1 - p[0])
    # root rule: one variable, two cuts
    lp = math.log(p[0]) + math.log(0.5)
    if structure[2] is None and structure[3] is None:
        return lp + 2 * math.log(1 - p[1])
    # one child split further with its single remaining cut, the other child stays a leaf
    return lp + math.log(1 - p[1]) + math.log(p[1]) + 2 * math.log(1 - p[2])


def _log_chi2inv_density_logscale(u, nu, lam):
    """log density of u = log s2 when s2 ~ scaled-inv-chi2(nu, lam)."""
    s2 = np.exp(u)
    a = 0.5 * nu
    return (a * math.log(a * lam) - gammaln(a) - a * u - a * lam / s2)


def tiny_posterior(ds: DataSet, grid, prior: PriorConfig, n_grid: int = 240) -> dict:
    """Exact (up to quadrature) posterior over (mean structure, variance structure)."""
    y = ds.y - ds.y.mean()
    code = grid.code(ds.x)[:, 0]
    n_c = np.array([np.sum(code == c) for c in range(3)], dtype=float)
    s1 = np.array([y[code == c].sum() for c in range(3)])
    s2 = np.array([(y[code == c] ** 2).sum() for c in range(3)])
    cellvar = np.array([y[code == c].var() for c in range(3)])
    u = np.linspace(math.log(0.01 * cellvar.min()), math.log(20 * cellvar.max()), n_grid)
    du = u[1] - u[0]
    w_trap = np.full(n_grid, du)
    w_trap[[0, -1]] *= 0.5
    lprior_u = _log_chi2inv_density_logscale(u, prior.nu_prime, prior.lambda_prime) + np.log(w_trap)
    t2 = prior.tau ** 2

    def log_lik(mean_parts, v):
        # v: list of 3 broadcastable arrays of cell variances
        out = 0.0
        for c in range(3):
            out = out - 0.5 * n_c[c] * np.log(2 * np.pi * v[c]) - 0.5 * s2[c] / v[c]
        for part in mean_parts:
            W = sum(n_c[c] / v[c] for c in part)
            R = sum(s1[c] / v[c] for c in part)
            out = out - 0.5 * np.log1p(t2 * W) + t2 * R * R / (2 * (1 + t2 * W))
        return out

    def logsumexp(a):
        mx = np.max(a)
        return mx + math.log(np.sum(np.exp(a - mx)))

    logp = {}
    for ts, mparts in TINY_STRUCTURES.items():
        for vs, vparts in TINY_STRUCTURES.items():
            K = len(vparts)
            cell_leaf = [next(k for k, part in enumerate(vparts) if c in part) for c in range(3)]
            if K == 1:
                v = [np.exp(u)] * 3
                val = logsumexp(log_lik(mparts, v) + lprior_u)
            elif K == 2:
                U = [np.exp(u)[:, None], np.exp(u)[None, :]]
                v = [U[cell_leaf[c]] for c in range(3)]
                val = logsumexp(log_lik(mparts, v) + lprior_u[:, None] + lprior_u[None, :])
            else:
                acc = []
                e = np.exp(u)
                for a in range(n_grid):
                    v = [e[a], e[:, None], e[None, :]]
                    acc.append(logsumexp(log_lik(mparts, v) + lprior_u[a]
                                         + lprior_u[:, None] + lprior_u[None, :]))
                val = logsumexp(np.array(acc))
            logp[(ts, vs)] = (val + tiny_log_tree_prior(ts, prior.alpha, prior.beta)
                              + tiny_log_tree_prior(vs, prior.alpha_prime, prior.beta_prime))
    keys = list(logp)
    lv = np.array([logp[k] for k in keys])
    pr = np.exp(lv - lv.max())
    pr /= pr.sum()
    return dict(zip(keys, pr))


def total_variation(p: dict, q: dict) -> float:
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)


def energy_two_sample(a, b) -> float:
    """Two-sample energy distance 2E|A-B| - E|A-A'| - E|B-B'| via sorted prefix sums."""
    a = np.sort(np.asarray(a, float))
    b = np.sort(np.asarray(b, float))

    def mean_abs_within(s):
        n = s.size
        k = np.arange(n)
        return 2.0 * np.sum(s * (2 * k - n + 1)) / n ** 2

    def mean_abs_between(s, t):
        # E|S - T| = sum over s of (cnt_le * s - sum_le) + (sum_gt - cnt_gt * s), / (ns nt)
        ct = np.cumsum(t)
        idx = np.searchsorted(t, s, side="right")
        sum_le = np.where(idx > 0, ct[idx - 1], 0.0)
        tot = ct[-1]
        val = idx * s - sum_le + (tot - sum_le) - (t.size - idx) * s
        return np.sum(val) / (s.size * t.size)

    return 2 * mean_abs_between(a, b) - mean_abs_within(a) - mean_abs_within(b)


def enumerate_tree_prior(xcode, ncuts, alpha, beta, min_node, max_depth) -> dict:
    """Normalised prior over every tree whose leaves hold >= ``min_node`` rows.

    Structures use the nested-tuple form ``(var, cut, left, right)`` with
    ``None`` for a leaf.  A node at depth d splits with probability
    ``alpha (1+d)^-beta``; the rule is uniform over the variables having a
    cut inside the node's box, then uniform over those cuts.
    """
    xcode = np.asarray(xcode)
    d = xcode.shape[1]

    def rec(rows, lo, hi, depth):
        p = alpha * (1.0 + depth) ** -beta
        out = [(None, math.log1p(-p))]
        if depth >= max_depth:
            return out
        avail = [v for v in range(d) if hi[v] > lo[v]]
        for v in avail:
            for k in range(lo[v], hi[v]):
                go_left = xcode[rows, v] <= k
                lrows, rrows = rows[go_left], rows[~go_left]
                if lrows.size < min_node or rrows.size < min_node:
                    continue
                base = math.log(p) - math.log(len(avail)) - math.log(hi[v] - lo[v])
                lhi = list(hi)
                lhi[v] = k
                rlo = list(lo)
                rlo[v] = k + 1
                for ls, lw in rec(lrows, lo, lhi, depth + 1):
                    for rs, rw in rec(rrows, rlo, hi, depth + 1):
                        out.append(((v, k, ls, rs), base + lw + rw))
        return out

    trees = rec(np.arange(xcode.shape[0]), [0] * d, [int(c) for c in ncuts], 0)
    lw = np.array([w for _, w in trees])
    pr = np.exp(lw - lw.max())
    pr /= pr.sum()
    return {s: float(q) for (s, _), q in zip(trees, pr)}


def mcse(x):
    """Monte Carlo standard error of the column means of ``x`` (draws in rows).

    Uses Geyer's initial positive sequence on the autocovariances.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return float(mcse(x[:, None])[0])
    n = x.shape[0]
    xc = x - x.mean(0)
    fx = np.fft.rfft(xc, 2 * n, axis=0)
    acov = np.fft.irfft(fx * np.conj(fx), axis=0)[:n] / n
    out = np.empty(x.shape[1])
    for j in range(x.shape[1]):
        g = acov[:, j]
        if g[0] == 0:
            out[j] = 0.0
            continue
        s = 0.0
        for t in range(0, n - 1, 2):
            pair = g[t] + g[t + 1]
            if pair <= 0:
                break
            s += pair
        var = max(2 * s - g[0], g[0])
        out[j] = np.sqrt(var / n)
    return out
