"""Model checks: H-evidence intervals, predictive percentiles, e-statistic, CV over kappa.

The e-statistic here is the one-sample energy distance between the
empirical law of percentiles ``p`` and ``U(0, 1)``::

    E = 2/n sum E|p_i - U| - 1/n^2 sum_ij |p_i - p_j| - E|U - U'|

with ``E|p - U| = p^2 - p + 1/2`` and ``E|U - U'| = 1/3``.  It is not scaled
by ``n``; values are only compared with one another.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import _svg
from .data import DataSet, make_cutpoints
from .priors import default_config
from .sampler import PosteriorDraws, SamplerSettings, predict, run_chain

__all__ = [
    "HEvidence",
    "PredictivePercentiles",
    "CVResult",
    "h_evidence",
    "predictive_percentiles",
    "energy_statistic",
    "kfold_assignment",
    "cv_kappa",
    "trace_table",
    "activity_table",
    "write_hevidence",
    "write_percentiles",
    "write_cv",
    "write_trace",
    "write_activity",
]


@dataclass(frozen=True)
class HEvidence:
    """Posterior intervals for ``s(x_i)``, sorted ascending by the posterior mean ``shat``.

    ``xid`` holds the original (0-based) row index of each sorted entry.
    """

    xid: np.ndarray
    shat: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    sigma_ref: float
    gamma: float

    @property
    def excludes(self) -> np.ndarray:
        return (self.lo > self.sigma_ref) | (self.hi < self.sigma_ref)

    @property
    def exclusion_fraction(self) -> float:
        """Share of intervals that do not contain ``sigma_ref``."""
        return float(np.mean(self.excludes))


def h_evidence(draws, gamma: float = 0.9, sigma_ref: float | None = None) -> HEvidence:
    """Equal-tailed ``gamma`` intervals of ``s(x_i)`` from the kept draws.

    ``draws`` is a :class:`PosteriorDraws` or an array of ``s`` draws with
    shape (n_draws, n_points).  ``sigma_ref`` is usually the posterior mean
    of ``sigma`` from a constant-variance fit to the same data.
    """
    s = draws.s if isinstance(draws, PosteriorDraws) else np.asarray(draws, dtype=float)
    if s.ndim != 2:
        raise ValueError("s draws must be a (n_draws, n_points) matrix")
    if s.shape[0] < 20:
        raise ValueError(f"need at least 20 kept draws for interval quantiles, got {s.shape[0]}")
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    if sigma_ref is None:
        raise ValueError("sigma_ref is required")
    shat = s.mean(axis=0)
    lo, hi = np.quantile(s, [(1 - gamma) / 2, (1 + gamma) / 2], axis=0)
    # the mean can fall outside a quantile interval for strongly skewed draws
    lo, hi = np.minimum(lo, shat), np.maximum(hi, shat)
    order = np.argsort(shat, kind="stable")
    return HEvidence(order, shat[order], lo[order], hi[order], float(sigma_ref), gamma)


@dataclass(frozen=True)
class PredictivePercentiles:
    p: np.ndarray
    n_draws: int


def _midrank(samples: np.ndarray, y: np.ndarray) -> np.ndarray:
    """``(#{draws < y} + #{draws == y} / 2) / N`` column by column."""
    srt = np.sort(samples, axis=0)
    out = np.empty(y.shape[0])
    for i in range(y.shape[0]):
        below = np.searchsorted(srt[:, i], y[i], side="left")
        upto = np.searchsorted(srt[:, i], y[i], side="right")
        out[i] = (below + 0.5 * (upto - below)) / srt.shape[0]
    return out


def predictive_percentiles(draws, heldout: DataSet | np.ndarray, rng=None,
                           min_draws: int = 100) -> PredictivePercentiles:
    """Percentile of each held-out response under the posterior predictive.

    ``draws`` may be a :class:`PosteriorDraws` (recorded at ``heldout.x``,
    or holding forest snapshots) or a ready matrix of predictive samples with
    shape (N, n_heldout).  ``heldout`` may be a DataSet or a bare ``y`` vector
    when samples are given directly.
    """
    y = heldout.y if isinstance(heldout, DataSet) else np.asarray(heldout, dtype=float)
    if isinstance(draws, PosteriorDraws):
        if not isinstance(heldout, DataSet):
            raise TypeError("heldout must be a DataSet when passing PosteriorDraws")
        recorded = (draws.f.shape[1] == heldout.n and draws.eval_x.shape == heldout.x.shape
                    and np.array_equal(draws.eval_x, heldout.x))
        if not recorded and heldout.d != draws.grid.d:
            raise ValueError(f"held-out data has {heldout.d} predictors, model has {draws.grid.d}")
        samples = predict(draws, None if recorded else heldout.x, rng, mode="predictive")
    else:
        samples = np.asarray(draws, dtype=float)
    if samples.ndim != 2 or samples.shape[1] != y.shape[0]:
        raise ValueError(f"predictive samples of shape {samples.shape} do not match "
                         f"{y.shape[0]} held-out responses")
    if samples.shape[0] < min_draws:
        raise ValueError(f"need at least {min_draws} predictive draws, got {samples.shape[0]}")
    return PredictivePercentiles(_midrank(samples, y), samples.shape[0])


def energy_statistic(p) -> float:
    """One-sample energy distance from the percentiles to ``U(0, 1)``."""
    p = np.asarray(getattr(p, "p", p), dtype=float).ravel()
    n = p.size
    if n < 2:
        raise ValueError("need at least 2 percentiles")
    if np.any(~np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
        raise ValueError("percentiles must lie in [0, 1]")
    ps = np.sort(p)
    k = np.arange(n)
    # sum_ij |p_i - p_j| over sorted values = 2 sum_k p_(k) (2k - n + 1)
    pair = 2.0 * np.sum(ps * (2 * k - n + 1))
    e = 2.0 * np.mean(p * p - p + 0.5) - pair / n**2 - 1.0 / 3.0
    return float(max(e, 0.0))


# ---------------------------------------------------------------------------
# cross-validation
# ---------------------------------------------------------------------------


def kfold_assignment(n: int, k: int, seed: int) -> np.ndarray:
    """Fold label in ``0..k-1`` for each row; sizes differ by at most one."""
    if k < 2 or n < k:
        raise ValueError("need 2 <= k <= n")
    perm = np.random.default_rng(seed).permutation(n)
    fold = np.empty(n, dtype=np.int64)
    fold[perm] = np.arange(n) % k
    return fold


@dataclass
class CVResult:
    """e-statistic per (kappa, fold) cell and the kappa with the smallest median."""

    kappas: np.ndarray
    estat: np.ndarray        # (n_kappa, k)
    selected: float
    model: str

    def medians(self) -> np.ndarray:
        return np.median(self.estat, axis=1)

    def rows(self):
        for a, kap in enumerate(self.kappas):
            for f in range(self.estat.shape[1]):
                yield float(kap), f, float(self.estat[a, f])


def _cv_cell(ds, fold, f, kappa, settings, seed, model, prior_kw, max_cuts):
    train = ds.subset(np.flatnonzero(fold != f))
    test = ds.subset(np.flatnonzero(fold == f))
    kw = dict(prior_kw)
    if model == "bart":
        kw["m_prime"] = 0
    prior = default_config(train, kappa=kappa, **kw)
    grid = make_cutpoints(train, max_cuts)
    st = replace(settings, seed=seed)
    rng = np.random.default_rng(seed)
    draws = run_chain(train, grid, prior, st, eval_points=test.x, rng=rng)
    p = predictive_percentiles(draws, test, rng)
    return energy_statistic(p)


def cv_kappa(ds: DataSet, kappa_grid, k: int = 5, settings: SamplerSettings = SamplerSettings(),
             seed: int = 0, model: str = "hbart", prior_kw: dict | None = None,
             max_cuts: int = 100, n_jobs: int = 1) -> CVResult:
    """k-fold cross-validation of the held-out e-statistic over ``kappa_grid``.

    Every (kappa, fold) cell fits on the other ``k - 1`` folds with its own
    seed drawn from ``SeedSequence(seed)``; fold labels come from
    :func:`kfold_assignment` with the same ``seed``.
    """
    kappas = np.asarray(list(kappa_grid), dtype=float)
    if kappas.size == 0 or np.any(kappas <= 0):
        raise ValueError("kappa grid must be non-empty and positive")
    if k < 2:
        raise ValueError("need k >= 2 folds")
    if ds.n < 10 * k:
        raise ValueError(f"degenerate folds: need n >= {10 * k} rows for {k} folds, got {ds.n}")
    if model not in ("hbart", "bart"):
        raise ValueError("model must be 'hbart' or 'bart'")
    fold = kfold_assignment(ds.n, k, seed)
    seeds = np.random.SeedSequence(seed).generate_state(kappas.size * k)
    cells = [(a, f, int(seeds[a * k + f])) for a in range(kappas.size) for f in range(k)]

    def run(cell):
        a, f, s = cell
        return _cv_cell(ds, fold, f, kappas[a], settings, s, model, prior_kw or {}, max_cuts)

    if n_jobs > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            vals = list(pool.map(run, cells))
    else:
        vals = [run(c) for c in cells]
    est = np.array(vals).reshape(kappas.size, k)
    sel = float(kappas[int(np.argmin(np.median(est, axis=1)))])
    return CVResult(kappas, est, sel, model)


# ---------------------------------------------------------------------------
# traces and variable activity
# ---------------------------------------------------------------------------


def trace_table(draws: PosteriorDraws, n_points: int = 5):
    """Per-draw trace columns: ``sigma`` (BART) or mean ``s`` over points, then
    ``s`` at ``n_points`` evaluation points picked at evenly spaced quantiles
    of the posterior-mean ``s``.

    Returns ``(iterations, first_column, s_at_points, point_index)``.
    """
    if draws.s.shape[1] == 0:
        raise ValueError("draws carry no evaluation points")
    if draws.sigma is not None:
        first = draws.sigma
    else:
        first = draws.s.mean(axis=1)
    shat = draws.s.mean(axis=0)
    order = np.argsort(shat, kind="stable")
    qs = (np.arange(n_points) + 0.5) / n_points
    idx = order[np.minimum((qs * order.size).astype(int), order.size - 1)]
    return draws.iterations, first, draws.s[:, idx], idx


def activity_table(draws: PosteriorDraws, names=None):
    """Rows ``(name, mean_share, var_share)``: share of internal-node splits per predictor."""
    mean, var = draws.variable_activity()
    d = mean.shape[0]
    names = names or [f"x{j + 1}" for j in range(d)]
    return [(names[j], float(mean[j]), None if var is None else float(var[j])) for j in range(d)]


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------


def _r(v) -> str:
    return repr(float(v))


def write_hevidence(h: HEvidence, path, svg: bool = True):
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write("xid,shat,lo,hi,sigma_ref\n")
        for i in range(h.xid.size):
            fh.write(f"{int(h.xid[i])},{_r(h.shat[i])},{_r(h.lo[i])},{_r(h.hi[i])},"
                     f"{_r(h.sigma_ref)}\n")
    if svg:
        _svg.interval_plot(path.with_suffix(".svg"), h.lo, h.shat, h.hi, h.sigma_ref,
                           title=f"{h.gamma:g} posterior intervals for s(x)", ylabel="s(x)")


def write_percentiles(p: PredictivePercentiles, path, svg: bool = True):
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write("xid,p\n")
        for i, v in enumerate(p.p):
            fh.write(f"{i},{_r(v)}\n")
    if svg:
        _svg.qq_plot(path.with_suffix(".svg"), p.p, title="predictive qq-plot")


def write_cv(res: CVResult, path, svg: bool = True):
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write("kappa,fold,estat\n")
        for kap, f, e in res.rows():
            fh.write(f"{kap!r},{f},{e!r}\n")
    if svg:
        groups = {f"{k:g}": res.estat[a] for a, k in enumerate(res.kappas)}
        _svg.box_plot(path.with_suffix(".svg"), groups,
                      title=f"held-out e-statistic by kappa ({res.model})", ylabel="e-statistic")


def write_trace(draws: PosteriorDraws, path, n_points: int = 5, svg: bool = True):
    path = Path(path)
    iters, first, pts, _ = trace_table(draws, n_points)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(",".join(["iter", "sigma_or_sbar"] + [f"s@q{j + 1}" for j in range(n_points)])
                 + "\n")
        for r in range(iters.size):
            fh.write(",".join([str(int(iters[r])), _r(first[r])] + [_r(v) for v in pts[r]])
                     + "\n")
    if svg:
        label = "sigma" if draws.sigma is not None else "mean s(x)"
        series = {label: first}
        series.update({f"s@q{j + 1}": pts[:, j] for j in range(n_points)})
        _svg.line_plot(path.with_suffix(".svg"), iters, series, title="MCMC traces",
                       xlabel="iteration")


def write_activity(draws: PosteriorDraws, path, names=None, svg: bool = True):
    path = Path(path)
    rows = activity_table(draws, names)
    with path.open("w", encoding="utf-8") as fh:
        fh.write("variable,mean_share,var_share\n")
        for name, a, b in rows:
            fh.write(f"{name},{a!r},{'' if b is None else repr(b)}\n")
    if svg:
        series = {"mean trees": [r[1] for r in rows]}
        if rows and rows[0][2] is not None:
            series["variance trees"] = [r[2] for r in rows]
        _svg.bar_plot(path.with_suffix(".svg"), [r[0] for r in rows], series,
                      title="share of splits per variable", ylabel="proportion")
