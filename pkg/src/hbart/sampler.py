"""Gibbs sampler over the mean and variance tree ensembles.

One sweep visits each mean tree ``j`` and performs a Metropolis-Hastings
structure move on ``T_j`` with the leaf values integrated out, then draws
the leaf values from their Normal full conditionals.  It then does the same
for every variance tree with inverse chi-squared leaves.  ``fhat`` (sum of
mean trees) and ``s2hat`` (product of variance trees) at the training rows
are cached and updated incrementally; they are rebuilt from scratch every
``refresh_every`` sweeps.

Setting ``m_prime = 0`` gives constant-variance BART: a single ``sigma^2``
is drawn after the mean block instead of the variance trees.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from numba import njit

from .data import CutpointGrid, DataSet
from .mean_model import _mean_draw, _mean_logml
from .priors import PriorConfig
from .trees import (
    BIRTH,
    DEATH,
    FREE,
    LEAF,
    PERTURB,
    DecisionTree,
    _apply_birth,
    _apply_death,
    _assign,
    _propose_birth,
    _propose_death,
    _propose_perturb,
    _reset,
)
from .variance_model import _var_draw, _var_logml

__all__ = [
    "SamplerSettings",
    "ChainState",
    "CompactForest",
    "PosteriorDraws",
    "gibbs_iteration",
    "run_chain",
    "run_chains",
    "predict",
    "draws_at",
    "write_snapshot",
    "read_snapshot",
    "write_draws_csv",
    "MOVE_NAMES",
    "InvariantError",
]

MOVE_NAMES = ("birth", "death", "perturb")
MEAN, VAR = 0, 1


class InvariantError(FloatingPointError):
    """A chain cache broke its invariants.  ``dump`` holds the offending state arrays."""

    def __init__(self, msg, dump):
        super().__init__(msg)
        self.dump = dump


@dataclass(frozen=True)
class SamplerSettings:
    """MCMC run controls.

    ``n_iter`` counts all sweeps including the ``burn_in`` ones; every
    ``thin``-th sweep after burn-in is kept.  ``snapshot_every = k > 0``
    stores the full forests at every ``k``-th kept sweep, which
    :func:`predict` needs for new inputs.
    """

    n_iter: int = 3000
    burn_in: int = 1000
    thin: int = 1
    seed: int = 0
    move_probs: tuple = (0.4, 0.4, 0.2)
    min_node_size: int = 5
    max_depth: int = 15
    refresh_every: int = 100
    mean_moves: bool = True
    var_moves: bool = True
    variance_first: bool = False
    reverse_order: bool = False
    snapshot_every: int = 0

    def __post_init__(self):
        if not 0 <= self.burn_in < self.n_iter:
            raise ValueError("need 0 <= burn_in < n_iter")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.min_node_size < 1:
            raise ValueError("min_node_size must be >= 1")
        p = np.asarray(self.move_probs, dtype=float)
        if p.shape != (3,) or np.any(p < 0) or p[0] <= 0:
            raise ValueError("move_probs must be three non-negative weights with birth > 0")
        if (p[0] > 0) != (p[1] > 0):
            raise ValueError("birth and death must both be enabled")

    @property
    def n_kept(self) -> int:
        return len(range(self.burn_in, self.n_iter, self.thin))


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def _node_logml(kind, sa, sb, cnt, h1, h2):
    if kind == MEAN:
        return _mean_logml(sa, sb, h1)
    return _var_logml(sa, cnt, h1, h2)


@njit(cache=True, nogil=True)
def _accept(rng, logr):
    if logr >= 0.0:
        return True
    return math.log(rng.random()) < logr


@njit(cache=True, nogil=True)
def _tree_mh(kind, var, cut, left, right, parent, depth, param, leaf_of, xcode, ncuts,
             a, b, h1, h2, alpha, beta, pmove, min_node, max_depth, rng, counts,
             member, newleaf, mn, mx, lo, hi, stack, sa, sb, sc, sa2, sb2, sc2):
    """One structure move on a single tree.  ``counts[move] += (proposed, accepted, unusable)``.

    ``a``/``b`` are the per-row sufficient statistics of the node marginal.
    For variance trees the full marginal also carries a factor
    ``prod (2 pi s2_minus[i])^-1/2`` over the rows of the node; every move
    reassigns a fixed set of rows among leaves with ``s2_minus`` held fixed,
    so the factor is identical in numerator and denominator and is dropped.
    """
    n = leaf_of.shape[0]
    if var[0] == LEAF:
        move = BIRTH
    else:
        tot = pmove[0] + pmove[1] + pmove[2]
        u = rng.random() * tot
        if u < pmove[0]:
            move = BIRTH
        elif u < pmove[0] + pmove[1]:
            move = DEATH
        else:
            move = PERTURB
    counts[move, 0] += 1

    if move == BIRTH:
        ok, node, v, k, lq, lp = _propose_birth(
            var, cut, left, right, parent, depth, leaf_of, xcode, ncuts,
            alpha, beta, pmove, max_depth, rng, member, mn, mx, lo, hi)
        if not ok:
            counts[move, 2] += 1
            return
        saL = sbL = saR = sbR = 0.0
        nL = nR = 0
        for i in range(n):
            if member[i]:
                if xcode[i, v] <= k:
                    saL += a[i]
                    sbL += b[i]
                    nL += 1
                else:
                    saR += a[i]
                    sbR += b[i]
                    nR += 1
        if nL < min_node or nR < min_node:
            counts[move, 2] += 1
            return
        dl = (_node_logml(kind, saL, sbL, nL, h1, h2) + _node_logml(kind, saR, sbR, nR, h1, h2)
              - _node_logml(kind, saL + saR, sbL + sbR, nL + nR, h1, h2))
        if _accept(rng, dl + lp + lq):
            lnode, rnode = _apply_birth(var, cut, left, right, parent, depth, param, node, v, k)
            if lnode < 0:
                counts[move, 2] += 1
                return
            for i in range(n):
                if member[i]:
                    leaf_of[i] = lnode if xcode[i, v] <= k else rnode
            counts[move, 1] += 1

    elif move == DEATH:
        ok, node, v, k, lq, lp = _propose_death(
            var, cut, left, right, parent, depth, leaf_of, xcode, ncuts,
            alpha, beta, pmove, rng, member, mn, mx, lo, hi)
        if not ok:
            counts[move, 2] += 1
            return
        lnode = left[node]
        saL = sbL = saR = sbR = 0.0
        nL = nR = 0
        for i in range(n):
            if member[i]:
                if leaf_of[i] == lnode:
                    saL += a[i]
                    sbL += b[i]
                    nL += 1
                else:
                    saR += a[i]
                    sbR += b[i]
                    nR += 1
        dl = (_node_logml(kind, saL + saR, sbL + sbR, nL + nR, h1, h2)
              - _node_logml(kind, saL, sbL, nL, h1, h2) - _node_logml(kind, saR, sbR, nR, h1, h2))
        if _accept(rng, dl + lp + lq):
            for i in range(n):
                if member[i]:
                    leaf_of[i] = node
            _apply_death(var, cut, left, right, parent, depth, param, node)
            counts[move, 1] += 1

    else:
        ok, node, v, k, lp = _propose_perturb(
            var, cut, left, right, parent, leaf_of, xcode, ncuts, rng,
            member, mn, mx, lo, hi, stack)
        if not ok:
            counts[move, 2] += 1
            return
        ov = var[node]
        oc = cut[node]
        # leaves below node keep their ids; only the routing changes
        top = 0
        stack[top] = node
        top += 1
        while top > 0:
            top -= 1
            q = stack[top]
            if var[q] >= 0:
                stack[top] = left[q]
                stack[top + 1] = right[q]
                top += 2
            else:
                sa[q] = 0.0
                sb[q] = 0.0
                sc[q] = 0
                sa2[q] = 0.0
                sb2[q] = 0.0
                sc2[q] = 0
        var[node] = v
        cut[node] = k
        for i in range(n):
            if member[i]:
                q = leaf_of[i]
                sa[q] += a[i]
                sb[q] += b[i]
                sc[q] += 1
                p = node
                while var[p] >= 0:
                    if xcode[i, var[p]] <= cut[p]:
                        p = left[p]
                    else:
                        p = right[p]
                newleaf[i] = p
                sa2[p] += a[i]
                sb2[p] += b[i]
                sc2[p] += 1
        dl = 0.0
        valid = True
        top = 0
        stack[top] = node
        top += 1
        while top > 0:
            top -= 1
            q = stack[top]
            if var[q] >= 0:
                stack[top] = left[q]
                stack[top + 1] = right[q]
                top += 2
            else:
                if sc2[q] < min_node:
                    valid = False
                dl += (_node_logml(kind, sa2[q], sb2[q], sc2[q], h1, h2)
                       - _node_logml(kind, sa[q], sb[q], sc[q], h1, h2))
        if not valid:
            var[node] = ov
            cut[node] = oc
            counts[move, 2] += 1
            return
        if _accept(rng, dl + lp):
            for i in range(n):
                if member[i]:
                    leaf_of[i] = newleaf[i]
            counts[move, 1] += 1
        else:
            var[node] = ov
            cut[node] = oc


@njit(cache=True, nogil=True)
def _draw_leaves(kind, var, param, leaf_of, a, b, h1, h2, rng, sa, sb, sc):
    C = var.shape[0]
    for q in range(C):
        sa[q] = 0.0
        sb[q] = 0.0
        sc[q] = 0
    for i in range(leaf_of.shape[0]):
        q = leaf_of[i]
        sa[q] += a[i]
        sb[q] += b[i]
        sc[q] += 1
    for q in range(C):
        if var[q] == LEAF:
            if kind == MEAN:
                param[q] = _mean_draw(sa[q], sb[q], h1, rng)
            else:
                param[q] = _var_draw(sa[q], sc[q], h1, h2, rng)


@njit(cache=True, nogil=True)
def _sweep(y, xcode, ncuts,
           mvar, mcut, mleft, mright, mparent, mdepth, mparam, mleaf,
           vvar, vcut, vleft, vright, vparent, vdepth, vparam, vleaf,
           fhat, s2hat, sigma2,
           tau, nu, lam, nu_p, lam_p, alpha, beta, alpha_p, beta_p,
           pmove, min_node, max_depth, mean_moves, var_moves, variance_first, homo,
           mean_order, var_order, rng, counts):
    """One full sweep.  Returns 0, or 1 if a variance cache entry went non-positive."""
    n = y.shape[0]
    d = xcode.shape[1]
    C = mvar.shape[1]
    a = np.empty(n)
    b = np.empty(n)
    old = np.empty(n)
    member = np.zeros(n, dtype=np.bool_)
    newleaf = np.zeros(n, dtype=np.int32)
    mn = np.zeros(d, dtype=np.int32)
    mx = np.zeros(d, dtype=np.int32)
    lo = np.zeros(d, dtype=np.int32)
    hi = np.zeros(d, dtype=np.int32)
    stack = np.zeros(C + 2, dtype=np.int32)
    sa = np.zeros(C)
    sb = np.zeros(C)
    sc = np.zeros(C, dtype=np.int64)
    sa2 = np.zeros(C)
    sb2 = np.zeros(C)
    sc2 = np.zeros(C, dtype=np.int64)

    for block in range(2):
        do_mean = (block == 0) != variance_first
        if do_mean:
            for jj in range(mean_order.shape[0]):
                j = mean_order[jj]
                for i in range(n):
                    g = mparam[j, mleaf[j, i]]
                    old[i] = g
                    w = 1.0 / s2hat[i]
                    a[i] = (y[i] - fhat[i] + g) * w
                    b[i] = w
                if mean_moves:
                    _tree_mh(MEAN, mvar[j], mcut[j], mleft[j], mright[j], mparent[j], mdepth[j],
                             mparam[j], mleaf[j], xcode, ncuts, a, b, tau, 0.0, alpha, beta,
                             pmove, min_node, max_depth, rng, counts[MEAN],
                             member, newleaf, mn, mx, lo, hi, stack, sa, sb, sc, sa2, sb2, sc2)
                _draw_leaves(MEAN, mvar[j], mparam[j], mleaf[j], a, b, tau, 0.0, rng, sa, sb, sc)
                for i in range(n):
                    fhat[i] += mparam[j, mleaf[j, i]] - old[i]
            if homo:
                sse = 0.0
                for i in range(n):
                    e = y[i] - fhat[i]
                    sse += e * e
                sigma2[0] = _var_draw(sse, n, nu, lam, rng)
                for i in range(n):
                    s2hat[i] = sigma2[0]
        else:
            for ll in range(var_order.shape[0]):
                l = var_order[ll]
                for i in range(n):
                    h = vparam[l, vleaf[l, i]]
                    old[i] = s2hat[i] / h
                    e = y[i] - fhat[i]
                    a[i] = e * e / old[i]
                    b[i] = 1.0
                if var_moves:
                    _tree_mh(VAR, vvar[l], vcut[l], vleft[l], vright[l], vparent[l], vdepth[l],
                             vparam[l], vleaf[l], xcode, ncuts, a, b, nu_p, lam_p, alpha_p, beta_p,
                             pmove, min_node, max_depth, rng, counts[VAR],
                             member, newleaf, mn, mx, lo, hi, stack, sa, sb, sc, sa2, sb2, sc2)
                _draw_leaves(VAR, vvar[l], vparam[l], vleaf[l], a, b, nu_p, lam_p, rng, sa, sb, sc)
                for i in range(n):
                    s2hat[i] = old[i] * vparam[l, vleaf[l, i]]
                    if not s2hat[i] > 0.0:
                        return 1
    return 0


@njit(cache=True, nogil=True)
def _refresh(mparam, mleaf, vparam, vleaf, fhat, s2hat, sigma2, homo):
    n = fhat.shape[0]
    for i in range(n):
        f = 0.0
        for j in range(mparam.shape[0]):
            f += mparam[j, mleaf[j, i]]
        fhat[i] = f
        if homo:
            s2hat[i] = sigma2[0]
        else:
            s = 1.0
            for l in range(vparam.shape[0]):
                s *= vparam[l, vleaf[l, i]]
            s2hat[i] = s


@njit(cache=True, nogil=True)
def _forest_eval(var, cut, left, right, param, xcode, product, out):
    """Sum (or product) over trees of the leaf parameter reached by each row."""
    for i in range(xcode.shape[0]):
        acc = 1.0 if product else 0.0
        for t in range(var.shape[0]):
            node = 0
            while var[t, node] >= 0:
                if xcode[i, var[t, node]] <= cut[t, node]:
                    node = left[t, node]
                else:
                    node = right[t, node]
            if product:
                acc *= param[t, node]
            else:
                acc += param[t, node]
        out[i] = acc


@njit(cache=True, nogil=True)
def _split_counts(var, out):
    for t in range(var.shape[0]):
        for k in range(var.shape[1]):
            if var[t, k] >= 0:
                out[var[t, k]] += 1


@njit(cache=True, nogil=True)
def _compact(var, cut, left, right, param, ovar, ocut, oleft, oright, oparam, offsets):
    """Pack the used nodes of every tree contiguously in pre-order."""
    stack = np.empty(var.shape[1] + 2, dtype=np.int32)
    newid = np.empty(var.shape[1], dtype=np.int32)
    pos = 0
    for t in range(var.shape[0]):
        offsets[t] = pos
        base = pos
        top = 0
        stack[top] = 0
        top += 1
        while top > 0:
            top -= 1
            k = stack[top]
            newid[k] = pos - base
            ovar[pos] = var[t, k]
            ocut[pos] = cut[t, k]
            oparam[pos] = param[t, k] if var[t, k] == LEAF else 0.0
            pos += 1
            if var[t, k] >= 0:
                stack[top] = right[t, k]
                stack[top + 1] = left[t, k]
                top += 2
        for q in range(base, pos):
            oleft[q] = -1
            oright[q] = -1
        # second pass: children ids in the packed numbering
        top = 0
        stack[top] = 0
        top += 1
        while top > 0:
            top -= 1
            k = stack[top]
            if var[t, k] >= 0:
                oleft[base + newid[k]] = newid[left[t, k]]
                oright[base + newid[k]] = newid[right[t, k]]
                stack[top] = right[t, k]
                stack[top + 1] = left[t, k]
                top += 2
    offsets[var.shape[0]] = pos


@njit(cache=True, nogil=True)
def _compact_eval(var, cut, left, right, param, offsets, xcode, product, out):
    for i in range(xcode.shape[0]):
        acc = 1.0 if product else 0.0
        for t in range(offsets.shape[0] - 1):
            base = offsets[t]
            node = 0
            while var[base + node] >= 0:
                if xcode[i, var[base + node]] <= cut[base + node]:
                    node = left[base + node]
                else:
                    node = right[base + node]
            if product:
                acc *= param[base + node]
            else:
                acc += param[base + node]
        out[i] = acc


# ---------------------------------------------------------------------------
# state
# ---------------------------------------------------------------------------


def _capacity(n: int, min_node: int, max_depth: int) -> int:
    return int(min(2 * max(n // min_node, 1) + 1, 2 ** (max_depth + 1) - 1))


class ChainState:
    """Forests, caches and random stream of one Markov chain.

    Tree ``j`` of the mean ensemble occupies row ``j`` of the ``mean_*``
    arrays; ``mean_leaf[j, i]`` is the leaf that training row ``i`` reaches.
    ``y`` is the centred response (``offset`` holds the removed mean).
    """

    def __init__(self, ds: DataSet, grid: CutpointGrid, prior: PriorConfig,
                 settings: SamplerSettings = SamplerSettings(), rng=None):
        self.ds = ds
        self.grid = grid
        self.prior = prior
        self.settings = settings
        self.rng = np.random.default_rng(settings.seed) if rng is None else rng
        self.offset = float(np.mean(ds.y))
        self.y = np.ascontiguousarray(ds.y - self.offset)
        self.xcode = grid.code(ds.x)
        self.ncuts = grid.sizes.astype(np.int32)
        n = ds.n
        cap = _capacity(n, settings.min_node_size, settings.max_depth)
        m, mp = prior.m, prior.m_prime
        self.homoscedastic = mp == 0

        def forest(k, value):
            arrs = [np.empty((k, cap), dtype=np.int32) for _ in range(6)]
            arrs.append(np.empty((k, cap), dtype=np.float64))
            for t in range(k):
                _reset(*(a[t] for a in arrs), value)
            return arrs, np.zeros((k, n), dtype=np.int32)

        (self.mean_var, self.mean_cut, self.mean_left, self.mean_right, self.mean_parent,
         self.mean_depth, self.mean_param), self.mean_leaf = forest(m, 0.0)
        (self.var_var, self.var_cut, self.var_left, self.var_right, self.var_parent,
         self.var_depth, self.var_param), self.var_leaf = forest(mp, prior.lambda_prime)
        self.sigma2 = np.array([prior.lam])
        self.fhat = np.zeros(n)
        self.s2hat = np.ones(n)
        self.counts = np.zeros((2, 3, 3), dtype=np.int64)
        self.iteration = 0
        self.refresh()

    def _tree_arrays(self, prefix, t):
        return tuple(getattr(self, f"{prefix}_{f}")[t] for f in DecisionTree._fields)

    def mean_tree(self, j: int) -> DecisionTree:
        """Live view of mean tree ``j`` (edits write through)."""
        return DecisionTree(arrays=self._tree_arrays("mean", j))

    def var_tree(self, l: int) -> DecisionTree:
        return DecisionTree(arrays=self._tree_arrays("var", l))

    def refresh(self):
        """Rebuild leaf assignments and both caches from the trees."""
        for t in range(self.prior.m):
            _assign(self.mean_var[t], self.mean_cut[t], self.mean_left[t],
                    self.mean_right[t], self.xcode, self.mean_leaf[t])
        for t in range(self.prior.m_prime):
            _assign(self.var_var[t], self.var_cut[t], self.var_left[t],
                    self.var_right[t], self.xcode, self.var_leaf[t])
        _refresh(self.mean_param, self.mean_leaf, self.var_param, self.var_leaf,
                 self.fhat, self.s2hat, self.sigma2, self.homoscedastic)
        if not np.all(self.s2hat > 0):
            raise InvariantError(f"non-positive variance at iteration {self.iteration}",
                                 {"iteration": self.iteration, "s2hat": self.s2hat.copy()})

    @property
    def sigma(self) -> float:
        return float(math.sqrt(self.sigma2[0]))

    def acceptance(self) -> dict:
        """Per ensemble and move: proposed, accepted, unusable counts and rate."""
        out = {}
        names = ("mean", "var")
        for e in range(2):
            for mv in range(3):
                p, a, u = (int(c) for c in self.counts[e, mv])
                out[f"{names[e]}.{MOVE_NAMES[mv]}"] = {
                    "proposed": p, "accepted": a, "unusable": u,
                    "rate": a / p if p else float("nan")}
        return out

    def evaluate(self, xcode) -> tuple[np.ndarray, np.ndarray]:
        """Current ``f`` (response units) and ``s`` at integer-coded rows."""
        f = np.empty(xcode.shape[0])
        _forest_eval(self.mean_var, self.mean_cut, self.mean_left, self.mean_right,
                     self.mean_param, xcode, False, f)
        f += self.offset
        if self.homoscedastic:
            return f, np.full(xcode.shape[0], self.sigma)
        s2 = np.empty(xcode.shape[0])
        _forest_eval(self.var_var, self.var_cut, self.var_left, self.var_right,
                     self.var_param, xcode, True, s2)
        return f, np.sqrt(s2)


def gibbs_iteration(state: ChainState) -> ChainState:
    """Advance ``state`` by one full sweep over both ensembles (in place)."""
    st, pr = state.settings, state.prior
    mean_order = np.arange(pr.m, dtype=np.int64)
    var_order = np.arange(pr.m_prime, dtype=np.int64)
    if st.reverse_order:
        mean_order, var_order = mean_order[::-1].copy(), var_order[::-1].copy()
    code = _sweep(state.y, state.xcode, state.ncuts,
                  state.mean_var, state.mean_cut, state.mean_left, state.mean_right,
                  state.mean_parent, state.mean_depth, state.mean_param, state.mean_leaf,
                  state.var_var, state.var_cut, state.var_left, state.var_right,
                  state.var_parent, state.var_depth, state.var_param, state.var_leaf,
                  state.fhat, state.s2hat, state.sigma2,
                  pr.tau, pr.nu, pr.lam, pr.nu_prime, pr.lambda_prime,
                  pr.alpha, pr.beta, pr.alpha_prime, pr.beta_prime,
                  np.asarray(st.move_probs, dtype=float), st.min_node_size, st.max_depth,
                  st.mean_moves, st.var_moves, st.variance_first, state.homoscedastic,
                  mean_order, var_order, state.rng, state.counts)
    if code != 0:
        dump = {"iteration": state.iteration, "fhat": state.fhat.copy(),
                "s2hat": state.s2hat.copy(), "var_param": state.var_param.copy(),
                "var_leaf": state.var_leaf.copy()}
        raise InvariantError(
            f"non-positive variance cache at iteration {state.iteration}; "
            f"s2hat range [{state.s2hat.min()!r}, {state.s2hat.max()!r}]", dump)
    state.iteration += 1
    if st.refresh_every and state.iteration % st.refresh_every == 0:
        state.refresh()
    return state


# ---------------------------------------------------------------------------
# draws
# ---------------------------------------------------------------------------


@dataclass
class CompactForest:
    """Trees of one ensemble packed end to end in pre-order."""

    var: np.ndarray
    cut: np.ndarray
    left: np.ndarray
    right: np.ndarray
    param: np.ndarray
    offsets: np.ndarray

    @classmethod
    def pack(cls, var, cut, left, right, param) -> "CompactForest":
        total = int(np.sum(var != FREE))
        out = cls(np.empty(total, np.int32), np.empty(total, np.int32),
                  np.empty(total, np.int32), np.empty(total, np.int32),
                  np.empty(total, np.float64), np.empty(var.shape[0] + 1, np.int64))
        _compact(var, cut, left, right, param, out.var, out.cut, out.left, out.right,
                 out.param, out.offsets)
        return out

    @property
    def n_trees(self) -> int:
        return self.offsets.shape[0] - 1

    def evaluate(self, xcode, product: bool) -> np.ndarray:
        out = np.empty(xcode.shape[0])
        _compact_eval(self.var, self.cut, self.left, self.right, self.param, self.offsets,
                      xcode, product, out)
        return out

    def tree(self, t: int) -> DecisionTree:
        lo, hi = int(self.offsets[t]), int(self.offsets[t + 1])
        lines = []
        parent = {}
        for q in range(hi - lo):
            if self.var[lo + q] >= 0:
                parent[int(self.left[lo + q])] = q
                parent[int(self.right[lo + q])] = q
        for q in range(hi - lo):
            p = "-" if q == 0 else str(parent[q])
            if self.var[lo + q] >= 0:
                lines.append(f"{q} {p} I {int(self.var[lo + q])} {int(self.cut[lo + q])} -")
            else:
                lines.append(f"{q} {p} L - - {float(self.param[lo + q])!r}")
        return DecisionTree.from_lines(lines)

    @classmethod
    def from_trees(cls, trees) -> "CompactForest":
        cap = max((t.capacity for t in trees), default=1)
        k = len(trees)
        arrs = [np.full((k, cap), FREE if i == 0 else -1, dtype=np.int32) for i in range(4)]
        param = np.zeros((k, cap))
        for t, tree in enumerate(trees):
            c = tree.capacity
            for a, src in zip(arrs, (tree.var, tree.cut, tree.left, tree.right)):
                a[t, :c] = src
            param[t, :c] = tree.param
        return cls.pack(*arrs, param)


@dataclass
class Snapshot:
    iteration: int
    mean: CompactForest
    var: CompactForest | None
    sigma: float | None


@dataclass
class PosteriorDraws:
    """Kept posterior draws of ``f`` and ``s`` at the evaluation points.

    ``f`` and ``s`` have shape (n_kept, n_points) in response units; ``sigma``
    holds the constant-variance draws in BART mode.  ``split_counts_*`` add up
    internal-node split variables over all kept draws.
    """

    f: np.ndarray
    s: np.ndarray
    iterations: np.ndarray
    eval_x: np.ndarray
    prior: PriorConfig
    settings: SamplerSettings
    grid: CutpointGrid
    offset: float
    sigma: np.ndarray | None = None
    acceptance: dict = field(default_factory=dict)
    split_counts_mean: np.ndarray | None = None
    split_counts_var: np.ndarray | None = None
    snapshots: list = field(default_factory=list)

    @property
    def n_draws(self) -> int:
        return self.f.shape[0]

    @property
    def heteroscedastic(self) -> bool:
        return self.prior.m_prime > 0

    @classmethod
    def pool(cls, chains: list["PosteriorDraws"]) -> "PosteriorDraws":
        """Concatenate independent chains run on the same data and settings."""
        if len(chains) == 1:
            return chains[0]
        first = chains[0]
        acc = {}
        for key in first.acceptance:
            tot = {c: sum(ch.acceptance[key][c] for ch in chains)
                   for c in ("proposed", "accepted", "unusable")}
            tot["rate"] = tot["accepted"] / tot["proposed"] if tot["proposed"] else float("nan")
            acc[key] = tot

        def cat(name):
            parts = [getattr(ch, name) for ch in chains]
            return None if parts[0] is None else np.concatenate(parts)

        def add(name):
            parts = [getattr(ch, name) for ch in chains]
            return None if parts[0] is None else np.sum(parts, axis=0)

        return replace(first, f=cat("f"), s=cat("s"), iterations=cat("iterations"),
                       sigma=cat("sigma"), acceptance=acc,
                       split_counts_mean=add("split_counts_mean"),
                       split_counts_var=add("split_counts_var"),
                       snapshots=[sn for ch in chains for sn in ch.snapshots])

    def variable_activity(self) -> tuple[np.ndarray, np.ndarray | None]:
        """Share of internal-node splits on each predictor, mean and variance ensembles."""
        def share(c):
            if c is None:
                return None
            tot = c.sum()
            return c / tot if tot else np.zeros_like(c, dtype=float)
        return share(self.split_counts_mean), share(self.split_counts_var)


def _kept(settings: SamplerSettings, it: int) -> bool:
    return it >= settings.burn_in and (it - settings.burn_in) % settings.thin == 0


def run_chain(ds: DataSet, grid: CutpointGrid, prior: PriorConfig,
              settings: SamplerSettings = SamplerSettings(), eval_points=None,
              rng=None, callback=None) -> PosteriorDraws:
    """Run one chain and record ``f`` and ``s`` at ``eval_points`` (default: training x).

    ``callback(state)`` is called after every sweep, if given.
    """
    eval_x = ds.x if eval_points is None else np.atleast_2d(np.asarray(eval_points, float))
    xcode_eval = grid.code(eval_x)
    state = ChainState(ds, grid, prior, settings, rng=rng)
    k = settings.n_kept
    f = np.empty((k, eval_x.shape[0]))
    s = np.empty((k, eval_x.shape[0]))
    iters = np.empty(k, dtype=np.int64)
    sig = np.empty(k) if state.homoscedastic else None
    cm = np.zeros(ds.d, dtype=np.int64)
    cv = np.zeros(ds.d, dtype=np.int64) if not state.homoscedastic else None
    snaps = []
    row = 0
    for it in range(settings.n_iter):
        gibbs_iteration(state)
        if callback is not None:
            callback(state)
        if not _kept(settings, it):
            continue
        f[row], s[row] = state.evaluate(xcode_eval)
        iters[row] = it
        if sig is not None:
            sig[row] = state.sigma
        _split_counts(state.mean_var, cm)
        if cv is not None:
            _split_counts(state.var_var, cv)
        if settings.snapshot_every and row % settings.snapshot_every == 0:
            snaps.append(_snapshot(state, it))
        row += 1
    return PosteriorDraws(f=f, s=s, iterations=iters, eval_x=eval_x, prior=prior,
                          settings=settings, grid=grid, offset=state.offset, sigma=sig,
                          acceptance=state.acceptance(), split_counts_mean=cm,
                          split_counts_var=cv, snapshots=snaps)


def _snapshot(state: ChainState, it: int) -> Snapshot:
    mean = CompactForest.pack(state.mean_var, state.mean_cut, state.mean_left,
                              state.mean_right, state.mean_param)
    var = None
    if not state.homoscedastic:
        var = CompactForest.pack(state.var_var, state.var_cut, state.var_left,
                                 state.var_right, state.var_param)
    return Snapshot(it, mean, var, state.sigma if state.homoscedastic else None)


def run_chains(ds, grid, prior, settings: SamplerSettings, n_chains: int,
               eval_points=None, n_jobs: int = 1) -> list[PosteriorDraws]:
    """Independent chains with seeds spawned from ``settings.seed``."""
    seeds = np.random.SeedSequence(settings.seed).spawn(n_chains)

    def one(ss):
        return run_chain(ds, grid, prior, settings, eval_points,
                         rng=np.random.default_rng(ss))

    if n_jobs <= 1:
        return [one(ss) for ss in seeds]
    with ThreadPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(one, seeds))


# ---------------------------------------------------------------------------
# prediction
# ---------------------------------------------------------------------------


def draws_at(draws: PosteriorDraws, x_new):
    """``(f, s)`` draws at ``x_new``, or at the recorded points when ``x_new`` is None."""
    if x_new is None:
        return draws.f, draws.s
    if not draws.snapshots:
        raise ValueError("no forest snapshots stored; rerun with snapshot_every > 0")
    x_new = np.atleast_2d(np.asarray(x_new, dtype=float))
    if x_new.shape[1] != draws.grid.d:
        raise ValueError(f"x_new has {x_new.shape[1]} columns, expected {draws.grid.d}")
    xcode = draws.grid.code(x_new)
    k = len(draws.snapshots)
    f = np.empty((k, x_new.shape[0]))
    s = np.empty((k, x_new.shape[0]))
    for r, snap in enumerate(draws.snapshots):
        f[r] = snap.mean.evaluate(xcode, False) + draws.offset
        if snap.var is None:
            s[r] = snap.sigma
        else:
            s[r] = np.sqrt(snap.var.evaluate(xcode, True))
    return f, s


def predict(draws: PosteriorDraws, x_new=None, rng=None, mode: str = "mean_sd",
            level: float = 0.95):
    """Posterior summaries or predictive samples.

    Parameters
    ----------
    x_new : array-like, optional
        New inputs.  ``None`` uses the evaluation points recorded during the
        run; otherwise the stored forest snapshots are evaluated.
    mode : {"mean_sd", "predictive", "plugin"}
        ``mean_sd`` returns a dict of posterior means and equal-tailed
        ``level`` intervals for ``f`` and ``s``.  ``predictive`` returns one
        ``y = f_j + s_j z_j`` per kept draw (shape (n_draws, n_points)).
        ``plugin`` returns the same number of draws from
        ``N(mean f, (mean s)^2)``.
    """
    f, s = draws_at(draws, x_new)
    if mode == "mean_sd":
        q = [(1 - level) / 2, (1 + level) / 2]
        flo, fhi = np.quantile(f, q, axis=0)
        slo, shi = np.quantile(s, q, axis=0)
        return {"f_mean": f.mean(0), "f_lo": flo, "f_hi": fhi,
                "s_mean": s.mean(0), "s_lo": slo, "s_hi": shi}
    rng = np.random.default_rng() if rng is None else rng
    z = rng.standard_normal(f.shape)
    if mode == "predictive":
        return f + s * z
    if mode == "plugin":
        return f.mean(0) + s.mean(0) * z
    raise ValueError(f"unknown mode {mode!r}")


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------


def write_draws_csv(draws: PosteriorDraws, path) -> None:
    """One row per kept draw: ``iter, f@p1..f@pk, s@p1..s@pk``."""
    k = draws.f.shape[1]
    header = ["iter"] + [f"f@p{i + 1}" for i in range(k)] + [f"s@p{i + 1}" for i in range(k)]
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for r in range(draws.n_draws):
            vals = [str(int(draws.iterations[r]))]
            vals += [repr(float(v)) for v in draws.f[r]]
            vals += [repr(float(v)) for v in draws.s[r]]
            fh.write(",".join(vals) + "\n")


def read_draws_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inverse of :func:`write_draws_csv`: ``(iterations, f, s)``."""
    arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    k = (arr.shape[1] - 1) // 2
    return arr[:, 0].astype(np.int64), arr[:, 1:1 + k], arr[:, 1 + k:]


def _forest_lines(label, cf: CompactForest):
    out = []
    for t in range(cf.n_trees):
        out.append(f"{label} {t}")
        out.extend(cf.tree(t).to_lines())
    return out


def write_snapshot(draws: PosteriorDraws, path) -> None:
    """Text file: header (prior, offset, grid, settings) then forests per stored draw.

    Trees use the node-per-line format of :meth:`DecisionTree.to_lines`,
    each introduced by ``mean <j>`` or ``var <l>``; draws start with
    ``draw <iteration> <sigma or ->``.
    """
    lines = ["# hbart snapshot v1"]
    for k, v in draws.prior.to_dict().items():
        lines.append(f"prior {k} {v!r}")
    lines.append(f"offset {draws.offset!r}")
    lines.append(f"min_node_size {draws.settings.min_node_size}")
    for v, c in enumerate(draws.grid.cuts):
        lines.append(" ".join(["grid", str(v)] + [repr(float(x)) for x in c]))
    for snap in draws.snapshots:
        sig = "-" if snap.sigma is None else repr(float(snap.sigma))
        lines.append(f"draw {snap.iteration} {sig}")
        lines.extend(_forest_lines("mean", snap.mean))
        if snap.var is not None:
            lines.extend(_forest_lines("var", snap.var))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_snapshot(path) -> PosteriorDraws:
    """Load a snapshot file into a :class:`PosteriorDraws` with no recorded points."""
    prior, offset, cuts = {}, 0.0, {}
    min_node = 5
    snaps = []
    cur = None          # [iteration, sigma, {"mean": [...], "var": [...]}]
    block = None        # (kind, list of lines)

    def close_block():
        nonlocal block
        if block is not None:
            cur[2][block[0]].append(DecisionTree.from_lines(block[1]))
            block = None

    def close_draw():
        close_block()
        if cur is not None:
            mean = CompactForest.from_trees(cur[2]["mean"])
            var = CompactForest.from_trees(cur[2]["var"]) if cur[2]["var"] else None
            snaps.append(Snapshot(cur[0], mean, var, cur[1]))

    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            head, _, rest = line.partition(" ")
            if head == "prior":
                k, v = rest.split()
                prior[k] = float(v)
            elif head == "offset":
                offset = float(rest)
            elif head == "min_node_size":
                min_node = int(rest)
            elif head == "grid":
                parts = rest.split()
                cuts[int(parts[0])] = np.array([float(x) for x in parts[1:]])
            elif head == "draw":
                close_draw()
                it, sig = rest.split()
                cur = [int(it), None if sig == "-" else float(sig), {"mean": [], "var": []}]
            elif head in ("mean", "var"):
                close_block()
                block = (head, [])
            else:
                if block is None:
                    raise ValueError(f"{path}: node line outside a tree block")
                block[1].append(line)
    close_draw()
    pr = PriorConfig.from_dict(prior)
    grid = CutpointGrid(tuple(cuts[v] for v in range(len(cuts))))
    settings = replace(SamplerSettings(), min_node_size=min_node)
    empty = np.empty((len(snaps), 0))
    sig = None
    if snaps and snaps[0].sigma is not None:
        sig = np.array([s.sigma for s in snaps])
    return PosteriorDraws(f=empty, s=empty.copy(),
                          iterations=np.array([s.iteration for s in snaps], dtype=np.int64),
                          eval_x=np.empty((0, grid.d)), prior=pr, settings=settings,
                          grid=grid, offset=offset, sigma=sig, snapshots=snaps)
