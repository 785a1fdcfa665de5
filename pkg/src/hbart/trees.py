"""Binary decision trees stored as flat node arenas.

A tree is a set of parallel arrays indexed by node id.  ``var[k] >= 0`` marks
an internal node splitting on column ``var[k]`` at grid cutpoint
``cut[k]``; ``var[k] == LEAF`` marks a leaf carrying ``param[k]``; ``FREE``
slots are unused.  The root always lives in slot 0.  An observation goes left
iff ``x[var] < grid[var][cut]``, which under the integer coding of
:meth:`hbart.data.CutpointGrid.code` reads ``code[var] <= cut``.

The same arrays back both the standalone :class:`DecisionTree` objects and the
rows of the forest matrices used by the sampler, so the numba kernels below are
shared by the two.

Prior over structures
---------------------
A node at depth ``d`` splits with probability ``alpha * (1 + d) ** -beta``.
Given a split, the rule is uniform: the variable is uniform over columns
that still have a grid cutpoint inside the node's region (the box carved out
by its ancestors' rules), and the cutpoint is uniform over those interior
cutpoints.  The sampler restricts support to trees whose leaves all hold at
least ``min_node_size`` training rows and whose depth is at most
``max_depth``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np
from numba import njit

from .data import CutpointGrid

__all__ = [
    "LEAF",
    "FREE",
    "DEFAULT_MOVE_PROBS",
    "DEFAULT_MAX_DEPTH",
    "TreeDepthPrior",
    "DecisionTree",
    "Proposal",
    "evaluate",
    "propose_birth",
    "propose_death",
    "propose_perturb",
    "log_tree_prior",
    "log_rule_prior",
    "trees_to_text",
    "trees_from_text",
]

LEAF = -1
FREE = -2

BIRTH, DEATH, PERTURB = 0, 1, 2
DEFAULT_MOVE_PROBS = (0.4, 0.4, 0.2)
DEFAULT_MAX_DEPTH = 15


@dataclass(frozen=True)
class TreeDepthPrior:
    """Node split probability ``alpha * (1 + depth) ** -beta``."""

    alpha: float = 0.95
    beta: float = 2.0

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")

    def split_prob(self, depth):
        return self.alpha * (1.0 + np.asarray(depth, dtype=float)) ** -self.beta


# ---------------------------------------------------------------------------
# numba kernels on single-tree arrays
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def _route(var, cut, left, right, xrow):
    node = 0
    while var[node] >= 0:
        if xrow[var[node]] <= cut[node]:
            node = left[node]
        else:
            node = right[node]
    return node


@njit(cache=True, nogil=True)
def _route_from(var, cut, left, right, start, xrow):
    node = start
    while var[node] >= 0:
        if xrow[var[node]] <= cut[node]:
            node = left[node]
        else:
            node = right[node]
    return node


@njit(cache=True, nogil=True)
def _assign(var, cut, left, right, xcode, out):
    for i in range(xcode.shape[0]):
        out[i] = _route(var, cut, left, right, xcode[i])


@njit(cache=True, nogil=True)
def _count_leaves(var):
    c = 0
    for k in range(var.shape[0]):
        if var[k] == LEAF:
            c += 1
    return c


@njit(cache=True, nogil=True)
def _nth_leaf(var, n):
    c = 0
    for k in range(var.shape[0]):
        if var[k] == LEAF:
            if c == n:
                return k
            c += 1
    return -1


@njit(cache=True, nogil=True)
def _count_internal(var):
    c = 0
    for k in range(var.shape[0]):
        if var[k] >= 0:
            c += 1
    return c


@njit(cache=True, nogil=True)
def _nth_internal(var, n):
    c = 0
    for k in range(var.shape[0]):
        if var[k] >= 0:
            if c == n:
                return k
            c += 1
    return -1


@njit(cache=True, nogil=True)
def _is_nog(var, left, right, k):
    return var[k] >= 0 and var[left[k]] == LEAF and var[right[k]] == LEAF


@njit(cache=True, nogil=True)
def _count_nog(var, left, right):
    c = 0
    for k in range(var.shape[0]):
        if _is_nog(var, left, right, k):
            c += 1
    return c


@njit(cache=True, nogil=True)
def _nth_nog(var, left, right, n):
    c = 0
    for k in range(var.shape[0]):
        if _is_nog(var, left, right, k):
            if c == n:
                return k
            c += 1
    return -1


@njit(cache=True, nogil=True)
def _region(var, cut, left, parent, node, ncuts, lo, hi):
    """Admissible cut-index range [lo[v], hi[v]) for each column at ``node``."""
    for v in range(ncuts.shape[0]):
        lo[v] = 0
        hi[v] = ncuts[v]
    c = node
    p = parent[c]
    while p >= 0:
        v = var[p]
        if left[p] == c:
            if cut[p] < hi[v]:
                hi[v] = cut[p]
        else:
            if cut[p] + 1 > lo[v]:
                lo[v] = cut[p] + 1
        c = p
        p = parent[c]


@njit(cache=True, nogil=True)
def _log_rule_prob(lo, hi, v):
    nv = 0
    for u in range(lo.shape[0]):
        if hi[u] > lo[u]:
            nv += 1
    nc = hi[v] - lo[v]
    if nv == 0 or nc <= 0:
        return -np.inf
    return -math.log(nv) - math.log(nc)


@njit(cache=True, nogil=True)
def _subtree_rule_logprior(var, cut, left, right, parent, node, ncuts, lo, hi, stack):
    total = 0.0
    top = 0
    stack[top] = node
    top += 1
    while top > 0:
        top -= 1
        k = stack[top]
        if var[k] >= 0:
            _region(var, cut, left, parent, k, ncuts, lo, hi)
            total += _log_rule_prob(lo, hi, var[k])
            stack[top] = left[k]
            stack[top + 1] = right[k]
            top += 2
    return total


@njit(cache=True, nogil=True)
def _split_logp(alpha, beta, depth):
    return math.log(alpha) - beta * math.log1p(depth)


@njit(cache=True, nogil=True)
def _nosplit_logp(alpha, beta, depth):
    return math.log1p(-alpha * (1.0 + depth) ** -beta)


@njit(cache=True, nogil=True)
def _member_leaf(leaf_of, node, member):
    c = 0
    for i in range(leaf_of.shape[0]):
        m = leaf_of[i] == node
        member[i] = m
        if m:
            c += 1
    return c


@njit(cache=True, nogil=True)
def _member_subtree(parent, leaf_of, node, member):
    c = 0
    for i in range(leaf_of.shape[0]):
        k = leaf_of[i]
        while k >= 0 and k != node:
            k = parent[k]
        m = k == node
        member[i] = m
        if m:
            c += 1
    return c


@njit(cache=True, nogil=True)
def _code_range(member, xcode, ncuts, mn, mx):
    """Per column, number of data-valid cuts for the member rows (mx - mn)."""
    d = xcode.shape[1]
    for v in range(d):
        mn[v] = 2147483647
        mx[v] = -1
    for i in range(xcode.shape[0]):
        if member[i]:
            for v in range(d):
                c = xcode[i, v]
                if c < mn[v]:
                    mn[v] = c
                if c > mx[v]:
                    mx[v] = c
    nv = 0
    for v in range(d):
        if mx[v] < 0 or ncuts[v] == 0:
            mn[v] = 0
            mx[v] = 0
        if mx[v] > mn[v]:
            nv += 1
    return nv


@njit(cache=True, nogil=True)
def _move_logp(pmove, root_only, move):
    if root_only:
        return 0.0 if move == BIRTH else -np.inf
    return math.log(pmove[move] / (pmove[0] + pmove[1] + pmove[2]))


@njit(cache=True, nogil=True)
def _propose_birth(var, cut, left, right, parent, depth, leaf_of, xcode, ncuts,
                   alpha, beta, pmove, max_depth, rng, member, mn, mx, lo, hi):
    """Draw a grow move.  Returns (ok, node, v, k, log_q_ratio, log_prior_ratio).

    ``log_q_ratio`` is log q(T'->T) - log q(T->T'); ``log_prior_ratio`` covers
    the depth prior and the rule prior of the new split.
    """
    nleaf = _count_leaves(var)
    node = _nth_leaf(var, rng.integers(0, nleaf))
    if depth[node] >= max_depth:
        return False, node, -1, -1, 0.0, 0.0
    n_in = _member_leaf(leaf_of, node, member)
    if n_in == 0:
        return False, node, -1, -1, 0.0, 0.0
    nv = _code_range(member, xcode, ncuts, mn, mx)
    if nv == 0:
        return False, node, -1, -1, 0.0, 0.0
    pick = rng.integers(0, nv)
    v = -1
    for u in range(ncuts.shape[0]):
        if mx[u] > mn[u]:
            if pick == 0:
                v = u
                break
            pick -= 1
    nc = mx[v] - mn[v]
    k = mn[v] + rng.integers(0, nc)

    nog = _count_nog(var, left, right)
    p = parent[node]
    nog_new = nog if (p >= 0 and _is_nog(var, left, right, p)) else nog + 1
    root_only = var[0] == LEAF
    log_fwd = (_move_logp(pmove, root_only, BIRTH) - math.log(nleaf)
               - math.log(nv) - math.log(nc))
    log_rev = _move_logp(pmove, False, DEATH) - math.log(nog_new)

    _region(var, cut, left, parent, node, ncuts, lo, hi)
    dep = depth[node]
    lp = (_split_logp(alpha, beta, dep) + 2.0 * _nosplit_logp(alpha, beta, dep + 1)
          - _nosplit_logp(alpha, beta, dep) + _log_rule_prob(lo, hi, v))
    return True, node, v, k, log_rev - log_fwd, lp


@njit(cache=True, nogil=True)
def _propose_death(var, cut, left, right, parent, depth, leaf_of, xcode, ncuts,
                   alpha, beta, pmove, rng, member, mn, mx, lo, hi):
    """Draw a prune move.  Same return convention as :func:`_propose_birth`."""
    nog = _count_nog(var, left, right)
    if nog == 0:
        return False, -1, -1, -1, 0.0, 0.0
    node = _nth_nog(var, left, right, rng.integers(0, nog))
    v = var[node]
    k = cut[node]
    _member_subtree(parent, leaf_of, node, member)
    nv = _code_range(member, xcode, ncuts, mn, mx)
    nc = mx[v] - mn[v]
    if nv == 0 or nc <= 0 or k < mn[v] or k >= mx[v]:
        # current rule does not split the data; cannot arise in a valid state
        return False, node, v, k, 0.0, 0.0
    nleaf_new = _count_leaves(var) - 1
    log_rev = (_move_logp(pmove, node == 0, BIRTH) - math.log(nleaf_new)
               - math.log(nv) - math.log(nc))
    log_fwd = _move_logp(pmove, False, DEATH) - math.log(nog)
    _region(var, cut, left, parent, node, ncuts, lo, hi)
    dep = depth[node]
    lp = -(_split_logp(alpha, beta, dep) + 2.0 * _nosplit_logp(alpha, beta, dep + 1)
           - _nosplit_logp(alpha, beta, dep) + _log_rule_prob(lo, hi, v))
    return True, node, v, k, log_rev - log_fwd, lp


@njit(cache=True, nogil=True)
def _propose_perturb(var, cut, left, right, parent, leaf_of, xcode, ncuts, rng,
                     member, mn, mx, lo, hi, stack):
    """Redraw the rule of a uniformly chosen internal node.

    The new (variable, cut) is uniform over all rules that split the rows
    reaching that node, excluding the current one; that set does not depend
    on the node's own rule, so the proposal is symmetric.  Returns
    (ok, node, v, k, log_prior_ratio) with the rule-prior change over the
    affected subtree.
    """
    nint = _count_internal(var)
    if nint == 0:
        return False, -1, -1, -1, 0.0
    node = _nth_internal(var, rng.integers(0, nint))
    _member_subtree(parent, leaf_of, node, member)
    _code_range(member, xcode, ncuts, mn, mx)
    total = 0
    cur = -1
    for u in range(ncuts.shape[0]):
        if u == var[node] and mn[u] <= cut[node] < mx[u]:
            cur = total + cut[node] - mn[u]
        total += mx[u] - mn[u]
    if cur >= 0:
        if total <= 1:
            return False, node, -1, -1, 0.0
        pick = rng.integers(0, total - 1)
        if pick >= cur:
            pick += 1
    else:
        if total == 0:
            return False, node, -1, -1, 0.0
        pick = rng.integers(0, total)
    v = -1
    k = -1
    for u in range(ncuts.shape[0]):
        width = mx[u] - mn[u]
        if pick < width:
            v = u
            k = mn[u] + pick
            break
        pick -= width
    old = _subtree_rule_logprior(var, cut, left, right, parent, node, ncuts, lo, hi, stack)
    ov = var[node]
    oc = cut[node]
    var[node] = v
    cut[node] = k
    new = _subtree_rule_logprior(var, cut, left, right, parent, node, ncuts, lo, hi, stack)
    var[node] = ov
    cut[node] = oc
    return True, node, v, k, new - old


@njit(cache=True, nogil=True)
def _alloc(var, start):
    for k in range(start, var.shape[0]):
        if var[k] == FREE:
            return k
    return -1


@njit(cache=True, nogil=True)
def _apply_birth(var, cut, left, right, parent, depth, param, node, v, k):
    """Split leaf ``node``; children inherit its parameter.  Returns (l, r) or (-1, -1)."""
    lnode = _alloc(var, 1)
    if lnode < 0:
        return -1, -1
    rnode = _alloc(var, lnode + 1)
    if rnode < 0:
        return -1, -1
    for c in (lnode, rnode):
        var[c] = LEAF
        cut[c] = -1
        left[c] = -1
        right[c] = -1
        parent[c] = node
        depth[c] = depth[node] + 1
        param[c] = param[node]
    var[node] = v
    cut[node] = k
    left[node] = lnode
    right[node] = rnode
    return lnode, rnode


@njit(cache=True, nogil=True)
def _apply_death(var, cut, left, right, parent, depth, param, node):
    for c in (left[node], right[node]):
        var[c] = FREE
        cut[c] = -1
        left[c] = -1
        right[c] = -1
        parent[c] = -1
        depth[c] = 0
    var[node] = LEAF
    cut[node] = -1
    left[node] = -1
    right[node] = -1


@njit(cache=True, nogil=True)
def _reset(var, cut, left, right, parent, depth, param, value):
    var[:] = FREE
    cut[:] = -1
    left[:] = -1
    right[:] = -1
    parent[:] = -1
    depth[:] = 0
    param[:] = 0.0
    var[0] = LEAF
    param[0] = value


# ---------------------------------------------------------------------------
# Python API
# ---------------------------------------------------------------------------


class DecisionTree:
    """A binary tree with scalar leaf parameters.

    Parameters
    ----------
    capacity : int
        Number of node slots to allocate.  Standalone trees grow on demand;
        trees that are views into a forest matrix cannot.
    param : float
        Parameter of the initial root leaf.
    """

    _fields = ("var", "cut", "left", "right", "parent", "depth", "param")

    def __init__(self, capacity: int = 15, param: float = 0.0, *, arrays=None):
        if arrays is not None:
            (self.var, self.cut, self.left, self.right, self.parent,
             self.depth, self.param) = arrays
            self._owns = False
            return
        capacity = max(int(capacity), 1)
        self.var = np.empty(capacity, dtype=np.int32)
        self.cut = np.empty(capacity, dtype=np.int32)
        self.left = np.empty(capacity, dtype=np.int32)
        self.right = np.empty(capacity, dtype=np.int32)
        self.parent = np.empty(capacity, dtype=np.int32)
        self.depth = np.empty(capacity, dtype=np.int32)
        self.param = np.empty(capacity, dtype=np.float64)
        self._owns = True
        _reset(*self.arrays, float(param))

    @property
    def arrays(self):
        return (self.var, self.cut, self.left, self.right, self.parent,
                self.depth, self.param)

    @property
    def capacity(self) -> int:
        return self.var.shape[0]

    def copy(self) -> "DecisionTree":
        t = DecisionTree.__new__(DecisionTree)
        for name in self._fields:
            setattr(t, name, getattr(self, name).copy())
        t._owns = True
        return t

    def _reserve(self, extra: int = 2):
        if int(np.sum(self.var == FREE)) >= extra:
            return
        if not self._owns:
            raise RuntimeError("tree capacity exhausted")
        grow = max(extra, self.capacity)
        fill = {"var": FREE, "cut": -1, "left": -1, "right": -1, "parent": -1,
                "depth": 0, "param": 0.0}
        for name in self._fields:
            old = getattr(self, name)
            setattr(self, name, np.concatenate([old, np.full(grow, fill[name], old.dtype)]))

    # structure queries -------------------------------------------------

    def is_leaf(self, k: int) -> bool:
        return self.var[k] == LEAF

    def leaves(self) -> list[int]:
        return [int(k) for k in np.flatnonzero(self.var == LEAF)]

    def internal(self) -> list[int]:
        return [int(k) for k in np.flatnonzero(self.var >= 0)]

    def nog_nodes(self) -> list[int]:
        """Internal nodes whose two children are both leaves."""
        return [k for k in self.internal()
                if self.var[self.left[k]] == LEAF and self.var[self.right[k]] == LEAF]

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.var == LEAF))

    @property
    def n_nodes(self) -> int:
        return int(np.sum(self.var != FREE))

    def max_depth(self) -> int:
        return int(self.depth[self.var == LEAF].max())

    def preorder(self) -> list[int]:
        out, stack = [], [0]
        while stack:
            k = stack.pop()
            out.append(k)
            if self.var[k] >= 0:
                stack.append(int(self.right[k]))
                stack.append(int(self.left[k]))
        return out

    def structure(self):
        """Hashable nested tuple of split rules; leaves are ``None``."""
        def rec(k):
            if self.var[k] == LEAF:
                return None
            return (int(self.var[k]), int(self.cut[k]),
                    rec(self.left[k]), rec(self.right[k]))
        return rec(0)

    def region(self, node: int, grid: CutpointGrid):
        """Admissible cut-index ranges ``(lo, hi)`` per column at ``node``."""
        lo = np.empty(grid.d, dtype=np.int32)
        hi = np.empty(grid.d, dtype=np.int32)
        _region(self.var, self.cut, self.left, self.parent, node,
                grid.sizes.astype(np.int32), lo, hi)
        return lo, hi

    # edits ---------------------------------------------------------------

    def split(self, node: int, var: int, cut_index: int,
              left_param: float | None = None, right_param: float | None = None):
        """Turn leaf ``node`` into an internal node; returns the child ids."""
        if self.var[node] != LEAF:
            raise ValueError(f"node {node} is not a leaf")
        self._reserve(2)
        lnode, rnode = _apply_birth(*self.arrays, node, var, cut_index)
        if left_param is not None:
            self.param[lnode] = left_param
        if right_param is not None:
            self.param[rnode] = right_param
        return int(lnode), int(rnode)

    def collapse(self, node: int, param: float | None = None):
        """Merge the two leaf children of ``node`` back into a leaf."""
        if node not in self.nog_nodes():
            raise ValueError(f"node {node} does not have two leaf children")
        _apply_death(*self.arrays, node)
        if param is not None:
            self.param[node] = param

    # evaluation ----------------------------------------------------------

    def leaf_index(self, grid: CutpointGrid, x) -> np.ndarray:
        """Leaf id reached by each row of ``x`` (raw predictor units)."""
        xcode = grid.code(x)
        out = np.empty(xcode.shape[0], dtype=np.int32)
        _assign(self.var, self.cut, self.left, self.right, xcode, out)
        return out

    def __call__(self, grid: CutpointGrid, x) -> np.ndarray:
        return self.param[self.leaf_index(grid, x)]

    # text form -----------------------------------------------------------

    def to_lines(self) -> list[str]:
        """One line per node in pre-order: ``id parent kind var cut param``."""
        order = self.preorder()
        ids = {k: i for i, k in enumerate(order)}
        lines = []
        for k in order:
            p = int(self.parent[k])
            pid = "-" if k == 0 else str(ids[p])
            if self.var[k] >= 0:
                lines.append(f"{ids[k]} {pid} I {int(self.var[k])} {int(self.cut[k])} -")
            else:
                lines.append(f"{ids[k]} {pid} L - - {float(self.param[k])!r}")
        return lines

    @classmethod
    def from_lines(cls, lines: Iterable[str]) -> "DecisionTree":
        rows = [ln.split() for ln in lines if ln.strip()]
        t = cls(capacity=len(rows))
        t.var[:] = FREE
        for fields in rows:
            if len(fields) != 6 or fields[2] not in ("I", "L"):
                raise ValueError(f"bad tree line: {' '.join(fields)!r}")
            k = int(fields[0])
            if fields[1] == "-":
                if k != 0:
                    raise ValueError("only node 0 may lack a parent")
                t.parent[k] = -1
                t.depth[k] = 0
            else:
                p = int(fields[1])
                if p >= k or t.var[p] < 0:
                    raise ValueError("parents must precede children in pre-order")
                t.parent[k] = p
                t.depth[k] = t.depth[p] + 1
                if t.left[p] < 0:
                    t.left[p] = k
                elif t.right[p] < 0:
                    t.right[p] = k
                else:
                    raise ValueError(f"node {p} has more than two children")
            t.left[k] = -1
            t.right[k] = -1
            if fields[2] == "I":
                t.var[k] = int(fields[3])
                t.cut[k] = int(fields[4])
                t.param[k] = 0.0
            else:
                t.var[k] = LEAF
                t.cut[k] = -1
                t.param[k] = float(fields[5])
        for k in t.internal():
            if t.left[k] < 0 or t.right[k] < 0:
                raise ValueError(f"internal node {k} lacks a child")
        return t

    def __repr__(self):
        return f"DecisionTree(leaves={self.n_leaves}, structure={self.structure()})"


@dataclass
class Proposal:
    """A proposed tree with the log ratios needed for Metropolis-Hastings.

    ``log_proposal_ratio`` is ``log q(new -> old) - log q(old -> new)`` and
    ``log_prior_ratio`` is ``log p(new) - log p(old)`` for the tree prior
    including rule probabilities.
    """

    tree: DecisionTree
    move: str
    node: int
    log_proposal_ratio: float
    log_prior_ratio: float


def evaluate(tree: DecisionTree, grid: CutpointGrid, x) -> float:
    """Parameter of the leaf that the predictor row ``x`` falls into."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    return float(tree(grid, x)[0])


class _Scratch:
    def __init__(self, n, d, capacity):
        self.member = np.zeros(n, dtype=np.bool_)
        self.mn = np.zeros(d, dtype=np.int32)
        self.mx = np.zeros(d, dtype=np.int32)
        self.lo = np.zeros(d, dtype=np.int32)
        self.hi = np.zeros(d, dtype=np.int32)
        self.stack = np.zeros(capacity + 2, dtype=np.int32)


def _prep(tree, grid, x):
    xcode = grid.code(x)
    leaf_of = np.empty(xcode.shape[0], dtype=np.int32)
    _assign(tree.var, tree.cut, tree.left, tree.right, xcode, leaf_of)
    return xcode, leaf_of, grid.sizes.astype(np.int32)


def _leaf_counts_ok(tree, grid, x, min_node_size):
    if min_node_size <= 0:
        return True
    counts = np.bincount(tree.leaf_index(grid, x), minlength=tree.capacity)
    return bool(np.all(counts[tree.var == LEAF] >= min_node_size))


def propose_birth(tree: DecisionTree, grid: CutpointGrid, x, rng, *,
                  depth_prior: TreeDepthPrior = TreeDepthPrior(),
                  move_probs=DEFAULT_MOVE_PROBS, min_node_size: int = 0,
                  max_depth: int = DEFAULT_MAX_DEPTH) -> Proposal | None:
    """Grow a uniformly chosen leaf of ``tree`` by one split.

    The split column is uniform over the columns that can separate the rows
    of ``x`` reaching the leaf, and the cutpoint is uniform over the cuts
    that do.  Returns ``None`` when the draw is unusable (no separable
    column, depth cap, or a child with fewer than ``min_node_size`` rows);
    the sampler treats that as an automatic rejection.
    """
    xcode, leaf_of, ncuts = _prep(tree, grid, x)
    s = _Scratch(xcode.shape[0], grid.d, tree.capacity)
    ok, node, v, k, lq, lp = _propose_birth(
        tree.var, tree.cut, tree.left, tree.right, tree.parent, tree.depth,
        leaf_of, xcode, ncuts, depth_prior.alpha, depth_prior.beta,
        np.asarray(move_probs, dtype=float), max_depth, rng,
        s.member, s.mn, s.mx, s.lo, s.hi)
    if not ok:
        return None
    new = tree.copy()
    new.split(node, v, k)
    if not _leaf_counts_ok(new, grid, x, min_node_size):
        return None
    return Proposal(new, "birth", int(node), float(lq), float(lp))


def propose_death(tree: DecisionTree, grid: CutpointGrid, x, rng, *,
                  depth_prior: TreeDepthPrior = TreeDepthPrior(),
                  move_probs=DEFAULT_MOVE_PROBS) -> Proposal | None:
    """Collapse a uniformly chosen internal node whose children are leaves."""
    xcode, leaf_of, ncuts = _prep(tree, grid, x)
    s = _Scratch(xcode.shape[0], grid.d, tree.capacity)
    ok, node, v, k, lq, lp = _propose_death(
        tree.var, tree.cut, tree.left, tree.right, tree.parent, tree.depth,
        leaf_of, xcode, ncuts, depth_prior.alpha, depth_prior.beta,
        np.asarray(move_probs, dtype=float), rng,
        s.member, s.mn, s.mx, s.lo, s.hi)
    if not ok:
        return None
    new = tree.copy()
    new.collapse(node)
    return Proposal(new, "death", int(node), float(lq), float(lp))


def propose_perturb(tree: DecisionTree, grid: CutpointGrid, x, rng, *,
                    min_node_size: int = 0) -> Proposal | None:
    """Redraw the split rule of a uniformly chosen internal node.

    The proposal is symmetric, so ``log_proposal_ratio`` is always 0.
    """
    xcode, leaf_of, ncuts = _prep(tree, grid, x)
    s = _Scratch(xcode.shape[0], grid.d, tree.capacity)
    ok, node, v, k, lp = _propose_perturb(
        tree.var, tree.cut, tree.left, tree.right, tree.parent, leaf_of, xcode,
        ncuts, rng, s.member, s.mn, s.mx, s.lo, s.hi, s.stack)
    if not ok:
        return None
    new = tree.copy()
    new.var[node] = v
    new.cut[node] = k
    if not _leaf_counts_ok(new, grid, x, max(min_node_size, 1)):
        return None
    return Proposal(new, "perturb", int(node), 0.0, float(lp))


def log_tree_prior(tree: DecisionTree, depth_prior: TreeDepthPrior) -> float:
    """Log probability of the tree shape under the depth prior.

    Each internal node at depth d contributes ``log(alpha (1+d)^-beta)`` and
    each leaf ``log(1 - alpha (1+d)^-beta)``.  Rule probabilities are kept
    separate in :func:`log_rule_prior`.
    """
    total = 0.0
    for k in np.flatnonzero(tree.var != FREE):
        p = float(depth_prior.split_prob(tree.depth[k]))
        total += math.log(p) if tree.var[k] >= 0 else math.log1p(-p)
    return total


def log_rule_prior(tree: DecisionTree, grid: CutpointGrid) -> float:
    """Log probability of the split rules given the shape (uniform choices)."""
    s = _Scratch(1, grid.d, tree.capacity)
    return float(_subtree_rule_logprior(tree.var, tree.cut, tree.left, tree.right,
                                        tree.parent, 0, grid.sizes.astype(np.int32),
                                        s.lo, s.hi, s.stack))


def trees_to_text(trees: Iterable[DecisionTree], label: str = "tree") -> str:
    out = []
    for j, t in enumerate(trees):
        out.append(f"{label} {j}")
        out.extend(t.to_lines())
    return "\n".join(out) + "\n"


def trees_from_text(text: str, label: str = "tree") -> list[DecisionTree]:
    trees, block = [], None
    for line in text.splitlines():
        if line.startswith(label + " "):
            if block is not None:
                trees.append(DecisionTree.from_lines(block))
            block = []
        elif line.strip():
            if block is None:
                raise ValueError("node line before any tree header")
            block.append(line)
    if block is not None:
        trees.append(DecisionTree.from_lines(block))
    return trees
