"""Binary regression trees splitting on x only, with mesh-valued leaf
functions, plus the Metropolis-Hastings grow/prune moves.

Trees never split on the target covariate; smoothness over the mesh comes
entirely from the leaf functions. Split rule is "go left iff x[v] <= cut",
with cutpoints taken from the distinct observed values at the leaf
(excluding the maximum, so both children are nonempty).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import TargetMesh
from .gp import conjugate_leaf_posterior, leaf_marginal_loglik, sample_prior_leaf


@dataclass(frozen=True)
class TreePrior:
    alpha: float = 0.95
    beta: float = 2.0

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0) or self.beta < 0:
            raise ValueError("need alpha in (0,1) and beta >= 0")

    def p_split(self, depth: int) -> float:
        return self.alpha * (1.0 + depth) ** (-self.beta)


class Node:
    __slots__ = ("is_leaf", "var", "cut", "left", "right", "parent", "depth", "values")

    def __init__(self, parent, depth, values=None):
        self.is_leaf = True
        self.var = -1
        self.cut = 0.0
        self.left = -1
        self.right = -1
        self.parent = parent
        self.depth = depth
        self.values = values


class Tree:
    """Arena of nodes keyed by integer id; root is id 0."""

    def __init__(self, n_mesh: int):
        self.nodes: dict[int, Node] = {0: Node(parent=-1, depth=0, values=np.zeros(n_mesh))}
        self.root = 0
        self.leaf_ids: list[int] = [0]
        self._next = 1

    def _new_node(self, parent: int, depth: int, values) -> int:
        nid = self._next
        self._next += 1
        self.nodes[nid] = Node(parent=parent, depth=depth, values=values)
        return nid

    def split(self, leaf_id: int, var: int, cut: float, left_values, right_values):
        node = self.nodes[leaf_id]
        assert node.is_leaf
        node.is_leaf = False
        node.var = var
        node.cut = cut
        node.values = None
        node.left = self._new_node(leaf_id, node.depth + 1, left_values)
        node.right = self._new_node(leaf_id, node.depth + 1, right_values)
        pos = self.leaf_ids.index(leaf_id)
        self.leaf_ids[pos : pos + 1] = [node.left, node.right]
        return node.left, node.right

    def merge(self, nog_id: int, values):
        node = self.nodes[nog_id]
        left, right = node.left, node.right
        pos = self.leaf_ids.index(left)
        self.leaf_ids.remove(right)
        self.leaf_ids[pos] = nog_id
        del self.nodes[left]
        del self.nodes[right]
        node.is_leaf = True
        node.var = -1
        node.left = node.right = -1
        node.values = values

    def nog_ids(self) -> list[int]:
        """Internal nodes whose children are both leaves, in id order."""
        out = []
        for nid, node in self.nodes.items():
            if not node.is_leaf:
                if self.nodes[node.left].is_leaf and self.nodes[node.right].is_leaf:
                    out.append(nid)
        out.sort()
        return out

    def n_leaves(self) -> int:
        return len(self.leaf_ids)


@dataclass
class Ensemble:
    trees: list[Tree]
    mesh: TargetMesh

    @property
    def m(self) -> int:
        return len(self.trees)


def route(tree: Tree, x: np.ndarray) -> int:
    """Leaf id for one covariate vector."""
    nid = tree.root
    node = tree.nodes[nid]
    while not node.is_leaf:
        nid = node.left if x[node.var] <= node.cut else node.right
        node = tree.nodes[nid]
    return nid


def route_many(tree: Tree, X: np.ndarray) -> np.ndarray:
    """Leaf id for each row of X."""
    out = np.empty(len(X), dtype=np.int64)
    stack = [(tree.root, np.arange(len(X)))]
    while stack:
        nid, idx = stack.pop()
        node = tree.nodes[nid]
        if node.is_leaf:
            out[idx] = nid
        else:
            go_left = X[idx, node.var] <= node.cut
            stack.append((node.left, idx[go_left]))
            stack.append((node.right, idx[~go_left]))
    return out


def tree_fit(tree: Tree, assign: np.ndarray, mesh_idx: np.ndarray) -> np.ndarray:
    """Per-observation contribution of one tree given cached leaf routing."""
    out = np.empty(len(assign))
    for lid in tree.leaf_ids:
        sel = assign == lid
        out[sel] = tree.nodes[lid].values[mesh_idx[sel]]
    return out


def evaluate(ensemble: Ensemble, t: float, x: np.ndarray) -> float:
    """f(t, x) = sum over trees of the routed leaf's value at t."""
    idx = int(ensemble.mesh.index_of(t)[0])
    total = 0.0
    for tree in ensemble.trees:
        total += float(tree.nodes[route(tree, x)].values[idx])
    return total


def evaluate_grid(ensemble: Ensemble, profiles: np.ndarray) -> np.ndarray:
    """(n_profiles, T) evaluations of f at every mesh point per x profile."""
    P = len(profiles)
    out = np.zeros((P, len(ensemble.mesh)))
    for tree in ensemble.trees:
        assign = route_many(tree, profiles)
        for lid in tree.leaf_ids:
            sel = assign == lid
            if np.any(sel):
                out[sel] += tree.nodes[lid].values
    return out


def _available_vars(X_leaf: np.ndarray) -> list[int]:
    """Covariates with at least 2 distinct values at the leaf."""
    out = []
    for v in range(X_leaf.shape[1]):
        col = X_leaf[:, v]
        if len(col) > 1 and col.min() < col.max():
            out.append(v)
    return out


def _leaf_stats(resid, mesh_idx, idx, T):
    counts = np.bincount(mesh_idx[idx], minlength=T).astype(float)
    sums = np.bincount(mesh_idx[idx], weights=resid[idx], minlength=T)
    sum_sq = float(resid[idx] @ resid[idx])
    return counts, sums, sum_sq


def _log_p_leaf(X_leaf: np.ndarray, prior: TreePrior, depth: int) -> float:
    """Log prior probability the node is a leaf; 1 when it cannot split."""
    if _available_vars(X_leaf):
        return math.log1p(-prior.p_split(depth))
    return 0.0


def _n_growable(tree: Tree, X: np.ndarray, assign: np.ndarray) -> int:
    n = 0
    for lid in tree.leaf_ids:
        if _available_vars(X[assign == lid]):
            n += 1
    return n


def _draw_leaf(gp, counts, sums, sigma2, rng) -> np.ndarray:
    mean, chol_cov = conjugate_leaf_posterior(gp, counts, sums, sigma2)
    return mean + chol_cov @ rng.standard_normal(len(mean))


def grow_log_accept(tree, X, resid, mesh_idx, assign, prior, gp, sigma2,
                    lid: int, var: int, cut: float) -> float:
    """Log MH acceptance ratio for growing leaf lid with (var, cut).

    Likelihood part is the GP-marginal ratio children vs parent; prior part
    accounts for child nodes that cannot split (their leaf probability is
    1, not 1 - p_split); transition part pairs the growable-leaf choice
    with the reverse prune's no-grandchild choice. The uniform (var, cut)
    proposal cancels against the prior's uniform split rule.
    """
    idx = np.flatnonzero(assign == lid)
    go_left = X[idx, var] <= cut
    idx_l, idx_r = idx[go_left], idx[~go_left]
    T = len(gp.K) if hasattr(gp, "K") else len(gp.mesh)
    c_p, s_p, q_p = _leaf_stats(resid, mesh_idx, idx, T)
    c_l, s_l, q_l = _leaf_stats(resid, mesh_idx, idx_l, T)
    c_r, s_r, q_r = _leaf_stats(resid, mesh_idx, idx_r, T)
    llr = (
        leaf_marginal_loglik(gp, c_l, s_l, q_l, sigma2)
        + leaf_marginal_loglik(gp, c_r, s_r, q_r, sigma2)
        - leaf_marginal_loglik(gp, c_p, s_p, q_p, sigma2)
    )

    node = tree.nodes[lid]
    d = node.depth
    ps = prior.p_split(d)
    log_prior = (
        math.log(ps)
        - math.log1p(-ps)
        + _log_p_leaf(X[idx_l], prior, d + 1)
        + _log_p_leaf(X[idx_r], prior, d + 1)
    )
    parent = tree.nodes[node.parent] if node.parent >= 0 else None
    parent_was_nog = (
        parent is not None
        and tree.nodes[parent.left].is_leaf
        and tree.nodes[parent.right].is_leaf
    )
    n_nog_new = len(tree.nog_ids()) + 1 - (1 if parent_was_nog else 0)
    log_trans = math.log(_n_growable(tree, X, assign)) - math.log(n_nog_new)
    return llr + log_prior + log_trans


def prune_log_accept(tree, X, resid, mesh_idx, assign, prior, gp, sigma2,
                     nog_id: int) -> float:
    """Log MH acceptance ratio for collapsing no-grandchild node nog_id;
    exact reciprocal of the matching grow ratio."""
    node = tree.nodes[nog_id]
    idx_l = np.flatnonzero(assign == node.left)
    idx_r = np.flatnonzero(assign == node.right)
    idx = np.concatenate([idx_l, idx_r])
    T = len(gp.K) if hasattr(gp, "K") else len(gp.mesh)
    c_p, s_p, q_p = _leaf_stats(resid, mesh_idx, idx, T)
    c_l, s_l, q_l = _leaf_stats(resid, mesh_idx, idx_l, T)
    c_r, s_r, q_r = _leaf_stats(resid, mesh_idx, idx_r, T)
    llr = (
        leaf_marginal_loglik(gp, c_p, s_p, q_p, sigma2)
        - leaf_marginal_loglik(gp, c_l, s_l, q_l, sigma2)
        - leaf_marginal_loglik(gp, c_r, s_r, q_r, sigma2)
    )

    d = node.depth
    ps = prior.p_split(d)
    log_prior = -(
        math.log(ps)
        - math.log1p(-ps)
        + _log_p_leaf(X[idx_l], prior, d + 1)
        + _log_p_leaf(X[idx_r], prior, d + 1)
    )
    n_grow_new = (
        _n_growable(tree, X, assign)
        - (1 if _available_vars(X[idx_l]) else 0)
        - (1 if _available_vars(X[idx_r]) else 0)
        + 1  # the merged leaf always has >= 2 distinct split-var values
    )
    log_trans = math.log(len(tree.nog_ids())) - math.log(n_grow_new)
    return llr + log_prior + log_trans


def apply_grow(tree, X, resid, mesh_idx, assign, gp, sigma2, rng,
               lid: int, var: int, cut: float) -> None:
    """Split leaf lid; children get fresh conjugate leaf draws."""
    idx = np.flatnonzero(assign == lid)
    go_left = X[idx, var] <= cut
    idx_l, idx_r = idx[go_left], idx[~go_left]
    T = len(gp.K) if hasattr(gp, "K") else len(gp.mesh)
    c_l, s_l, _ = _leaf_stats(resid, mesh_idx, idx_l, T)
    c_r, s_r, _ = _leaf_stats(resid, mesh_idx, idx_r, T)
    left_values = _draw_leaf(gp, c_l, s_l, sigma2, rng)
    right_values = _draw_leaf(gp, c_r, s_r, sigma2, rng)
    lchild, rchild = tree.split(lid, var, cut, left_values, right_values)
    assign[idx_l] = lchild
    assign[idx_r] = rchild


def apply_prune(tree, resid, mesh_idx, assign, gp, sigma2, rng,
                nog_id: int) -> None:
    """Collapse nog_id to a leaf with a fresh conjugate draw."""
    node = tree.nodes[nog_id]
    idx = np.flatnonzero((assign == node.left) | (assign == node.right))
    T = len(gp.K) if hasattr(gp, "K") else len(gp.mesh)
    c_p, s_p, _ = _leaf_stats(resid, mesh_idx, idx, T)
    values = _draw_leaf(gp, c_p, s_p, sigma2, rng)
    tree.merge(nog_id, values)
    assign[idx] = nog_id


def propose_grow(tree, X, resid, mesh_idx, assign, prior, gp, sigma2, rng) -> bool:
    """One MH grow proposal; mutates tree and assign on accept."""
    growable = [lid for lid in tree.leaf_ids if _available_vars(X[assign == lid])]
    if not growable:
        return False
    lid = growable[rng.integers(len(growable))]
    X_leaf = X[assign == lid]
    avail = _available_vars(X_leaf)
    var = avail[rng.integers(len(avail))]
    cuts = np.unique(X_leaf[:, var])[:-1]
    cut = float(cuts[rng.integers(len(cuts))])
    log_acc = grow_log_accept(tree, X, resid, mesh_idx, assign, prior, gp,
                              sigma2, lid, var, cut)
    if math.log(rng.uniform()) >= log_acc:
        return False
    apply_grow(tree, X, resid, mesh_idx, assign, gp, sigma2, rng, lid, var, cut)
    return True


def propose_prune(tree, X, resid, mesh_idx, assign, prior, gp, sigma2, rng) -> bool:
    """Mirror of propose_grow; collapses one no-grandchild node on accept."""
    nogs = tree.nog_ids()
    if not nogs:
        return False
    nid = nogs[rng.integers(len(nogs))]
    log_acc = prune_log_accept(tree, X, resid, mesh_idx, assign, prior, gp,
                               sigma2, nid)
    if math.log(rng.uniform()) >= log_acc:
        return False
    apply_prune(tree, resid, mesh_idx, assign, gp, sigma2, rng, nid)
    return True


def refresh_leaves(tree, resid, mesh_idx, assign, gp, sigma2, rng) -> np.ndarray:
    """Gibbs-redraw every leaf function from its conjugate posterior.
    Mutates the tree; returns the tree's new per-observation fit."""
    T = len(gp.K) if hasattr(gp, "K") else len(gp.mesh)
    leaf_ids = tree.leaf_ids
    L = len(leaf_ids)
    lut = np.zeros(tree._next, dtype=np.int64)
    lut[leaf_ids] = np.arange(L)
    codes = lut[assign] * T + mesh_idx
    counts = np.bincount(codes, minlength=L * T).astype(float).reshape(L, T)
    sums = np.bincount(codes, weights=resid, minlength=L * T).reshape(L, T)
    value_mat = np.empty((L, T))
    for k, lid in enumerate(leaf_ids):
        values = _draw_leaf(gp, counts[k], sums[k], sigma2, rng)
        tree.nodes[lid].values = values
        value_mat[k] = values
    return value_mat[lut[assign], mesh_idx]


def sample_tree_from_prior(X, prior: TreePrior, gp, rng) -> tuple[Tree, np.ndarray]:
    """Draw a full tree (topology, rules, leaf functions) from the prior."""
    T = len(gp.K) if hasattr(gp, "K") else len(gp.mesh)
    tree = Tree(T)
    assign = np.zeros(len(X), dtype=np.int64)

    def _grow(nid, idx, depth):
        X_leaf = X[idx]
        avail = _available_vars(X_leaf)
        if avail and rng.uniform() < prior.p_split(depth):
            var = avail[rng.integers(len(avail))]
            cuts = np.unique(X_leaf[:, var])[:-1]
            cut = float(cuts[rng.integers(len(cuts))])
            left, right = tree.split(nid, var, cut, None, None)
            go_left = X_leaf[:, var] <= cut
            assign[idx[go_left]] = left
            assign[idx[~go_left]] = right
            _grow(left, idx[go_left], depth + 1)
            _grow(right, idx[~go_left], depth + 1)
        else:
            tree.nodes[nid].values = sample_prior_leaf(gp, rng)

    _grow(tree.root, np.arange(len(X)), 0)
    return tree, assign
