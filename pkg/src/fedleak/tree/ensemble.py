"""SecureBoost-style gradient boosting over vertically split features.

The label holder computes gradient pairs and picks splits; every party buckets
the instances of a node by its own features and hands back per-bucket sums.
The chosen split is stored at the node together with the owning party, and
only that party learns the feature id and threshold.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..errors import ProtocolError
from ..protocols import DesignMatrix
from . import kernels

SQUARED = "squared"
LOGISTIC = "logistic"
N_BUCKETS = 32
GAIN_FLOOR = 1e-12


@dataclass(frozen=True)
class GradientPair:
    g: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        if np.any(self.h <= 0):
            raise ProtocolError("second derivatives must be positive")


def gradient_pairs(y: np.ndarray, score: np.ndarray, loss: str = SQUARED) -> GradientPair:
    if loss == SQUARED:
        return GradientPair(score - y, np.ones_like(score))
    if loss == LOGISTIC:
        p = 1.0 / (1.0 + np.exp(-score))
        return GradientPair(p - y, np.maximum(p * (1 - p), 1e-16))
    raise ProtocolError(f"unknown loss {loss!r}")


@dataclass
class Node:
    node_id: int
    owner: Optional[str] = None       # None marks a leaf
    feature_id: Optional[int] = None  # column index inside the owner's matrix
    threshold: Optional[float] = None
    left: Optional[int] = None
    right: Optional[int] = None
    weight: Optional[float] = None
    depth: int = 0

    @property
    def is_leaf(self) -> bool:
        return self.owner is None


@dataclass
class Tree:
    nodes: list[Node] = field(default_factory=list)

    def __getitem__(self, node_id: int) -> Node:
        return self.nodes[node_id]

    def __len__(self):
        return len(self.nodes)

    def internal(self) -> list[Node]:
        return [nd for nd in self.nodes if not nd.is_leaf]

    def leaves(self, node_id: int = 0) -> set[int]:
        """Leaf ids in the subtree rooted at ``node_id``."""
        out, stack = set(), [node_id]
        while stack:
            nd = self.nodes[stack.pop()]
            if nd.is_leaf:
                out.add(nd.node_id)
            else:
                stack += [nd.left, nd.right]
        return out

    def parent_map(self) -> dict[int, int]:
        return {c: nd.node_id for nd in self.nodes if not nd.is_leaf for c in (nd.left, nd.right)}

    def flat(self, offsets: dict[str, int]):
        """Arrays for the traversal kernel, features as global columns."""
        k = len(self.nodes)
        feature = np.full(k, -1, dtype=np.int32)
        threshold = np.zeros(k)
        left = np.zeros(k, dtype=np.int32)
        right = np.zeros(k, dtype=np.int32)
        for nd in self.nodes:
            if not nd.is_leaf:
                feature[nd.node_id] = offsets[nd.owner] + nd.feature_id
                threshold[nd.node_id] = nd.threshold
                left[nd.node_id] = nd.left
                right[nd.node_id] = nd.right
        return feature, threshold, left, right


def enumerate_paths(tree: Tree) -> list[list[tuple[int, str]]]:
    """Every root-to-leaf path as ``(node_id, edge)`` pairs.

    The edge is ``"<="`` when the path continues into the left child and
    ``">"`` for the right child.  A lone leaf yields one empty path.
    """
    paths = []

    def walk(node_id, prefix):
        nd = tree[node_id]
        if nd.is_leaf:
            paths.append(prefix)
            return
        walk(nd.left, prefix + [(node_id, "<=")])
        walk(nd.right, prefix + [(node_id, ">")])

    walk(0, [])
    return paths


@dataclass
class BoostedEnsemble:
    trees: list[Tree]
    parties: tuple[tuple[str, int], ...]   # (label, feature count), column order of queries
    label_holder: str
    learning_rate: float
    base_score: float
    loss: str = SQUARED

    @property
    def offsets(self) -> dict[str, int]:
        out, pos = {}, 0
        for lab, n in self.parties:
            out[lab] = pos
            pos += n
        return out

    @property
    def n_features(self) -> int:
        return sum(n for _, n in self.parties)

    def _stack(self, features) -> np.ndarray:
        if isinstance(features, dict):
            return np.hstack([np.asarray(features[lab], dtype=float).reshape(-1, n)
                              for lab, n in self.parties])
        x = np.asarray(features, dtype=float)
        if x.ndim == 1:
            x = x[None, :]
        if x.shape[1] != self.n_features:
            raise ProtocolError(f"query has {x.shape[1]} columns, model expects {self.n_features}")
        return x

    def leaf_ids(self, features) -> np.ndarray:
        """Leaf reached in every tree, shape (queries, trees)."""
        x = np.ascontiguousarray(self._stack(features))
        offs = self.offsets
        cols = [kernels.leaf_ids(x, *t.flat(offs)) for t in self.trees]
        if not cols:
            return np.zeros((x.shape[0], 0), dtype=np.int32)
        return np.column_stack(cols)

    def decision(self, features) -> np.ndarray:
        leaves = self.leaf_ids(features)
        out = np.full(leaves.shape[0], self.base_score)
        for j, t in enumerate(self.trees):
            w = np.array([nd.weight if nd.is_leaf else 0.0 for nd in t.nodes])
            out += self.learning_rate * w[leaves[:, j]]
        return out

    def predict(self, features) -> np.ndarray:
        s = self.decision(features)
        return 1.0 / (1.0 + np.exp(-s)) if self.loss == LOGISTIC else s

    def victim_nodes(self, attacker: str) -> list[tuple[int, int]]:
        return [(i, nd.node_id) for i, t in enumerate(self.trees)
                for nd in t.internal() if nd.owner != attacker]


def quantile_edges(col: np.ndarray, buckets: int = N_BUCKETS) -> np.ndarray:
    """Candidate thresholds: interior quantiles of the column, deduplicated."""
    qs = np.linspace(0.0, 1.0, buckets + 1)[1:-1]
    edges = np.unique(np.quantile(col, qs, method="inverted_cdf"))
    # a cut at the maximum would leave the right side empty
    return edges[edges < col.max()]


def secureboost_train(parties: Sequence[DesignMatrix], y: np.ndarray, label_holder: str,
                      n_trees: int = 5, max_depth: int = 3, learning_rate: float = 0.3,
                      lam: float = 1.0, min_child_weight: float = 1.0, gamma: float = 0.0,
                      buckets: int = N_BUCKETS, loss: str = SQUARED) -> BoostedEnsemble:
    if len(parties) < 2:
        raise ProtocolError("secure boosting needs at least two parties")
    if max_depth < 1:
        raise ProtocolError("max_depth must be at least 1")
    if n_trees < 0:
        raise ProtocolError("tree count must be non-negative")
    labels = [p.party_id for p in parties]
    if label_holder not in labels:
        raise ProtocolError(f"label holder {label_holder!r} holds no features")
    if len(set(labels)) != len(labels):
        raise ProtocolError("party labels must be unique")
    y = np.asarray(y, dtype=float)
    m = parties[0].m
    if m == 0 or y.shape != (m,):
        raise ProtocolError("empty node: no training instances")
    for p in parties:
        if p.m != m:
            raise ProtocolError("vertical split needs equal row counts")

    # bucketing happens locally at each party
    binned = []
    for p in parties:
        for j in range(p.n):
            edges = quantile_edges(p.values[:, j], buckets)
            bins = np.searchsorted(edges, p.values[:, j], side="left").astype(np.int32)
            binned.append((p.party_id, j, edges, bins))

    base = float(np.mean(y))
    if loss == LOGISTIC:
        p0 = np.clip(base, 1e-6, 1 - 1e-6)
        base = float(np.log(p0 / (1 - p0)))
    score = np.full(m, base)
    trees = []
    for _ in range(n_trees):
        gp = gradient_pairs(y, score, loss)
        tree = _grow(gp, binned, max_depth, lam, min_child_weight, gamma)
        trees.append(tree)
        ens = BoostedEnsemble([tree], tuple((p.party_id, p.n) for p in parties),
                              label_holder, learning_rate, 0.0, loss)
        score = score + ens.decision({p.party_id: p.values for p in parties})
    return BoostedEnsemble(trees, tuple((p.party_id, p.n) for p in parties), label_holder,
                           learning_rate, base, loss)


def _grow(gp: GradientPair, binned, max_depth, lam, min_child, gamma) -> Tree:
    tree = Tree()
    g = np.ascontiguousarray(gp.g, dtype=float)
    h = np.ascontiguousarray(gp.h, dtype=float)
    queue = [(np.arange(g.size, dtype=np.int64), 0, None, None)]
    while queue:
        rows, depth, parent, side = queue.pop(0)
        nid = len(tree.nodes)
        node = Node(nid, depth=depth)
        tree.nodes.append(node)
        if parent is not None:
            setattr(tree.nodes[parent], side, nid)
        best = None
        if depth < max_depth and rows.size > 1:
            for owner, j, edges, bins in binned:
                if edges.size == 0:
                    continue
                gs, hs = kernels.bucket_sums(bins, g, h, rows, edges.size + 1)
                b, gain = kernels.best_split(gs, hs, lam, min_child)
                if b >= 0 and gain > gamma + GAIN_FLOOR and (best is None or gain > best[0]):
                    best = (gain, owner, j, b, edges, bins)
        if best is None:
            node.weight = float(-g[rows].sum() / (h[rows].sum() + lam))
            continue
        _, owner, j, b, edges, bins = best
        node.owner, node.feature_id, node.threshold = owner, j, float(edges[b])
        go_left = bins[rows] <= b
        queue.append((rows[go_left], depth + 1, nid, "left"))
        queue.append((rows[~go_left], depth + 1, nid, "right"))
    return tree
