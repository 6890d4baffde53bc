"""Block-search extraction of victim split thresholds through leaf-id queries."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

from ..errors import AttackError, NoJumpFoundError, OracleError
from .ensemble import BoostedEnsemble, Node, Tree, enumerate_paths

BELOW, ABOVE, OFF = 0, 1, -1


def predict_query_count(lb: float, ub: float, epsilon: float, m: int) -> int:
    """Refinement rounds needed to shrink ``[lb, ub]`` below ``epsilon`` with m-point grids."""
    if not ub > lb:
        raise AttackError("upper bound must exceed lower bound")
    if not epsilon > 0:
        raise AttackError("epsilon must be positive")
    if m < 3:
        raise AttackError("a grid needs at least 3 points to narrow the interval")
    r = math.log((ub - lb) / epsilon) / math.log(m - 1)
    # r lands on an integer whenever the ratio is an exact power of m-1;
    # absorb the float noise before rounding up
    return max(0, math.ceil(r - 1e-9))


def total_queries(victim_nodes: int, n_q: int) -> int:
    if victim_nodes < 0 or n_q < 0:
        raise AttackError("counts must be non-negative")
    return victim_nodes * n_q


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float
    grid_points: int = 401
    bounds: tuple = (0.0, 10.0)
    feature_bounds: Mapping = field(default_factory=dict)   # (party, j) -> (lb, ub)

    def __post_init__(self):
        if not self.epsilon > 0:
            raise AttackError("epsilon must be positive")
        if self.grid_points < 3:
            raise AttackError("grid_points must be at least 3")
        for lb, ub in [tuple(self.bounds)] + [tuple(b) for b in self.feature_bounds.values()]:
            if not ub > lb:
                raise AttackError(f"bad bounds [{lb}, {ub}]")
            if not self.epsilon < ub - lb:
                raise AttackError(f"epsilon {self.epsilon} not below range width {ub - lb}")

    def bounds_for(self, key) -> tuple[float, float]:
        lb, ub = self.feature_bounds.get(key, self.bounds)
        return float(lb), float(ub)


@dataclass
class NodeInfo:
    node_id: int
    owner: Optional[str]
    is_attacker_node: bool
    dividing_point_known: bool
    feature_id: Optional[int]
    threshold: Optional[float]
    left: Optional[int]
    right: Optional[int]
    weight: Optional[float]

    @property
    def is_leaf(self) -> bool:
        return self.left is None


@dataclass
class TreeInfo:
    """What the attacker knows about one tree."""
    nodes: dict[int, NodeInfo]
    structure: Tree      # topology only; use ``nodes`` for split details
    _leafsets: dict = field(default_factory=dict, repr=False)

    def leaves(self, node_id: int) -> frozenset:
        if node_id not in self._leafsets:
            self._leafsets[node_id] = frozenset(self.structure.leaves(node_id))
        return self._leafsets[node_id]

    def child_weights(self, node_id: int):
        nd = self.nodes[node_id]
        return tuple(self.nodes[c].weight for c in (nd.left, nd.right))


def _topology(tree: Tree) -> Tree:
    nodes = []
    for nd in tree.nodes:
        owner = None if nd.is_leaf else "?"
        nodes.append(Node(nd.node_id, owner, None, None, nd.left, nd.right, nd.weight, nd.depth))
    return Tree(nodes)


def tree_info(ensemble: BoostedEnsemble, attacker: str) -> list[TreeInfo]:
    """Attacker view: structure, owners and leaf weights; victim splits stay hidden."""
    out = []
    for t in ensemble.trees:
        info = {}
        for nd in t.nodes:
            own = nd.owner == attacker
            info[nd.node_id] = NodeInfo(
                nd.node_id, nd.owner, own, own or nd.is_leaf,
                nd.feature_id if own else None,
                nd.threshold if own else None,
                nd.left, nd.right, nd.weight,
            )
        out.append(TreeInfo(info, _topology(t)))
    return out


class LeafOracle:
    """Inference service that returns the leaf reached in every tree."""

    def __init__(self, ensemble: BoostedEnsemble, refuse: bool = False):
        self._ensemble = ensemble
        self.refuse = refuse
        self.batches = 0
        self.records = 0

    def __call__(self, queries: np.ndarray) -> np.ndarray:
        if self.refuse:
            raise OracleError("inference service refused the query")
        q = np.asarray(queries, dtype=float)
        self.batches += 1
        self.records += q.shape[0]
        return self._ensemble.leaf_ids(q)


@dataclass
class NodeRecovery:
    tree: int
    node_id: int
    owner: str
    feature_id: int
    estimate: float
    interval: tuple[float, float]
    rounds: int
    discovery_batches: int


@dataclass
class StealResult:
    nodes: list[NodeRecovery]
    refinement_batches: int
    discovery_batches: int
    records: int

    def thresholds(self) -> dict[tuple[int, int], float]:
        return {(r.tree, r.node_id): r.estimate for r in self.nodes}


class _Prober:
    def __init__(self, oracle, layout, info: list[TreeInfo], config: AttackConfig):
        self.oracle = oracle
        self.config = config
        self.info = info
        self.cols = {}
        pos = 0
        for lab, n in layout:
            for j in range(n):
                self.cols[(lab, j)] = pos
                pos += 1
        self.width = pos
        self.records = 0

    def ask(self, queries: np.ndarray, tree: int) -> np.ndarray:
        self.records += queries.shape[0]
        res = np.asarray(self.oracle(queries))
        if res.ndim != 2 or res.shape[0] != queries.shape[0]:
            raise OracleError("oracle returned a malformed leaf-id array")
        return res[:, tree]

    def base_query(self, tree: int, path) -> np.ndarray:
        """A query that follows ``path`` through every node whose split is known."""
        nodes = self.info[tree].nodes
        lo, hi = {}, {}
        for nid, edge in path:
            nd = nodes[nid]
            if not nd.dividing_point_known:
                continue
            key = (nd.owner, nd.feature_id)
            if edge == "<=":
                hi[key] = min(hi.get(key, np.inf), nd.threshold)
            else:
                lo[key] = max(lo.get(key, -np.inf), nd.threshold)
        q = np.empty(self.width)
        for key, col in self.cols.items():
            lb, ub = self.config.bounds_for(key)
            if key in lo and key in hi:
                q[col] = 0.5 * (lo[key] + hi[key])
            elif key in lo:
                q[col] = ub
            else:
                q[col] = lb
        return q


def _classify(info: TreeInfo, path, leaf: int, strict: bool = False) -> int:
    """BELOW when the probe sits at or under the target threshold, ABOVE otherwise.

    With ``strict`` a probe that leaves the path before the target is OFF.
    """
    *ancestors, (target, _) = path
    for nid, edge in ancestors:
        nd = info.nodes[nid]
        nxt = nd.left if edge == "<=" else nd.right
        if leaf not in info.leaves(nxt):
            if strict:
                return OFF
            # diverged early: the probed feature crossed an ancestor split
            return ABOVE if edge == "<=" else BELOW
    return BELOW if leaf in info.leaves(info.nodes[target].left) else ABOVE


def _jump(labels: np.ndarray) -> Optional[int]:
    """Index of the first ABOVE preceded by a BELOW."""
    above = np.flatnonzero(labels == ABOVE)
    if above.size == 0 or above[0] == 0:
        return None
    return int(above[0])


def _refine(prober: _Prober, tree_idx, path, key, base, first=None):
    cfg = prober.config
    tinfo = prober.info[tree_idx]
    lo, hi = cfg.bounds_for(key)
    col = prober.cols[key]
    # the nominal width shrinks by exactly m-1 per round; the measured width
    # drifts with rounding, so the round count is fixed up front
    need = predict_query_count(lo, hi, cfg.epsilon, cfg.grid_points)
    rounds = 0
    while rounds < need:
        grid = np.linspace(lo, hi, cfg.grid_points)
        if first is not None:
            leaves, first = first, None
        else:
            q = np.tile(base, (grid.size, 1))
            q[:, col] = grid
            leaves = prober.ask(q, tree_idx)
        rounds += 1
        labels = np.array([_classify(tinfo, path, lf) for lf in leaves])
        j = _jump(labels)
        if j is None:
            raise NoJumpFoundError(
                f"no jump found for node {path[-1][0]} of tree {tree_idx} on feature {key}"
            )
        lo, hi = grid[j - 1], grid[j]
    return lo, hi, rounds


def steal_thresholds(oracle: Callable[[np.ndarray], np.ndarray], info: list[TreeInfo],
                     config: AttackConfig, layout, attacker: str) -> StealResult:
    """Recover every victim split of every tree.

    ``layout`` is the public column order of queries as ``(party, feature
    count)`` pairs.  Nodes are solved top-down along each path, so every
    ancestor of the node under attack is already pinned.  A victim feature id
    is unknown to the attacker, so candidate features are probed in turn; a
    probe that moves the query across the node is reused as the first
    refinement round and the others are counted as discovery batches.

    Recovered nodes are marked known in ``info`` as they are solved, so a
    second attack needs a fresh :func:`tree_info` view.
    """
    prober = _Prober(oracle, layout, info, config)
    victim_keys = [k for k in prober.cols if k[0] != attacker]
    recovered = []
    discovery = 0
    for ti, tinfo in enumerate(info):
        for full in enumerate_paths(tinfo.structure):
            for pos, (nid, _) in enumerate(full):
                nd = tinfo.nodes[nid]
                if nd.dividing_point_known:
                    continue
                path = full[:pos + 1]
                base = prober.base_query(ti, full[:pos])
                if nd.feature_id is not None:
                    key, first, spent = (nd.owner, nd.feature_id), None, 0
                else:
                    key, first, spent = _discover(prober, ti, path, base, nd.owner, victim_keys)
                discovery += spent
                lo, hi, rounds = _refine(prober, ti, path, key, base, first)
                nd.feature_id = key[1]
                nd.threshold = 0.5 * (lo + hi)
                nd.dividing_point_known = True
                recovered.append(NodeRecovery(ti, nid, nd.owner, key[1], nd.threshold,
                                              (float(lo), float(hi)), rounds, spent))
    refinement = sum(r.rounds for r in recovered)
    return StealResult(recovered, refinement, discovery, prober.records)


def _discover(prober: _Prober, ti, path, base, owner, keys):
    cfg = prober.config
    tinfo = prober.info[ti]
    spent = 0
    for key in keys:
        if key[0] != owner:
            continue
        lb, ub = cfg.bounds_for(key)
        q = np.tile(base, (cfg.grid_points, 1))
        q[:, prober.cols[key]] = np.linspace(lb, ub, cfg.grid_points)
        leaves = prober.ask(q, ti)
        sides = {_classify(tinfo, path, lf, strict=True) for lf in leaves}
        if BELOW in sides and ABOVE in sides:
            # this batch doubles as the first refinement round
            return key, leaves, spent
        spent += 1
    raise NoJumpFoundError(f"no jump found for node {path[-1][0]} of tree {ti} on any feature")
