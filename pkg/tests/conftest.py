import itertools
import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("ci", parent=settings.get_profile("default"), max_examples=200)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# PASS/FAIL lines from the acceptance suite, echoed in the terminal summary
ACCEPTANCE: list[str] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criteria")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)


def triangular_known(truth, rows=None):
    """n-1, n-2, ..., 1 known entries in the leading columns of distinct rows."""
    m, n = truth.shape
    rows = list(range(n - 1)) if rows is None else rows
    out = []
    for t, r in enumerate(rows):
        out += [(r, j, float(truth[r, j])) for j in range(n - 1 - t)]
    return tuple(out)


GRID = np.arange(-2.0, 2.01, 0.5)


def grid_solutions(system, grid, tol):
    """Every matrix with free entries drawn from ``grid`` meeting all constraints."""
    m, n = system.shape
    known = {(r, c): v for r, c, v in system.known_entries}
    free = [(r, c) for r in range(m) for c in range(n) if (r, c) not in known]
    combos = np.array(list(itertools.product(grid, repeat=len(free))))
    mats = np.zeros((len(combos), m, n))
    for (r, c), v in known.items():
        mats[:, r, c] = v
    for i, (r, c) in enumerate(free):
        mats[:, r, c] = combos[:, i]
    res = np.max(np.abs(mats @ mats.transpose(0, 2, 1) - system.gram), axis=(1, 2))
    if system.linear_side is not None:
        w, z = system.linear_side
        res = np.maximum(res, np.max(np.abs(mats @ w - z), axis=1))
    return mats[res <= tol]


def on_grid(a, grid):
    step = grid[1] - grid[0]
    snapped = grid[0] + np.round((a - grid[0]) / step) * step
    return (np.allclose(a, snapped, atol=1e-9)
            and a.min() >= grid[0] - 1e-9 and a.max() <= grid[-1] + 1e-9)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def planted_ensemble(seed, n_trees=4, depth=3, parties=(("B", 3), ("A", 3)),
                     bounds=(0.0, 10.0), victim_share=0.6):
    """Random complete trees with thresholds drawn inside each node's reachable range.

    Every split lies strictly within the interval its ancestors leave open for
    that feature, as in any trained tree, so every node is reachable.
    """
    from fedleak.tree.ensemble import BoostedEnsemble, Node, Tree

    rng = np.random.default_rng(seed)
    attacker, victim = parties[0][0], parties[1][0]
    sizes = dict(parties)
    trees = []
    for _ in range(n_trees):
        nodes = {}

        def grow(i, d, box):
            if d == depth:
                nodes[i] = Node(i, weight=float(rng.normal()), depth=d)
                return
            owner = victim if rng.random() < victim_share else attacker
            f = int(rng.integers(sizes[owner]))
            lo, hi = box.get((owner, f), bounds)
            t = float(rng.uniform(lo + 0.05 * (hi - lo), hi - 0.05 * (hi - lo)))
            nodes[i] = Node(i, owner, f, t, 2 * i + 1, 2 * i + 2, None, d)
            grow(2 * i + 1, d + 1, {**box, (owner, f): (lo, t)})
            grow(2 * i + 2, d + 1, {**box, (owner, f): (t, hi)})

        grow(0, 0, {})
        trees.append(Tree([nodes[i] for i in range(len(nodes))]))
    return BoostedEnsemble(trees, tuple(parties), attacker, 1.0, 0.0)
