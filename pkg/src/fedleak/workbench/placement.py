"""Where the attacker's purchased data points sit inside the victim matrix."""
from __future__ import annotations

import math
from typing import Optional

import numpy as np

from ..errors import ConfigError
from ..recovery import QuadraticSystem, check_recoverability

TRIANGULAR = "triangular"
STAIRCASE = "staircase"
RANDOM_VALID = "random-valid"
POLICIES = (TRIANGULAR, STAIRCASE, RANDOM_VALID)


def _row_counts(dof: int) -> list[int]:
    """Split ``dof`` into k, k-1, ..., 1 known entries per basis row."""
    if dof < 0:
        raise ConfigError("dof must be non-negative")
    k = int(round((math.isqrt(8 * dof + 1) - 1) / 2))
    if k * (k + 1) // 2 != dof:
        raise ConfigError(f"dof {dof} is not a triangular number")
    return list(range(k, 0, -1))


def place_known_entries(shape: tuple[int, int], dof: int, policy: str = TRIANGULAR,
                        seed: int = 0, basis: str = "rows",
                        truth: Optional[np.ndarray] = None, linear_side=None,
                        attempts: int = 50) -> list[tuple[int, int]]:
    """Positions for exactly ``dof`` known entries meeting the triangular count rule.

    ``basis="columns"`` places the pattern over columns, as needed when the
    available Gram is ``A^T A``.  For ``random-valid`` with ``truth`` given,
    draws are repeated until the numeric rank check passes as well.
    """
    if policy not in POLICIES:
        raise ConfigError(f"unknown placement policy {policy!r}; choose from {POLICIES}")
    if basis not in ("rows", "columns"):
        raise ConfigError("basis must be 'rows' or 'columns'")
    m, n = shape
    if basis == "columns":
        m, n = n, m
    counts = _row_counts(dof)
    k = len(counts)
    if k > m or (counts and counts[0] > n):
        raise ConfigError(f"infeasible shape {shape} for {dof} known entries")

    def flip(pos):
        return [(c, r) for r, c in pos] if basis == "columns" else pos

    if policy == TRIANGULAR:
        rows = [(t * m) // k for t in range(k)]
        return flip([(r, j) for r, c in zip(rows, counts) for j in range(c)])
    if policy == STAIRCASE:
        return flip([(t, j) for t, c in enumerate(counts) for j in range(t, t + c)])

    rng = np.random.default_rng([seed, 0x9A1])
    for _ in range(attempts):
        rows = rng.choice(m, size=k, replace=False)
        pos = []
        for r, c in zip(rows, counts):
            pos += [(int(r), int(j)) for j in np.sort(rng.choice(n, size=c, replace=False))]
        pos = flip(pos)
        if truth is None or _passes(pos, truth, basis, linear_side):
            return sorted(pos)
    raise ConfigError(f"no valid random placement found in {attempts} attempts")


def _passes(pos, truth, basis, linear_side) -> bool:
    a = np.asarray(truth, dtype=float)
    if basis == "columns":
        a = a.T
        pos = [(c, r) for r, c in pos]
    system = QuadraticSystem(a @ a.T, a.shape, tuple((r, c, a[r, c]) for r, c in pos),
                             linear_side)
    return check_recoverability(system).ok


def fill_known(positions, truth: np.ndarray) -> tuple[tuple[int, int, float], ...]:
    """Attach ground-truth values to positions (the attacker bought these points)."""
    t = np.asarray(truth, dtype=float)
    return tuple((int(r), int(c), float(t[r, c])) for r, c in positions)
