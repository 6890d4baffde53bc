"""Recovery of a matrix from its Gram matrix, a few known entries and an
optional linear side constraint.

The unknown ``A`` (m x n) satisfies ``A A^T = C``.  Rows are solved one at a
time: every previously solved row contributes one linear inner-product
equation, the diagonal entry of ``C`` contributes one quadratic equation and
the known entries of the row close the system.  When a linear side
``A W = Z`` is available, ``W^T`` is appended as an extra, fully known row of
the augmented matrix ``F = (A^T, W)^T`` whose Gram matrix is
``[[C, Z], [Z^T, W^T W]]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (
    AsymmetricInputError,
    InconsistentKnownsError,
    InsufficientRowsError,
    NotPositiveDefiniteError,
    RankDeficiencyError,
    RecoveryError,
)

SYMMETRY_TOL = 1e-9
RESIDUAL_RTOL = 1e-9
RANK_RTOL = 1e-8
# candidates closer than this (relative to sqrt(max|G|)) are the same matrix
SAME_RTOL = 1e-7

KnownEntry = tuple[int, int, float]


def quadratic_dof(m: int, n: int) -> int:
    """Degrees of freedom of ``A A^T = C`` for an m x n unknown."""
    _check_counts(m, n)
    if m < n - 1:
        raise InsufficientRowsError(
            f"insufficient rows for basis: need at least {n - 1} rows, got {m}"
        )
    return n * (n - 1) // 2


def constrained_dof(m: int, n: int) -> int:
    """Degrees of freedom of ``A A^T = C`` together with ``A W = Z``."""
    _check_counts(m, n)
    if m + 1 < n - 1:
        raise InsufficientRowsError(
            f"insufficient rows for basis: need at least {n - 2} rows, got {m}"
        )
    return (n - 1) * (n - 2) // 2


def _check_counts(m: int, n: int) -> None:
    if m < 1 or n < 1:
        raise RecoveryError(f"shape counts must be positive, got ({m}, {n})")


@dataclass(frozen=True)
class QuadraticSystem:
    """Constraints assembled by the attacker against an unknown m x n matrix."""

    gram: np.ndarray
    shape: tuple[int, int]
    known_entries: tuple[KnownEntry, ...] = ()
    linear_side: Optional[tuple[np.ndarray, np.ndarray]] = None

    def __post_init__(self):
        gram = np.array(self.gram, dtype=float)
        m, n = (int(s) for s in self.shape)
        if gram.shape != (m, m):
            raise RecoveryError(f"gram must be {m}x{m}, got {gram.shape}")
        scale = max(1.0, float(np.max(np.abs(gram)))) if gram.size else 1.0
        if np.max(np.abs(gram - gram.T), initial=0.0) > SYMMETRY_TOL * scale:
            raise AsymmetricInputError("asymmetric input: gram is not symmetric")
        if np.any(np.diag(gram) < -SYMMETRY_TOL * scale):
            raise RecoveryError("gram has a negative diagonal entry")
        gram = 0.5 * (gram + gram.T)
        gram.setflags(write=False)
        object.__setattr__(self, "gram", gram)
        object.__setattr__(self, "shape", (m, n))

        entries = []
        seen = set()
        for r, c, v in self.known_entries:
            r, c = int(r), int(c)
            if not (0 <= r < m and 0 <= c < n):
                raise RecoveryError(f"known entry ({r}, {c}) outside shape {(m, n)}")
            if (r, c) in seen:
                raise RecoveryError(f"duplicate known entry ({r}, {c})")
            seen.add((r, c))
            entries.append((r, c, float(v)))
        object.__setattr__(self, "known_entries", tuple(sorted(entries)))

        if self.linear_side is not None:
            w, z = self.linear_side
            w = np.array(w, dtype=float).reshape(-1)
            z = np.array(z, dtype=float).reshape(-1)
            if w.shape != (n,) or z.shape != (m,):
                raise RecoveryError(
                    f"linear side must have |W| = {n} and |Z| = {m}, "
                    f"got {w.shape[0]} and {z.shape[0]}"
                )
            w.setflags(write=False)
            z.setflags(write=False)
            object.__setattr__(self, "linear_side", (w, z))

    @property
    def m(self) -> int:
        return self.shape[0]

    @property
    def n(self) -> int:
        return self.shape[1]

    def dof(self) -> int:
        if self.linear_side is None:
            return quadratic_dof(self.m, self.n)
        return constrained_dof(self.m, self.n)

    def without_entry(self, row: int, col: int) -> "QuadraticSystem":
        kept = tuple(e for e in self.known_entries if (e[0], e[1]) != (row, col))
        return QuadraticSystem(self.gram, self.shape, kept, self.linear_side)

    def augmented(self) -> "QuadraticSystem":
        """Fold the linear side into the Gram matrix as a fully known extra row."""
        if self.linear_side is None:
            return self
        w, z = self.linear_side
        m, n = self.shape
        g = np.empty((m + 1, m + 1))
        g[:m, :m] = self.gram
        g[:m, m] = z
        g[m, :m] = z
        g[m, m] = w @ w
        known = self.known_entries + tuple((m, j, w[j]) for j in range(n))
        return QuadraticSystem(g, (m + 1, n), known)


@dataclass(frozen=True)
class SolutionSet:
    candidates: tuple[np.ndarray, ...]
    branch_log: tuple[tuple[int, ...], ...]
    residuals: tuple[float, ...]
    row_order: tuple[int, ...] = ()

    def __len__(self) -> int:
        return len(self.candidates)

    def closest(self, truth: np.ndarray) -> tuple[int, np.ndarray]:
        dists = [np.max(np.abs(c - truth)) for c in self.candidates]
        i = int(np.argmin(dists))
        return i, self.candidates[i]


@dataclass
class RecoverabilityReport:
    dof: int
    basis_rows: list
    condition_1_ok: bool
    condition_2_ok: bool
    failure_detail: str = ""
    step_ranks: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.condition_1_ok and self.condition_2_ok


def cholesky_particular(gram: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Lower-triangular ``L`` with ``L L^T = gram``.

    Raises NotPositiveDefiniteError when a pivot falls below ``tol * max|gram|``.
    """
    c = np.array(gram, dtype=float)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise RecoveryError(f"expected a square matrix, got shape {c.shape}")
    scale = float(np.max(np.abs(c))) if c.size else 0.0
    if np.max(np.abs(c - c.T), initial=0.0) > SYMMETRY_TOL * max(scale, 1.0):
        raise AsymmetricInputError("asymmetric input")
    n = c.shape[0]
    low = np.zeros_like(c)
    for j in range(n):
        pivot = c[j, j] - low[j, :j] @ low[j, :j]
        if pivot <= tol * max(scale, np.finfo(float).tiny):
            raise NotPositiveDefiniteError(f"not positive definite (pivot {j} = {pivot:.3g})")
        low[j, j] = np.sqrt(pivot)
        low[j + 1:, j] = (c[j + 1:, j] - low[j + 1:, :j] @ low[j, :j]) / low[j, j]
    return low


def random_orthogonal(n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    # sign fix makes the draw Haar distributed
    return q * np.sign(np.where(np.diag(r) == 0, 1.0, np.diag(r)))


def orthogonal_family_sample(particular: np.ndarray, seed: int,
                             rotation: Optional[np.ndarray] = None) -> np.ndarray:
    """Another solution ``particular @ P`` of the same Gram system."""
    a = np.asarray(particular, dtype=float)
    if a.ndim != 2:
        raise RecoveryError(f"particular solution must be a matrix, got ndim={a.ndim}")
    p = random_orthogonal(a.shape[1], seed) if rotation is None else np.asarray(rotation)
    if p.shape != (a.shape[1], a.shape[1]):
        raise RecoveryError("rotation must be n x n")
    return a @ p


def relative_error(estimate: np.ndarray, truth: np.ndarray) -> float:
    """Mean absolute error divided by the mean absolute value of ``truth``."""
    est = np.asarray(estimate, dtype=float)
    tru = np.asarray(truth, dtype=float)
    if est.shape != tru.shape:
        raise RecoveryError(f"shape mismatch: {est.shape} vs {tru.shape}")
    denom = float(np.mean(np.abs(tru)))
    if denom <= np.finfo(float).eps:
        raise RecoveryError("zero-mean truth: relative error undefined")
    return float(np.mean(np.abs(est - tru))) / denom


# --------------------------------------------------------------------------
# constructive solver


@dataclass
class _Plan:
    gram: np.ndarray
    n: int
    order: list[int]
    known_cols: list[np.ndarray]
    known_vals: list[np.ndarray]
    tol: float
    rank_floor: float
    scale: float
    root_gap: float


def _make_plan(system: QuadraticSystem, rtol: float) -> _Plan:
    aug = system.augmented()
    m, n = aug.shape
    cols: list[list[int]] = [[] for _ in range(m)]
    vals: list[list[float]] = [[] for _ in range(m)]
    for r, c, v in aug.known_entries:
        cols[r].append(c)
        vals[r].append(v)
    counts = [len(c) for c in cols]
    # non-increasing known counts, stable on row index
    order = sorted(range(m), key=lambda r: -counts[r])
    scale = float(np.max(np.abs(aug.gram))) if aug.gram.size else 0.0
    return _Plan(
        gram=aug.gram,
        n=n,
        order=order,
        known_cols=[np.array(c, dtype=int) for c in cols],
        known_vals=[np.array(v, dtype=float) for v in vals],
        tol=rtol * max(scale, np.finfo(float).tiny),
        rank_floor=1e-12 * np.sqrt(max(scale, np.finfo(float).tiny)),
        scale=scale,
        root_gap=SAME_RTOL * np.sqrt(max(scale, np.finfo(float).tiny)),
    )


def _numeric_rank(s: np.ndarray, floor: float) -> int:
    if s.size == 0:
        return 0
    cut = max(RANK_RTOL * s[0], floor)
    return int(np.sum(s > cut))


def _solve_row(plan: _Plan, step: int, solved: np.ndarray):
    """Candidate values for the row at position ``step`` of ``plan.order``.

    ``solved`` holds the rows already fixed (in processing order).  Returns
    ``(options, rank, unknowns)`` where options is a list of
    ``(row_vector, sign)`` pairs; an empty list means the branch is infeasible.
    """
    r = plan.order[step]
    n = plan.n
    kc, kv = plan.known_cols[r], plan.known_vals[r]
    unknown = np.setdiff1d(np.arange(n), kc, assume_unique=True)
    u = unknown.size
    prev = [plan.order[i] for i in range(step)]
    row = np.zeros(n)
    row[kc] = kv
    diag_rhs = plan.gram[r, r] - kv @ kv

    if u == 0:
        ok = abs(diag_rhs) <= plan.tol
        if step:
            ok = ok and np.max(np.abs(solved @ row - plan.gram[prev, r])) <= plan.tol
        return ([(row, 0)] if ok else []), 0, 0

    if step:
        mat = solved[:, unknown]
        rhs = plan.gram[prev, r] - solved[:, kc] @ kv
        _, s, vt = np.linalg.svd(mat, full_matrices=True)
        rank = _numeric_rank(s, plan.rank_floor)
    else:
        mat = np.zeros((0, u))
        rhs = np.zeros(0)
        vt = np.eye(u)
        rank = 0

    if rank < u - 1:
        return None, rank, u

    # noise already in the solved rows reaches x_p amplified by the condition
    # number, so the redundant equations are checked with that much slack
    tol = plan.tol * (s[0] / s[rank - 1] if rank else 1.0)
    if rank:
        # minimum-norm particular solution restricted to the numeric rank
        x_p = np.linalg.lstsq(mat, rhs, rcond=RANK_RTOL)[0]
        x_p = vt[:rank].T @ (vt[:rank] @ x_p)
        lin_res = np.max(np.abs(mat @ x_p - rhs))
        if lin_res > tol * max(1.0, np.sqrt(u)):
            return [], rank, u
    else:
        x_p = np.zeros(u)

    if rank == u:
        row[unknown] = x_p
        if abs(x_p @ x_p - diag_rhs) > tol:
            return [], rank, u
        return [(row, 0)], rank, u

    v = vt[rank]
    s2 = diag_rhs - x_p @ x_p
    if s2 < -tol:
        return [], rank, u
    # roots closer than root_gap are one candidate.  the cut is on the root
    # gap, not on tol: snapping every s2 <= tol would cost up to sqrt(tol)
    s = np.sqrt(max(s2, 0.0))
    if 2 * s <= plan.root_gap:
        row[unknown] = x_p
        return [(row, 0)], rank, u
    options = []
    for sign in (1, -1):
        cand = row.copy()
        cand[unknown] = x_p + sign * s * v
        options.append((cand, sign))
    return options, rank, u


def _polish(plan: _Plan, free: np.ndarray, cands: np.ndarray, sweeps: int = 3,
            chunk: int = 256) -> np.ndarray:
    """Gauss-Newton on every Gram equation at once, knowns held fixed.

    The row-by-row solve fits each row only to the rows before it, so noise in
    the Gram accumulates down the order; a joint least-squares fit spreads it.
    ``cands`` is a stack of candidates; a candidate keeps a step only if its
    worst residual drops.
    """
    out = cands.copy()
    _, k, n = cands.shape
    iu, ju = np.triu_indices(k)
    idx = np.flatnonzero(free)
    eq = np.arange(iu.size)[:, None]
    cols = np.arange(n)
    left, right = iu[:, None] * n + cols, ju[:, None] * n + cols
    target = plan.gram[iu, ju]
    floor = 8 * np.finfo(float).eps * max(plan.scale, np.finfo(float).tiny)

    def residual(x):
        return (x @ np.swapaxes(x, 1, 2))[:, iu, ju] - target

    for lo in range(0, len(out), chunk):
        a = out[lo:lo + chunk]
        res = residual(a)
        worst = np.max(np.abs(res), axis=1)
        for _ in range(sweeps):
            live = worst > floor
            if not live.any():
                break
            al, rl = a[live], res[live]
            jac = np.zeros((len(al), iu.size, k * n))
            jac[:, eq, left] = al[:, ju]
            jac[:, eq, right] += al[:, iu]
            jac = jac[:, :, idx]
            jt = np.swapaxes(jac, 1, 2)
            try:
                step = np.linalg.solve(jt @ jac, -(jt @ rl[:, :, None]))[:, :, 0]
            except np.linalg.LinAlgError:
                break
            b = al.reshape(len(al), -1).copy()
            b[:, idx] += step
            b = b.reshape(al.shape)
            res_b = residual(b)
            worst_b = np.max(np.abs(res_b), axis=1)
            better = worst_b < worst[live]
            if not better.any():
                break
            pos = np.flatnonzero(live)[better]
            a[pos], res[pos], worst[pos] = b[better], res_b[better], worst_b[better]
        out[lo:lo + chunk] = a
    return out


def _check_shape_feasible(system: QuadraticSystem) -> None:
    m, n = system.shape
    rows = m + (system.linear_side is not None)
    if rows < n - 1:
        raise InsufficientRowsError(
            f"insufficient rows for basis: {rows} rows available, {n - 1} required"
        )


def recover_matrix(system: QuadraticSystem, rtol: float = RESIDUAL_RTOL,
                   max_branches: int = 1 << 16, polish: bool = True) -> SolutionSet:
    """Enumerate every matrix consistent with the Gram, known-entry and linear constraints.

    Both roots of each quadratic step are followed; a branch is dropped as
    soon as one of its equations is violated by more than ``rtol * max|G|``.
    Surviving candidates are then refit to all equations jointly unless
    ``polish`` is off.
    """
    _check_shape_feasible(system)
    plan = _make_plan(system, rtol)
    rows_total = len(plan.order)
    branches: list[tuple[list[np.ndarray], tuple[int, ...]]] = [([], ())]
    for step in range(rows_total):
        nxt = []
        for rows, signs in branches:
            solved = np.array(rows) if rows else np.zeros((0, plan.n))
            options, rank, u = _solve_row(plan, step, solved)
            if options is None:
                raise RankDeficiencyError(step + 1, rank, u, row=plan.order[step])
            for vec, sign in options:
                nxt.append((rows + [vec], signs + ((sign,) if sign else ())))
        if not nxt:
            raise InconsistentKnownsError(
                f"inconsistent knowns: every branch violates the constraints at step {step + 1}"
            )
        if len(nxt) > max_branches:
            raise RecoveryError(f"branch count exceeded {max_branches}")
        branches = nxt

    m, n = system.shape
    candidates, logs, residuals = [], [], []
    inverse = np.argsort(plan.order)
    free = np.ones((len(plan.order), n), dtype=bool)
    for r, cols in enumerate(plan.known_cols):
        free[r, cols] = False
    free = free.ravel()
    # branches split only where the two roots are over root_gap apart, so the
    # candidates are already distinct
    stack = np.array([rows for rows, _ in branches])[:, inverse]
    if polish:
        stack = _polish(plan, free, stack)
    for full, (_, signs) in zip(stack, branches):
        a = full[:m].copy()
        candidates.append(a)
        logs.append(signs)
        residuals.append(system_residual(system, a))
    for c in candidates:
        c.setflags(write=False)
    return SolutionSet(tuple(candidates), tuple(logs), tuple(residuals), tuple(plan.order))


def system_residual(system: QuadraticSystem, a: np.ndarray) -> float:
    """Max-abs residual of the Gram and (if present) linear constraints."""
    res = float(np.max(np.abs(a @ a.T - system.gram), initial=0.0))
    if system.linear_side is not None:
        w, z = system.linear_side
        res = max(res, float(np.max(np.abs(a @ w - z), initial=0.0)))
    return res


def check_recoverability(system: QuadraticSystem, rtol: float = RESIDUAL_RTOL) -> RecoverabilityReport:
    """Test the known-entry placement against both sufficient conditions.

    Condition 1 is combinatorial: after sorting rows by known count, the t-th
    basis row must carry at least n - t known entries (the fully known ``W^T``
    row fills the first slot when a linear side is present).  Condition 2 is
    numeric and is evaluated by walking the constructive procedure along the
    first feasible branch, recording the rank of every coefficient matrix.
    """
    m, n = system.shape
    has_linear = system.linear_side is not None
    try:
        dof = system.dof()
        shape_detail = ""
    except InsufficientRowsError as exc:
        dof = (n - 1) * (n - 2) // 2 if has_linear else n * (n - 1) // 2
        shape_detail = str(exc)

    plan = _make_plan(system, rtol)
    counts = [plan.known_cols[r].size for r in plan.order]
    basis_len = max(n - 1, 0)
    basis = [("W" if r == m and has_linear else r) for r in plan.order[:basis_len]]
    needed = [n - t for t in range(1, basis_len + 1)]
    cond1 = len(counts) >= basis_len and all(
        c >= need for c, need in zip(counts, needed)
    )
    details = []
    if shape_detail:
        details.append(shape_detail)
        cond1 = False
    elif not cond1:
        details.append(
            f"known counts per basis row {counts[:basis_len]} do not cover {needed}"
        )

    cond2, step_ranks, detail2 = _walk_first_branch(plan)
    if detail2:
        details.append(detail2)
    return RecoverabilityReport(
        dof=dof,
        basis_rows=basis,
        condition_1_ok=cond1,
        condition_2_ok=cond2,
        failure_detail="; ".join(details),
        step_ranks=step_ranks,
    )


def _walk_first_branch(plan: _Plan):
    ranks: list[tuple[int, int]] = []

    def walk(step: int, rows: list[np.ndarray]):
        if step == len(plan.order):
            return True, ""
        solved = np.array(rows) if rows else np.zeros((0, plan.n))
        options, rank, u = _solve_row(plan, step, solved)
        ranks.append((rank, u))
        if options is None:
            return False, f"coefficient matrix at step {step + 1} has rank {rank} < {u - 1}"
        last = "inconsistent constraints at step %d" % (step + 1)
        for vec, _ in options:
            del ranks[step + 1:]
            ok, detail = walk(step + 1, rows + [vec])
            if ok or detail.startswith("coefficient"):
                return ok, detail
            last = detail
        return False, last

    ok, detail = walk(0, [])
    return ok, ranks, detail

