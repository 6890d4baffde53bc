"""Honest-but-curious inversion attacks against federated regression.

Every attack reads only what the attacking party's :class:`Transcript`
exposes plus the oracles it is handed explicitly.  The shared training
configuration (learning rate, regularization) is taken from the transcript,
i.e. both parties are assumed to know it.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from . import protocols as P
from .errors import (
    AttackError,
    DegenerateTranscriptError,
    InsufficientDataError,
    OracleError,
    RankDeficientTranscriptError,
    SigmoidRangeError,
)
from .recovery import RANK_RTOL, QuadraticSystem, SolutionSet, recover_matrix, relative_error

VERTICAL_2PARTY = "vertical-2party"
VERTICAL_MULTIPARTY = "vertical-multiparty"
HORIZONTAL_2PARTY = "horizontal-2party"
SETTINGS = (VERTICAL_2PARTY, VERTICAL_MULTIPARTY, HORIZONTAL_2PARTY)
LINEAR = "linear"
LOGISTIC = "logistic"

CONVERGENCE_THRESHOLD = 1e-6
FAKE_SCALE = 1e-3
# Gram matrices extracted from transcripts carry round-off from several solves,
# so branch pruning runs looser than on exact inputs.
PIPELINE_RTOL = 1e-6


class ConvergenceWarning(UserWarning):
    pass


def kdr_vertical(n_a: int, m: int) -> float:
    """Known-data ratio needed against a vertical victim with ``n_a`` features."""
    if n_a < 1 or m < 1:
        raise AttackError("counts must be positive")
    return (n_a - 1) * (n_a - 2) / (2.0 * m * n_a)


def kdr_horizontal(m: int, n: int) -> float:
    """Known-data ratio against a horizontal victim holding ``m`` rows of ``n`` features."""
    if m < 1 or n < 1:
        raise AttackError("counts must be positive")
    if m <= n:
        return (m - 1) / (2.0 * n)
    return (2 * m - n - 1) / (2.0 * m)


def _rank(mat: np.ndarray, rtol: float = RANK_RTOL) -> int:
    if mat.size == 0:
        return 0
    s = np.linalg.svd(mat, compute_uv=False)
    return int(np.sum(s > rtol * s[0])) if s[0] > 0 else 0


# ---------------------------------------------------------------------------
# vertical setting


def inject_fake_features(xb: P.DesignMatrix, count: int, seed: int,
                         scale: float = FAKE_SCALE) -> P.DesignMatrix:
    """Append ``count`` tiny uniform random columns to the attacker's data."""
    if count < 0:
        raise AttackError("fake feature count must be non-negative")
    if count == 0:
        return xb
    rng = np.random.default_rng([seed, 0xFA4E])
    fake = rng.uniform(-scale, scale, size=(xb.m, count))
    names = xb.feature_names + tuple(f"fake_{i}" for i in range(count))
    return P.DesignMatrix(np.hstack([xb.values, fake]), xb.party_id, names)


def _own(transcript: P.Transcript, kind: str, iteration: Optional[int] = None):
    return transcript.get(kind, transcript.observer, iteration)


def recover_residual(transcript: P.Transcript, k: int) -> np.ndarray:
    """Solve ``X_B^T d_k = g_B,k - alpha W_B,k`` for the hidden residual."""
    xb = _own(transcript, P.FEATURES)
    g = _own(transcript, P.GRADIENT, k)
    w = _own(transcript, P.WEIGHTS, k)
    m = xb.shape[0]
    if _rank(xb) < m:
        raise RankDeficientTranscriptError(
            f"rank deficient — inject fake features (rank {_rank(xb)} < {m} samples)"
        )
    rhs = g - transcript.hyperparams.alpha * w
    return np.linalg.lstsq(xb.T, rhs, rcond=None)[0]


def recover_intermediate_zA(transcript: P.Transcript, k: int) -> np.ndarray:
    """Victim's intermediate feature at iteration ``k`` (linear model)."""
    d = recover_residual(transcript, k)
    return d - _own(transcript, P.INTERMEDIATE, k) + _own(transcript, P.LABELS)


def recover_zA_logistic(transcript: P.Transcript, k: int) -> np.ndarray:
    """Victim's intermediate feature at iteration ``k`` (cubic-sigmoid model)."""
    u = recover_residual(transcript, k)
    act = u + _own(transcript, P.LABELS)
    try:
        s = P.poly_sigmoid_inverse(act, tol=1e-9)
    except SigmoidRangeError:
        raise SigmoidRangeError(
            f"sigmoid value outside invertible range at iteration {k}: "
            f"[{act.min():.4g}, {act.max():.4g}]"
        ) from None
    return s - _own(transcript, P.INTERMEDIATE, k)


def _recover_z(transcript: P.Transcript, k: int) -> np.ndarray:
    if transcript.hyperparams.activation == P.POLY_SIGMOID:
        return recover_zA_logistic(transcript, k)
    return recover_intermediate_zA(transcript, k)


@dataclass(frozen=True)
class GramEstimate:
    gram: np.ndarray
    pairs_used: int
    pairs_for_rank: int
    consistency: float  # max-abs residual of the stacked equations


def _solve_gram(dirs: np.ndarray, resp: np.ndarray, what: str) -> GramEstimate:
    """Solve ``C @ dirs[:, i] = resp[:, i]`` for a symmetric C.

    Columns are accumulated until ``dirs`` reaches full row rank; the rest
    only tighten the least-squares fit.
    """
    dim, count = dirs.shape
    scale = np.max(np.abs(dirs), initial=0.0)
    if count == 0 or scale == 0.0:
        raise DegenerateTranscriptError(f"degenerate transcript: every {what} vanishes")
    needed = None
    for j in range(1, count + 1):
        if _rank(dirs[:, :j]) == dim:
            needed = j
            break
    if needed is None:
        raise InsufficientDataError(
            f"insufficient independent {what}: rank {_rank(dirs)} < {dim}"
        )
    # in the singular basis of dirs, column j of U^T C U is resp scaled by
    # 1/s_j.  C is symmetric, so each off-diagonal pair is read from the side
    # with the larger singular value and only the weakest directions stay noisy
    u, s, vt = np.linalg.svd(dirs, full_matrices=False)
    proj = u.T @ ((resp @ vt.T) / s)
    proj = np.where(s[None, :] >= s[:, None], proj, proj.T)
    c = u @ proj @ u.T
    c = 0.5 * (c + c.T)
    consistency = float(np.max(np.abs(c @ dirs - resp)))
    return GramEstimate(c, count, needed, consistency)


def extract_quadratic_vfl(transcript: P.Transcript,
                          iterations: Optional[Sequence[int]] = None,
                          z_series: Optional[Mapping[int, np.ndarray]] = None) -> GramEstimate:
    """Estimate ``X_A X_A^T`` from adjacent-iteration pairs.

    One gradient step gives ``z_{k+1} = (1 - eta alpha) z_k - eta X_A X_A^T d_k``,
    so each pair contributes one column ``C d_k``.
    """
    hp = transcript.hyperparams
    if hp.eta <= 0:
        raise DegenerateTranscriptError("degenerate transcript: eta = 0 means no update")
    ks = list(range(transcript.iterations())) if iterations is None else list(iterations)
    pairs = [k for k in ks if k + 1 in ks]
    if not pairs:
        raise InsufficientDataError("insufficient independent d vectors: no adjacent pair")
    z = dict(z_series) if z_series is not None else {}
    for k in ks:
        if k not in z:
            z[k] = _recover_z(transcript, k)
    d = {k: recover_residual(transcript, k) for k in pairs}
    dirs = np.column_stack([d[k] for k in pairs])
    resp = np.column_stack([
        ((1 - hp.eta * hp.alpha) * z[k] - z[k + 1]) / hp.eta for k in pairs
    ])
    if np.max(np.abs(resp)) == 0.0 and np.max(np.abs(dirs)) > 0:
        raise DegenerateTranscriptError("degenerate transcript: victim features never moved")
    return _solve_gram(dirs, resp, "d vectors")


def extract_weights_by_query(oracle: Callable[[np.ndarray], float], n_a: int,
                             strategy: str = "basis", seed: int = 0) -> np.ndarray:
    """Recover the victim's final weights through ``n_a + 1`` inference queries."""
    if strategy == "basis":
        queries = np.vstack([np.zeros(n_a), np.eye(n_a)])
    elif strategy == "random":
        rng = np.random.default_rng(seed)
        queries = rng.standard_normal((n_a + 1, n_a))
    else:
        raise AttackError(f"unknown query strategy {strategy!r}")
    try:
        responses = np.array([float(np.squeeze(oracle(q))) for q in queries])
    except OracleError:
        raise
    except Exception as exc:  # noqa: BLE001 - anything the oracle throws is a refusal
        raise OracleError(f"oracle refusal: {exc}") from exc
    if _rank(queries) < n_a:
        raise AttackError("queries are not linearly independent")
    return np.linalg.lstsq(queries, responses, rcond=None)[0]


def build_linear_constraints(z_a_last, w_a, grad_norm: Optional[float] = None,
                             threshold: float = CONVERGENCE_THRESHOLD):
    """Pair the victim's last intermediate feature with its queried weights.

    When ``grad_norm`` is given and not below ``threshold`` the model is not
    considered converged and a :class:`ConvergenceWarning` is emitted.
    """
    if grad_norm is not None and not grad_norm < threshold:
        warnings.warn(
            f"not converged — linear constraint unreliable (gradient norm {grad_norm:.3g})",
            ConvergenceWarning, stacklevel=2,
        )
    return np.asarray(w_a, dtype=float).copy(), np.asarray(z_a_last, dtype=float).copy()


def multiparty_linear_inversion(transcript: P.Transcript, victim: str) -> np.ndarray:
    """Invert a victim's features from a coalition holding plaintext gradients and residuals.

    Adjacent iterations satisfy
    ``g_{k+1} - (1 - eta alpha) g_k = X^T (d_{k+1} - d_k)``, which is linear in X.

    Each residual difference equals ``X_all (w_{k+1} - w_k)``, so the differences
    span at most the column space of the joint design, which already contains
    the victim's columns.  Once they span all of it the solution inside that
    span is exact, even with more samples than features.
    """
    hp = transcript.hyperparams
    grads = transcript.series(P.GRADIENT, victim)
    resid = transcript.series(P.RESIDUAL)
    ks = sorted(k for k in grads if k in resid and k + 1 in grads and k + 1 in resid)
    if not ks:
        raise InsufficientDataError("insufficient iterations: plaintext gradients "
                                    "and residuals are not both visible")
    dd = np.column_stack([resid[k + 1] - resid[k] for k in ks])
    dg = np.column_stack([grads[k + 1] - (1 - hp.eta * hp.alpha) * grads[k] for k in ks])
    m = dd.shape[0]
    if np.max(np.abs(dd)) == 0.0:
        raise DegenerateTranscriptError("degenerate transcript: residuals never change")
    n_all = sum(n for _, n in transcript.parties) or m
    need = min(m, n_all)
    # dd^T X = dg^T, solved on the leading singular directions only: past rank
    # ``need`` the spectrum is rounding noise, and inverting it ruins X
    u, s, vt = np.linalg.svd(dd.T, full_matrices=False)
    rank = int(np.sum(s > RANK_RTOL * s[0]))
    if rank < need:
        raise InsufficientDataError(
            f"insufficient iterations: {rank} independent residual differences, need {need}"
        )
    return vt[:need].T @ ((u[:, :need].T @ dg.T) / s[:need, None])


# ---------------------------------------------------------------------------
# horizontal setting


def _peers(transcript: P.Transcript) -> list[str]:
    return [lab for lab, _ in transcript.parties if lab != transcript.observer]


def hfl_recover_gradient(transcript: P.Transcript, k: int) -> np.ndarray:
    """Victim gradient from two consecutive averaged models and the own gradient."""
    hp = transcript.hyperparams
    if hp.eta <= 0:
        raise AttackError("eta must be positive to invert the averaging step")
    if len(transcript.parties) != 2:
        raise AttackError("gradient recovery from averages needs exactly two parties")
    try:
        w_k = transcript.get(P.AVERAGED_WEIGHTS, None, k)
        w_next = transcript.get(P.AVERAGED_WEIGHTS, None, k + 1)
        g_own = _own(transcript, P.GRADIENT, k)
    except KeyError as exc:
        raise InsufficientDataError(f"missing transcript events: {exc}") from None
    return (2.0 / hp.eta) * (w_k - w_next) - g_own


def extract_quadratic_hfl(gradients: Mapping[int, np.ndarray] | Sequence[np.ndarray],
                          weights: Mapping[int, np.ndarray] | Sequence[np.ndarray],
                          alpha: float = 0.0) -> GramEstimate:
    """Estimate ``X_A^T X_A`` from ``g_{k+1} - g_k = (X_A^T X_A + alpha I)(W_{k+1} - W_k)``."""
    if not isinstance(gradients, Mapping):
        gradients = dict(enumerate(gradients))
    if not isinstance(weights, Mapping):
        weights = dict(enumerate(weights))
    ks = sorted(k for k in gradients if k + 1 in gradients and k in weights and k + 1 in weights)
    if not ks:
        raise InsufficientDataError("insufficient independent weight differences")
    dw = np.column_stack([weights[k + 1] - weights[k] for k in ks])
    dg = np.column_stack([gradients[k + 1] - gradients[k] for k in ks])
    est = _solve_gram(dw, dg, "weight differences")
    if alpha:
        est = GramEstimate(est.gram - alpha * np.eye(est.gram.shape[0]),
                           est.pairs_used, est.pairs_for_rank, est.consistency)
    return est


# ---------------------------------------------------------------------------
# orchestration


@dataclass(frozen=True)
class AttackScenario:
    setting: str
    model: str = LINEAR
    known_entries: tuple = ()
    fake_feature_count: int = 0
    seed: int = 0
    victim: Optional[str] = None
    holdout_entries: tuple = ()
    solver_rtol: float = PIPELINE_RTOL

    def __post_init__(self):
        if self.setting not in SETTINGS:
            raise AttackError(f"unknown setting {self.setting!r}")
        if self.model not in (LINEAR, LOGISTIC):
            raise AttackError(f"unknown model {self.model!r}")
        if self.fake_feature_count < 0:
            raise AttackError("fake feature count must be non-negative")
        object.__setattr__(self, "known_entries",
                           tuple((int(r), int(c), float(v)) for r, c, v in self.known_entries))
        object.__setattr__(self, "holdout_entries",
                           tuple((int(r), int(c), float(v)) for r, c, v in self.holdout_entries))


@dataclass
class InversionResult:
    estimate: np.ndarray
    solution_count: int
    kdr: float
    rel_error: Optional[float] = None
    constraints_used: dict = field(default_factory=dict)
    estimate_rel_error: Optional[float] = None
    solutions: Optional[SolutionSet] = field(default=None, repr=False)
    candidate_rel_errors: list = field(default_factory=list, repr=False)


def _pick_victim(transcript: P.Transcript, scenario: AttackScenario) -> str:
    if scenario.victim is not None:
        return scenario.victim
    peers = _peers(transcript)
    if len(peers) != 1:
        raise AttackError(f"ambiguous victim among {peers}; set scenario.victim")
    return peers[0]


def _rank_candidates(sol: SolutionSet, system: QuadraticSystem, holdout) -> list[int]:
    def score(i):
        a = sol.candidates[i]
        miss = sum(abs(a[r, c] - v) for r, c, v in holdout)
        return (miss, sol.residuals[i])
    return sorted(range(len(sol)), key=score)


def _finish(sol: SolutionSet, system: QuadraticSystem, holdout, kdr, truth, used,
            transpose: bool = False) -> InversionResult:
    order = _rank_candidates(sol, system, holdout)
    cands = [c.T if transpose else c for c in sol.candidates]
    est = cands[order[0]]
    rel = est_rel = None
    errs = []
    if truth is not None:
        errs = [relative_error(c, truth) for c in cands]
        rel = min(errs)
        est_rel = errs[order[0]]
    return InversionResult(est, len(sol), kdr, rel, used, est_rel, sol, errs)


def vertical_inversion(scenario: AttackScenario, transcript: P.Transcript,
                       oracle: Callable[[np.ndarray], float],
                       ground_truth: Optional[np.ndarray] = None) -> InversionResult:
    hp = transcript.hyperparams
    victim = _pick_victim(transcript, scenario)
    n_a = dict(transcript.parties)[victim]
    K = transcript.iterations()
    if K < 2:
        raise InsufficientDataError("at least two training iterations are needed")
    z = {k: _recover_z(transcript, k) for k in range(K)}
    m = z[0].shape[0]
    gram = extract_quadratic_vfl(transcript, range(K), z)
    w_a = extract_weights_by_query(oracle, n_a)
    # The transcript ends one update before the final model; step z forward
    # with the recovered Gram so it pairs exactly with the queried weights.
    d_last = recover_residual(transcript, K - 1)
    z_final = (1 - hp.eta * hp.alpha) * z[K - 1] - hp.eta * gram.gram @ d_last
    w_side, z_side = build_linear_constraints(z_final, w_a)
    system = QuadraticSystem(gram.gram, (m, n_a), scenario.known_entries, (w_side, z_side))
    sol = recover_matrix(system, rtol=scenario.solver_rtol)
    used = {"quadratic": m * (m + 1) // 2, "linear": m,
            "known": len(scenario.known_entries), "iteration_pairs": gram.pairs_used,
            "gram_consistency": gram.consistency}
    kdr = len(scenario.known_entries) / (m * n_a)
    return _finish(sol, system, scenario.holdout_entries, kdr, ground_truth, used)


def horizontal_inversion(scenario: AttackScenario, transcript: P.Transcript,
                         ground_truth: Optional[np.ndarray] = None,
                         victim_rows: Optional[int] = None) -> InversionResult:
    hp = transcript.hyperparams
    K = transcript.iterations()
    grads = {k: hfl_recover_gradient(transcript, k) for k in range(K)}
    weights = transcript.series(P.AVERAGED_WEIGHTS)
    gram = extract_quadratic_hfl(grads, weights, hp.alpha)
    n = gram.gram.shape[0]
    if victim_rows is None:
        counts = dict(transcript.sample_counts)
        victim = _pick_victim(transcript, scenario)
        victim_rows = counts[victim] if victim in counts else _rank(gram.gram, 1e-9)
    m = victim_rows
    # solve for A^T, whose Gram is A^T A
    known = tuple((c, r, v) for r, c, v in scenario.known_entries)
    system = QuadraticSystem(gram.gram, (n, m), known)
    sol = recover_matrix(system, rtol=scenario.solver_rtol)
    holdout = tuple((c, r, v) for r, c, v in scenario.holdout_entries)
    used = {"quadratic": n * (n + 1) // 2, "linear": 0,
            "known": len(known), "iteration_pairs": gram.pairs_used,
            "gram_consistency": gram.consistency}
    kdr = len(known) / (m * n)
    return _finish(sol, system, holdout, kdr, ground_truth, used, transpose=True)


def multiparty_inversion(scenario: AttackScenario, transcript: P.Transcript,
                         ground_truth: Optional[np.ndarray] = None) -> InversionResult:
    victim = _pick_victim(transcript, scenario)
    est = multiparty_linear_inversion(transcript, victim)
    rel = relative_error(est, ground_truth) if ground_truth is not None else None
    used = {"quadratic": 0, "linear": est.size, "known": 0}
    return InversionResult(est, 1, 0.0, rel, used, rel)


def full_inversion(scenario: AttackScenario, transcripts, oracles=None,
                   ground_truth: Optional[np.ndarray] = None) -> InversionResult:
    """Run the whole attack pipeline for ``scenario.setting``.

    ``transcripts`` is the attacker's transcript (or a mapping holding it
    under the attacker's label).  ``rel_error`` is measured against the
    candidate closest to ``ground_truth``; ``estimate_rel_error`` against the
    top-ranked candidate.
    """
    transcript = transcripts
    if isinstance(transcripts, Mapping):
        if len(transcripts) != 1:
            raise AttackError("pass only the attacker's transcript")
        transcript = next(iter(transcripts.values()))
    if scenario.setting == VERTICAL_2PARTY:
        if oracles is None:
            raise AttackError("vertical inversion needs the prediction oracle")
        oracle = oracles["predict"] if isinstance(oracles, Mapping) else oracles
        return vertical_inversion(scenario, transcript, oracle, ground_truth)
    if scenario.setting == HORIZONTAL_2PARTY:
        return horizontal_inversion(scenario, transcript, ground_truth)
    return multiparty_inversion(scenario, transcript, ground_truth)
