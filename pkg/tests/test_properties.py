"""Invariants checked over generated inputs."""
import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from fedleak import protocols as P
from fedleak.attacks import kdr_horizontal, kdr_vertical
from fedleak.errors import AttackError, RankDeficiencyError
from fedleak.recovery import (QuadraticSystem, constrained_dof, orthogonal_family_sample,
                              quadratic_dof, recover_matrix, system_residual)
from fedleak.tree import attack as TA
from fedleak.tree import ensemble as E
from fedleak.workbench.report import AttackReport

from conftest import triangular_known

seeds = st.integers(0, 2**31 - 1)


@st.composite
def shapes(draw, max_n=5, linear=False):
    n = draw(st.integers(2 if linear else 1, max_n))
    m = draw(st.integers(max(n - 1, 1), n + 4))
    return m, n


def _truth(seed, m, n):
    return np.random.default_rng(seed).uniform(-2, 2, (m, n))


# -- recovery ----------------------------------------------------------------

@given(shapes(6), seeds)
def test_orthogonal_closure(shape, seed):
    a = _truth(seed, *shape)
    b = orthogonal_family_sample(a, seed + 1)
    np.testing.assert_allclose(b @ b.T, a @ a.T, atol=1e-10)


@given(shapes(4), seeds)
def test_candidates_satisfy_constraints(shape, seed):
    m, n = shape
    a = _truth(seed, m, n)
    system = QuadraticSystem(a @ a.T, (m, n), triangular_known(a))
    sol = recover_matrix(system)
    assert 1 <= len(sol)
    scale = max(1.0, float(np.abs(a @ a.T).max()))
    for c in sol.candidates:
        assert system_residual(system, c) <= 1e-7 * scale
        for r, j, v in system.known_entries:
            assert c[r, j] == pytest.approx(v, abs=1e-9 * scale)
    _, best = sol.closest(a)
    np.testing.assert_allclose(best, a, atol=1e-6 * scale)


@given(shapes(4, linear=True), seeds)
def test_linear_side_recovers_truth(shape, seed):
    m, n = shape
    a = _truth(seed, m, n)
    w = np.random.default_rng(seed + 7).normal(size=n)
    known = triangular_known(a[:, 1:] if n > 2 else a[:, :0])
    known = tuple((r, c + 1, v) for r, c, v in known)
    assert len(known) == constrained_dof(m, n)
    sol = recover_matrix(QuadraticSystem(a @ a.T, (m, n), known, (w, a @ w)))
    _, best = sol.closest(a)
    np.testing.assert_allclose(best, a, atol=1e-6 * max(1.0, np.abs(a).max() ** 2))


@given(st.integers(2, 5), st.integers(0, 4), seeds, st.data())
def test_dropping_a_known_entry_is_rank_deficient(n, extra, seed, data):
    m = n - 1 + extra
    a = _truth(seed, m, n)
    known = triangular_known(a)
    assert len(known) == quadratic_dof(m, n)
    r, c, _ = data.draw(st.sampled_from(known))
    system = QuadraticSystem(a @ a.T, (m, n), known).without_entry(r, c)
    with pytest.raises(RankDeficiencyError):
        recover_matrix(system)


# -- known-data ratio --------------------------------------------------------

@given(st.integers(1, 60), st.integers(1, 200))
def test_kdr_vertical_range(n_a, m):
    assume(m >= n_a - 2)
    k = kdr_vertical(n_a, m)
    assert 0 <= k < 1
    assert k * m * n_a == pytest.approx(constrained_dof(m, n_a))
    assert kdr_vertical(n_a, m + 1) <= k


@given(st.integers(1, 60), st.integers(1, 60))
def test_kdr_horizontal_range(m, n):
    k = kdr_horizontal(m, n)
    assert 0 <= k < 1
    if m <= n:
        assert k * m * n == pytest.approx(quadratic_dof(n, m))
        assert kdr_horizontal(m, n + 1) <= k


# -- query budget ------------------------------------------------------------

widths = st.floats(1e-3, 1e4)
eps_exp = st.integers(-9, -1)


@given(widths, eps_exp, st.integers(3, 1000))
def test_query_count_is_minimal(width, e, grid):
    eps = 10.0 ** e
    assume(eps < width)
    n_q = TA.predict_query_count(0.0, width, eps, grid)
    assert n_q >= 1
    # n_q rounds shrink the interval below eps; one fewer would not
    assert width / (grid - 1) ** n_q <= eps * (1 + 1e-9)
    assert n_q == 1 or width / (grid - 1) ** (n_q - 1) > eps * (1 - 1e-9)


@given(widths, eps_exp, st.integers(3, 400))
def test_query_count_monotone(width, e, grid):
    eps = 10.0 ** e
    assume(eps < width)
    n_q = TA.predict_query_count(0.0, width, eps, grid)
    assert TA.predict_query_count(0.0, width, eps, grid + 1) <= n_q
    if eps / 10 < width:
        assert TA.predict_query_count(0.0, width, eps / 10, grid) >= n_q


def _steal_stump(threshold, eps, grid, n_victim):
    root = E.Node(0, "A", n_victim - 1, threshold, 1, 2, None, 0)
    tree = E.Tree([root, E.Node(1, weight=-1.0, depth=1), E.Node(2, weight=1.0, depth=1)])
    ens = E.BoostedEnsemble([tree], (("B", 1), ("A", n_victim)), "B", 1.0, 0.0)
    return TA.steal_thresholds(TA.LeafOracle(ens), TA.tree_info(ens, "B"),
                               TA.AttackConfig(eps, grid, (0.0, 10.0)), ens.parties, "B")


# a split at the upper bound sends every probe left and cannot be observed
@given(st.floats(0.0, 10.0, exclude_max=True), st.sampled_from([1e-2, 1e-4, 1e-7]),
       st.sampled_from([3, 11, 401]), st.integers(1, 4))
def test_threshold_recovered_within_epsilon(threshold, eps, grid, n_victim):
    feature = n_victim - 1
    (node,) = _steal_stump(threshold, eps, grid, n_victim).nodes
    assert node.feature_id == feature
    assert abs(node.estimate - threshold) <= eps
    assert node.rounds == TA.predict_query_count(0.0, 10.0, eps, grid)


def test_threshold_at_upper_bound_unobservable():
    with pytest.raises(AttackError):
        _steal_stump(10.0, 1e-2, 3, 1)


# -- protocol ----------------------------------------------------------------

@given(st.integers(2, 6), st.integers(1, 3), st.integers(1, 3), seeds,
       st.floats(1e-3, 0.05), st.floats(0.0, 0.5))
def test_vfl_update_identity(m, na, nb, seed, eta, alpha):
    """C d_k = ((1 - eta alpha) z_k - z_{k+1}) / eta for the victim block."""
    rng = np.random.default_rng(seed)
    xa = rng.standard_normal((m, na))
    xb = rng.standard_normal((m, nb))
    y = rng.standard_normal(m)
    hp = P.Hyperparams(eta=eta, alpha=alpha, iterations=5)
    run = P.vfl_linreg_train(P.DesignMatrix(xa, "A"), P.DesignMatrix(xb, "B"), y, hp,
                             seed=seed % 1000)
    w = run.hidden[P.WEIGHTS]["A"]
    d = run.hidden[P.RESIDUAL]
    z = w @ xa.T
    c = xa @ xa.T
    for k in range(5):
        lhs = c @ d[k]
        rhs = ((1 - eta * alpha) * z[k] - z[k + 1]) / eta
        np.testing.assert_allclose(lhs, rhs, atol=1e-8 * max(1.0, np.abs(lhs).max()))


# -- reports -----------------------------------------------------------------

finite = st.floats(allow_nan=False, allow_infinity=False)
small_dicts = st.dictionaries(st.text(min_size=1, max_size=8),
                              st.one_of(finite, st.integers(-1000, 1000), st.text(max_size=8)),
                              max_size=4)


@given(st.sampled_from(["vfl-linreg", "secureboost"]), st.integers(0, 10**6),
       st.sampled_from(["pass", "fail", "error"]), st.none() | finite, st.none() | finite,
       small_dicts, st.lists(st.lists(st.integers(0, 50), min_size=2, max_size=2), max_size=5),
       small_dicts)
def test_report_round_trip(kind, seed, status, kdr, rel, constraints, known, timing):
    rep = AttackReport(kind, seed, status, kdr=kdr, rel_error=rel, constraints=constraints,
                       known_entries=known, timing=timing)
    assert AttackReport.from_json(rep.to_json()) == rep
