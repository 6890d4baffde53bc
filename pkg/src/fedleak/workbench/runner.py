"""Train, attack and evaluate one configured scenario."""
from __future__ import annotations

import csv
import logging
import time
import warnings
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .. import attacks as A
from .. import protocols as P
from ..errors import ConfigError, FedLeakError
from ..recovery import constrained_dof, quadratic_dof
from ..tree import attack as T
from ..tree.ensemble import secureboost_train
from .config import ScenarioConfig
from .datasets import Dataset, load_dataset, split_horizontal, split_vertical, standardize, \
    synthetic_regression
from .placement import fill_known, place_known_entries
from .report import ERROR, FAIL, PASS, AttackReport

log = logging.getLogger(__name__)

VICTIM, ATTACKER = "A", "B"
SHARED_CONFIG = "training hyperparameters (eta, alpha) are known to every party"


def auto_step_size(blocks: Sequence[np.ndarray], alpha: float = 0.0, slope: float = 1.0,
                   average: int = 1) -> float:
    """``2 / (lmax + lmin)`` for the training Hessian built from ``blocks``.

    Vertical runs pass the party feature blocks (side by side); horizontal
    runs pass one block per party with ``average`` set to the party count.
    Zero eigenvalues are ignored, so rank-deficient data still gets a usable
    rate.
    """
    if average > 1:
        h = sum(b.T @ b for b in blocks) / average
    else:
        x = np.hstack(blocks)
        h = x.T @ x
    ev = np.linalg.eigvalsh(slope * h)
    ev = ev[ev > 1e-10 * ev.max()] + alpha
    return float(2.0 / (ev.max() + ev.min()))


def _holdout_entries(shape, taken, count: int, seed: int, truth) -> tuple:
    if count == 0:
        return ()
    rng = np.random.default_rng([seed, 0x401D])
    free = [(r, c) for r in range(shape[0]) for c in range(shape[1]) if (r, c) not in set(taken)]
    if count > len(free):
        raise ConfigError("not enough unknown entries left for the holdout")
    pick = rng.choice(len(free), size=count, replace=False)
    return fill_known([free[i] for i in sorted(pick)], truth)


@dataclass
class Outcome:
    """Attack result plus the numbers a report needs."""
    result: A.InversionResult
    known: tuple
    holdout: tuple = ()
    eta: float = 0.0
    iterations: int = 0
    losses: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def kdr(self) -> float:
        m, n = self.result.estimate.shape
        return (len(self.known) + len(self.holdout)) / (m * n)


def attack_vertical(xa: np.ndarray, xb: np.ndarray, y: np.ndarray, *, seed: int,
                    model: str = A.LINEAR, fake_features: int = 0, eta="auto",
                    alpha: float = 0.0, iterations: Optional[int] = None,
                    placement: str = "triangular", holdout: int = 0) -> Outcome:
    """Two-party vertical attack with the attacker holding ``xb`` and the labels."""
    m, n_a = xa.shape
    XA = P.DesignMatrix(xa, VICTIM)
    XB = A.inject_fake_features(P.DesignMatrix(xb, ATTACKER), fake_features, seed)
    slope = 0.25 if model == A.LOGISTIC else 1.0
    if eta == "auto":
        eta = auto_step_size([xa, xb], alpha, slope)
    iterations = iterations or 3 * m
    act = P.POLY_SIGMOID if model == A.LOGISTIC else P.IDENTITY
    hp = P.Hyperparams(eta=float(eta), alpha=alpha, iterations=iterations, activation=act)
    train = P.vfl_logreg_train if model == A.LOGISTIC else P.vfl_linreg_train
    run = train(XA, XB, y, hp, seed=seed)
    svc = P.PredictionService(run, VICTIM, ATTACKER, act)
    w = run.weights[VICTIM]
    dof = constrained_dof(m, n_a)
    pos = place_known_entries((m, n_a), dof, placement, seed, truth=xa,
                              linear_side=(w, xa @ w))
    known = fill_known(pos, xa)
    hold = _holdout_entries((m, n_a), pos, holdout, seed, xa)
    scen = A.AttackScenario(A.VERTICAL_2PARTY, model, known, fake_features, seed,
                            VICTIM, hold)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", A.ConvergenceWarning)
        res = A.full_inversion(scen, run.transcript(ATTACKER), svc.victim_score_oracle(), xa)
    return Outcome(res, known, hold, float(eta), iterations, run.losses)


def attack_horizontal(xa: np.ndarray, ya: np.ndarray, xb: np.ndarray, yb: np.ndarray, *,
                      seed: int, eta="auto", alpha: float = 0.0,
                      iterations: Optional[int] = None, placement: str = "triangular",
                      holdout: int = 0) -> Outcome:
    """Two-party horizontal attack; the victim holds ``xa``."""
    m, n = xa.shape
    if eta == "auto":
        eta = auto_step_size([xa, xb], alpha, average=2)
    iterations = iterations or 3 * n
    hp = P.Hyperparams(eta=float(eta), alpha=alpha, iterations=iterations)
    run = P.hfl_linreg_train([(P.DesignMatrix(xa, VICTIM), ya),
                              (P.DesignMatrix(xb, ATTACKER), yb)], hp, seed=seed)
    dof = quadratic_dof(n, m)
    pos = place_known_entries((m, n), dof, placement, seed, basis="columns", truth=xa)
    known = fill_known(pos, xa)
    hold = _holdout_entries((m, n), pos, holdout, seed, xa)
    scen = A.AttackScenario(A.HORIZONTAL_2PARTY, A.LINEAR, known, 0, seed, VICTIM, hold)
    res = A.full_inversion(scen, run.transcript(ATTACKER), None, xa)
    return Outcome(res, known, hold, float(eta), iterations, run.losses)


def attack_multiparty(xa: np.ndarray, xb: np.ndarray, y: np.ndarray,
                      bystanders: Sequence[np.ndarray] = (), *, seed: int, eta="auto",
                      alpha: float = 0.0, iterations: Optional[int] = None) -> Outcome:
    """Vertical attack by the label holder ``B`` colluding with the arbiter."""
    m = xa.shape[0]
    if eta == "auto":
        eta = auto_step_size([xa, xb, *bystanders], alpha)
    iterations = iterations or 3 * m
    hp = P.Hyperparams(eta=float(eta), alpha=alpha, iterations=iterations)
    parties = [P.DesignMatrix(xa, VICTIM)]
    parties += [P.DesignMatrix(x, f"C{i}") for i, x in enumerate(bystanders)]
    parties.append(P.DesignMatrix(xb, ATTACKER))
    run = P.multiparty_vfl_train(parties, y, hp, colluding={P.ARBITER, ATTACKER},
                                 label_holder=ATTACKER, seed=seed)
    scen = A.AttackScenario(A.VERTICAL_MULTIPARTY, A.LINEAR, (), 0, seed, VICTIM)
    res = A.full_inversion(scen, run.transcript(ATTACKER), None, xa)
    return Outcome(res, (), (), float(eta), iterations, run.losses)


def fake_feature_losses(xa: np.ndarray, xb: np.ndarray, y: np.ndarray, fars: Sequence[float],
                        *, seed: int, eta="auto", alpha: float = 0.0,
                        iterations: Optional[int] = None) -> list[dict]:
    """Final training loss for each fake-attribute rate.

    FAR is the fake count over all features in the model.  The learning rate
    is fixed from the genuine features, as the federation would set it.
    """
    if eta == "auto":
        eta = auto_step_size([xa, xb], alpha)
    iterations = iterations or 3 * xa.shape[0]
    hp = P.Hyperparams(eta=float(eta), alpha=alpha, iterations=iterations)
    real = xa.shape[1] + xb.shape[1]
    rows = []
    base = None
    for far in sorted(set([0.0, *fars])):
        count = int(round(far * real / (1.0 - far)))
        XB = A.inject_fake_features(P.DesignMatrix(xb, ATTACKER), count, seed)
        run = P.vfl_linreg_train(P.DesignMatrix(xa, VICTIM), XB, y, hp, seed=seed)
        loss = float(run.losses[-1])
        if base is None:
            base = loss
        rows.append({"far": far, "fake_features": count,
                     "actual_far": count / (real + count), "final_loss": loss,
                     "relative_change": abs(loss - base) / base if base else 0.0})
    return rows


# ---------------------------------------------------------------------------
# config-driven execution


class _Stages:
    def __init__(self, report: AttackReport):
        self.report = report
        self.current = "setup"

    @contextmanager
    def stage(self, name: str):
        self.current = name
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.report.timing[name] = round(time.perf_counter() - t0, 6)


def _load(cfg: ScenarioConfig) -> Dataset:
    d = cfg.dataset
    if d.source == "synthetic":
        if cfg.kind == "hfl-linreg":
            if d.features is None:
                raise ConfigError("dataset.features is required for synthetic horizontal runs")
            n = d.features
        else:
            n = d.features if d.features is not None else cfg.feature_total()
        return synthetic_regression(d.rows, n, cfg.seed, d.noise)
    return load_dataset(d.source, d.format, d.label_column)


def _prepare(cfg: ScenarioConfig, data: Dataset):
    x = data.features.values
    y = data.labels
    if y is None:
        raise ConfigError("the attacker must hold labels; set dataset.label_column")
    # scale over the whole table before cutting rows: centering only a few
    # rows would make the cut rank deficient (the rows sum to zero).
    # synthetic draws are already standard normal.
    if cfg.dataset.standardize and cfg.dataset.source != "synthetic":
        x = standardize(x)
    if cfg.dataset.samples is not None and cfg.kind != "hfl-linreg":
        x, y = x[:cfg.dataset.samples], y[:cfg.dataset.samples]
    if cfg.dataset.binarize:
        y = (y > np.median(y)).astype(float)
    return x, y


def run_scenario(cfg: ScenarioConfig, write: bool = True) -> AttackReport:
    rep = AttackReport(cfg.kind, cfg.seed, scenario=cfg.to_dict(),
                       tolerance=cfg.attack.tolerance)
    st = _Stages(rep)
    try:
        with st.stage("load"):
            data = _load(cfg)
            cfg.check_split(*data.shape)
            x, y = _prepare(cfg, data)
            if data.dropped:
                rep.assumptions.append(f"{data.dropped} row(s) with missing values dropped")
        if cfg.kind == "secureboost":
            _run_tree(cfg, x, y, rep, st)
        else:
            _run_regression(cfg, x, y, rep, st)
    except FedLeakError as exc:
        rep.status = ERROR
        rep.error = {"stage": st.current, "type": type(exc).__name__, "message": str(exc)}
    if write and cfg.output.report:
        Path(cfg.output.report).parent.mkdir(parents=True, exist_ok=True)
        Path(cfg.output.report).write_text(rep.to_json(), encoding="utf-8")
    return rep


def _run_regression(cfg, x, y, rep: AttackReport, st: _Stages):
    s, t, a = cfg.split, cfg.training, cfg.attack
    rep.assumptions.append(SHARED_CONFIG)
    with st.stage("attack"):
        if cfg.kind == "hfl-linreg":
            mv = s.party_samples[0]
            rep.assumptions.append("party sample counts are public")
            out = attack_horizontal(x[:mv], y[:mv], x[mv:], y[mv:], seed=cfg.seed, eta=t.eta,
                                    alpha=t.alpha, iterations=t.iterations,
                                    placement=a.placement, holdout=a.holdout)
            truth = x[:mv]
        else:
            nb, na = s.attacker_features, s.victim_features
            xb, xa = x[:, :nb], x[:, nb:nb + na]
            truth = xa
            if cfg.kind == "vfl-multi":
                rest, pos = [], nb + na
                for c in s.bystander_features:
                    rest.append(x[:, pos:pos + c])
                    pos += c
                rep.assumptions.append("the attacker colludes with the arbiter")
                out = attack_multiparty(xa, xb, y, rest, seed=cfg.seed, eta=t.eta,
                                        alpha=t.alpha, iterations=t.iterations)
            else:
                model = A.LOGISTIC if cfg.kind == "vfl-logreg" else A.LINEAR
                out = attack_vertical(xa, xb, y, seed=cfg.seed, model=model,
                                      fake_features=s.fake_features, eta=t.eta,
                                      alpha=t.alpha, iterations=t.iterations,
                                      placement=a.placement, holdout=a.holdout)
    with st.stage("evaluate"):
        res = out.result
        rep.kdr = out.kdr
        rep.rel_error = res.rel_error
        rep.estimate_rel_error = res.estimate_rel_error
        rep.solution_count = res.solution_count
        rep.known_entries = [[r, c] for r, c, _ in out.known + out.holdout]
        rep.constraints = {k: (float(v) if isinstance(v, float) else int(v))
                           for k, v in res.constraints_used.items()}
        rep.constraints["eta"] = out.eta
        rep.constraints["iterations"] = out.iterations
        rep.status = PASS if res.rel_error is not None and res.rel_error <= a.tolerance else FAIL
    if cfg.sweeps.far and cfg.kind in ("vfl-linreg", "vfl-logreg"):
        with st.stage("sweep"):
            nb, na = s.attacker_features, s.victim_features
            rows = fake_feature_losses(x[:, nb:nb + na], x[:, :nb], y, cfg.sweeps.far,
                                       seed=cfg.seed, eta=t.eta, alpha=t.alpha,
                                       iterations=t.iterations)
            rep.sweeps["loss_vs_far"] = rows
            _write_plot(cfg, "loss_vs_far.csv", rows)


def _steal(ens, eps: float, grid: int, bounds) -> tuple:
    info = T.tree_info(ens, ATTACKER)
    oracle = T.LeafOracle(ens)
    cfg = T.AttackConfig(eps, grid, tuple(bounds))
    return T.steal_thresholds(oracle, info, cfg, ens.parties, ATTACKER), oracle


def _run_tree(cfg, x, y, rep: AttackReport, st: _Stages):
    s, t, a = cfg.split, cfg.training, cfg.attack
    rep.assumptions.append("the inference service reveals leaf ids")
    rep.assumptions.append("victim feature ids are found by probing")
    nb, na = s.attacker_features, s.victim_features
    with st.stage("train"):
        xa, xb = split_vertical(P.DesignMatrix(x, "data"), nb, na, ATTACKER, VICTIM)
        ens = secureboost_train([xb, xa], y, ATTACKER, t.trees, t.depth, t.learning_rate,
                                t.lam, buckets=t.buckets)
    with st.stage("attack"):
        got, oracle = _steal(ens, a.epsilon, a.grid_points, a.bounds)
    with st.stage("evaluate"):
        lb, ub = a.bounds
        n_q = T.predict_query_count(lb, ub, a.epsilon, a.grid_points)
        victims = ens.victim_nodes(ATTACKER)
        nodes, worst, wrong_feature = [], 0.0, 0
        for r in got.nodes:
            true = ens.trees[r.tree][r.node_id]
            err = abs(r.estimate - true.threshold)
            worst = max(worst, err)
            wrong_feature += r.feature_id != true.feature_id
            nodes.append({"tree": r.tree, "node": r.node_id, "feature": r.feature_id,
                          "estimate": r.estimate, "truth": true.threshold,
                          "abs_error": err, "rounds": r.rounds})
        rep.tree = {
            "victim_nodes": len(victims),
            "epsilon": a.epsilon,
            "grid_points": a.grid_points,
            "n_q": n_q,
            "predicted_queries": T.total_queries(len(victims), n_q),
            "queries": got.refinement_batches,
            "discovery_queries": got.discovery_batches,
            "records": got.records,
            "max_abs_error": worst,
            "nodes": nodes,
        }
        ok = (worst <= a.epsilon and wrong_feature == 0 and len(got.nodes) == len(victims)
              and got.refinement_batches == T.total_queries(len(victims), n_q))
        rep.status = PASS if ok else FAIL
    if cfg.sweeps.epsilon:
        with st.stage("sweep"):
            rows = []
            for grid in cfg.sweeps.grid_points or [a.grid_points]:
                for eps in cfg.sweeps.epsilon:
                    res, _ = _steal(ens, eps, grid, a.bounds)
                    nq = T.predict_query_count(lb, ub, eps, grid)
                    rows.append({"epsilon": eps, "grid_points": grid, "n_q": nq,
                                 "predicted_queries": T.total_queries(len(victims), nq),
                                 "observed_queries": res.refinement_batches,
                                 "discovery_queries": res.discovery_batches})
            rep.sweeps["queries_vs_epsilon"] = rows
            _write_plot(cfg, "queries_vs_epsilon.csv", rows)


def _write_plot(cfg: ScenarioConfig, name: str, rows: list[dict]) -> None:
    if not cfg.output.plots or not rows:
        return
    out = Path(cfg.output.plots)
    out.mkdir(parents=True, exist_ok=True)
    with (out / name).open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
