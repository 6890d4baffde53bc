"""Simulators for the secure federated training procedures.

Encryption is modelled by :class:`Envelope`: a payload tagged with the set
of parties that hold the decryption key.  Every message a simulator emits is
recorded once together with the parties that physically receive it, and
:func:`observer_view` turns that message log into the transcript a given
party (or coalition) legitimately sees.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import (
    DivergenceError,
    OracleError,
    ProtocolError,
    SealedPayloadError,
    SigmoidRangeError,
)

ARBITER = "arbiter"

IDENTITY = "identity"
POLY_SIGMOID = "poly-sigmoid"

# event kinds
FEATURES = "features"
LABELS = "labels"
INTERMEDIATE = "intermediate"
RESIDUAL = "residual"
GRADIENT = "gradient"
WEIGHTS = "weights"
AVERAGED_WEIGHTS = "averaged_weights"
FINAL_MODEL = "final_model"
PREDICTION = "prediction"


def poly_sigmoid(x):
    """Cubic stand-in for the logistic function, monotone on ``|x| <= 2``."""
    x = np.asarray(x, dtype=float)
    out = 0.5 + x / 4.0 - x ** 3 / 48.0
    return out if out.ndim else float(out)


POLY_SIGMOID_RANGE = (poly_sigmoid(-2.0), poly_sigmoid(2.0))


def poly_sigmoid_inverse(a, tol: float = 1e-12):
    """Invert :func:`poly_sigmoid` on its monotone branch ``[-2, 2]``.

    Uses the trigonometric form of the depressed cubic
    ``s^3 - 12 s + 48 (a - 1/2) = 0``.
    """
    a = np.asarray(a, dtype=float)
    lo, hi = POLY_SIGMOID_RANGE
    if np.any(a < lo - tol) or np.any(a > hi + tol):
        raise SigmoidRangeError("sigmoid value outside invertible range")
    c = np.clip(-3.0 * (a - 0.5), -1.0, 1.0)
    out = 4.0 * np.cos(np.arccos(c) / 3.0 - 2.0 * np.pi / 3.0)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class DesignMatrix:
    values: np.ndarray
    party_id: str
    feature_names: tuple[str, ...] = ()

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ProtocolError(f"design matrix must be non-empty 2-D, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ProtocolError("design matrix contains non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        names = tuple(self.feature_names) or tuple(
            f"{self.party_id}_{j}" for j in range(v.shape[1])
        )
        if len(names) != v.shape[1]:
            raise ProtocolError(f"{len(names)} feature names for {v.shape[1]} columns")
        object.__setattr__(self, "feature_names", names)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class Hyperparams:
    eta: float
    alpha: float = 0.0
    iterations: int = 50
    activation: str = IDENTITY
    batch_mode: str = "full"

    def __post_init__(self):
        if not self.eta >= 0:
            raise ProtocolError("learning rate must be non-negative")
        if self.alpha < 0:
            raise ProtocolError("regularization must be non-negative")
        if self.eta * self.alpha >= 1:
            raise ProtocolError("eta * alpha must be below 1")
        if self.iterations < 1:
            raise ProtocolError("at least one iteration is required")
        if self.activation not in (IDENTITY, POLY_SIGMOID):
            raise ProtocolError(f"unknown activation {self.activation!r}")
        if self.batch_mode != "full":
            raise ProtocolError("only full-batch training is simulated")

    def link(self, x):
        return x if self.activation == IDENTITY else poly_sigmoid(x)


@dataclass(frozen=True)
class Sealed:
    """What a party without the key sees of an envelope."""

    shape: tuple[int, ...]

    def __repr__(self):
        return f"Sealed{self.shape}"


@dataclass(frozen=True)
class Envelope:
    payload: np.ndarray
    visible_to: frozenset

    def __post_init__(self):
        p = np.array(self.payload, dtype=float)
        p.setflags(write=False)
        object.__setattr__(self, "payload", p)
        object.__setattr__(self, "visible_to", frozenset(self.visible_to))

    def view(self, labels):
        """Payload for a key holder, shape metadata for everyone else."""
        labels = {labels} if isinstance(labels, str) else set(labels)
        if labels & self.visible_to:
            return self.payload
        return Sealed(self.payload.shape)

    def open(self, labels) -> np.ndarray:
        out = self.view(labels)
        if isinstance(out, Sealed):
            raise SealedPayloadError(f"{sorted(labels)} cannot decrypt this envelope")
        return out


@dataclass(frozen=True)
class Event:
    iteration: int
    kind: str
    party: Optional[str]
    payload: object  # np.ndarray or Sealed

    @property
    def sealed(self) -> bool:
        return isinstance(self.payload, Sealed)


@dataclass(frozen=True)
class Transcript:
    observer: str
    events: tuple[Event, ...]
    hyperparams: Hyperparams
    parties: tuple[tuple[str, int], ...] = ()   # public (label, feature count)
    coalition: frozenset = frozenset()
    sample_counts: tuple[tuple[str, int], ...] = ()

    def select(self, kind: str, party: Optional[str] = None,
               iteration: Optional[int] = None) -> list[Event]:
        return [
            e for e in self.events
            if e.kind == kind
            and (party is None or e.party == party)
            and (iteration is None or e.iteration == iteration)
        ]

    def get(self, kind: str, party: Optional[str] = None, iteration: Optional[int] = None,
            allow_sealed: bool = False):
        found = self.select(kind, party, iteration)
        if not found:
            raise KeyError(f"no {kind!r} event for party={party} iteration={iteration}")
        if not allow_sealed:
            found = [e for e in found if not e.sealed] or found
        ev = found[0]
        if ev.sealed and not allow_sealed:
            raise SealedPayloadError(
                f"{kind!r} of {party} at iteration {iteration} is sealed for {self.observer}"
            )
        return ev.payload

    def series(self, kind: str, party: Optional[str] = None) -> dict[int, np.ndarray]:
        out = {}
        for e in self.select(kind, party):
            if not e.sealed and e.iteration not in out:
                out[e.iteration] = e.payload
        return out

    def iterations(self) -> int:
        ks = [e.iteration for e in self.events if e.kind == GRADIENT]
        return max(ks) + 1 if ks else 0

    def plaintext_values(self) -> Iterable[np.ndarray]:
        for e in self.events:
            if not e.sealed:
                yield e.payload

    def with_events(self, extra: Sequence[Event]) -> "Transcript":
        return Transcript(self.observer, self.events + tuple(extra), self.hyperparams,
                          self.parties, self.coalition, self.sample_counts)


@dataclass(frozen=True)
class _Message:
    iteration: int
    kind: str
    party: Optional[str]
    content: object  # np.ndarray (plaintext) or Envelope
    holders: frozenset


def observer_view(messages: Sequence[_Message], observer: str, hp: Hyperparams,
                  parties, colluding: Iterable[str] = (), sample_counts=()) -> Transcript:
    colluding = frozenset(colluding)
    coalition = colluding | {observer} if observer in colluding else frozenset({observer})
    events = []
    for msg in messages:
        if not (msg.holders & coalition):
            continue
        if isinstance(msg.content, Envelope):
            payload = msg.content.view(coalition)
        else:
            payload = msg.content
        events.append(Event(msg.iteration, msg.kind, msg.party, payload))
    return Transcript(observer, tuple(events), hp, tuple(parties), coalition,
                      tuple(sample_counts))


@dataclass
class TrainingRun:
    """Result of one simulated training session.

    ``hidden`` holds the ground-truth trace for evaluation only; attacks never
    read it.
    """

    transcripts: dict[str, Transcript]
    weights: dict[str, np.ndarray]
    losses: np.ndarray
    hidden: dict = field(default_factory=dict, repr=False)
    messages: tuple = field(default=(), repr=False)

    def transcript(self, label: str) -> Transcript:
        return self.transcripts[label]


def init_weights(n: int, seed: int, salt: int = 0) -> np.ndarray:
    rng = np.random.default_rng([seed, salt])
    return rng.uniform(-0.1, 0.1, size=n)


def _as_labels(y, m: int) -> np.ndarray:
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.shape != (m,):
        raise ProtocolError(f"labels must have length {m}, got {y.shape[0]}")
    if not np.all(np.isfinite(y)):
        raise ProtocolError("labels contain non-finite values")
    return y


def _vfl_engine(parties: Sequence[DesignMatrix], y, hp: Hyperparams, label_holder: str,
                colluding: Iterable[str], seed: int,
                initial: Optional[Mapping[str, np.ndarray]] = None) -> TrainingRun:
    labels = [p.party_id for p in parties]
    if len(set(labels)) != len(labels) or ARBITER in labels:
        raise ProtocolError("party labels must be unique and differ from the arbiter")
    if label_holder not in labels:
        raise ProtocolError(f"label holder {label_holder!r} is not a party")
    m = parties[0].m
    if any(p.m != m for p in parties):
        raise ProtocolError("parties must share the same aligned sample count")
    y = _as_labels(y, m)
    if hp.activation == POLY_SIGMOID and not np.all(np.isin(y, (0.0, 1.0))):
        raise ProtocolError("logistic training requires labels in {0, 1}")
    colluding = frozenset(colluding)

    weights = {}
    for i, p in enumerate(parties):
        w0 = initial.get(p.party_id) if initial else None
        weights[p.party_id] = (np.array(w0, dtype=float) if w0 is not None
                               else init_weights(p.n, seed, i))
    key = frozenset({ARBITER})
    msgs: list[_Message] = []
    hidden = {k: {lab: [] for lab in labels} for k in (INTERMEDIATE, GRADIENT, WEIGHTS)}
    hidden[RESIDUAL] = []
    losses = []

    for p in parties:
        msgs.append(_Message(-1, FEATURES, p.party_id, p.values, frozenset({p.party_id})))
    msgs.append(_Message(-1, LABELS, label_holder, y, frozenset({label_holder})))

    for k in range(hp.iterations):
        z = {}
        for p in parties:
            lab = p.party_id
            z[lab] = p.values @ weights[lab]
            msgs.append(_Message(k, WEIGHTS, lab, weights[lab].copy(), frozenset({lab})))
            msgs.append(_Message(k, INTERMEDIATE, lab, z[lab], frozenset({lab})))
            if lab != label_holder:
                msgs.append(_Message(k, INTERMEDIATE, lab, Envelope(z[lab], key),
                                     frozenset({label_holder})))
        total = sum(z.values())
        d = hp.link(total) - y
        if not np.all(np.isfinite(d)):
            raise DivergenceError(k)
        losses.append(0.5 * (d @ d + hp.alpha * sum(w @ w for w in weights.values())))
        msgs.append(_Message(k, RESIDUAL, None, Envelope(d, key), frozenset(labels)))
        hidden[RESIDUAL].append(d)
        for p in parties:
            lab = p.party_id
            g = p.values.T @ d + hp.alpha * weights[lab]
            if not np.all(np.isfinite(g)):
                raise DivergenceError(k)
            msgs.append(_Message(k, GRADIENT, lab, Envelope(g, key | {lab}),
                                 frozenset({lab, ARBITER})))
            hidden[INTERMEDIATE][lab].append(z[lab])
            hidden[GRADIENT][lab].append(g)
            hidden[WEIGHTS][lab].append(weights[lab].copy())
            weights[lab] = weights[lab] - hp.eta * g
        if not all(np.all(np.isfinite(w)) for w in weights.values()):
            raise DivergenceError(k)

    for p in parties:
        lab = p.party_id
        msgs.append(_Message(hp.iterations, FINAL_MODEL, lab, weights[lab].copy(),
                             frozenset({lab})))
        hidden[WEIGHTS][lab].append(weights[lab].copy())

    public = [(p.party_id, p.n) for p in parties]
    transcripts = {
        lab: observer_view(msgs, lab, hp, public, colluding)
        for lab in labels + [ARBITER]
    }
    hidden = {
        kind: ({lab: np.array(v) for lab, v in val.items()} if isinstance(val, dict)
               else np.array(val))
        for kind, val in hidden.items()
    }
    hidden[LABELS] = y
    return TrainingRun(transcripts, {k: v.copy() for k, v in weights.items()},
                       np.array(losses), hidden, tuple(msgs))


def vfl_linreg_train(xa: DesignMatrix, xb: DesignMatrix, y, hp: Hyperparams,
                     seed: int = 0, initial=None) -> TrainingRun:
    """Two-party vertical linear regression; ``xb``'s owner holds the labels."""
    if hp.activation != IDENTITY:
        raise ProtocolError("vfl_linreg_train requires the identity activation")
    if xa.m != xb.m:
        raise ProtocolError(f"row counts differ: {xa.m} vs {xb.m}")
    return _vfl_engine([xa, xb], y, hp, xb.party_id, (), seed, initial)


def vfl_logreg_train(xa: DesignMatrix, xb: DesignMatrix, y, hp: Hyperparams,
                     seed: int = 0, initial=None) -> TrainingRun:
    """Two-party vertical logistic regression with the cubic sigmoid."""
    if hp.activation != POLY_SIGMOID:
        raise ProtocolError("vfl_logreg_train requires the poly-sigmoid activation")
    if xa.m != xb.m:
        raise ProtocolError(f"row counts differ: {xa.m} vs {xb.m}")
    return _vfl_engine([xa, xb], y, hp, xb.party_id, (), seed, initial)


def multiparty_vfl_train(parties: Sequence[DesignMatrix], y, hp: Hyperparams,
                         colluding: Iterable[str] = (), label_holder: Optional[str] = None,
                         seed: int = 0, initial=None) -> TrainingRun:
    """Vertical training across two or more feature holders.

    Members of ``colluding`` pool their views; only a coalition containing the
    arbiter can open envelopes.
    """
    if len(parties) < 2:
        raise ProtocolError("at least two feature-holding parties are required")
    label_holder = label_holder or parties[-1].party_id
    return _vfl_engine(parties, y, hp, label_holder, colluding, seed, initial)


def hfl_linreg_train(parties: Sequence[tuple[DesignMatrix, np.ndarray]], hp: Hyperparams,
                     seed: int = 0, initial=None) -> TrainingRun:
    """Horizontal linear regression with arbiter-side weight averaging.

    Each party takes one local full-batch step on ``1/2 ||X W - Y||^2 +
    alpha/2 ||W||^2`` from the shared weights and uploads the result; the
    arbiter returns the plain average.  With two parties this makes
    ``g_A = 2 (W_k - W_{k+1}) / eta - g_B`` exact.
    """
    if len(parties) < 2:
        raise ProtocolError("horizontal training needs at least two parties")
    if hp.activation != IDENTITY:
        raise ProtocolError("horizontal simulator supports linear regression only")
    mats = [p[0] for p in parties]
    n = mats[0].n
    if any(x.n != n for x in mats):
        raise ProtocolError("all parties must share the same feature count")
    labels = [x.party_id for x in mats]
    if len(set(labels)) != len(labels):
        raise ProtocolError("party labels must be unique")
    ys = [_as_labels(yy, x.m) for x, yy in parties]

    w = np.array(initial, dtype=float) if initial is not None else init_weights(n, seed)
    everyone = frozenset(labels)
    msgs: list[_Message] = []
    hidden = {GRADIENT: {lab: [] for lab in labels}, AVERAGED_WEIGHTS: []}
    losses = []
    for x, yy in zip(mats, ys):
        msgs.append(_Message(-1, FEATURES, x.party_id, x.values, frozenset({x.party_id})))
        msgs.append(_Message(-1, LABELS, x.party_id, yy, frozenset({x.party_id})))

    for k in range(hp.iterations):
        msgs.append(_Message(k, AVERAGED_WEIGHTS, None, w.copy(), everyone))
        hidden[AVERAGED_WEIGHTS].append(w.copy())
        local = []
        loss = 0.0
        for x, yy in zip(mats, ys):
            r = x.values @ w - yy
            loss += 0.5 * (r @ r)
            g = x.values.T @ r + hp.alpha * w
            if not np.all(np.isfinite(g)):
                raise DivergenceError(k)
            msgs.append(_Message(k, GRADIENT, x.party_id, g, frozenset({x.party_id})))
            hidden[GRADIENT][x.party_id].append(g)
            wl = w - hp.eta * g
            local.append(wl)
            msgs.append(_Message(k, WEIGHTS, x.party_id, Envelope(wl, frozenset()),
                                 frozenset({x.party_id, ARBITER})))
        losses.append(loss + 0.5 * hp.alpha * (w @ w))
        w = np.mean(local, axis=0)
        if not np.all(np.isfinite(w)):
            raise DivergenceError(k)
    msgs.append(_Message(hp.iterations, AVERAGED_WEIGHTS, None, w.copy(), everyone))
    hidden[AVERAGED_WEIGHTS].append(w.copy())
    for lab in labels:
        msgs.append(_Message(hp.iterations, FINAL_MODEL, lab, w.copy(), frozenset({lab})))

    public = [(lab, n) for lab in labels]
    # sample counts are shared for weighting, as in federated averaging
    counts = [(x.party_id, x.m) for x in mats]
    transcripts = {lab: observer_view(msgs, lab, hp, public, (), counts)
                   for lab in labels + [ARBITER]}
    hidden = {
        GRADIENT: {lab: np.array(v) for lab, v in hidden[GRADIENT].items()},
        AVERAGED_WEIGHTS: np.array(hidden[AVERAGED_WEIGHTS]),
    }
    return TrainingRun(transcripts, {"shared": w.copy()}, np.array(losses), hidden,
                       tuple(msgs))


def vfl_predict(query_a, query_b, weights_a, weights_b, activation: str = IDENTITY):
    """Joint prediction; returns ``(prediction, z_a_test)``.

    The victim's partial score ``z_a_test`` travels unencrypted to the label
    holder, which is why it is returned alongside the prediction.
    """
    qa = np.asarray(query_a, dtype=float)
    qb = np.asarray(query_b, dtype=float)
    wa = np.asarray(weights_a, dtype=float)
    wb = np.asarray(weights_b, dtype=float)
    if qa.shape[-1] != wa.shape[0] or qb.shape[-1] != wb.shape[0]:
        raise ProtocolError("query width does not match the model")
    z_a = qa @ wa
    z_b = qb @ wb
    pred = z_a + z_b if activation == IDENTITY else poly_sigmoid(z_a + z_b)
    return pred, z_a


class PredictionService:
    """Inference endpoint of a trained two-party vertical model.

    Every served query is logged as a plaintext ``prediction`` event visible
    to the label holder.
    """

    def __init__(self, run: TrainingRun, victim: str, attacker: str,
                 activation: str = IDENTITY, refuse: bool = False):
        self._wa = run.weights[victim]
        self._wb = run.weights[attacker]
        self.victim = victim
        self.attacker = attacker
        self.activation = activation
        self.refuse = refuse
        self.log: list[Event] = []

    @property
    def n_victim(self) -> int:
        return self._wa.shape[0]

    @property
    def n_attacker(self) -> int:
        return self._wb.shape[0]

    def predict(self, query_a, query_b=None):
        if self.refuse:
            raise OracleError("prediction service refused the query")
        if query_b is None:
            query_b = np.zeros(self.n_attacker)
        pred, z_a = vfl_predict(query_a, query_b, self._wa, self._wb, self.activation)
        self.log.append(Event(len(self.log), PREDICTION, self.victim, np.atleast_1d(z_a)))
        return pred, z_a

    def victim_score_oracle(self) -> Callable[[np.ndarray], float]:
        """Callable the attacker uses: victim-side query in, ``z_a_test`` out."""
        def oracle(query_a):
            return self.predict(query_a)[1]
        return oracle
