"""Next-object prediction over handover trials.

Each trial is a sequence of object ids (1-based). A sliding window of the
last ``order`` ids, zero-padded on the left, is scored against one discrete
HMM per candidate object; the models are trained on windows grouped by the
id that actually followed them.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .hmm import DiscreteHmm

DEFAULT_ORDER = 3
DEFAULT_STATES = 5
DEFAULT_RESTARTS = 10


@dataclass(frozen=True)
class ObjectHistory:
    """A fixed-length window of recent object ids and the id that followed.

    ``window`` is zero-padded on the left; once a real id appears no later
    entry may be zero. ``next_id`` is None for the trailing window of a
    trial, where the follow-up is not yet known.
    """

    window: tuple[int, ...]
    next_id: Optional[int] = None

    def __post_init__(self):
        if len(self.window) == 0:
            raise ConfigError("history window must be non-empty")
        seen_real = False
        for x in self.window:
            if x < 0:
                raise DataError(f"negative object id {x} in window")
            if x > 0:
                seen_real = True
            elif seen_real:
                raise DataError(f"zero padding after a real id in {self.window}")
        if self.next_id is not None and self.next_id < 1:
            raise DataError(f"next id must be a real object, got {self.next_id}")


def trigram_windows(sequence: Sequence[int], order: int = DEFAULT_ORDER) -> list[ObjectHistory]:
    """All left-padded windows of a trial, one per prefix length.

    The window ending at position k predicts element k+1; the last window
    covers the full known suffix and carries next_id=None.
    """
    if order < 1:
        raise ConfigError(f"window order must be >= 1, got {order}")
    seq = [int(x) for x in sequence]
    if not seq:
        raise DataError("cannot window an empty sequence")
    if any(x < 1 for x in seq):
        raise DataError("object ids must be >= 1")
    padded = [0] * (order - 1) + seq
    out = []
    for k in range(1, len(seq) + 1):
        window = tuple(padded[k - 1:k - 1 + order])
        nxt = seq[k] if k < len(seq) else None
        out.append(ObjectHistory(window=window, next_id=nxt))
    return out


def forward_backward(model: DiscreteHmm, observations: Sequence[int]) -> float:
    """Log-likelihood of a symbol sequence; an empty sequence has log-prob 0."""
    obs = np.asarray(list(observations), dtype=np.int64)
    if obs.size == 0:
        return 0.0
    return model.log_likelihood(obs)


def baum_welch(sequences, n_states=DEFAULT_STATES, n_symbols=7, seed=0,
               restarts=DEFAULT_RESTARTS, max_iter=200, tol=1e-6) -> DiscreteHmm:
    """Fit one discrete HMM with restart selection on held-out likelihood."""
    return DiscreteHmm.train(sequences, n_states=n_states, n_symbols=n_symbols,
                             seed=seed, restarts=restarts, max_iter=max_iter, tol=tol)


@dataclass
class ObjectPredictor:
    """One discrete HMM per object id; id j is scored by models[j-1]."""

    n_objects: int
    order: int
    n_states: int
    models: list[DiscreteHmm]
    untrainable: tuple[int, ...] = ()

    def __post_init__(self):
        if len(self.models) != self.n_objects:
            raise ConfigError(
                f"expected {self.n_objects} models, got {len(self.models)}")

    def to_dict(self):
        return {
            "version": 1,
            "kind": "object_predictor",
            "n_objects": self.n_objects,
            "order": self.order,
            "n_states": self.n_states,
            "untrainable": list(self.untrainable),
            "models": [m.to_dict() for m in self.models],
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("version") != 1 or d.get("kind") != "object_predictor":
            raise ConfigError("unrecognized object predictor payload")
        return cls(
            n_objects=int(d["n_objects"]),
            order=int(d["order"]),
            n_states=int(d["n_states"]),
            models=[DiscreteHmm.from_dict(m) for m in d["models"]],
            untrainable=tuple(int(x) for x in d.get("untrainable", [])),
        )

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, separators=(",", ":"))

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _uniform_hmm(n_states, n_symbols):
    start = np.full(n_states, 1.0 / n_states)
    trans = np.full((n_states, n_states), 1.0 / n_states)
    emit = np.full((n_states, n_symbols), 1.0 / n_symbols)
    return DiscreteHmm(start=start, trans=trans, emit=emit)


def train_object_models(histories: Sequence[ObjectHistory], n_objects: int = 6,
                        order: int = DEFAULT_ORDER, n_states: int = DEFAULT_STATES,
                        restarts: int = DEFAULT_RESTARTS, seed: int = 0) -> ObjectPredictor:
    """Per-object HMMs over windows grouped by which object came next.

    Classes are balanced by duplicating sampled windows up to the largest
    class size. An object with no training windows gets a uniform model and
    is flagged untrainable.
    """
    if n_objects < 2:
        raise ConfigError(f"need at least 2 objects, got {n_objects}")
    labeled = [h for h in histories if h.next_id is not None]
    if not labeled:
        raise DataError("no windows with a known next object")
    groups: dict[int, list[tuple[int, ...]]] = {j: [] for j in range(1, n_objects + 1)}
    for h in labeled:
        if len(h.window) != order:
            raise ConfigError(
                f"window length {len(h.window)} does not match order {order}")
        if h.next_id > n_objects:
            raise DataError(f"object id {h.next_id} out of range 1..{n_objects}")
        if max(h.window) > n_objects:
            raise DataError(f"window {h.window} has an id out of range")
        groups[h.next_id].append(h.window)

    target = max(len(g) for g in groups.values())
    seeds = np.random.SeedSequence(seed).generate_state(2 * n_objects)
    models, untrainable = [], []
    for j in range(1, n_objects + 1):
        windows = groups[j]
        if not windows:
            models.append(_uniform_hmm(n_states, n_objects + 1))
            untrainable.append(j)
            continue
        if len(windows) < target:
            rng = np.random.default_rng(seeds[2 * j - 1])
            extra = rng.integers(0, len(windows), size=target - len(windows))
            windows = windows + [windows[i] for i in extra]
        seqs = [np.asarray(w, dtype=np.int64) for w in windows]
        models.append(baum_welch(seqs, n_states=n_states, n_symbols=n_objects + 1,
                                 seed=int(seeds[2 * j - 2]), restarts=restarts))
    return ObjectPredictor(n_objects=n_objects, order=order, n_states=n_states,
                           models=models, untrainable=tuple(untrainable))


def predict_next(predictor: ObjectPredictor, window: Sequence[int]):
    """Posterior over the next object id and the argmax id (ties -> smallest).

    Scores are per-model log-likelihoods passed through a softmax; if every
    model assigns zero probability the posterior falls back to uniform and
    the prediction to id 1.
    """
    obs = [int(x) for x in window]
    logs = np.array([forward_backward(m, obs) for m in predictor.models])
    finite = np.isfinite(logs)
    n = predictor.n_objects
    if not finite.any():
        return np.full(n, 1.0 / n), 1
    shifted = logs - logs[finite].max()
    probs = np.where(finite, np.exp(np.where(finite, shifted, 0.0)), 0.0)
    probs /= probs.sum()
    return probs, int(np.argmax(probs)) + 1


@dataclass
class BigramBaseline:
    """Empirical next-object frequencies keyed on the most recent id.

    Row p of ``table`` counts transitions p -> next (p=0 means the window
    was all padding). A conditioning id with no counts falls back to the
    marginal next-object distribution.
    """

    n_objects: int
    table: np.ndarray = field(repr=False)
    marginal: np.ndarray = field(repr=False)

    def predict(self, window: Sequence[int]):
        prev = int(window[-1])
        if prev < 0 or prev > self.n_objects:
            raise DataError(f"object id {prev} out of range")
        row = self.table[prev]
        if row.sum() <= 0:
            row = self.marginal
        probs = row / row.sum()
        return probs, int(np.argmax(probs)) + 1


def train_bigram(histories: Sequence[ObjectHistory], n_objects: int = 6) -> BigramBaseline:
    labeled = [h for h in histories if h.next_id is not None]
    if not labeled:
        raise DataError("no windows with a known next object")
    table = np.zeros((n_objects + 1, n_objects), dtype=np.float64)
    for h in labeled:
        if h.next_id > n_objects or max(h.window) > n_objects:
            raise DataError(f"object id out of range in window {h.window}")
        table[h.window[-1], h.next_id - 1] += 1.0
    return BigramBaseline(n_objects=n_objects, table=table,
                          marginal=table.sum(axis=0))


def save_object_predictions(path, rows):
    """Per-step CSV: trial_id,step,true_object,pred_object,p1..pN."""
    if not rows:
        raise DataError("no prediction rows to write")
    n = len(rows[0]["probs"])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trial_id", "step", "true_object", "pred_object"]
                   + [f"p{j}" for j in range(1, n + 1)])
        for r in rows:
            w.writerow([r["trial_id"], r["step"], r["true_object"],
                        r["pred_object"]] + [repr(float(p)) for p in r["probs"]])
