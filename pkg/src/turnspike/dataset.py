"""Data model for collaborative-task turn events, corpus I/O, partial-observation
slicing, time resampling, and a seeded synthetic corpus generator.

An event's observation is an L x M matrix of sensor samples (L timesteps, M
channels). A corpus additionally carries per-trial object-request sequences used
by the next-object prediction module.
"""

import json
import math
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import ConfigError, DataError

GIVE, KEEP = 1, 0


@dataclass(frozen=True)
class ObservationMatrix:
    """Multichannel time-series window: data[t, j] is channel j at sample t."""

    data: np.ndarray
    sample_hz: float
    channel_names: tuple

    def __post_init__(self):
        d = np.asarray(self.data, dtype=float)
        object.__setattr__(self, "data", d)
        object.__setattr__(self, "channel_names", tuple(self.channel_names))
        if d.ndim != 2 or d.shape[0] < 1 or d.shape[1] < 1:
            raise DataError("observation must be a non-empty 2-D matrix")
        if len(self.channel_names) != d.shape[1]:
            raise DataError("channel_names length does not match column count")
        if self.sample_hz <= 0:
            raise DataError("sample_hz must be positive")
        if not np.isfinite(d).all():
            raise DataError("observation contains non-finite values")

    @property
    def n_samples(self):
        return self.data.shape[0]

    @property
    def n_channels(self):
        return self.data.shape[1]


@dataclass(frozen=True)
class Subtask:
    """One atomic step of the collaborative task, with a soft object profile."""

    agent: str  # "human" or "robot"
    action_label: str
    object_probs: np.ndarray
    begin_time: float
    finish_time: float

    def __post_init__(self):
        p = np.asarray(self.object_probs, dtype=float)
        object.__setattr__(self, "object_probs", p)
        if self.agent not in ("human", "robot"):
            raise DataError(f"unknown agent {self.agent!r}")
        if p.ndim != 1 or p.size < 1:
            raise DataError("object_probs must be a non-empty vector")
        if (p < 0).any() or (p > 1).any() or abs(float(p.sum()) - 1.0) > 1e-9:
            raise DataError("object_probs must be a probability vector")
        if self.finish_time < self.begin_time:
            raise DataError("finish_time before begin_time")


def object_id_from_subtask(subtask):
    """Most likely requested object of a subtask, as a 1-based id (ties: lowest)."""
    return int(np.argmax(subtask.object_probs)) + 1


def object_sequence_from_subtasks(subtasks):
    """Ordered 1-based object ids extracted from a trial's subtask list."""
    return [object_id_from_subtask(s) for s in subtasks]


@dataclass(frozen=True)
class TurnEvent:
    """A labeled turn-taking window: Give (label 1) hands the turn over, Keep (0) retains it."""

    event_id: str
    subject_id: str
    label: int
    observation: ObservationMatrix
    start_time: float = 0.0
    end_time: float = None

    def __post_init__(self):
        if self.label not in (GIVE, KEEP):
            raise DataError(f"label must be 0 or 1, got {self.label!r}")
        if self.end_time is None:
            duration = self.observation.n_samples / self.observation.sample_hz
            object.__setattr__(self, "end_time", self.start_time + duration)
        if self.end_time <= self.start_time:
            raise DataError("event must have positive duration")

    @property
    def kind(self):
        return "give" if self.label == GIVE else "keep"


@dataclass(frozen=True)
class ObjectSequence:
    """Ordered object requests of one trial, attributed to a subject for LOSO."""

    trial_id: str
    subject_id: str
    object_ids: tuple

    def __post_init__(self):
        object.__setattr__(self, "object_ids", tuple(int(u) for u in self.object_ids))
        if any(u < 1 for u in self.object_ids):
            raise DataError("object ids are 1-based positive integers")


@dataclass(frozen=True)
class Corpus:
    """Immutable collection of turn events plus per-trial object sequences."""

    events: tuple
    object_sequences: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        object.__setattr__(self, "object_sequences", tuple(self.object_sequences))

    @property
    def subjects(self):
        return tuple(sorted({e.subject_id for e in self.events}))

    @property
    def channel_names(self):
        return self.events[0].observation.channel_names if self.events else ()

    def split_by_subject(self, held_out):
        """(train, test) sub-corpora with the given subject held out entirely."""
        train_ev = [e for e in self.events if e.subject_id != held_out]
        test_ev = [e for e in self.events if e.subject_id == held_out]
        train_seq = [s for s in self.object_sequences if s.subject_id != held_out]
        test_seq = [s for s in self.object_sequences if s.subject_id == held_out]
        return Corpus(train_ev, train_seq), Corpus(test_ev, test_seq)


def load_corpus(path, objects_path=None):
    """Read a JSONL corpus (one event per line) and optional object-sequence CSV."""
    events = []
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise DataError(f"cannot read corpus {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: JSON parse error: {exc}") from exc
        try:
            obs = ObservationMatrix(
                np.asarray(rec["data"], dtype=float),
                float(rec["sample_hz"]),
                tuple(rec["channels"]),
            )
            events.append(
                TurnEvent(str(rec["event_id"]), str(rec["subject"]), int(rec["label"]), obs)
            )
        except KeyError as exc:
            raise DataError(f"{path}:{lineno}: missing field {exc}") from exc
        except DataError as exc:
            raise DataError(
                f"{path}:{lineno}: invalid event {rec.get('event_id', '?')!r}: {exc}"
            ) from exc
    if not events:
        raise DataError(f"{path}: no events")
    names = events[0].observation.channel_names
    for e in events:
        if e.observation.channel_names != names:
            raise DataError(f"event {e.event_id!r}: inconsistent channels {e.observation.channel_names}")
    sequences = load_object_sequences(objects_path) if objects_path else ()
    return Corpus(events, sequences)


def save_corpus(corpus, path, objects_path=None):
    """Write a corpus back to the JSONL interchange format."""
    with open(path, "w") as fh:
        fh.write(corpus_to_jsonl(corpus))
    if objects_path is not None:
        save_object_sequences(corpus.object_sequences, objects_path)


def corpus_to_jsonl(corpus):
    lines = []
    for e in corpus.events:
        rec = {
            "event_id": e.event_id,
            "subject": e.subject_id,
            "label": int(e.label),
            "sample_hz": e.observation.sample_hz,
            "channels": list(e.observation.channel_names),
            "data": e.observation.data.tolist(),
        }
        lines.append(json.dumps(rec))
    return "\n".join(lines) + "\n"


def load_object_sequences(path):
    """Read the `trial_id,step,object_id` CSV; subject is the trial id's 'subj/...' prefix."""
    rows = {}
    try:
        with open(path) as fh:
            lines = [ln.strip() for ln in fh if ln.strip()]
    except OSError as exc:
        raise DataError(f"cannot read object sequences {path}: {exc}") from exc
    if not lines or lines[0].split(",") != ["trial_id", "step", "object_id"]:
        raise DataError(f"{path}: expected header trial_id,step,object_id")
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 3:
            raise DataError(f"{path}:{lineno}: expected 3 columns")
        trial, step, obj = parts[0], int(parts[1]), int(parts[2])
        rows.setdefault(trial, []).append((step, obj))
    sequences = []
    for trial in rows:
        ordered = [obj for _, obj in sorted(rows[trial])]
        subject = trial.split("/", 1)[0] if "/" in trial else trial
        sequences.append(ObjectSequence(trial, subject, ordered))
    return tuple(sequences)


def save_object_sequences(sequences, path):
    lines = ["trial_id,step,object_id"]
    for seq in sequences:
        for step, obj in enumerate(seq.object_ids, start=1):
            lines.append(f"{seq.trial_id},{step},{obj}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def slice_partial(X, tau):
    """First max(1, ceil(tau * L)) rows of the observation; tau=1 returns X itself."""
    if not 0.0 < tau <= 1.0:
        raise ConfigError(f"tau must be in (0, 1], got {tau}")
    # the epsilon keeps float products like 0.1 * 30 from ceiling one row high
    rows = max(1, math.ceil(tau * X.n_samples - 1e-9))
    if rows >= X.n_samples:
        return X
    return ObservationMatrix(X.data[:rows].copy(), X.sample_hz, X.channel_names)


def resample_event(X, target_len):
    """Linear interpolation along time to exactly target_len rows per channel."""
    if target_len < 2:
        raise ValueError("target_len must be >= 2")
    L = X.n_samples
    if L < 2:
        raise DataError("cannot resample an observation with fewer than 2 rows")
    if L == target_len:
        return X
    src = np.arange(L, dtype=float)
    tgt = np.linspace(0.0, L - 1.0, target_len)
    out = np.empty((target_len, X.n_channels))
    for j in range(X.n_channels):
        out[:, j] = np.interp(tgt, src, X.data[:, j])
    return ObservationMatrix(out, X.sample_hz, X.channel_names)


# ---------------------------------------------------------------------------
# Synthetic corpus
# ---------------------------------------------------------------------------

# Circulant request chain: from object i the next request is i+1, occasionally a
# skip to i+2, never anything else. Doubly stochastic, so the stationary law is
# uniform. Zero off-branch mass is deliberate: a recording error then produces a
# window no clean chain path explains, and models that see the whole window can
# recover the true state while a table keyed on the last request alone cannot.
OBJECT_TRANSITIONS = np.zeros((6, 6))
for _i in range(6):
    OBJECT_TRANSITIONS[_i, (_i + 1) % 6] = 0.95
    OBJECT_TRANSITIONS[_i, (_i + 2) % 6] = 0.05
del _i


@dataclass(frozen=True)
class SyntheticConfig:
    """Knobs of the synthetic corpus generator. All defaults documented in README."""

    n_subjects: int = 12
    events_per_subject: int = 180
    n_channels: int = 8
    give_fraction: float = 0.4
    sample_hz: float = 20.0
    min_len: int = 20
    max_len: int = 40
    ar_coeff: float = 0.6
    noise_scale: float = 1.0
    offset_scale: float = 1.5
    motif_channels: tuple = (1, 3, 6)
    motif_amplitude: float = 3.0
    motif_freq_hz: float = 3.0
    motif_start_frac: float = 0.6  # motif occupies the final 40% of the window by default
    n_objects: int = 6
    trials_per_subject: int = 5
    steps_per_trial: int = 14
    object_eps: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "motif_channels", tuple(self.motif_channels))
        if self.n_subjects < 2:
            raise ConfigError("synthetic.n_subjects: need >= 2 subjects")
        if self.events_per_subject < 10:
            raise ConfigError("synthetic.events_per_subject: need >= 10")
        if self.n_channels < 4:
            raise ConfigError("synthetic.n_channels: need >= 4 channels")
        if not 0.0 < self.give_fraction < 1.0:
            raise ConfigError("synthetic.give_fraction: must be in (0, 1)")
        if not 2 <= self.min_len <= self.max_len:
            raise ConfigError("synthetic.min_len/max_len: need 2 <= min <= max")
        if any(not 0 <= c < self.n_channels for c in self.motif_channels):
            raise ConfigError("synthetic.motif_channels: channel index out of range")
        if not 0.0 <= self.motif_start_frac < 1.0:
            raise ConfigError("synthetic.motif_start_frac: must be in [0, 1)")
        if not 0.0 <= self.object_eps < 1.0:
            raise ConfigError("synthetic.object_eps: must be in [0, 1)")
        if self.n_objects != OBJECT_TRANSITIONS.shape[0]:
            raise ConfigError("synthetic.n_objects: fixed transition matrix is 6x6")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"synthetic.{unknown[0]}: unknown field")
        return cls(**d)

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


def generate_synthetic(config, seed):
    """Deterministic synthetic corpus. Keep events are AR(1) noise around per-subject
    offsets; Give events add a motif (linear amplitude ramp plus an oscillation burst)
    on the motif channels from motif_start_frac of the window onward. Object-request
    sequences follow the fixed 6-object chain; with probability object_eps a request
    is recorded as a uniformly random object instead of the chain's true state.
    """
    cfg = config
    rng = np.random.default_rng(seed)
    names = tuple(f"ch{j:02d}" for j in range(cfg.n_channels))
    offsets = rng.normal(0.0, cfg.offset_scale, size=(cfg.n_subjects, cfg.n_channels))

    events = []
    for s in range(cfg.n_subjects):
        subject = f"s{s:02d}"
        n_give = int(round(cfg.events_per_subject * cfg.give_fraction))
        labels = np.array([GIVE] * n_give + [KEEP] * (cfg.events_per_subject - n_give))
        labels = labels[rng.permutation(cfg.events_per_subject)]
        for k in range(cfg.events_per_subject):
            L = int(rng.integers(cfg.min_len, cfg.max_len + 1))
            shocks = rng.normal(0.0, cfg.noise_scale, size=(L, cfg.n_channels))
            x = np.empty((L, cfg.n_channels))
            x[0] = shocks[0]
            for t in range(1, L):
                x[t] = cfg.ar_coeff * x[t - 1] + shocks[t]
            x += offsets[s]
            if labels[k] == GIVE and cfg.motif_amplitude != 0.0:
                start = int(math.floor(cfg.motif_start_frac * L))
                span = L - start
                progress = np.arange(1, span + 1) / span
                ramp = cfg.motif_amplitude * progress
                tt = np.arange(start, L) / cfg.sample_hz
                burst = 0.5 * cfg.motif_amplitude * np.sin(2.0 * np.pi * cfg.motif_freq_hz * tt)
                for ch in cfg.motif_channels:
                    x[start:, ch] += ramp + burst
            obs = ObservationMatrix(x, cfg.sample_hz, names)
            events.append(TurnEvent(f"{subject}-e{k:03d}", subject, int(labels[k]), obs))

    sequences = []
    for s in range(cfg.n_subjects):
        subject = f"s{s:02d}"
        for trial in range(cfg.trials_per_subject):
            state = int(rng.integers(cfg.n_objects))
            emitted = []
            for _ in range(cfg.steps_per_trial):
                state = int(rng.choice(cfg.n_objects, p=OBJECT_TRANSITIONS[state]))
                if rng.random() < cfg.object_eps:
                    emitted.append(int(rng.integers(1, cfg.n_objects + 1)))
                else:
                    emitted.append(state + 1)
            sequences.append(ObjectSequence(f"{subject}/t{trial}", subject, emitted))

    return Corpus(events, sequences)
