"""Signal preprocessing and feature construction: EWMA smoothing, corpus-level
z-normalization, the six-kernel 1-D filter bank, and chi-square feature ranking.

Filter ids, in fixed order (also the chi2 tie-break order):
  identity          delta kernel, passes the channel through
  deriv             central difference [-1, 0, 1]/2, unit response to a unit ramp
  deriv_gauss       derivative of a Gaussian (sigma=2 samples), ramp-normalized
  log               second derivative of a Gaussian (sigma=2), zero-mean corrected
  gabor1, gabor2    Gaussian (sigma=3) windows modulated by cosines at 1 and 3 Hz
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .dataset import Corpus, ObservationMatrix, TurnEvent
from .errors import ConfigError, DataError

FILTER_NAMES = ("identity", "deriv", "deriv_gauss", "log", "gabor1", "gabor2")

_kernel_cache = {}


def filter_kernels(sample_hz=20.0):
    """The six 1-D correlation kernels, keyed by name."""
    key = float(sample_hz)
    if key not in _kernel_cache:
        sig2 = 2.0
        j2 = np.arange(-6, 7, dtype=float)  # +/- 3 sigma at sigma=2
        g2 = np.exp(-(j2**2) / (2.0 * sig2**2))
        dog = j2 * g2
        dog = dog / np.sum(j2 * dog)  # unit response to a unit ramp
        log = ((j2**2) / sig2**4 - 1.0 / sig2**2) * g2
        log = log - log.mean()  # exact zero response to constants
        sig3 = 3.0
        j3 = np.arange(-9, 10, dtype=float)  # +/- 3 sigma at sigma=3
        g3 = np.exp(-(j3**2) / (2.0 * sig3**2))
        gab1 = g3 * np.cos(2.0 * np.pi * 1.0 * j3 / key)
        gab2 = g3 * np.cos(2.0 * np.pi * 3.0 * j3 / key)
        _kernel_cache[key] = {
            "identity": np.array([1.0]),
            "deriv": np.array([-0.5, 0.0, 0.5]),
            "deriv_gauss": dog,
            "log": log,
            "gabor1": gab1,
            "gabor2": gab2,
        }
    return _kernel_cache[key]


def _correlate_same(x, kernel):
    # edge-replicated correlation, output length == input length
    half = len(kernel) // 2
    if half == 0:
        return x * kernel[0]
    padded = np.pad(x, half, mode="edge")
    return np.correlate(padded, kernel, mode="valid")


def apply_filter(channel, filter_id, sample_hz=20.0):
    """One filter-bank encoding of a 1-D channel."""
    kernels = filter_kernels(sample_hz)
    if filter_id not in kernels:
        raise ConfigError(f"unknown filter id {filter_id!r}")
    x = np.asarray(channel, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("channel must be a non-empty 1-D vector")
    return _correlate_same(x, kernels[filter_id])


def filter_bank_encode(channel, sample_hz=20.0):
    """All six encodings of a channel, stacked as a (6, L) array in FILTER_NAMES order."""
    x = np.asarray(channel, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("channel must be a non-empty 1-D vector")
    kernels = filter_kernels(sample_hz)
    return np.stack([_correlate_same(x, kernels[name]) for name in FILTER_NAMES])


def ewma_smooth(series, alpha=0.2):
    """Exponentially weighted moving average; the first output equals the first input."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    x = np.asarray(series, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("series must be a non-empty 1-D vector")
    zi = np.array([(1.0 - alpha) * x[0]])
    y, _ = lfilter([alpha], [1.0, -(1.0 - alpha)], x, zi=zi)
    return y


def ewma_smooth_matrix(data, alpha=0.2):
    """Column-wise EWMA of an (L, M) matrix."""
    zi = (1.0 - alpha) * data[0:1]
    y, _ = lfilter([alpha], [1.0, -(1.0 - alpha)], data, axis=0, zi=zi)
    return y


@dataclass(frozen=True)
class ChannelStats:
    """Grand mean and pooled std per channel; reusable on held-out observations."""

    mean: np.ndarray
    std: np.ndarray

    def apply(self, X):
        scale = np.where(self.std > 0.0, self.std, 1.0)
        if isinstance(X, ObservationMatrix):
            return ObservationMatrix((X.data - self.mean) / scale, X.sample_hz, X.channel_names)
        return (np.asarray(X, dtype=float) - self.mean) / scale

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, payload: dict) -> "ChannelStats":
        return cls(np.asarray(payload["mean"], dtype=float),
                   np.asarray(payload["std"], dtype=float))


def znormalize(corpus, stats=None):
    """Rescale every channel to zero mean / unit variance using corpus-wide statistics.

    Returns (normalized corpus, ChannelStats). Zero-variance channels are passed
    through unscaled with a warning. Pass `stats` to reuse training statistics.
    """
    if stats is None:
        pooled = np.concatenate([e.observation.data for e in corpus.events], axis=0)
        mean = pooled.mean(axis=0)
        std = pooled.std(axis=0)
        flat = np.nonzero(std == 0.0)[0]
        for j in flat:
            warnings.warn(f"channel {corpus.channel_names[j]!r} has zero variance; passed through")
        stats = ChannelStats(mean, std)
    events = [
        TurnEvent(e.event_id, e.subject_id, e.label, stats.apply(e.observation),
                  e.start_time, e.end_time)
        for e in corpus.events
    ]
    return Corpus(events, corpus.object_sequences), stats


@dataclass(frozen=True)
class FeatureSpec:
    """Top-m (channel_index, filter_id) pairs with their chi-square scores, descending."""

    selected: tuple
    chi2_scores: tuple

    def __post_init__(self):
        object.__setattr__(self, "selected", tuple((int(c), str(f)) for c, f in self.selected))
        object.__setattr__(self, "chi2_scores", tuple(float(s) for s in self.chi2_scores))
        if len(self.selected) < 1:
            raise ValueError("need at least one selected feature")
        if len(self.selected) != len(set(self.selected)):
            raise ValueError("selected pairs must be unique")
        if len(self.selected) != len(self.chi2_scores):
            raise ValueError("selected and chi2_scores length mismatch")
        if any(a < b for a, b in zip(self.chi2_scores, self.chi2_scores[1:])):
            raise ValueError("chi2_scores must be sorted descending")

    @property
    def m(self):
        return len(self.selected)

    def to_dict(self) -> dict:
        return {
            "selected": [[ch, name] for ch, name in self.selected],
            "chi2_scores": list(self.chi2_scores),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "FeatureSpec":
        return cls(
            tuple((int(c), str(f)) for c, f in payload["selected"]),
            tuple(payload["chi2_scores"]),
        )


def chi2_statistic(values, labels, n_bins=10):
    """Chi-square statistic of the quantile-bin x label contingency table."""
    values = np.asarray(values, dtype=float)
    labels = np.asarray(labels)
    edges = np.quantile(values, np.linspace(0.0, 1.0, n_bins + 1)[1:-1])
    bins = np.searchsorted(edges, values, side="right")
    classes = np.unique(labels)
    counts = np.stack([np.bincount(bins[labels == c], minlength=n_bins) for c in classes], axis=1)
    row = counts.sum(axis=1, keepdims=True).astype(float)
    col = counts.sum(axis=0, keepdims=True).astype(float)
    total = float(counts.sum())
    expected = row @ col / total
    mask = expected > 0.0
    return float((((counts - expected) ** 2)[mask] / expected[mask]).sum())


def chi2_rank(corpus, num_features, n_bins=10):
    """Rank all (channel, filter) candidate features by chi-square dependence with
    the event label, pooling every sample of every event; return the top m.

    Ties break lexicographically on (channel_index, filter order above).
    """
    events = corpus.events
    labels_by_event = np.array([e.label for e in events])
    if len(np.unique(labels_by_event)) < 2:
        raise DataError("chi2_rank needs events of both classes")
    M = events[0].observation.n_channels
    if not 1 <= num_features <= 6 * M:
        raise ConfigError(f"num_features must be in [1, {6 * M}]")
    sample_labels = np.concatenate(
        [np.full(e.observation.n_samples, e.label) for e in events]
    )
    ranked = []
    for ch in range(M):
        hz = events[0].observation.sample_hz
        encoded = [filter_bank_encode(e.observation.data[:, ch], hz) for e in events]
        for f_idx, f_name in enumerate(FILTER_NAMES):
            pooled = np.concatenate([enc[f_idx] for enc in encoded])
            stat = chi2_statistic(pooled, sample_labels, n_bins)
            ranked.append((-stat, ch, f_idx, f_name))
    ranked.sort()
    top = ranked[:num_features]
    return FeatureSpec(
        selected=[(ch, f_name) for _, ch, _, f_name in top],
        chi2_scores=[-neg for neg, _, _, _ in top],
    )
