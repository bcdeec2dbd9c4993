"""Comparison classifiers for the Give/Keep task.

Three families: per-class Gaussian HMMs over the selected filter features,
a hand-crafted statistics + random-Fourier SVM pipeline, and a spike-domain
nearest-template method that reuses a trained spiking model's firing maps.
All predictors break Give/Keep score ties toward Keep (label 0).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import descriptors, features
from .classifiers import LinearSvm, RandomFourierFeatures, cross_val_f1
from .dataset import Corpus, ObservationMatrix, slice_partial
from .errors import ConfigError, DataError
from .hmm import GaussianHmm

GIVE, KEEP = 1, 0


def _check_two_classes(corpus: Corpus):
    labels = {e.label for e in corpus.events}
    if labels != {0, 1}:
        raise DataError(f"training corpus needs both classes, found labels {sorted(labels)}")


# ---------------------------------------------------------------------------
# Gaussian-HMM baseline: one generative model per class over the selected
# filter channels, scored at native (unresampled) length.
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class HmmBaseline:
    alpha: float
    channel_stats: features.ChannelStats
    feature_spec: features.FeatureSpec
    hmm_keep: GaussianHmm
    hmm_give: GaussianHmm

    def _features(self, X: ObservationMatrix) -> np.ndarray:
        smoothed = features.ewma_smooth_matrix(X.data, self.alpha)
        normalized = self.channel_stats.apply(smoothed)
        cols = [features.apply_filter(normalized[:, ch], name, X.sample_hz)
                for ch, name in self.feature_spec.selected]
        return np.stack(cols, axis=1)

    def predict(self, X: ObservationMatrix, tau: float = 1.0):
        """(label, score) where score is the Give-vs-Keep log-likelihood gap."""
        feats = self._features(slice_partial(X, tau))
        ll_keep = self.hmm_keep.log_likelihood(feats)
        ll_give = self.hmm_give.log_likelihood(feats)
        score = ll_give - ll_keep
        return (GIVE if score > 0 else KEEP), float(score)

    def predict_batch(self, observations, tau: float = 1.0):
        pairs = [self.predict(X, tau) for X in observations]
        labels = np.array([p[0] for p in pairs], dtype=np.int64)
        scores = np.array([p[1] for p in pairs])
        return labels, scores


def train_hmm_baseline(corpus: Corpus, num_features: int = 10, n_states: int = 5,
                       restarts: int = 5, seed: int = 0, alpha: float = 0.2,
                       chi2_bins: int = 10) -> HmmBaseline:
    _check_two_classes(corpus)
    smoothed = Corpus(
        [dataclasses.replace(
            e, observation=ObservationMatrix(
                features.ewma_smooth_matrix(e.observation.data, alpha),
                e.observation.sample_hz, e.observation.channel_names))
         for e in corpus.events],
        corpus.object_sequences)
    normalized, stats = features.znormalize(smoothed)
    spec = features.chi2_rank(normalized, num_features, n_bins=chi2_bins)

    baseline = HmmBaseline(alpha=alpha, channel_stats=stats, feature_spec=spec,
                           hmm_keep=None, hmm_give=None)
    seqs = {KEEP: [], GIVE: []}
    for e in corpus.events:
        seqs[e.label].append(baseline._features(e.observation))
    fit_seeds = np.random.SeedSequence(seed).generate_state(2)
    baseline.hmm_keep = GaussianHmm.train(seqs[KEEP], n_states=n_states,
                                          seed=int(fit_seeds[0]), restarts=restarts)
    baseline.hmm_give = GaussianHmm.train(seqs[GIVE], n_states=n_states,
                                          seed=int(fit_seeds[1]), restarts=restarts)
    return baseline


# ---------------------------------------------------------------------------
# Hand-crafted statistics baseline: min/max-normalized channels summarized by
# eleven per-channel numbers, lifted with random Fourier features, linear SVM.
# ---------------------------------------------------------------------------

MOVEMENT_THRESHOLD = 0.1
STATS_PER_CHANNEL = 11


@dataclass(frozen=True)
class IshiiStats:
    """Per-channel location/scale of the raw training samples."""

    mu: np.ndarray
    sigma: np.ndarray

    def scale(self, data: np.ndarray) -> np.ndarray:
        """Map raw samples into [0, 1] anchored at mu +/- sigma, clamping outliers."""
        lo = self.mu - self.sigma
        return np.clip((data - lo) / (2.0 * self.sigma), 0.0, 1.0)


def fit_ishii_stats(corpus: Corpus) -> IshiiStats:
    pooled = np.concatenate([e.observation.data for e in corpus.events], axis=0)
    mu = pooled.mean(axis=0)
    sigma = pooled.std(axis=0)
    if np.any(sigma == 0):
        flat = int(np.argmax(sigma == 0))
        raise DataError(f"channel {flat} is constant across the training corpus")
    return IshiiStats(mu=mu, sigma=sigma)


def _movement_runs(x: np.ndarray, thresh: float = MOVEMENT_THRESHOLD):
    """Contiguous runs where the channel strays > thresh from its last quiet value.

    Returns (run_count, samples_in_runs, mean_peak_excursion).
    """
    anchor = x[0]
    runs, in_run, peak, peaks, n_in = 0, False, 0.0, [], 0
    for v in x[1:]:
        dev = abs(v - anchor)
        if dev > thresh:
            if not in_run:
                runs += 1
                in_run = True
                peak = dev
            else:
                peak = max(peak, dev)
            n_in += 1
        else:
            if in_run:
                peaks.append(peak)
                in_run = False
            anchor = v
    if in_run:
        peaks.append(peak)
    mean_peak = float(np.mean(peaks)) if peaks else 0.0
    return runs, n_in, mean_peak


def ishii_features(X: ObservationMatrix, stats: IshiiStats) -> np.ndarray:
    """Eleven summary numbers per channel, concatenated channel-major.

    Per channel: min, max, amplitude, duration (s), amplitude/duration,
    movement-run rate, mean run excursion, zero-crossing rate, and the raw
    run / active-sample / zero-crossing counts.
    """
    if X.n_channels != stats.mu.size:
        raise DataError(f"observation has {X.n_channels} channels, "
                        f"stats were fit on {stats.mu.size}")
    scaled = stats.scale(X.data)
    dur = X.n_samples / X.sample_hz
    out = np.empty(STATS_PER_CHANNEL * X.n_channels)
    for j in range(X.n_channels):
        col = scaled[:, j]
        lo, hi = float(col.min()), float(col.max())
        amp = hi - lo
        runs, n_in, mean_peak = _movement_runs(col)
        centered = col - col.mean()
        crossings = int(np.sum(np.signbit(centered[1:]) != np.signbit(centered[:-1])))
        out[STATS_PER_CHANNEL * j:STATS_PER_CHANNEL * (j + 1)] = (
            lo, hi, amp, dur, amp / dur, runs / dur, mean_peak,
            crossings / dur, runs, n_in, crossings)
    return out


@dataclass(eq=False)
class IshiiBaseline:
    stats: IshiiStats
    feature_mean: np.ndarray
    feature_std: np.ndarray
    rff: RandomFourierFeatures
    svm: LinearSvm
    best_c: float
    best_gamma: float

    def _encode(self, observations, tau):
        rows = np.stack([ishii_features(slice_partial(X, tau), self.stats)
                         for X in observations])
        return self.rff.transform((rows - self.feature_mean) / self.feature_std)

    def predict_batch(self, observations, tau: float = 1.0):
        z = self._encode(observations, tau)
        scores = np.atleast_1d(self.svm.score(z))
        labels = np.atleast_1d(self.svm.decide(z))
        return labels, scores

    def predict(self, X: ObservationMatrix, tau: float = 1.0):
        labels, scores = self.predict_batch([X], tau)
        return int(labels[0]), float(scores[0])


def train_ishii_baseline(corpus: Corpus, seed: int = 0,
                         c_grid=(1.0, 10.0, 100.0), gamma_grid=(0.1, 0.01, 0.001),
                         rff_dim: int = 500, folds: int = 5) -> IshiiBaseline:
    """Grid-search (gamma, C) by k-fold F1 on the lifted summary features.

    Ties keep the earliest (gamma, C) pair in grid order.
    """
    _check_two_classes(corpus)
    stats = fit_ishii_stats(corpus)
    rows = np.stack([ishii_features(e.observation, stats) for e in corpus.events])
    labels = np.array([e.label for e in corpus.events], dtype=np.int64)
    mean = rows.mean(axis=0)
    std = rows.std(axis=0)
    std[std == 0] = 1.0
    normed = (rows - mean) / std

    rff_seed, cv_seed = (int(s) for s in np.random.SeedSequence(seed).generate_state(2))
    best = None
    for gamma in gamma_grid:
        rff = RandomFourierFeatures(n_features=rff_dim, gamma=gamma, seed=rff_seed)
        rff.fit(normed)
        lifted = rff.transform(normed)
        for c in c_grid:
            score = cross_val_f1(lambda c=c: LinearSvm(c=c), lifted, labels,
                                 folds=folds, seed=cv_seed)
            if best is None or score > best[0]:
                best = (score, gamma, c, rff)
    _, gamma, c, rff = best
    svm = LinearSvm(c=c)
    svm.fit(rff.transform(normed), labels)
    return IshiiBaseline(stats=stats, feature_mean=mean, feature_std=std,
                         rff=rff, svm=svm, best_c=c, best_gamma=gamma)


# ---------------------------------------------------------------------------
# Spike-template baseline: per-class banks of polychronous-group sequences,
# scored by mean longest-common-subsequence similarity.
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class PngTemplateBank:
    """templates[label][channel] is a list of group sequences from training events."""

    templates: dict
    j_eps: float
    k_per_class: int

    @property
    def n_channels(self):
        return len(self.templates[KEEP])


def png_knn_train(corpus: Corpus, model, k_per_class: int = 20,
                  j_eps: float = 0.9, seed: int = 0) -> PngTemplateBank:
    """Sample k training events per class and keep their per-channel group sequences."""
    _check_two_classes(corpus)
    if k_per_class < 1:
        raise ConfigError(f"k_per_class must be >= 1, got {k_per_class}")
    rng = np.random.default_rng(seed)
    templates = {}
    for label in (KEEP, GIVE):
        events = [e for e in corpus.events if e.label == label]
        if len(events) < k_per_class:
            raise DataError(f"class {label} has {len(events)} events, "
                            f"need at least {k_per_class} templates")
        picks = sorted(rng.choice(len(events), size=k_per_class, replace=False))
        maps, _ = model.firing_maps_batch([events[i].observation for i in picks], 1.0)
        n_ch = len(maps[0])
        templates[label] = [[descriptors.extract_png(event_maps[j])
                             for event_maps in maps] for j in range(n_ch)]
    return PngTemplateBank(templates=templates, j_eps=j_eps, k_per_class=k_per_class)


def _mean_similarity(bank: PngTemplateBank, probes, label: int) -> float:
    sims = []
    for j in range(bank.n_channels):
        probe = probes[j]
        for template in bank.templates[label][j]:
            if len(probe) == 0 or len(template) == 0:
                sims.append(0.0)
            else:
                sims.append(descriptors.lcs_similarity(probe, template, bank.j_eps))
    return float(np.mean(sims))


def png_score_maps(bank: PngTemplateBank, event_maps):
    """(label, score) for one event's per-channel firing maps."""
    if len(event_maps) != bank.n_channels:
        raise DataError(f"event has {len(event_maps)} channels, "
                        f"bank was built on {bank.n_channels}")
    probes = [descriptors.extract_png(m) for m in event_maps]
    s_keep = _mean_similarity(bank, probes, KEEP)
    s_give = _mean_similarity(bank, probes, GIVE)
    score = s_give - s_keep
    return (GIVE if score > 0 else KEEP), float(score)


def png_knn_predict_batch(bank: PngTemplateBank, model, observations, tau: float = 1.0):
    maps, _ = model.firing_maps_batch(observations, tau)
    pairs = [png_score_maps(bank, event_maps) for event_maps in maps]
    labels = np.array([p[0] for p in pairs], dtype=np.int64)
    scores = np.array([p[1] for p in pairs])
    return labels, scores


def png_knn_predict(bank: PngTemplateBank, model, X: ObservationMatrix, tau: float = 1.0):
    labels, scores = png_knn_predict_batch(bank, model, [X], tau)
    return int(labels[0]), float(scores[0])
