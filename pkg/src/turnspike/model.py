"""End-to-end early turn classifier: encode, simulate, describe, decide.

Training runs in two stages. Stage 1 STDP-trains one spiking network per
selected feature channel on repeated stimulus presentations; stage 2
freezes the weights, simulates every training event, and fits a linear
classifier on the normalized firing histograms. Prediction reuses the same
encode path on a leading slice of the observation, so a full-length
prediction reproduces the training representation exactly.

Partial observations fire at a different rate scale than full ones, so
stage 2 can record descriptor statistics at extra anchor horizons
(norm_taus); prediction standardizes with statistics interpolated at the
requested horizon. The default single anchor keeps the classic behaviour.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field, fields

import numpy as np

from . import classifiers, descriptors, features, snn
from .dataset import Corpus, ObservationMatrix, slice_partial
from .errors import ConfigError, DataError

CANONICAL_ROWS = 40


@dataclass(frozen=True)
class TtsnetConfig:
    """Hyperparameters for the spiking pipeline and its classifier stage."""

    alpha: float = 0.2
    num_features: int = 10
    levels: int = 40
    bins: int = 25
    kernel_pair: tuple = ("RS", "LTS")
    presentations: int = 3600
    apply_interval_ms: int = 1
    chi2_bins: int = 10
    c_grid: tuple = (0.1, 1.0, 10.0)
    svm_epochs: int = 300
    cv_folds: int = 5
    partial_span: str = "elapsed"
    classifier: str = "linear_svm"
    norm_taus: tuple = (1.0,)

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError("alpha must lie in (0, 1]")
        if self.num_features < 1:
            raise ConfigError("num_features must be at least 1")
        if self.levels < 2:
            raise ConfigError("levels must be at least 2")
        if self.bins < 1:
            raise ConfigError("bins must be at least 1")
        if self.presentations < 1:
            raise ConfigError("presentations must be at least 1")
        if self.apply_interval_ms < 1:
            raise ConfigError("apply_interval_ms must be at least 1")
        if self.cv_folds < 2:
            raise ConfigError("cv_folds must be at least 2")
        if self.partial_span not in ("elapsed", "fixed"):
            raise ConfigError("partial_span must be 'elapsed' or 'fixed'")
        if self.classifier not in ("linear_svm", "nearest_centroid"):
            raise ConfigError("classifier must be 'linear_svm' or 'nearest_centroid'")
        taus = tuple(sorted({float(t) for t in self.norm_taus}))
        if not taus or any(not 0.0 < t <= 1.0 for t in taus):
            raise ConfigError("norm_taus must be a non-empty set of values in (0, 1]")
        if taus[-1] != 1.0:
            raise ConfigError("norm_taus must include the full horizon 1.0")
        object.__setattr__(self, "norm_taus", taus)
        object.__setattr__(self, "kernel_pair", tuple(self.kernel_pair))
        object.__setattr__(self, "c_grid", tuple(float(c) for c in self.c_grid))

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["kernel_pair"] = list(self.kernel_pair)
        out["c_grid"] = list(self.c_grid)
        out["norm_taus"] = list(self.norm_taus)
        return out

    @classmethod
    def from_dict(cls, payload: dict) -> "TtsnetConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"unknown model config fields: {sorted(unknown)}")
        return cls(**payload)


def partial_rows(tau: float) -> int:
    """Rows of the canonical 40-row timebase covered by a tau-fraction slice."""
    if not 0.0 < tau <= 1.0:
        raise ConfigError(f"tau must be in (0, 1], got {tau}")
    return max(1, math.ceil(CANONICAL_ROWS * tau - 1e-9))


def _resample_rows(matrix: np.ndarray, target: int) -> np.ndarray:
    """Linear-interpolate each column to exactly `target` rows."""
    length = matrix.shape[0]
    if length == target:
        return matrix
    src = np.arange(length, dtype=float)
    tgt = np.linspace(0.0, length - 1.0, target)
    out = np.empty((target, matrix.shape[1]))
    for j in range(matrix.shape[1]):
        out[:, j] = np.interp(tgt, src, matrix[:, j])
    return out


@dataclass(eq=False)
class TtsnetModel:
    """Trained pipeline state; immutable in use, serializable to one JSON."""

    config: TtsnetConfig
    channel_names: tuple
    channel_stats: features.ChannelStats
    feature_spec: features.FeatureSpec
    quantizers: list
    level_maps: list
    networks: list
    descriptor_stats: list  # (tau, mean, std) anchors, ascending tau
    classifier: object
    sample_hz: float
    seed: int

    # -- encoding ---------------------------------------------------------

    def _selected_matrix(self, normalized: np.ndarray) -> np.ndarray:
        cols = [
            features.apply_filter(normalized[:, ch], name)
            for ch, name in self.feature_spec.selected
        ]
        return np.stack(cols, axis=1)

    def _encode_observation(self, data: np.ndarray, tau: float):
        """Raw (L, M) slice -> (rows, m) quantized levels on the 40-row timebase."""
        rows = partial_rows(tau)
        smoothed = features.ewma_smooth_matrix(data, self.config.alpha)
        normalized = self.channel_stats.apply(smoothed)
        selected = self._selected_matrix(normalized)
        resampled = _resample_rows(selected, rows)
        quantized = np.empty((rows, len(self.quantizers)), dtype=np.int64)
        for j, (r1, r99) in enumerate(self.quantizers):
            quantized[:, j] = snn.quantize(resampled[:, j], r1, r99, self.config.levels)
        return quantized

    def _spans(self, tau: float):
        """(simulated_ms, normalization_ms) for a tau-fraction observation."""
        if self.config.partial_span == "fixed":
            return snn.PRESENTATION_MS, snn.PRESENTATION_MS
        span = self.level_maps[0].group_size * partial_rows(tau) + snn.SETTLE_MS
        return span, span

    def _check_channels(self, data: np.ndarray):
        if data.ndim != 2 or data.shape[1] != len(self.channel_names):
            raise DataError(
                f"observation has {data.shape[-1] if data.ndim == 2 else '?'} channels, "
                f"model expects {len(self.channel_names)}")

    # -- simulation -------------------------------------------------------

    def firing_maps_batch(self, observations, tau=1.0):
        """Simulate a batch of raw observations at one horizon.

        Returns (maps, simulated_ms) where maps[e][j] is the firing map of
        channel j for observation e. Shared by prediction and by baselines
        that read the spike domain directly.
        """
        arrays = [obs.data if isinstance(obs, ObservationMatrix) else np.asarray(obs)
                  for obs in observations]
        for arr in arrays:
            self._check_channels(arr)
        sliced = []
        for arr in arrays:
            keep = max(1, math.ceil(tau * arr.shape[0] - 1e-9))
            sliced.append(arr[:keep])
        encoded = [self._encode_observation(arr, tau) for arr in sliced]
        sim_ms, _ = self._spans(tau)
        per_channel = []
        for j, net in enumerate(self.networks):
            schedules = [
                snn.schedule_stimuli(enc[:, j], self.level_maps[j]) for enc in encoded
            ]
            per_channel.append(snn.simulate_batch(net, schedules, duration_ms=sim_ms))
        maps = [[per_channel[j][e] for j in range(len(self.networks))]
                for e in range(len(arrays))]
        return maps, sim_ms

    def _stats_at(self, tau: float):
        """Standardization stats at a horizon, interpolated between anchors."""
        anchors = self.descriptor_stats
        if tau <= anchors[0][0]:
            return anchors[0][1], anchors[0][2]
        for (t0, m0, s0), (t1, m1, s1) in zip(anchors, anchors[1:]):
            if tau <= t1:
                w = (tau - t0) / (t1 - t0)
                return m0 * (1.0 - w) + m1 * w, s0 * (1.0 - w) + s1 * w
        return anchors[-1][1], anchors[-1][2]

    def descriptor_features(self, maps, tau):
        """Normalized histogram features for per-event firing maps at one horizon."""
        _, norm_ms = self._spans(tau)
        rows = np.stack([
            descriptors.nhnf(event_maps, self.config.bins, norm_ms).flatten()
            for event_maps in maps
        ])
        mean, std = self._stats_at(tau)
        return (rows - mean) / std

    # -- prediction -------------------------------------------------------

    def predict_from_maps(self, maps, tau):
        """Classify already-simulated firing maps (maps[e][j]: event e, channel j)."""
        feats = self.descriptor_features(maps, tau)
        scores = self.classifier.score(feats)
        labels = np.atleast_1d(self.classifier.decide(feats))
        return labels, np.atleast_1d(scores)

    def predict_batch(self, observations, tau=1.0):
        """Labels and scores for many observations at one horizon."""
        maps, _ = self.firing_maps_batch(observations, tau)
        return self.predict_from_maps(maps, tau)

    def predict(self, observation, tau=1.0):
        """Early decision on a single observation: (label, score)."""
        labels, scores = self.predict_batch([observation], tau)
        return int(labels[0]), float(scores[0])

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "kind": "ttsnet",
            "seed": self.seed,
            "sample_hz": self.sample_hz,
            "config": self.config.to_dict(),
            "channel_names": list(self.channel_names),
            "channel_stats": self.channel_stats.to_dict(),
            "feature_spec": self.feature_spec.to_dict(),
            "quantizers": [[r1, r99] for r1, r99 in self.quantizers],
            "level_maps": [lm.to_dict() for lm in self.level_maps],
            "networks": [net.to_dict() for net in self.networks],
            "descriptor_stats": [
                [t, m.tolist(), s.tolist()] for t, m, s in self.descriptor_stats
            ],
            "classifier": self.classifier.to_dict(),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "TtsnetModel":
        if payload.get("version") != 1 or payload.get("kind") != "ttsnet":
            raise DataError("unsupported model bundle format")
        return cls(
            config=TtsnetConfig.from_dict(payload["config"]),
            channel_names=tuple(payload["channel_names"]),
            channel_stats=features.ChannelStats.from_dict(payload["channel_stats"]),
            feature_spec=features.FeatureSpec.from_dict(payload["feature_spec"]),
            quantizers=[(float(r1), float(r99)) for r1, r99 in payload["quantizers"]],
            level_maps=[snn.LevelMap.from_dict(d) for d in payload["level_maps"]],
            networks=[snn.SpikingNetwork.from_dict(d) for d in payload["networks"]],
            descriptor_stats=[
                (float(t), np.asarray(m, dtype=np.float64),
                 np.asarray(s, dtype=np.float64))
                for t, m, s in payload["descriptor_stats"]
            ],
            classifier=classifiers.classifier_from_dict(payload["classifier"]),
            sample_hz=float(payload["sample_hz"]),
            seed=int(payload["seed"]),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, separators=(",", ":"))

    @classmethod
    def load(cls, path) -> "TtsnetModel":
        with open(path) as fh:
            try:
                payload = json.load(fh)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: not valid JSON ({exc})") from None
        return cls.from_dict(payload)


def train(corpus: Corpus, config: TtsnetConfig | None = None, seed: int = 0) -> TtsnetModel:
    """Fit the full pipeline on a training corpus.

    The trained model also carries `stage1_traces_`, the per-presentation
    weight-change norms of each channel network (not serialized).
    """
    config = config or TtsnetConfig()
    if len(corpus.subjects) < 2:
        raise DataError("training needs at least two subjects")
    labels = np.array([ev.label for ev in corpus.events], dtype=np.int64)
    if np.unique(labels).size < 2:
        raise DataError("training corpus contains a single class")

    smoothed = Corpus(
        [
            dataclasses.replace(
                ev,
                observation=ObservationMatrix(
                    features.ewma_smooth_matrix(ev.observation.data, config.alpha),
                    ev.observation.sample_hz,
                    ev.observation.channel_names,
                ),
            )
            for ev in corpus.events
        ],
        corpus.object_sequences,
    )
    normalized, channel_stats = features.znormalize(smoothed)
    spec = features.chi2_rank(normalized, config.num_features, n_bins=config.chi2_bins)

    m = spec.m
    seeds = [int(s) for s in np.random.SeedSequence(seed).generate_state(2 * m + 2)]
    net_seeds, map_seeds = seeds[:m], seeds[m:2 * m]
    order_seed, cv_seed = seeds[2 * m], seeds[2 * m + 1]

    networks = [snn.build_network(config.kernel_pair, s) for s in net_seeds]
    level_maps = [
        snn.map_levels(config.levels, s, networks[0].n_excitatory) for s in map_seeds
    ]

    # quantizers come from the pooled 40-row training features
    per_event = []
    for ev in normalized.events:
        sel = np.stack(
            [features.apply_filter(ev.observation.data[:, ch], name)
             for ch, name in spec.selected], axis=1)
        per_event.append(_resample_rows(sel, CANONICAL_ROWS))
    pooled = np.concatenate(per_event, axis=0)
    quantizers = [snn.fit_quantizer(pooled[:, j]) for j in range(m)]

    columns_per_net = []
    for j in range(m):
        r1, r99 = quantizers[j]
        columns_per_net.append(
            [snn.quantize(mat[:, j], r1, r99, config.levels) for mat in per_event]
        )
    networks, traces = snn.train_weights_batch(
        networks, columns_per_net, level_maps,
        presentations=config.presentations, seed=order_seed,
        apply_interval_ms=config.apply_interval_ms)

    model = TtsnetModel(
        config=config,
        channel_names=tuple(corpus.channel_names),
        channel_stats=channel_stats,
        feature_spec=spec,
        quantizers=quantizers,
        level_maps=level_maps,
        networks=networks,
        descriptor_stats=[],
        classifier=None,
        sample_hz=float(corpus.events[0].observation.sample_hz),
        seed=seed,
    )

    # stage 2: full-horizon descriptors train the classifier; extra anchor
    # horizons only contribute standardization statistics
    raw = [ev.observation for ev in corpus.events]
    full_rows = None
    for tau in config.norm_taus:
        maps, _ = model.firing_maps_batch(raw, tau=tau)
        _, norm_ms = model._spans(tau)
        rows = np.stack([
            descriptors.nhnf(event_maps, config.bins, norm_ms).flatten()
            for event_maps in maps
        ])
        mean = rows.mean(axis=0)
        std = rows.std(axis=0)
        std[std == 0.0] = 1.0
        model.descriptor_stats.append((tau, mean, std))
        if tau == 1.0:
            full_rows = rows
    mean, std = model._stats_at(1.0)
    feats = (full_rows - mean) / std

    if config.classifier == "nearest_centroid":
        clf = classifiers.NearestCentroid().fit(feats, labels)
    else:
        clf, _ = classifiers.select_linear_svm(
            feats, labels, c_grid=config.c_grid, folds=config.cv_folds,
            seed=cv_seed, epochs=config.svm_epochs)
    model.classifier = clf
    model.stage1_traces_ = traces
    return model
