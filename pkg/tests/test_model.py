"""End-to-end pipeline model: canonical timebase, early prediction, and
serialization fidelity. Uses the compact session-scoped trained model.
"""

import json

import numpy as np
import pytest

from turnspike import model as model_mod
from turnspike.dataset import Corpus, ObservationMatrix
from turnspike.errors import ConfigError, DataError
from turnspike.model import (CANONICAL_ROWS, TtsnetConfig, TtsnetModel,
                             partial_rows, train)


def test_partial_rows_examples():
    assert CANONICAL_ROWS == 40
    assert partial_rows(1.0) == 40
    assert partial_rows(0.1) == 4
    assert partial_rows(0.5) == 20
    assert partial_rows(0.025) == 1
    assert partial_rows(0.01) == 1  # never zero rows
    with pytest.raises(ConfigError):
        partial_rows(0.0)
    with pytest.raises(ConfigError):
        partial_rows(1.2)


def test_partial_rows_monotone():
    taus = np.linspace(0.01, 1.0, 200)
    rows = [partial_rows(float(t)) for t in taus]
    assert all(a <= b for a, b in zip(rows, rows[1:]))


def test_config_validation():
    with pytest.raises(ConfigError):
        TtsnetConfig(alpha=0.0)
    with pytest.raises(ConfigError):
        TtsnetConfig(partial_span="windowed")
    with pytest.raises(ConfigError):
        TtsnetConfig(classifier="mlp")
    with pytest.raises(ConfigError):
        TtsnetConfig(norm_taus=())


def test_trained_model_fits_its_corpus(model_setup):
    corpus, trained = model_setup
    obs = [e.observation for e in corpus.events]
    labels = np.array([e.label for e in corpus.events])
    preds, scores = trained.predict_batch(obs, 1.0)
    tp = int(np.sum((preds == 1) & (labels == 1)))
    fp = int(np.sum((preds == 1) & (labels == 0)))
    fn = int(np.sum((preds == 0) & (labels == 1)))
    from turnspike.metrics import f1
    assert f1(tp, fp, fn) >= 0.9


def test_predict_single_matches_batch(model_setup):
    corpus, trained = model_setup
    for e in corpus.events[:3]:
        label, score = trained.predict(e.observation, 0.5)
        labels, scores = trained.predict_batch([e.observation], 0.5)
        assert label == int(labels[0])
        assert score == float(scores[0])


def test_full_tau_equals_unsliced(model_setup):
    corpus, trained = model_setup
    for e in corpus.events[:4]:
        with_tau = trained.predict(e.observation, 1.0)
        implicit = trained.predict(e.observation)
        assert with_tau == implicit


def test_decision_is_score_sign(model_setup):
    corpus, trained = model_setup
    obs = [e.observation for e in corpus.events[:10]]
    labels, scores = trained.predict_batch(obs, 1.0)
    assert np.array_equal(labels, (scores >= 0.0).astype(labels.dtype))


def test_simulated_span_tracks_observed_rows(model_setup):
    _, trained = model_setup
    rng = np.random.default_rng(0)
    X = ObservationMatrix(rng.standard_normal((40, 8)), 20.0,
                          tuple(f"ch{j}" for j in range(8)))
    for tau in (0.1, 0.5, 1.0):
        maps, sim_ms = trained.firing_maps_batch([X], tau)
        assert sim_ms == 5 * partial_rows(tau) + 50
        assert len(maps) == 1
        assert len(maps[0]) == trained.feature_spec.m
        assert all(m.n_neurons == 250 for m in maps[0])


def test_model_round_trip_is_exact(model_setup, tmp_path):
    corpus, trained = model_setup
    path = tmp_path / "model.json"
    trained.save(path)
    loaded = TtsnetModel.load(path)
    obs = [e.observation for e in corpus.events]
    for tau in (0.2, 1.0):
        la, sa = trained.predict_batch(obs, tau)
        lb, sb = loaded.predict_batch(obs, tau)
        assert np.array_equal(la, lb)
        assert np.array_equal(sa, sb)
    # serialization is stable across a save/load cycle
    assert json.dumps(trained.to_dict(), sort_keys=True) == \
        json.dumps(loaded.to_dict(), sort_keys=True)


def test_training_is_seed_deterministic(model_setup):
    corpus, trained = model_setup
    again = train(corpus, trained.config, seed=trained.seed)
    assert json.dumps(again.to_dict(), sort_keys=True) == \
        json.dumps(trained.to_dict(), sort_keys=True)


def test_all_zero_observation_is_handled(model_setup):
    _, trained = model_setup
    X = ObservationMatrix(np.zeros((30, 8)), 20.0,
                          tuple(f"ch{j}" for j in range(8)))
    label, score = trained.predict(X, 0.3)
    assert label in (0, 1)
    assert np.isfinite(score)


def test_train_rejects_single_class(model_setup):
    corpus, trained = model_setup
    keep_only = Corpus(tuple(e for e in corpus.events if e.label == 0))
    with pytest.raises(DataError):
        train(keep_only, trained.config, seed=0)


def test_predict_rejects_bad_tau(model_setup):
    corpus, trained = model_setup
    with pytest.raises(ConfigError):
        trained.predict(corpus.events[0].observation, 0.0)
