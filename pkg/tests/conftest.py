"""Shared fixtures: small synthetic corpora and one compactly trained model.

Session scope keeps the spiking-network training cost paid once; every test
that mutates state works on copies.
"""

import pytest

from turnspike import dataset, model


@pytest.fixture(scope="session")
def tiny_corpus():
    cfg = dataset.SyntheticConfig(
        n_subjects=3, events_per_subject=20, trials_per_subject=2,
        steps_per_trial=8, motif_start_frac=0.0, offset_scale=0.75)
    return dataset.generate_synthetic(cfg, seed=11)


@pytest.fixture(scope="session")
def model_setup():
    """(corpus, trained model) pair with a deliberately small footprint."""
    cfg = dataset.SyntheticConfig(
        n_subjects=2, events_per_subject=30, trials_per_subject=2,
        steps_per_trial=8, motif_start_frac=0.0, offset_scale=0.75)
    corpus = dataset.generate_synthetic(cfg, seed=5)
    mcfg = model.TtsnetConfig(num_features=2, presentations=16,
                              norm_taus=(0.1, 0.5, 1.0), cv_folds=3)
    return corpus, model.train(corpus, mcfg, seed=3)
