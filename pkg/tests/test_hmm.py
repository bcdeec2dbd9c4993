"""Hidden Markov machinery.

The forward log-likelihood is checked against exhaustive path enumeration,
an independent computation that sums joint path probabilities directly.
EM monotonicity is observed by chaining single Baum-Welch sweeps.
"""

import itertools
import math

import numpy as np
import pytest

from turnspike.errors import ConfigError, DataError
from turnspike.hmm import DiscreteHmm, GaussianHmm, _baum_welch_discrete


def _enumerate_loglik(start, trans, emit, obs):
    n = start.size
    total = 0.0
    for path in itertools.product(range(n), repeat=len(obs)):
        p = start[path[0]] * emit[path[0], obs[0]]
        for t in range(1, len(obs)):
            p *= trans[path[t - 1], path[t]] * emit[path[t], obs[t]]
        total += p
    return math.log(total)


def _random_hmm(rng, n_states, n_symbols):
    def rows(shape):
        m = rng.random(shape) + 0.05
        return m / m.sum(axis=-1, keepdims=True)

    return DiscreteHmm(start=rows(n_states), trans=rows((n_states, n_states)),
                       emit=rows((n_states, n_symbols)))


def test_loglik_uniform_single_state():
    model = DiscreteHmm(start=np.array([1.0]), trans=np.array([[1.0]]),
                        emit=np.array([[0.5, 0.5]]))
    assert model.log_likelihood([0, 1]) == pytest.approx(math.log(0.25), abs=1e-12)


def test_loglik_matches_path_enumeration():
    rng = np.random.default_rng(17)
    for _ in range(60):
        n_states = int(rng.integers(1, 4))
        n_symbols = int(rng.integers(2, 5))
        model = _random_hmm(rng, n_states, n_symbols)
        length = int(rng.integers(1, 5))
        obs = rng.integers(0, n_symbols, size=length).tolist()
        expected = _enumerate_loglik(model.start, model.trans, model.emit, obs)
        assert model.log_likelihood(obs) == pytest.approx(expected, rel=1e-10)


def test_loglik_rejects_bad_symbols():
    model = DiscreteHmm(start=np.array([1.0]), trans=np.array([[1.0]]),
                        emit=np.array([[0.5, 0.5]]))
    with pytest.raises(DataError):
        model.log_likelihood([0, 2])


def test_baum_welch_loglik_never_decreases():
    # chain single EM sweeps; the likelihood of the data under the updated
    # parameters must never drop (tiny slack for the probability floor)
    rng = np.random.default_rng(99)
    for run in range(100):
        n_states = int(rng.integers(1, 4))
        n_symbols = int(rng.integers(2, 5))
        seqs = [rng.integers(0, n_symbols, size=int(rng.integers(2, 8)))
                for _ in range(6)]

        def rows(shape):
            m = rng.random(shape) + 0.5
            return m / m.sum(axis=-1, keepdims=True)

        params = (rows(n_states), rows((n_states, n_states)),
                  rows((n_states, n_symbols)))
        lls = []
        for _ in range(8):
            model = DiscreteHmm(*params)
            lls.append(sum(model.log_likelihood(s) for s in seqs))
            params = _baum_welch_discrete(seqs, *params, max_iter=1, tol=0.0)
        diffs = np.diff(lls)
        assert np.all(diffs >= -1e-8), f"run {run}: {lls}"


def test_train_recovers_a_two_state_chain():
    # sticky two-state generator with near-deterministic emissions
    rng = np.random.default_rng(5)
    trans = np.array([[0.9, 0.1], [0.1, 0.9]])
    emit = np.array([[0.95, 0.05], [0.05, 0.95]])
    seqs = []
    for _ in range(40):
        state = int(rng.integers(0, 2))
        seq = []
        for _ in range(120):
            seq.append(int(rng.random() > emit[state, 0]))
            if rng.random() > trans[state, state]:
                state = 1 - state
        seqs.append(np.array(seq))
    model = DiscreteHmm.train(seqs, n_states=2, n_symbols=2, seed=1, restarts=5)
    # identify states by their dominant emission
    order = np.argsort(model.emit[:, 1])
    em = model.emit[order]
    tr = model.trans[order][:, order]
    assert np.abs(em - emit).max() < 0.05
    assert np.abs(tr - trans).max() < 0.05


def test_train_single_state_yields_empirical_frequencies():
    seqs = [np.array([0, 0, 1, 2]), np.array([2, 2])]
    model = DiscreteHmm.train(seqs, n_states=1, n_symbols=3, seed=0, restarts=2)
    # 2/6, 1/6, 3/6 over the pooled symbols
    assert model.emit[0] == pytest.approx([2 / 6, 1 / 6, 3 / 6], abs=1e-6)


def test_train_input_validation():
    with pytest.raises(DataError):
        DiscreteHmm.train([], n_states=2, n_symbols=2)
    with pytest.raises(DataError):
        DiscreteHmm.train([np.array([0, 3])], n_states=2, n_symbols=2)
    with pytest.raises(ConfigError):
        DiscreteHmm.train([np.array([0, 1])], n_states=0, n_symbols=2)


def test_train_is_seed_deterministic():
    rng = np.random.default_rng(2)
    seqs = [rng.integers(0, 3, size=10) for _ in range(12)]
    a = DiscreteHmm.train(seqs, n_states=2, n_symbols=3, seed=7, restarts=3)
    b = DiscreteHmm.train(seqs, n_states=2, n_symbols=3, seed=7, restarts=3)
    assert a.to_dict() == b.to_dict()


def test_discrete_round_trip():
    rng = np.random.default_rng(3)
    model = _random_hmm(rng, 3, 4)
    loaded = DiscreteHmm.from_dict(model.to_dict())
    obs = [0, 2, 1, 3]
    assert loaded.log_likelihood(obs) == pytest.approx(model.log_likelihood(obs))


def test_gaussian_loglik_single_state_closed_form():
    model = GaussianHmm(start=np.array([1.0]), trans=np.array([[1.0]]),
                        means=np.array([[0.0]]), variances=np.array([[1.0]]))
    x = np.array([[0.5], [-0.3]])
    expected = sum(-0.5 * (v**2 + math.log(2 * math.pi)) for v in (0.5, -0.3))
    assert model.log_likelihood(x) == pytest.approx(expected, rel=1e-10)


def test_gaussian_train_separates_two_regimes():
    rng = np.random.default_rng(11)
    seqs = []
    for _ in range(30):
        a = rng.normal(-2.0, 0.3, size=(25, 1))
        b = rng.normal(2.0, 0.3, size=(25, 1))
        seqs.append(np.concatenate([a, b]))
    model = GaussianHmm.train(seqs, n_states=2, seed=0, restarts=3)
    centers = np.sort(model.means[:, 0])
    assert centers[0] == pytest.approx(-2.0, abs=0.2)
    assert centers[1] == pytest.approx(2.0, abs=0.2)
