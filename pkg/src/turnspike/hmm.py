"""Hidden Markov models fitted by Baum-Welch with seeded restarts.

Both variants (discrete emissions and diagonal Gaussians) run their
recursions in log space and batch sequences of equal length, so expectation
passes stay vectorized even on corpora of variable-length observations.
Restart selection holds out a fifth of the sequences, scores each restart's
model there, and refits the winning initialization on everything.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigError, DataError

_PROB_FLOOR = 1e-10


def _normalize_rows(mat):
    return mat / mat.sum(axis=-1, keepdims=True)


def _floor_rows(mat):
    return _normalize_rows(np.maximum(mat, _PROB_FLOOR))


def _group_by_length(items):
    """Indices of `items` grouped by sequence length, in first-seen order."""
    groups = {}
    for idx, item in enumerate(items):
        groups.setdefault(len(item), []).append(idx)
    return groups


def _forward_backward(log_pi, log_a, lobs):
    """Batched smoothing for one equal-length group.

    lobs is (n, T, S). Returns per-sequence log-likelihoods (n,), posteriors
    gamma (n, T, S) and the summed transition counts xi (S, S).
    """
    n, t_len, s = lobs.shape
    alphas = np.empty_like(lobs)
    alphas[:, 0] = log_pi + lobs[:, 0]
    for t in range(1, t_len):
        alphas[:, t] = logsumexp(alphas[:, t - 1][:, :, None] + log_a, axis=1) + lobs[:, t]
    betas = np.empty_like(lobs)
    betas[:, -1] = 0.0
    for t in range(t_len - 2, -1, -1):
        betas[:, t] = logsumexp(log_a + (lobs[:, t + 1] + betas[:, t + 1])[:, None, :], axis=2)
    loglik = logsumexp(alphas[:, -1], axis=1)
    gamma = np.exp(alphas + betas - loglik[:, None, None])
    xi = np.zeros((s, s))
    for t in range(t_len - 1):
        contrib = (alphas[:, t][:, :, None] + log_a
                   + (lobs[:, t + 1] + betas[:, t + 1])[:, None, :]
                   - loglik[:, None, None])
        xi += np.exp(contrib).sum(axis=0)
    return loglik, gamma, xi


def _random_stochastic(rng, shape):
    return _normalize_rows(rng.random(shape) + 0.5)


@dataclass(eq=False)
class DiscreteHmm:
    """HMM over a finite symbol alphabet."""

    start: np.ndarray
    trans: np.ndarray
    emit: np.ndarray

    @property
    def n_states(self) -> int:
        return int(self.start.size)

    @property
    def n_symbols(self) -> int:
        return int(self.emit.shape[1])

    def _check(self, symbols):
        seq = np.asarray(symbols, dtype=np.int64).ravel()
        if seq.size == 0:
            raise DataError("cannot score an empty sequence")
        if seq.min() < 0 or seq.max() >= self.n_symbols:
            raise DataError(f"symbol outside [0, {self.n_symbols})")
        return seq

    def log_likelihood(self, symbols) -> float:
        seq = self._check(symbols)
        lobs = np.log(self.emit)[:, seq].T[None]
        la = np.log(self.start) + lobs[0, 0]
        for t in range(1, seq.size):
            la = logsumexp(la[:, None] + np.log(self.trans), axis=0) + lobs[0, t]
        return float(logsumexp(la))

    def to_dict(self) -> dict:
        return {
            "start": self.start.tolist(),
            "trans": self.trans.tolist(),
            "emit": self.emit.tolist(),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "DiscreteHmm":
        return cls(
            np.asarray(payload["start"], dtype=float),
            np.asarray(payload["trans"], dtype=float),
            np.asarray(payload["emit"], dtype=float),
        )

    @classmethod
    def train(cls, sequences, n_states, n_symbols, seed=0, restarts=10,
              max_iter=200, tol=1e-6) -> "DiscreteHmm":
        seqs = [np.asarray(s, dtype=np.int64).ravel() for s in sequences]
        if not seqs:
            raise DataError("no training sequences")
        if any(s.size == 0 for s in seqs):
            raise DataError("training sequences must be non-empty")
        lo = min(int(s.min()) for s in seqs)
        hi = max(int(s.max()) for s in seqs)
        if lo < 0 or hi >= n_symbols:
            raise DataError(f"symbol outside [0, {n_symbols})")
        if n_states < 1 or n_symbols < 2:
            raise ConfigError("need at least one state and two symbols")

        def init(rng):
            return (
                _random_stochastic(rng, n_states),
                _random_stochastic(rng, (n_states, n_states)),
                _random_stochastic(rng, (n_states, n_symbols)),
            )

        def fit(params, data):
            return _baum_welch_discrete(data, *params, max_iter=max_iter, tol=tol)

        def score(model_params, data):
            model = cls(*model_params)
            return sum(model.log_likelihood(s) for s in data)

        params = _train_with_restarts(seqs, init, fit, score, seed, restarts)
        return cls(*params)


def _baum_welch_discrete(seqs, pi, a, b, max_iter, tol):
    groups = _group_by_length(seqs)
    stacked = {
        t_len: np.stack([seqs[i] for i in idx]) for t_len, idx in groups.items()
    }
    prev_ll = -np.inf
    for _ in range(max_iter):
        log_pi, log_a, log_b = np.log(pi), np.log(a), np.log(b)
        total_ll = 0.0
        pi_acc = np.zeros_like(pi)
        a_acc = np.zeros_like(a)
        b_acc = np.zeros_like(b)
        n_seqs = 0
        for t_len, syms in stacked.items():
            lobs = log_b[:, syms].transpose(1, 2, 0)
            loglik, gamma, xi = _forward_backward(log_pi, log_a, lobs)
            total_ll += float(loglik.sum())
            n_seqs += syms.shape[0]
            pi_acc += gamma[:, 0].sum(axis=0)
            a_acc += xi
            onehot = np.eye(b.shape[1])[syms]
            b_acc += np.einsum("nts,ntk->sk", gamma, onehot)
        pi = _floor_rows(pi_acc / n_seqs)
        a = _floor_rows(np.where(a_acc.sum(axis=1, keepdims=True) > 0, a_acc, a))
        b = _floor_rows(b_acc)
        if abs(total_ll - prev_ll) <= tol:
            break
        prev_ll = total_ll
    return pi, a, b


@dataclass(eq=False)
class GaussianHmm:
    """HMM with per-state diagonal Gaussian emissions."""

    start: np.ndarray
    trans: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    @property
    def n_states(self) -> int:
        return int(self.start.size)

    def _log_obs(self, x):
        # (n, T, D) against (S, D) -> (n, T, S)
        diff = x[:, :, None, :] - self.means[None, None]
        quad = (diff * diff / self.variances[None, None]).sum(axis=-1)
        norm = (np.log(2.0 * np.pi * self.variances)).sum(axis=-1)
        return -0.5 * (quad + norm[None, None])

    def log_likelihood(self, observation) -> float:
        x = np.asarray(observation, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] == 0:
            raise DataError("observation must be a non-empty (T, D) matrix")
        if x.shape[1] != self.means.shape[1]:
            raise DataError("observation dimensionality does not match the model")
        lobs = self._log_obs(x[None])
        loglik, _, _ = _forward_backward(np.log(self.start), np.log(self.trans), lobs)
        return float(loglik[0])

    @classmethod
    def train(cls, sequences, n_states, seed=0, restarts=5, max_iter=200,
              tol=1e-6, var_floor=1e-4) -> "GaussianHmm":
        seqs = [np.asarray(s, dtype=np.float64) for s in sequences]
        if not seqs:
            raise DataError("no training sequences")
        if any(s.ndim != 2 or s.shape[0] == 0 for s in seqs):
            raise DataError("training sequences must be non-empty (T, D) matrices")
        dim = seqs[0].shape[1]
        if any(s.shape[1] != dim for s in seqs):
            raise DataError("training sequences disagree on dimensionality")
        if n_states < 1:
            raise ConfigError("need at least one state")
        pooled = np.concatenate(seqs, axis=0)
        global_var = np.maximum(pooled.var(axis=0), var_floor)

        def init(rng):
            picks = rng.integers(0, pooled.shape[0], size=n_states)
            means = pooled[picks] + rng.normal(0.0, 0.1, (n_states, dim)) * np.sqrt(global_var)
            return (
                _random_stochastic(rng, n_states),
                _random_stochastic(rng, (n_states, n_states)),
                means,
                np.tile(global_var, (n_states, 1)),
            )

        def fit(params, data):
            return _baum_welch_gaussian(data, *params, max_iter=max_iter, tol=tol,
                                        var_floor=var_floor)

        def score(model_params, data):
            model = cls(*model_params)
            return sum(model.log_likelihood(s) for s in data)

        params = _train_with_restarts(seqs, init, fit, score, seed, restarts)
        return cls(*params)


def _baum_welch_gaussian(seqs, pi, a, means, variances, max_iter, tol, var_floor):
    groups = _group_by_length(seqs)
    stacked = {
        t_len: np.stack([seqs[i] for i in idx]) for t_len, idx in groups.items()
    }
    n_states, dim = means.shape
    prev_ll = -np.inf
    for _ in range(max_iter):
        model = GaussianHmm(pi, a, means, variances)
        log_pi, log_a = np.log(pi), np.log(a)
        total_ll = 0.0
        n_seqs = 0
        pi_acc = np.zeros(n_states)
        a_acc = np.zeros((n_states, n_states))
        w_acc = np.zeros(n_states)
        mean_acc = np.zeros((n_states, dim))
        sq_acc = np.zeros((n_states, dim))
        for t_len, x in stacked.items():
            lobs = model._log_obs(x)
            loglik, gamma, xi = _forward_backward(log_pi, log_a, lobs)
            total_ll += float(loglik.sum())
            n_seqs += x.shape[0]
            pi_acc += gamma[:, 0].sum(axis=0)
            a_acc += xi
            w_acc += gamma.sum(axis=(0, 1))
            mean_acc += np.einsum("nts,ntd->sd", gamma, x)
            sq_acc += np.einsum("nts,ntd->sd", gamma, x * x)
        pi = _floor_rows(pi_acc / n_seqs)
        a = _floor_rows(np.where(a_acc.sum(axis=1, keepdims=True) > 0, a_acc, a))
        w = np.maximum(w_acc, _PROB_FLOOR)[:, None]
        means = mean_acc / w
        variances = np.maximum(sq_acc / w - means * means, var_floor)
        if abs(total_ll - prev_ll) <= tol:
            break
        prev_ll = total_ll
    return pi, a, means, variances


def _train_with_restarts(seqs, init, fit, score, seed, restarts):
    """Fit `restarts` seeded initializations, pick by held-out likelihood,
    then refit the winner's initialization on every sequence."""
    if restarts < 1:
        raise ConfigError("need at least one restart")
    rng = np.random.default_rng(seed)
    n = len(seqs)
    perm = rng.permutation(n)
    n_val = n // 5 if n >= 5 else 0
    val_idx = perm[:n_val]
    train_idx = perm[n_val:]
    train_seqs = [seqs[i] for i in train_idx]
    val_seqs = [seqs[i] for i in val_idx] if n_val else train_seqs
    child_seeds = np.random.SeedSequence(seed).generate_state(restarts)
    best_init, best_score = None, -np.inf
    for child in child_seeds:
        params0 = init(np.random.default_rng(int(child)))
        fitted = fit(params0, train_seqs)
        val_ll = score(fitted, val_seqs)
        if val_ll > best_score:
            best_init, best_score = params0, val_ll
    return fit(best_init, seqs)
