"""Firing-map descriptors: binned rate histograms and co-firing sequences.

NHNF descriptors aggregate firings into neuron-range bins normalized by the
simulated span, so descriptors from different observation lengths live on a
common scale. PNG groups keep the millisecond-level co-firing structure and
are compared by longest-common-subsequence over Jaccard-matched tokens.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .snn import FiringMap

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap


DEFAULT_BINS = 25
DEFAULT_J_EPS = 0.9


@dataclass(frozen=True, eq=False)
class NhnfDescriptor:
    """Per-channel histogram of firing counts over neuron-range bins, rate-normalized."""

    values: np.ndarray
    bins: int
    simulated_ms: int

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != self.bins:
            raise DataError("descriptor values must be (channels, bins)")
        if values.size and values.min() < 0:
            raise DataError("descriptor values must be non-negative")
        object.__setattr__(self, "values", values)

    @property
    def n_channels(self) -> int:
        return int(self.values.shape[0])

    def flatten(self) -> np.ndarray:
        """Concatenate channel rows into one classifier input vector."""
        return self.values.ravel()


def nhnf(maps, bins=DEFAULT_BINS, simulated_ms=None) -> NhnfDescriptor:
    """Histogram each channel's firings into `bins` equal neuron ranges.

    Counts divide by the simulated span (defaulting to the maps' duration),
    which keeps descriptors comparable across partial observations.
    """
    maps = list(maps)
    if not maps:
        raise DataError("need at least one firing map")
    n = maps[0].n_neurons
    if any(m.n_neurons != n for m in maps):
        raise DataError("firing maps disagree on network size")
    if n % bins:
        raise ConfigError(f"{n} neurons do not split into {bins} equal bins")
    if simulated_ms is None:
        simulated_ms = maps[0].duration
    if simulated_ms < 1:
        raise ConfigError("simulated span must be at least 1 ms")
    width = n // bins
    values = np.empty((len(maps), bins))
    for i, fmap in enumerate(maps):
        counts = np.bincount(fmap.neurons // width, minlength=bins)
        values[i] = counts / simulated_ms
    return NhnfDescriptor(values, bins, int(simulated_ms))


def save_descriptor(descriptor: NhnfDescriptor, path) -> None:
    """Write the descriptor matrix as CSV with bin indices as the header."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(range(descriptor.bins))
        writer.writerows(descriptor.values.tolist())


class PngGroup:
    """Ordered co-firing tokens: the neurons that fired in each active millisecond.

    Tokens live in a flat sorted-id array with offsets; the frozenset view in
    `sequence` is materialized on demand.
    """

    __slots__ = ("_flat", "_offs", "_seq")

    def __init__(self, sequence):
        seq = tuple(frozenset(int(i) for i in tok) for tok in sequence)
        if any(not tok for tok in seq):
            raise DataError("co-firing tokens must be non-empty")
        if seq and min(min(tok) for tok in seq) < 0:
            raise DataError("neuron indices must be non-negative")
        offs = np.zeros(len(seq) + 1, dtype=np.int64)
        for k, tok in enumerate(seq):
            offs[k + 1] = offs[k] + len(tok)
        flat = np.empty(int(offs[-1]), dtype=np.int64)
        for k, tok in enumerate(seq):
            flat[offs[k]:offs[k + 1]] = sorted(tok)
        self._flat = flat
        self._offs = offs
        self._seq = seq

    @property
    def sequence(self) -> tuple:
        if self._seq is None:
            self._seq = tuple(
                frozenset(self._flat[self._offs[k]:self._offs[k + 1]].tolist())
                for k in range(len(self))
            )
        return self._seq

    def __len__(self) -> int:
        return int(self._offs.size - 1)

    def __repr__(self) -> str:
        return f"PngGroup({len(self)} tokens, {int(self._offs[-1])} firings)"


def extract_png(fmap: FiringMap) -> PngGroup:
    """Collapse a firing map into its sequence of per-millisecond co-firing sets."""
    if fmap.n_firings == 0:
        return PngGroup(())
    # maps are lexsorted by (time, neuron); dedupe and group without set churn
    key = fmap.times.astype(np.int64) * fmap.n_neurons + fmap.neurons
    key = np.unique(key)
    times = key // fmap.n_neurons
    group = PngGroup.__new__(PngGroup)
    group._flat = key % fmap.n_neurons
    group._offs = np.append(
        np.nonzero(np.diff(times, prepend=times[0] - 1))[0], times.size
    ).astype(np.int64)
    group._seq = None
    return group


def jaccard(a, b) -> float:
    """Set overlap in [0, 1]; containment either way counts as a full match."""
    sa, sb = set(a), set(b)
    if not sa or not sb:
        raise DataError("jaccard needs non-empty sets")
    inter = len(sa & sb)
    if inter == len(sa) or inter == len(sb):
        return 1.0
    return inter / len(sa | sb)


@njit(cache=True)
def _lcs_kernel(fa, oa, fb, ob, eps):  # pragma: no cover - exercised via wrapper
    la = oa.shape[0] - 1
    lb = ob.shape[0] - 1
    prev = np.zeros(lb + 1, dtype=np.int64)
    cur = np.zeros(lb + 1, dtype=np.int64)
    for i in range(la):
        a0 = oa[i]
        a1 = oa[i + 1]
        na = a1 - a0
        for j in range(lb):
            b0 = ob[j]
            b1 = ob[j + 1]
            nb = b1 - b0
            x = a0
            y = b0
            inter = 0
            while x < a1 and y < b1:
                va = fa[x]
                vb = fb[y]
                if va == vb:
                    inter += 1
                    x += 1
                    y += 1
                elif va < vb:
                    x += 1
                else:
                    y += 1
            if inter == na or inter == nb or inter >= eps * (na + nb - inter):
                cur[j + 1] = prev[j] + 1
            else:
                up = prev[j + 1]
                left = cur[j]
                cur[j + 1] = up if up >= left else left
        tmp = prev
        prev = cur
        cur = tmp
    return prev[lb]


def _token_match(tok_a, tok_b, eps) -> bool:
    inter = len(tok_a & tok_b)
    if inter == len(tok_a) or inter == len(tok_b):
        return True
    return inter >= eps * len(tok_a | tok_b)


def _lcs_sets(p, q, eps) -> int:
    prev = [0] * (len(q) + 1)
    for tok_a in p:
        cur = [0]
        for j, tok_b in enumerate(q):
            if _token_match(tok_a, tok_b, eps):
                cur.append(prev[j] + 1)
            else:
                cur.append(max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def lcs_similarity(p, q, j_eps=DEFAULT_J_EPS) -> float:
    """Similarity of two co-firing sequences in [0, 1].

    Tokens match when their Jaccard overlap clears j_eps (containment always
    matches); the longest common subsequence of matched tokens is normalized
    by the shorter sequence length.
    """
    if not isinstance(p, PngGroup):
        p = PngGroup(tuple(p))
    if not isinstance(q, PngGroup):
        q = PngGroup(tuple(q))
    if len(p) == 0 or len(q) == 0:
        raise DataError("PNG sequences must be non-empty")
    if not 0.0 < j_eps <= 1.0:
        raise ConfigError("j_eps must lie in (0, 1]")
    if _HAVE_NUMBA:
        lcs = int(_lcs_kernel(p._flat, p._offs, q._flat, q._offs, float(j_eps)))
    else:
        lcs = _lcs_sets(p.sequence, q.sequence, j_eps)
    return lcs / min(len(p), len(q))
