"""Descriptor checks.

The LCS similarity is validated against an independent brute-force recursion
over token sequences, with its own token matcher, so the dynamic program is
never compared to itself.
"""

from functools import lru_cache

import numpy as np
import pytest

from turnspike.descriptors import (NhnfDescriptor, PngGroup, extract_png,
                                   jaccard, lcs_similarity, nhnf,
                                   save_descriptor)
from turnspike.errors import ConfigError, DataError
from turnspike.snn import FiringMap


def _fmap(pairs, n_neurons=250, duration=250):
    return FiringMap.from_pairs(pairs, n_neurons, duration)


# ---------------------------------------------------------------------
# NHNF histograms
# ---------------------------------------------------------------------

def test_nhnf_single_firing():
    # neuron 3 lands in bin 0 (bins of 10 neurons); one firing over 250 ms
    desc = nhnf([_fmap({(3, 10)})])
    assert desc.values.shape == (1, 25)
    assert desc.values[0, 0] == pytest.approx(1.0 / 250.0)
    assert np.all(desc.values[0, 1:] == 0.0)


def test_nhnf_empty_map_is_zero():
    desc = nhnf([_fmap(set())])
    assert np.all(desc.values == 0.0)


def test_nhnf_span_normalization():
    pairs = {(3, 10), (14, 20), (14, 30)}
    short = nhnf([_fmap(pairs)], simulated_ms=250)
    long = nhnf([_fmap(pairs)], simulated_ms=500)
    assert np.allclose(long.values, short.values / 2.0)


def test_nhnf_counts_are_bin_level():
    # firings shuffled inside one bin leave the histogram unchanged
    spread = nhnf([_fmap({(n, n + 1) for n in range(10)})])
    stacked = nhnf([_fmap({(5, t) for t in range(1, 11)})])
    assert np.array_equal(spread.values, stacked.values)


def test_nhnf_multi_map_stacking():
    a = _fmap({(3, 10)})
    b = _fmap({(240, 10)})
    desc = nhnf([a, b])
    assert desc.values.shape == (2, 25)
    assert desc.values[0, 0] > 0 and desc.values[1, 24] > 0
    assert desc.flatten().shape == (50,)


def test_nhnf_input_validation():
    with pytest.raises(DataError):
        nhnf([])
    with pytest.raises(ConfigError):
        nhnf([_fmap(set())], bins=7)  # 250 has no 7-way split
    with pytest.raises(DataError):
        nhnf([_fmap(set()), _fmap(set(), n_neurons=100)])


def test_descriptor_rejects_bad_values():
    with pytest.raises(DataError):
        NhnfDescriptor(np.full((1, 25), -0.1), 25, 250)
    with pytest.raises(DataError):
        NhnfDescriptor(np.zeros((1, 24)), 25, 250)


def test_save_descriptor_csv(tmp_path):
    desc = nhnf([_fmap({(3, 10)})])
    path = tmp_path / "desc.csv"
    save_descriptor(desc, path)
    lines = path.read_text().splitlines()
    assert lines[0].split(",")[0] == "0"
    assert len(lines) == 2


# ---------------------------------------------------------------------
# PNG extraction
# ---------------------------------------------------------------------

def test_extract_png_groups_by_millisecond():
    fmap = _fmap({(4, 1), (7, 1), (9, 7), (12, 7), (11, 9), (12, 9), (47, 9)})
    png = extract_png(fmap)
    assert png.sequence == (frozenset({4, 7}), frozenset({9, 12}),
                            frozenset({11, 12, 47}))


def test_extract_png_empty_map():
    assert len(extract_png(_fmap(set()))) == 0


def test_extract_png_orders_singletons_by_time():
    png = extract_png(_fmap({(30, 9), (10, 1), (20, 5)}))
    assert png.sequence == (frozenset({10}), frozenset({20}), frozenset({30}))


def test_extract_png_count_matches_active_milliseconds():
    rng = np.random.default_rng(0)
    pairs = {(int(rng.integers(0, 250)), int(rng.integers(1, 251))) for _ in range(300)}
    png = extract_png(_fmap(pairs))
    assert len(png) == len({t for _, t in pairs})


def test_png_group_rejects_empty_tokens():
    with pytest.raises(DataError):
        PngGroup(({1, 2}, set()))


# ---------------------------------------------------------------------
# Jaccard
# ---------------------------------------------------------------------

def test_jaccard_identity_and_disjoint():
    assert jaccard({1, 2, 3}, {1, 2, 3}) == 1.0
    assert jaccard({1, 2}, {3, 4}) == 0.0


def test_jaccard_containment_counts_as_match():
    assert jaccard({4, 7}, {4}) == 1.0
    assert jaccard({4}, {4, 7}) == 1.0


def test_jaccard_partial_overlap():
    assert jaccard({1, 2, 3}, {2, 3, 4}) == pytest.approx(0.5)


def test_jaccard_symmetric_and_bounded():
    rng = np.random.default_rng(1)
    for _ in range(50):
        a = set(rng.integers(0, 12, size=rng.integers(1, 6)).tolist())
        b = set(rng.integers(0, 12, size=rng.integers(1, 6)).tolist())
        s = jaccard(a, b)
        assert s == jaccard(b, a)
        assert 0.0 <= s <= 1.0


def test_jaccard_rejects_empty_sets():
    with pytest.raises(DataError):
        jaccard(set(), {1})


# ---------------------------------------------------------------------
# LCS similarity with brute-force reference
# ---------------------------------------------------------------------

def _match_ref(a, b, eps):
    inter = len(a & b)
    if inter == len(a) or inter == len(b):
        return True
    return inter >= eps * len(a | b)


def _lcs_ref(p, q, eps):
    # textbook recursion, memoized on suffix positions
    @lru_cache(maxsize=None)
    def rec(i, j):
        if i == len(p) or j == len(q):
            return 0
        if _match_ref(p[i], q[j], eps):
            return 1 + rec(i + 1, j + 1)
        return max(rec(i + 1, j), rec(i, j + 1))

    return rec(0, 0)


def test_lcs_similarity_known_case():
    p = [{1, 2}, {3, 4}, {5, 6}]
    q = [{1, 2}, {5, 6}]
    assert lcs_similarity(p, q, j_eps=0.9) == pytest.approx(1.0)


def test_lcs_similarity_identity():
    p = [{1, 2}, {3}, {4, 5, 6}]
    assert lcs_similarity(p, p) == 1.0


def test_lcs_similarity_subsequence_normalization():
    p = [{1}, {2}, {3}, {4}, {5}]
    q = [{1}, {3}, {5}]
    assert lcs_similarity(p, q) == pytest.approx(1.0)
    assert lcs_similarity(q, p) == pytest.approx(1.0)


def test_lcs_similarity_order_sensitivity():
    assert lcs_similarity([{1}, {2}], [{2}, {1}]) == pytest.approx(0.5)


def test_lcs_similarity_matches_brute_force():
    rng = np.random.default_rng(42)
    for _ in range(500):
        lp = int(rng.integers(1, 9))
        lq = int(rng.integers(1, 9))
        p = tuple(frozenset(rng.integers(0, 10, size=rng.integers(1, 5)).tolist())
                  for _ in range(lp))
        q = tuple(frozenset(rng.integers(0, 10, size=rng.integers(1, 5)).tolist())
                  for _ in range(lq))
        eps = float(rng.choice([0.5, 0.75, 0.9, 1.0]))
        expected = _lcs_ref(p, q, eps) / min(lp, lq)
        assert lcs_similarity(p, q, j_eps=eps) == pytest.approx(expected, abs=1e-12)


def test_lcs_similarity_accepts_extracted_groups():
    a = extract_png(_fmap({(4, 1), (7, 1), (9, 7)}))
    b = extract_png(_fmap({(4, 3), (7, 3), (9, 9)}))
    assert lcs_similarity(a, b) == pytest.approx(1.0)


def test_lcs_similarity_input_validation():
    with pytest.raises(DataError):
        lcs_similarity([], [{1}])
    with pytest.raises(ConfigError):
        lcs_similarity([{1}], [{1}], j_eps=0.0)
