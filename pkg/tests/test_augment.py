"""Candidate sets, input augmentation, feature augmentation."""

import numpy as np
import pytest

from conceptcap.augment import (
    CandidateSet,
    NoiseConfig,
    build_candidate_sets,
    build_candidate_sets_grouped,
    feature_augment,
    input_augment,
    load_candidate_sets,
    save_candidate_sets,
)
from conceptcap.embedding import is_unit, normalize
from conceptcap.errors import BoundError, DataError


def unit_rows(rng, m, d):
    x = rng.standard_normal((m, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


class TestCandidateSets:
    def test_n_one_is_anchor_only(self):
        feats = unit_rows(np.random.default_rng(0), 5, 4)
        sets = build_candidate_sets(feats, 1)
        assert all(s.member_indices == [s.anchor_index] for s in sets)

    def test_exact_duplicate_is_nearest(self):
        feats = np.array(
            [[1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0], [1.0, 0, 0]]
        )
        sets = build_candidate_sets(feats, 2)
        assert sets[0].member_indices == [0, 3]
        assert sets[3].member_indices == [3, 0]

    def test_matches_exhaustive_sort_oracle(self):
        rng = np.random.default_rng(1)
        feats = unit_rows(rng, 100, 16)
        sims = feats @ feats.T
        sets = build_candidate_sets(feats, 5)
        for i, s in enumerate(sets):
            others = [j for j in range(100) if j != i]
            oracle = sorted(others, key=lambda j: (-sims[i, j], j))[:4]
            assert s.member_indices == [i] + oracle

    def test_n_bounds(self):
        feats = unit_rows(np.random.default_rng(2), 3, 4)
        with pytest.raises(BoundError):
            build_candidate_sets(feats, 4)

    def test_grouped_keeps_members_within_language(self):
        rng = np.random.default_rng(3)
        feats = unit_rows(rng, 12, 8)
        langs = ["en"] * 6 + ["de"] * 6
        sets = build_candidate_sets_grouped(feats, langs, 3)
        assert len(sets) == 12
        for s in sets:
            side = {langs[j] for j in s.member_indices}
            assert len(side) == 1

    def test_jsonl_roundtrip(self, tmp_path):
        sets = [CandidateSet(0, [0, 2, 1]), CandidateSet(1, [1, 0, 2])]
        p = tmp_path / "cand.jsonl"
        save_candidate_sets(p, sets)
        assert load_candidate_sets(p) == sets

    def test_anchor_must_lead(self):
        with pytest.raises(DataError):
            CandidateSet(0, [1, 0])


class TestInputAugment:
    def test_singleton_always_anchor(self):
        rng = np.random.default_rng(4)
        s = CandidateSet(7, [7])
        assert all(input_augment(s, rng) == 7 for _ in range(100))

    def test_anchor_frequency_one_over_n(self):
        rng = np.random.default_rng(5)
        s = CandidateSet(0, [0, 1, 2, 3, 4])
        hits = sum(input_augment(s, rng) == 0 for _ in range(10000))
        assert abs(hits / 10000 - 0.20) <= 0.02

    def test_seeded_draws_repeat(self):
        s = CandidateSet(0, [0, 1, 2, 3, 4])
        a = [input_augment(s, np.random.default_rng(6)) for _ in range(1)]
        draws1 = [input_augment(s, rng) for rng in [np.random.default_rng(9)] for _ in range(1)]
        rng1, rng2 = np.random.default_rng(42), np.random.default_rng(42)
        seq1 = [input_augment(s, rng1) for _ in range(50)]
        seq2 = [input_augment(s, rng2) for _ in range(50)]
        assert seq1 == seq2


class TestFeatureAugment:
    def test_zero_epsilon_is_exact_identity(self):
        rng = np.random.default_rng(7)
        v = normalize(rng.standard_normal(16))
        out = feature_augment(v, NoiseConfig(epsilon=0.0), rng)
        assert np.array_equal(out, v)

    def test_output_is_unit(self):
        rng = np.random.default_rng(8)
        v = normalize(rng.standard_normal(32))
        for eps in (0.01, 0.1, 1.0):
            out = feature_augment(v, NoiseConfig(epsilon=eps), rng)
            assert is_unit(out)

    def test_fixed_noise_hand_arithmetic(self):
        # [1,0] + [0.1,-0.1] = [1.1,-0.1], norm sqrt(1.22)
        class FixedRng:
            def normal(self, loc, scale, size):
                return np.array([0.1, -0.1])

        out = feature_augment(np.array([1.0, 0.0]), NoiseConfig(epsilon=0.01), FixedRng())
        assert out == pytest.approx([0.995893, -0.090536], abs=1e-6)

    def test_negative_epsilon_rejected(self):
        with pytest.raises(DataError):
            NoiseConfig(epsilon=-0.1)

    def test_cosine_shrinks_monotonically_with_epsilon(self):
        d = 64
        base = normalize(np.ones(d))
        means = []
        for eps in (0.01, 0.1, 1.0):
            cos = []
            for seed in range(200):
                rng = np.random.default_rng(1000 + seed)
                out = feature_augment(base, NoiseConfig(epsilon=eps), rng)
                cos.append(float(base @ out))
            means.append(np.mean(cos))
        assert means[0] > means[1] > means[2]
