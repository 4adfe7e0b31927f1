"""Unit-sphere operations: normalization, retrieval, pooling, gap."""

import numpy as np
import pytest

from conceptcap.embedding import (
    ConceptBank,
    GapReport,
    empty_prompts,
    gap_report,
    is_unit,
    normalize,
    pool_frames,
    retrieve_prompts,
)
from conceptcap.errors import BoundError, DegenerateVectorError, DimensionError, EmptyInputError


def random_bank(rng, m, d):
    feats = rng.standard_normal((m, d))
    feats /= np.linalg.norm(feats, axis=1, keepdims=True)
    return ConceptBank([f"c{i}" for i in range(m)], feats)


class TestNormalize:
    def test_three_four_five(self):
        assert np.allclose(normalize([3.0, 4.0]), [0.6, 0.8])

    def test_idempotent_on_unit_vectors(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            u = normalize(rng.standard_normal(8))
            assert np.allclose(normalize(u), u, atol=1e-15)

    def test_zero_vector_rejected(self):
        with pytest.raises(DegenerateVectorError):
            normalize([0.0, 0.0, 0.0])


class TestRetrieve:
    def test_hand_computable_dot_products(self):
        bank = ConceptBank(["a", "b", "c"], np.array([[1, 0], [0, 1], [0.6, 0.8]]))
        ps = retrieve_prompts(np.array([1.0, 0.0]), bank, 2)
        assert ps.indices == [0, 2]
        assert ps.similarities == pytest.approx([1.0, 0.6])
        assert np.array_equal(ps.features, bank.features[[0, 2]])

    def test_total_retrieval_sorted(self):
        rng = np.random.default_rng(1)
        bank = random_bank(rng, 20, 8)
        q = normalize(rng.standard_normal(8))
        ps = retrieve_prompts(q, bank, 20)
        assert sorted(ps.indices) == list(range(20))
        assert all(a >= b for a, b in zip(ps.similarities, ps.similarities[1:]))

    def test_matches_exhaustive_sort_oracle(self):
        for seed in range(50):
            rng = np.random.default_rng(100 + seed)
            bank = random_bank(rng, 1000, 64)
            q = normalize(rng.standard_normal(64))
            ps = retrieve_prompts(q, bank, 16)
            sims = bank.features @ q
            oracle = sorted(range(1000), key=lambda i: (-sims[i], i))[:16]
            assert ps.indices == oracle

    def test_bounds_and_dims(self):
        bank = random_bank(np.random.default_rng(2), 5, 4)
        with pytest.raises(BoundError):
            retrieve_prompts(normalize(np.ones(4)), bank, 6)
        with pytest.raises(DimensionError):
            retrieve_prompts(normalize(np.ones(3)), bank, 2)

    def test_tie_broken_by_lower_bank_index(self):
        v = normalize([1.0, 1.0])
        bank = ConceptBank(["x", "y", "z"], np.array([v, [1.0, 0.0], v]))
        ps = retrieve_prompts(v, bank, 2)
        assert ps.indices == [0, 2]

    def test_permutation_stability(self):
        rng = np.random.default_rng(3)
        bank = random_bank(rng, 30, 6)
        q = normalize(rng.standard_normal(6))
        base = retrieve_prompts(q, bank, 7)
        perm = rng.permutation(30)
        shuffled = ConceptBank(
            [bank.surfaces[i] for i in perm], bank.features[perm]
        )
        moved = retrieve_prompts(q, shuffled, 7)
        assert moved.surfaces == base.surfaces
        assert moved.similarities == pytest.approx(base.similarities)

    def test_topk_prefix_property(self):
        rng = np.random.default_rng(4)
        bank = random_bank(rng, 50, 5)
        q = normalize(rng.standard_normal(5))
        small = retrieve_prompts(q, bank, 4)
        big = retrieve_prompts(q, bank, 11)
        assert big.indices[:4] == small.indices

    def test_k_zero_gives_empty_prompts(self):
        bank = random_bank(np.random.default_rng(5), 4, 3)
        ps = retrieve_prompts(normalize(np.ones(3)), bank, 0)
        assert len(ps) == 0 and ps.features.shape == (0, 3)
        assert empty_prompts(3).features.shape == (0, 3)


class TestPoolFrames:
    def test_single_frame_identity(self):
        u = normalize(np.arange(1.0, 5.0))
        assert np.allclose(pool_frames([u]), u)

    def test_two_identical_frames(self):
        u = normalize([2.0, -1.0, 0.5])
        assert np.allclose(pool_frames([u, u]), u)

    def test_orthogonal_pair_symmetry(self):
        out = pool_frames([np.array([1.0, 0.0]), np.array([0.0, 1.0])])
        s = np.sqrt(2.0) / 2.0
        assert np.allclose(out, [s, s])

    def test_order_invariance(self):
        rng = np.random.default_rng(6)
        frames = [normalize(rng.standard_normal(7)) for _ in range(5)]
        a = pool_frames(frames)
        b = pool_frames(frames[::-1])
        assert np.allclose(a, b, atol=1e-15)

    def test_empty_and_antipodal(self):
        with pytest.raises(EmptyInputError):
            pool_frames([])
        with pytest.raises(DegenerateVectorError):
            pool_frames([np.array([1.0, 0.0]), np.array([-1.0, 0.0])])

    def test_outputs_are_unit(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            frames = [normalize(rng.standard_normal(9)) for _ in range(3)]
            assert is_unit(pool_frames(frames))


class TestGapReport:
    def test_identity_case(self):
        rng = np.random.default_rng(8)
        feats = [normalize(rng.standard_normal(6)) for _ in range(4)]
        rep = gap_report(feats, feats, [(i, i) for i in range(4)])
        assert rep.centroid_distance == pytest.approx(0.0, abs=1e-12)
        assert rep.mean_paired_cosine == pytest.approx(1.0)

    def test_orthogonal_single_pair(self):
        rep = gap_report([np.array([1.0, 0.0])], [np.array([0.0, 1.0])], [(0, 0)])
        assert rep.centroid_distance == pytest.approx(np.sqrt(2.0))
        assert rep.mean_paired_cosine == pytest.approx(0.0, abs=1e-12)

    def test_rotated_set_matches_direct_recomputation(self):
        rng = np.random.default_rng(9)
        d = 8
        # fixed orthogonal map via QR
        q, _ = np.linalg.qr(rng.standard_normal((d, d)))
        text = [normalize(rng.standard_normal(d)) for _ in range(12)]
        vision = [q @ t for t in text]
        pairing = [(i, i) for i in range(12)]
        rep = gap_report(text, vision, pairing)
        expect_cos = float(np.mean([t @ (q @ t) for t in text]))
        expect_cent = float(
            np.linalg.norm(np.mean(text, axis=0) - np.mean(vision, axis=0))
        )
        assert rep.mean_paired_cosine == pytest.approx(expect_cos, rel=1e-12)
        assert rep.centroid_distance == pytest.approx(expect_cent, rel=1e-12)

    def test_bad_pair_index(self):
        u = [np.array([1.0, 0.0])]
        with pytest.raises(BoundError):
            gap_report(u, u, [(0, 3)])
        assert isinstance(gap_report(u, u, []), GapReport)
