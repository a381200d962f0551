import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from knnexplain import nn
from knnexplain.data import LabeledDataset
from knnexplain.errors import DegenerateVectorError, IdError, ShapeError, TapError
from knnexplain.representation import (RepresentationMatrix, agreement_sweep, cosine_distance,
                                       extract_representations, knn_query, knn_query_batch,
                                       label_agreement, read_representations, write_representations)


def brute_force(ids, vectors, query, k):
    """Pairwise scan with the same tie rule (distance, then id)."""
    scored = []
    for i, v in zip(ids, vectors):
        d = 1.0 - float(np.dot(v, query)) / (np.linalg.norm(v) * np.linalg.norm(query))
        scored.append((min(2.0, max(0.0, d)), int(i)))
    scored.sort()
    return scored[:k]


class TestCosine:
    def test_identity(self):
        assert cosine_distance([3.0, 4.0], [3.0, 4.0]) == pytest.approx(0.0, abs=1e-15)

    def test_orthogonal(self):
        assert cosine_distance([1.0, 0.0], [0.0, 1.0]) == 1.0

    def test_45_degrees(self):
        assert cosine_distance([1.0, 1.0], [1.0, 0.0]) == pytest.approx(1 - 1 / math.sqrt(2), abs=1e-15)
        assert cosine_distance([1.0, 1.0], [1.0, 0.0]) == pytest.approx(0.292893, abs=1e-6)

    def test_opposite(self):
        assert cosine_distance([1.0, 2.0], [-1.0, -2.0]) == pytest.approx(2.0)

    def test_degenerate(self):
        with pytest.raises(DegenerateVectorError):
            cosine_distance([0.0, 0.0], [1.0, 0.0])
        with pytest.raises(ShapeError):
            cosine_distance([1.0], [1.0, 2.0])

    vec = st.lists(st.floats(-100, 100, allow_nan=False), min_size=3, max_size=3).filter(
        lambda v: np.linalg.norm(v) > 1e-3)

    @settings(max_examples=200, deadline=None)
    @given(vec, vec, st.floats(1e-3, 1e3))
    def test_metric_sanity(self, u, v, scale):
        d = cosine_distance(u, v)
        assert 0.0 <= d <= 2.0
        assert d == cosine_distance(v, u)
        assert abs(cosine_distance(np.multiply(u, scale), v) - d) <= 1e-12
        assert cosine_distance(u, u) <= 1e-12


class TestKnn:
    rows = RepresentationMatrix("l", [0, 1, 2], [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])

    def test_small_example(self):
        nl = knn_query(self.rows, [1.0, 0.0], 2)
        assert nl.ids == (0, 2)
        assert nl.distances[0] == 0.0
        assert nl.distances[1] == pytest.approx(1 - 1 / math.sqrt(2), abs=1e-15)

    def test_k_equals_n(self):
        nl = knn_query(self.rows, [0.2, 1.0], 3)
        assert sorted(nl.ids) == [0, 1, 2]
        assert list(nl.distances) == sorted(nl.distances)

    def test_k_beyond_n(self):
        assert len(knn_query(self.rows, [1.0, 0.0], 10)) == 3

    def test_tie_prefers_lower_id(self):
        rm = RepresentationMatrix("l", [7, 3, 5], [[1.0, 2.0], [1.0, 2.0], [-1.0, 0.0]])
        assert knn_query(rm, [1.0, 2.0], 2).ids == (3, 7)

    def test_duplicates_tie_at_any_row_position(self):
        rng = np.random.default_rng(5)
        V = rng.standard_normal((301, 37))
        rows = [3, 64, 65, 130, 299]
        V[rows] = V[7]
        ids = np.arange(301)[::-1].copy()
        nl = knn_query(RepresentationMatrix("l", ids, V), rng.standard_normal(37), 301)
        dup_ids = sorted(int(ids[r]) for r in rows + [7])
        pos = [nl.ids.index(i) for i in dup_ids]
        assert pos == list(range(pos[0], pos[0] + 6))
        assert len({nl.distances[p] for p in pos}) == 1

    def test_degenerate_row_named(self):
        rm = RepresentationMatrix("l", [4, 9], [[1.0, 0.0], [0.0, 0.0]])
        with pytest.raises(DegenerateVectorError) as info:
            knn_query(rm, [1.0, 0.0], 1)
        assert info.value.sample_id == 9

    def test_degenerate_query(self):
        with pytest.raises(DegenerateVectorError):
            knn_query(self.rows, [0.0, 0.0], 1, query_id=12)

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            knn_query(self.rows, [1.0, 0.0, 0.0], 1)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        for trial in range(100):
            n = int(rng.integers(1, 200))
            d = int(rng.integers(1, 64))
            k = int(rng.integers(1, 21))
            V = rng.standard_normal((n, d))
            if n > 3:
                V[rng.integers(0, n, 3)] = V[0]
            ids = rng.permutation(10 * n)[:n]
            q = V[0] if trial % 3 == 0 else rng.standard_normal(d)
            nl = knn_query(RepresentationMatrix("l", ids, V), q, k)
            ref = brute_force(ids, V, q, k)
            assert list(nl.ids) == [i for _, i in ref]
            np.testing.assert_allclose(nl.distances, [d for d, _ in ref], atol=1e-12, rtol=0)

    def test_scale_invariance(self):
        rng = np.random.default_rng(1)
        V = rng.standard_normal((50, 5))
        rm = RepresentationMatrix("l", np.arange(50), V)
        q = rng.standard_normal(5)
        a = knn_query(rm, q, 10)
        b = knn_query(rm.scaled(37.5), q, 10)
        assert a.ids == b.ids
        np.testing.assert_allclose(a.distances, b.distances, atol=1e-9)

    def test_batch_equals_single(self):
        rng = np.random.default_rng(2)
        rm = RepresentationMatrix("l", np.arange(30), rng.standard_normal((30, 4)))
        Q = rng.standard_normal((7, 4))
        batch = knn_query_batch(rm, Q, 4)
        for q, nl in zip(Q, batch):
            assert knn_query(rm, q, 4).ids == nl.ids


class TestExtraction:
    def test_single_sample(self, trained):
        ds = LabeledDataset("one", [42], np.ones((1, 6)), [0], 3)
        rm = extract_representations(trained, ds, "relu1")
        assert rm.ids.tolist() == [42]
        np.testing.assert_array_equal(rm.vectors[0], nn.forward_with_taps(trained, np.ones(6))[1]["relu1"])

    def test_deterministic_and_relu_nonnegative(self, trained, blobs):
        a = extract_representations(trained, blobs[0], "relu1")
        b = extract_representations(trained, blobs[0], "relu1")
        assert a.vectors.tobytes() == b.vectors.tobytes()
        assert np.all(a.vectors >= 0)

    def test_unknown_tap(self, trained, blobs):
        with pytest.raises(TapError):
            extract_representations(trained, blobs[0], "nope")

    def test_csv_round_trip(self, trained, blobs, tmp_path):
        rm = extract_representations(trained, blobs[0], "fc1")
        write_representations(rm, tmp_path / "r.csv")
        back = read_representations(tmp_path / "r.csv")
        assert back.layer == "fc1"
        assert back.ids.tolist() == rm.ids.tolist()
        assert back.vectors.tobytes() == rm.vectors.tobytes()
        assert (tmp_path / "r.csv").read_text().splitlines()[0] == f"fc1,8,{len(rm)}"



class TestAgreement:
    def test_self_consistent_classifier(self):
        # a linear model whose tap is the input; labels defined by its own predictions
        arch = nn.ArchSpec((2,), (nn.dense(2, "logits"),))
        m = nn.LayeredModel(arch, np.array([1.0, -1.0, -1.0, 1.0, 0.0, 0.0]), trained=True)
        rng = np.random.default_rng(0)
        Xtr = rng.standard_normal((40, 2))
        train = LabeledDataset("tr", np.arange(40), Xtr, nn.predict(m, Xtr), 2)
        test = LabeledDataset("te", 100 + np.arange(10), Xtr[:10] * 1.01, [0] * 10, 2)
        rm = extract_representations(m, train, "logits")
        # each test point is a positive rescaling of a training point: its 1-NN shares its label
        assert label_agreement(m, rm, train.y, test) == 1.0

    def test_hand_computed_fraction(self):
        arch = nn.ArchSpec((2,), (nn.relu("in"), nn.dense(2, "logits")))
        m = nn.LayeredModel(arch, np.array([1.0, 0.0, 0.0, 1.0, 0.0, 0.0]), trained=True)
        train = LabeledDataset("tr", [0, 1], [[1.0, 0.0], [0.0, 1.0]], [0, 0], 2)
        # network predicts argmax of the input; 1-NN label is always 0
        X = [[2.0, 0.1], [0.1, 2.0], [3.0, 1.0], [1.0, 3.0], [5.0, 0.0]]
        test = LabeledDataset("te", [10, 11, 12, 13, 14], X, [0, 0, 0, 0, 0], 2)
        rm = extract_representations(m, train, "in")
        assert label_agreement(m, rm, {0: 0, 1: 0}, test) == pytest.approx(3 / 5)

    def test_overlap_rejected(self, trained, blobs):
        rm = extract_representations(trained, blobs[0], "relu1")
        with pytest.raises(IdError):
            label_agreement(trained, rm, blobs[0].y, blobs[0].take([0, 1]))

    def test_sweep_in_arch_order(self, trained, blobs):
        rows = agreement_sweep(trained, *blobs)
        assert [r[0] for r in rows] == list(trained.arch.taps)
        assert all(0.0 <= f <= 1.0 for _, f in rows)
