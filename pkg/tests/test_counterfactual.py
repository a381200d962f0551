import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from knnexplain import counterfactual as cf
from knnexplain import nn
from knnexplain.counterfactual import (CounterfactualExperiment, CounterfactualRecord, aggregate, aggregate_all,
                                       evaluate_trial, read_records, remove_and_retrain,
                                       run_counterfactual_experiment, write_records)
from knnexplain.data import BlobSpec, LabeledDataset, make_blobs_split
from knnexplain.errors import ArgError, DataError, IdError, TrialError

from conftest import mlp

CFG = nn.TrainConfig(epochs=8, batch_size=16, learning_rate=0.05, seed=3)


def record(lc, flipped=False, k=1, method="knn", test_id=0):
    before = 1.0
    after = before + lc
    return CounterfactualRecord(test_id, k, method, tuple(range(k)), before, after, after - before, 0,
                                1 if flipped else 0, flipped)


def streaming_stats(values):
    """Welford mean / population std, running min / max, one value at a time."""
    n, mean, m2 = 0, 0.0, 0.0
    lo, hi = math.inf, -math.inf
    for v in values:
        n += 1
        d = v - mean
        mean += d / n
        m2 += d * (v - mean)
        lo, hi = min(lo, v), max(hi, v)
    if n == 0:
        return None
    return mean, math.sqrt(m2 / n), lo, hi


def oracle_row(lcs, flips):
    total = streaming_stats(lcs)
    pos = streaming_stats([v for v in lcs if v >= 0])
    neg = streaming_stats([v for v in lcs if v < 0])
    return {
        "avg_lc": total[0], "std_lc": total[1], "max_lc": total[3], "min_lc": total[2],
        "avg_pos_lc": pos and pos[0], "std_pos_lc": pos and pos[1],
        "avg_neg_lc": neg and neg[0], "std_neg_lc": neg and neg[1],
        "pos_lc_pct": 100.0 * sum(v >= 0 for v in lcs) / len(lcs),
        "flip_pct": 100.0 * sum(flips) / len(flips),
    }


class TestRecord:
    def test_invariants_enforced(self):
        with pytest.raises(ArgError):
            CounterfactualRecord(0, 1, "knn", (1,), 2.0, 2.5, 0.4, 0, 0, False)
        with pytest.raises(ArgError):
            CounterfactualRecord(0, 1, "knn", (1,), 2.0, 2.5, 0.5, 3, 7, False)
        with pytest.raises(ArgError):
            CounterfactualRecord(0, 2, "knn", (1,), 2.0, 2.5, 0.5, 0, 0, False)

    def test_csv_round_trip(self, tmp_path):
        recs = [record(0.25, k=2), record(-1 / 3, flipped=True, k=1, method="influence", test_id=5)]
        write_records(recs, tmp_path / "r.csv")
        lines = (tmp_path / "r.csv").read_text().splitlines()
        assert lines[0] == ("test_id,k,method,removed_ids,loss_before,loss_after,lc,"
                            "label_before,label_after,flipped")
        assert lines[1].split(",")[3] == "0;1"
        assert read_records(tmp_path / "r.csv") == recs


class TestRetrain:
    def test_empty_removal_reproduces_training(self, blobs, small_arch):
        train, _ = blobs
        a = nn.train(nn.build_model(small_arch, CFG.seed), train, CFG)
        b = remove_and_retrain(train, [], small_arch, CFG)
        assert a.params.tobytes() == b.params.tobytes()

    def test_unknown_ids(self, blobs, small_arch):
        with pytest.raises(IdError):
            remove_and_retrain(blobs[0], [10_000], small_arch, CFG)

    def test_remove_everything(self, small_arch):
        ds = LabeledDataset("x", [0, 1], np.ones((2, 6)), [0, 1], 3)
        with pytest.raises(DataError):
            remove_and_retrain(ds, [0, 1], small_arch, CFG)

    def test_residual_size(self, blobs, small_arch, monkeypatch):
        seen = {}
        real = cf.train

        def spy(model, dataset, cfg):
            seen["ids"] = set(dataset.ids.tolist())
            return real(model, dataset, cfg)

        monkeypatch.setattr(cf, "train", spy)
        train, _ = blobs
        removed = train.ids[:7].tolist()
        remove_and_retrain(train, removed, small_arch, CFG)
        assert len(seen["ids"]) == len(train) - 7
        assert not seen["ids"] & set(removed)

    def test_removing_a_class(self):
        train, test = make_blobs_split(BlobSpec(2, 4, 40, spread=3.0, sigma=0.5, seed=0), 40)
        arch = mlp(dim=4, hidden=(8,), classes=2)
        gone = train.ids[train.y == 1]
        m = remove_and_retrain(train, gone, arch, nn.TrainConfig(epochs=20, batch_size=8, seed=0))
        assert np.mean(nn.predict(m, test.X) == 0) >= 0.95

    def test_frozen_layers_copied_from_init_model(self, blobs, small_arch, trained):
        cfg = nn.TrainConfig(epochs=2, seed=1, frozen_layers=nn.freeze_all_but_last(small_arch))
        m = remove_and_retrain(blobs[0], [int(blobs[0].ids[0])], small_arch, cfg, init_model=trained)
        for a, b in zip(m.layer_params("fc1"), trained.layer_params("fc1")):
            assert a.tobytes() == b.tobytes()


class TestEvaluate:
    def test_identity(self, trained, blobs):
        x, y = blobs[1].X[0], int(blobs[1].y[0])
        r = evaluate_trial(trained, trained, (x, y), 0, "knn", ())
        assert r.lc == 0.0 and not r.flipped

    def test_fields(self, trained, blobs, small_arch):
        x, y = blobs[1].X[3], int(blobs[1].y[3])
        other = nn.build_model(small_arch, 99)
        r = evaluate_trial(trained, other, (x, y), 2, "influence", (4, 9), test_id=8)
        assert r.lc == r.loss_after - r.loss_before
        assert r.loss_before == nn.ce_loss(trained, x, y)
        assert r.label_after == nn.predict(other, x)
        assert r.flipped == (r.label_before != r.label_after)

    def test_given_values(self):
        r = CounterfactualRecord(0, 0, "knn", (), 2.0, 2.5, 2.5 - 2.0, 3, 7, True)
        assert r.lc == 0.5 and r.flipped


@pytest.fixture(scope="module")
def exp_setup():
    train, test = make_blobs_split(BlobSpec(3, 5, 30, spread=1.0, sigma=1.0, seed=8), 10)
    return train, test, mlp(dim=5, hidden=(8,), classes=3)


class TestExperiment:
    def test_single_knn_trial(self, exp_setup):
        train, test, arch = exp_setup
        one = test.take([0])
        exp = CounterfactualExperiment(train, arch, CFG)
        recs = exp.run(one, ["knn"], [1])
        assert len(recs) == 1
        nn_id = exp.knn_explanations(one, 1)[int(one.ids[0])][0]
        assert recs[0].removed_ids == (nn_id,)

    def test_duplicate_is_removed_first(self, exp_setup):
        train, test, arch = exp_setup
        one = test.take([2])
        dup = LabeledDataset("dup", [5000], one.X, one.y, 3)
        recs = run_counterfactual_experiment(train.concat(dup), one, {"knn"}, [1], arch, CFG)
        assert recs[0].removed_ids == (5000,)

    def test_counts_order_and_determinism(self, exp_setup):
        train, test, arch = exp_setup
        ten = test.take(range(10))
        kw = dict(pool_size=40, damping=0.01, master_seed=4)
        a = run_counterfactual_experiment(train, ten, {"knn", "influence"}, [5, 1], arch, CFG, **kw)
        b = run_counterfactual_experiment(train, ten, {"knn", "influence"}, [5, 1], arch, CFG, **kw,
                                          workers=4)
        assert len(a) == 40
        assert a == b
        assert [r.key for r in a] == sorted(r.key for r in a)
        for r in a:
            assert len(r.removed_ids) == r.k
            assert not set(r.removed_ids) & set(ten.ids.tolist())

    def test_influence_uses_pool(self, exp_setup):
        train, test, arch = exp_setup
        exp = CounterfactualExperiment(train, arch, CFG, pool_size=15, master_seed=2)
        recs = exp.run(test.take([0, 1]), ["influence"], [3])
        pool_ids = set(exp.pool.ids.tolist())
        assert len(pool_ids) == 15
        for r in recs:
            assert set(r.removed_ids) <= pool_ids
            assert list(r.removed_ids) == top_k(exp.influence_scores[r.test_id], 3)

    def test_stratified_pool(self, exp_setup):
        train, test, arch = exp_setup
        exp = CounterfactualExperiment(train, arch, CFG, pool_size=12, pool_sampling="stratified")
        exp.run(test.take([0]), ["influence"], [1])
        assert exp.pool.class_counts().tolist() == [4, 4, 4]
        with pytest.raises(ArgError):
            CounterfactualExperiment(train, arch, CFG, pool_sampling="random")

    def test_frozen_influence_reference_is_consistent(self, exp_setup):
        train, test, arch = exp_setup
        icfg = nn.TrainConfig(**{**CFG.__dict__, "frozen_layers": nn.freeze_all_but_last(arch)})
        exp = CounterfactualExperiment(train, arch, CFG, influence_cfg=icfg, pool_size=20)
        ref = exp.reference_model("influence")
        again = remove_and_retrain(train, [], arch, icfg, exp.base)
        assert ref.params.tobytes() == again.params.tobytes()
        recs = exp.run(test.take([0]), ["influence"], [2])
        assert len(recs) == 1

    def test_overlapping_test_ids_rejected(self, exp_setup):
        train, _, arch = exp_setup
        with pytest.raises(IdError):
            run_counterfactual_experiment(train, train.take([0]), {"knn"}, [1], arch, CFG)

    def test_failure_carries_key_and_partial(self, exp_setup):
        train, test, arch = exp_setup
        exp = CounterfactualExperiment(train, arch, CFG)
        real = exp.run_trial
        calls = []

        def flaky(test_set, trial):
            calls.append(trial)
            if len(calls) == 3:
                raise TrialError(trial[:3], RuntimeError("boom"))
            return real(test_set, trial)

        exp.run_trial = flaky
        with pytest.raises(TrialError) as info:
            exp.run(test.take([0, 1]), ["knn"], [1, 2])
        assert len(info.value.partial) == 2
        assert info.value.key == calls[2][:3]

    def test_k_too_large_for_pool(self, exp_setup):
        train, test, arch = exp_setup
        exp = CounterfactualExperiment(train, arch, CFG, pool_size=3)
        with pytest.raises(TrialError) as info:
            exp.run(test.take([0]), ["influence"], [5])
        assert info.value.key == (int(test.ids[0]), 5, "influence")


def top_k(scores, k):
    order = sorted(zip(-scores.scores, scores.candidate_ids))
    return [i for _, i in order[:k]]


class TestAggregate:
    def test_two_record_example(self):
        row = aggregate([record(0.5), record(-0.5)], "blobs", "knn", 1)
        assert (row.avg_lc, row.avg_pos_lc, row.avg_neg_lc) == (0.0, 0.5, -0.5)
        assert (row.max_lc, row.min_lc, row.pos_lc_pct, row.flip_pct) == (0.5, -0.5, 50.0, 0.0)

    def test_zero_counts_positive(self):
        row = aggregate([record(0.0), record(0.0), record(-1.0), record(0.0)])
        assert row.pos_lc_pct == 75.0
        assert row.avg_pos_lc == 0.0 and row.avg_neg_lc == -1.0
        assert row.avg_lc < 0

    def test_missing_subset_is_none(self):
        row = aggregate([record(0.1), record(0.2)])
        assert row.avg_neg_lc is None and row.std_neg_lc is None

    def test_empty_group(self):
        with pytest.raises(ArgError):
            aggregate([record(0.1)], "d", "influence", 1)

    def test_grouping(self):
        recs = [record(0.1, k=1), record(0.3, k=2), record(-0.2, k=1, method="influence")]
        rows = aggregate_all(recs, "d")
        assert [(r.method, r.k, r.count) for r in rows] == [("influence", 1, 1), ("knn", 1, 1), ("knn", 2, 1)]

    def test_matches_streaming_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            n = int(rng.integers(1, 60))
            lcs = (rng.standard_normal(n) * rng.choice([1e-3, 1, 10])).tolist()
            flips = rng.random(n) < 0.3
            row = aggregate([record(v, bool(f)) for v, f in zip(lcs, flips)])
            for key, want in oracle_row([record(v).lc for v in lcs], flips).items():
                got = getattr(row, key)
                if want is None:
                    assert got is None
                else:
                    assert got == pytest.approx(want, abs=1e-12, rel=0)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=40))
    def test_partition_and_bounds(self, lcs):
        recs = [record(v) for v in lcs]
        row = aggregate(recs)
        pos = sum(r.lc >= 0 for r in recs)
        neg = sum(r.lc < 0 for r in recs)
        assert pos + neg == len(recs)
        assert row.pos_lc_pct == 100.0 * pos / len(recs)
        assert row.min_lc <= row.avg_lc <= row.max_lc
        assert 0 <= row.flip_pct <= 100
