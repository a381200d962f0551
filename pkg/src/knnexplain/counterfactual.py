"""Leave-k-out retraining: remove a test point's explanations, retrain, measure.

Two ways of picking the removed training points are supported: the ``k``
nearest neighbours in the penultimate representation of the original model
(``"knn"``), and the ``k`` highest-scoring points under last-layer influence
over a uniform subsample of the training set (``"influence"``). Either way
the model is retrained from the same initialization seed on everything that
is left, and the test loss and label are compared before and after.
"""

from __future__ import annotations

import csv
import logging
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .data import LabeledDataset, stratified_sample, uniform_subsample
from .errors import ArgError, DataError, IdError, ParseError, TrialError
from .influence import DEFAULT_DAMPING, InfluenceScores, LastLayerInfluence, top_k_influential
from .nn import ArchSpec, LayeredModel, TrainConfig, build_model, ce_loss, predict, train
from .representation import RepresentationMatrix, extract_representations, knn_query_batch

log = logging.getLogger(__name__)

METHODS = ("influence", "knn")
POOL_SAMPLERS = {"uniform": uniform_subsample, "stratified": stratified_sample}


def derive_seed(master_seed: int, label: str) -> int:
    """Stable 32-bit child seed for a named stage of an experiment."""
    ss = np.random.SeedSequence([int(master_seed), zlib.crc32(label.encode())])
    return int(ss.generate_state(1)[0])


@dataclass(frozen=True)
class CounterfactualRecord:
    test_id: int
    k: int
    method: str
    removed_ids: tuple[int, ...]
    loss_before: float
    loss_after: float
    lc: float
    label_before: int
    label_after: int
    flipped: bool

    def __post_init__(self):
        object.__setattr__(self, "removed_ids", tuple(int(i) for i in self.removed_ids))
        if self.lc != self.loss_after - self.loss_before:
            raise ArgError(f"lc {self.lc} != loss_after - loss_before")
        if self.flipped != (self.label_before != self.label_after):
            raise ArgError("flipped must equal label_before != label_after")
        if len(set(self.removed_ids)) != len(self.removed_ids):
            raise ArgError("removed ids must be distinct")
        if len(self.removed_ids) != self.k:
            raise ArgError(f"{len(self.removed_ids)} removed ids for k={self.k}")

    @property
    def key(self) -> tuple[int, int, str]:
        return (self.test_id, self.k, self.method)


def remove_and_retrain(dataset: LabeledDataset, removed_ids: Iterable[int], arch: ArchSpec,
                       cfg: TrainConfig, init_model: LayeredModel | None = None) -> LayeredModel:
    """Train a fresh model (seed ``cfg.seed``) on ``dataset`` minus ``removed_ids``.

    With ``cfg.frozen_layers`` set, those layers are copied from ``init_model``
    instead of the fresh initialization, so only the remaining layers are
    retrained.
    """
    removed = [int(i) for i in removed_ids]
    known = set(dataset.ids.tolist())
    missing = [i for i in removed if i not in known]
    if missing:
        raise IdError(f"removed ids not in training set: {missing[:10]}")
    residual = dataset.remove(removed)
    if len(residual) == 0:
        raise DataError("nothing left to train on after removal")
    model = build_model(arch, cfg.seed)
    if cfg.frozen_layers and init_model is not None:
        params = model.params.copy()
        for tap in cfg.frozen_layers:
            b = arch.block(tap)
            params[b.offset:b.offset + b.size] = init_model.params[b.offset:b.offset + b.size]
        model = model.with_params(params)
    return train(model, residual, cfg)


def evaluate_trial(model_before: LayeredModel, model_after: LayeredModel, test_point, k: int,
                   method: str, removed_ids: Sequence[int], test_id: int = -1) -> CounterfactualRecord:
    x, y = test_point
    before = ce_loss(model_before, x, y)
    after = ce_loss(model_after, x, y)
    lb = predict(model_before, x)
    la = predict(model_after, x)
    return CounterfactualRecord(int(test_id), int(k), method, tuple(removed_ids), before, after,
                                after - before, lb, la, lb != la)


def last_representation(model: LayeredModel, dataset: LabeledDataset) -> RepresentationMatrix:
    """Input to the logit layer (the raw features for a single-layer model)."""
    tap = model.arch.penultimate_tap
    if tap is None:
        return RepresentationMatrix("input", dataset.ids, dataset.X, dataset.name)
    return extract_representations(model, dataset, tap)


class CounterfactualExperiment:
    """Holds the trained reference models and the explanation selections.

    ``influence_cfg`` configures influence-trial retraining (e.g. with
    ``frozen_layers``); it defaults to ``cfg``. When it freezes layers the
    reference model for influence trials is itself a last-layer retrain on
    the full set, so an empty removal reproduces it exactly.

    Influence candidates come from a ``pool_size`` subsample of the training
    set, drawn uniformly or stratified by class (``pool_sampling``).
    """

    def __init__(self, dataset: LabeledDataset, arch: ArchSpec, cfg: TrainConfig, *,
                 pool_size: int = 1000, damping: float = DEFAULT_DAMPING, master_seed: int = 0,
                 influence_cfg: TrainConfig | None = None, base_model: LayeredModel | None = None,
                 pool_sampling: str = "uniform"):
        if len(dataset) == 0:
            raise DataError("training set is empty")
        if pool_sampling not in POOL_SAMPLERS:
            raise ArgError(f"pool_sampling must be one of {sorted(POOL_SAMPLERS)}, got {pool_sampling!r}")
        self.dataset = dataset
        self.arch = arch
        self.cfg = cfg
        self.influence_cfg = influence_cfg or cfg
        self.pool_size = pool_size
        self.pool_sampling = pool_sampling
        self.damping = damping
        self.master_seed = master_seed
        self.base = base_model if base_model is not None else train(build_model(arch, cfg.seed), dataset, cfg)
        self._train_reps: RepresentationMatrix | None = None
        self._influence: LastLayerInfluence | None = None
        self._ref: LayeredModel | None = None
        self.pool: LabeledDataset | None = None
        self.influence_scores: dict[int, InfluenceScores] = {}

    # -- reference models

    def reference_model(self, method: str) -> LayeredModel:
        if method == "knn" or self.influence_cfg == self.cfg:
            return self.base
        if self._ref is None:
            self._ref = remove_and_retrain(self.dataset, (), self.arch, self.influence_cfg, self.base)
        return self._ref

    def method_cfg(self, method: str) -> TrainConfig:
        return self.cfg if method == "knn" else self.influence_cfg

    # -- explanation selection

    def knn_explanations(self, test: LabeledDataset, k: int) -> dict[int, list[int]]:
        if self._train_reps is None:
            self._train_reps = last_representation(self.base, self.dataset)
        test_reps = last_representation(self.base, test)
        lists = knn_query_batch(self._train_reps, test_reps.vectors, k, test.ids)
        return {nl.query_id: list(nl.ids) for nl in lists}

    def influence_explanations(self, test: LabeledDataset) -> dict[int, InfluenceScores]:
        if self._influence is None:
            ref = self.reference_model("influence")
            sampler = POOL_SAMPLERS[self.pool_sampling]
            self.pool = sampler(self.dataset, min(self.pool_size, len(self.dataset)),
                                derive_seed(self.master_seed, "influence-pool"))
            self._influence = LastLayerInfluence(ref, self.dataset, self.damping, n_train=len(self.dataset))
        out = {}
        for tid, x, y in zip(test.ids, test.X, test.y):
            tid = int(tid)
            if tid not in self.influence_scores:
                self.influence_scores[tid] = self._influence.scores(self.pool, x, int(y), tid)
            out[tid] = self.influence_scores[tid]
        return out

    def plan(self, test: LabeledDataset, methods: Iterable[str], ks: Sequence[int]) -> list[tuple]:
        """Trials as ``(test_id, k, method, removed_ids)`` in output order."""
        methods = sorted(set(methods))
        for m in methods:
            if m not in METHODS:
                raise ArgError(f"unknown method {m!r}; expected one of {METHODS}")
        ks = sorted(set(int(k) for k in ks))
        if not ks or ks[0] < 1:
            raise ArgError("ks must be a nonempty list of positive integers")
        overlap = np.intersect1d(test.ids, self.dataset.ids)
        if len(overlap):
            raise IdError(f"test ids overlap training ids: {overlap[:10].tolist()}")
        nn = self.knn_explanations(test, max(ks)) if "knn" in methods else {}
        inf = self.influence_explanations(test) if "influence" in methods else {}
        trials = []
        for tid in sorted(int(i) for i in test.ids):
            for k in ks:
                for m in methods:
                    try:
                        if m == "knn":
                            if k > len(self.dataset):
                                raise ArgError(f"k={k} exceeds training set size {len(self.dataset)}")
                            removed = nn[tid][:k]
                        else:
                            removed = top_k_influential(inf[tid], k)
                    except Exception as e:
                        raise TrialError((tid, k, m), e) from e
                    trials.append((tid, k, m, tuple(removed)))
        return trials

    def run_trial(self, test: LabeledDataset, trial: tuple) -> CounterfactualRecord:
        tid, k, method, removed = trial
        after = remove_and_retrain(self.dataset, removed, self.arch, self.method_cfg(method), self.base)
        return evaluate_trial(self.reference_model(method), after, test.sample(tid), k, method,
                              removed, tid)

    def _guarded_trial(self, test: LabeledDataset, trial: tuple) -> CounterfactualRecord:
        try:
            return self.run_trial(test, trial)
        except TrialError:
            raise
        except Exception as e:
            raise TrialError(tuple(trial[:3]), e) from e

    def run(self, test: LabeledDataset, methods: Iterable[str], ks: Sequence[int], workers: int = 1,
            on_record: Callable[[CounterfactualRecord], None] | None = None) -> list[CounterfactualRecord]:
        """Run every trial; results come back sorted by (test id, k, method).

        On failure a :class:`TrialError` is raised whose ``partial`` attribute holds
        the sorted records that did complete.
        """
        trials = self.plan(test, methods, ks)
        # reference models are built up front so worker threads only read them
        for m in {t[2] for t in trials}:
            self.reference_model(m)
        done: list[CounterfactualRecord] = []
        try:
            if workers <= 1:
                for t in trials:
                    rec = self._guarded_trial(test, t)
                    done.append(rec)
                    if on_record:
                        on_record(rec)
            else:
                with ThreadPoolExecutor(max_workers=workers) as pool:
                    futures = [pool.submit(self._guarded_trial, test, t) for t in trials]
                    error = None
                    for f in futures:
                        try:
                            rec = f.result()
                        except TrialError as e:
                            error = error or e
                            for g in futures:
                                g.cancel()
                            continue
                        done.append(rec)
                        if on_record:
                            on_record(rec)
                    if error:
                        raise error
        except TrialError as e:
            e.partial = sorted(done, key=_order)
            raise
        log.info("completed %d trials", len(done))
        return sorted(done, key=_order)


def _order(rec: CounterfactualRecord):
    return (rec.test_id, rec.k, rec.method)


def run_counterfactual_experiment(dataset: LabeledDataset, test_samples: LabeledDataset, methods, ks,
                                  arch: ArchSpec, cfg: TrainConfig, pool_size: int = 1000,
                                  damping: float = DEFAULT_DAMPING, *, master_seed: int = 0,
                                  influence_cfg: TrainConfig | None = None,
                                  base_model: LayeredModel | None = None,
                                  pool_sampling: str = "uniform", workers: int = 1) -> list[CounterfactualRecord]:
    exp = CounterfactualExperiment(dataset, arch, cfg, pool_size=pool_size, damping=damping,
                                   master_seed=master_seed, influence_cfg=influence_cfg,
                                   base_model=base_model, pool_sampling=pool_sampling)
    return exp.run(test_samples, methods, ks, workers=workers)


# ---------------------------------------------------------------- aggregation


@dataclass(frozen=True)
class AggregateRow:
    dataset: str
    method: str
    k: int
    count: int
    avg_lc: float
    std_lc: float
    avg_pos_lc: float | None
    std_pos_lc: float | None
    avg_neg_lc: float | None
    std_neg_lc: float | None
    max_lc: float
    min_lc: float
    pos_lc_pct: float
    flip_pct: float


def _mean_std(x: np.ndarray) -> tuple[float, float]:
    mean = float(np.mean(x))
    return min(max(mean, float(x.min())), float(x.max())), float(np.std(x))


def aggregate(records: Sequence[CounterfactualRecord], dataset: str = "", method: str | None = None,
              k: int | None = None) -> AggregateRow:
    """Summary statistics over the records matching (method, k).

    An lc of exactly zero counts as positive. Standard deviations are population
    (divide by N); the positive or negative average is None when that subset is empty.
    """
    group = [r for r in records
             if (method is None or r.method == method) and (k is None or r.k == k)]
    if not group:
        raise ArgError(f"no records for group ({dataset!r}, {method!r}, {k!r})")
    methods = {r.method for r in group}
    ks = {r.k for r in group}
    lc = np.array([r.lc for r in group], dtype=np.float64)
    pos = lc[lc >= 0]
    neg = lc[lc < 0]
    avg, std = _mean_std(lc)
    avg_pos, std_pos = _mean_std(pos) if len(pos) else (None, None)
    avg_neg, std_neg = _mean_std(neg) if len(neg) else (None, None)
    flips = sum(1 for r in group if r.flipped)
    return AggregateRow(
        dataset=dataset,
        method=method if method is not None else "+".join(sorted(methods)),
        k=k if k is not None else (ks.pop() if len(ks) == 1 else 0),
        count=len(group),
        avg_lc=avg, std_lc=std,
        avg_pos_lc=avg_pos, std_pos_lc=std_pos,
        avg_neg_lc=avg_neg, std_neg_lc=std_neg,
        max_lc=float(lc.max()), min_lc=float(lc.min()),
        pos_lc_pct=100.0 * len(pos) / len(group),
        flip_pct=100.0 * flips / len(group),
    )


def aggregate_all(records: Sequence[CounterfactualRecord], dataset: str = "") -> list[AggregateRow]:
    """One row per (method, k) present, sorted by method then k."""
    keys = sorted({(r.method, r.k) for r in records})
    return [aggregate(records, dataset, m, k) for m, k in keys]


# ---------------------------------------------------------------- record CSV

RECORD_HEADER = ("test_id", "k", "method", "removed_ids", "loss_before", "loss_after", "lc",
                 "label_before", "label_after", "flipped")


def _fmt_float(x: float) -> str:
    return repr(float(x))


def dumps_records(records: Iterable[CounterfactualRecord]) -> str:
    lines = [",".join(RECORD_HEADER)]
    for r in records:
        lines.append(",".join([
            str(r.test_id), str(r.k), r.method, ";".join(str(i) for i in r.removed_ids),
            _fmt_float(r.loss_before), _fmt_float(r.loss_after), _fmt_float(r.lc),
            str(r.label_before), str(r.label_after), "true" if r.flipped else "false",
        ]))
    return "\n".join(lines) + "\n"


def write_records(records: Iterable[CounterfactualRecord], path) -> None:
    Path(path).write_text(dumps_records(records))


def read_records(path) -> list[CounterfactualRecord]:
    out = []
    with open(Path(path), newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != RECORD_HEADER:
            raise ParseError(f"unexpected records header {header}", row=1)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(RECORD_HEADER):
                raise ParseError(f"expected {len(RECORD_HEADER)} cells", row=lineno)
            try:
                removed = tuple(int(i) for i in row[3].split(";") if i != "")
                before, after = float(row[4]), float(row[5])
                out.append(CounterfactualRecord(
                    int(row[0]), int(row[1]), row[2], removed, before, after, float(row[6]),
                    int(row[7]), int(row[8]), row[9] == "true"))
            except (ValueError, ArgError) as e:
                raise ParseError(f"bad record: {e}", row=lineno) from None
    return out


__all__ = [
    "METHODS", "CounterfactualRecord", "AggregateRow", "CounterfactualExperiment", "derive_seed",
    "remove_and_retrain", "evaluate_trial", "run_counterfactual_experiment", "aggregate",
    "aggregate_all", "last_representation", "dumps_records", "write_records", "read_records",
]
