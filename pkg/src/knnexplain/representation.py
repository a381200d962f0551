"""Per-layer representations, exact cosine k-NN and 1-NN label agreement."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import LabeledDataset
from .errors import ArgError, DegenerateVectorError, IdError, ParseError, ShapeError, TapError
from .nn import LayeredModel, _as_batch, _run, predict

EPS = 1e-12


def cosine_distance(u, v) -> float:
    """``1 - u·v / (|u| |v|)`` clamped to [0, 2]."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise ShapeError(f"cosine_distance needs equal-length vectors, got {u.shape} and {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu <= EPS or nv <= EPS:
        raise DegenerateVectorError("cosine distance of a (near) zero vector")
    return float(min(2.0, max(0.0, 1.0 - float(u @ v) / (nu * nv))))


@dataclass(frozen=True, eq=False)
class RepresentationMatrix:
    layer: str
    ids: np.ndarray
    vectors: np.ndarray
    source: str = ""

    def __post_init__(self):
        ids = np.array(self.ids, dtype=np.int64).reshape(-1)
        vec = np.array(self.vectors, dtype=np.float64)
        if vec.ndim != 2 or vec.shape[0] != len(ids) or (len(ids) and vec.shape[1] < 1):
            raise ShapeError(f"{len(ids)} ids but vectors of shape {vec.shape}")
        if len(np.unique(ids)) != len(ids):
            raise IdError("representation ids must be unique")
        ids.flags.writeable = False
        vec.flags.writeable = False
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "vectors", vec)
        object.__setattr__(self, "_norms", np.linalg.norm(vec, axis=1))

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def row(self, sample_id: int) -> np.ndarray:
        hit = np.flatnonzero(self.ids == sample_id)
        if not len(hit):
            raise IdError(f"no row for id {sample_id}")
        return self.vectors[hit[0]]

    def scaled(self, factor: float) -> "RepresentationMatrix":
        return RepresentationMatrix(self.layer, self.ids, self.vectors * factor, self.source)

    def check_rows(self) -> None:
        bad = np.flatnonzero(self._norms <= EPS)
        if len(bad):
            sid = int(self.ids[bad[0]])
            raise DegenerateVectorError(
                f"layer {self.layer!r}: row for id {sid} has (near) zero norm", sid)


@dataclass(frozen=True)
class NeighborList:
    query_id: int | None
    k: int
    ids: tuple[int, ...]
    distances: tuple[float, ...]

    def __len__(self) -> int:
        return len(self.ids)


def extract_representations(model: LayeredModel, dataset: LabeledDataset, layer: str,
                            batch_size: int = 1024) -> RepresentationMatrix:
    """Activation at tap ``layer`` for every sample, in dataset order."""
    taps = model.arch.taps
    if layer not in taps:
        raise TapError(f"unknown tap {layer!r}; taps are {list(taps)}")
    pos = taps.index(layer)
    chunks = []
    for s in range(0, len(dataset), batch_size):
        X, _ = _as_batch(model, dataset.X[s:s + batch_size])
        outs, _ = _run(model, X, model.params)
        chunks.append(outs[pos].reshape(len(X), -1))
    vec = np.vstack(chunks) if chunks else np.empty((0, 1))
    return RepresentationMatrix(layer, dataset.ids, vec, dataset.name)


def _distances(repmat: RepresentationMatrix, q: np.ndarray, qn: float) -> np.ndarray:
    # Elementwise product + row sum rather than a BLAS mat-vec: the reduction
    # order must not depend on row position, or duplicate rows stop tying.
    dots = (repmat.vectors * q).sum(axis=1)
    return np.clip(1.0 - dots / (repmat._norms * qn), 0.0, 2.0)


def knn_query_batch(repmat: RepresentationMatrix, queries, k: int,
                    query_ids=None) -> list[NeighborList]:
    """Exact k-NN for each query row; nearest first, equal distances by ascending id."""
    if not isinstance(k, (int, np.integer)) or k < 1:
        raise ArgError(f"k must be a positive integer, got {k!r}")
    Q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if Q.shape[1] != repmat.dim:
        raise ShapeError(f"query dimension {Q.shape[1]} != layer dimension {repmat.dim}")
    if query_ids is None:
        query_ids = [None] * len(Q)
    repmat.check_rows()
    qn = np.linalg.norm(Q, axis=1)
    bad = np.flatnonzero(qn <= EPS)
    if len(bad):
        qid = query_ids[bad[0]]
        raise DegenerateVectorError(f"query {qid if qid is not None else int(bad[0])} has (near) zero norm",
                                    None if qid is None else int(qid))
    kk = min(int(k), len(repmat))
    result = []
    for r in range(len(Q)):
        D = _distances(repmat, Q[r], qn[r])
        o = np.lexsort((repmat.ids, D))[:kk]
        qid = query_ids[r]
        result.append(NeighborList(None if qid is None else int(qid), int(k),
                                   tuple(int(i) for i in repmat.ids[o]), tuple(float(x) for x in D[o])))
    return result


def knn_query(repmat: RepresentationMatrix, query_vec, k: int, query_id: int | None = None) -> NeighborList:
    q = np.asarray(query_vec, dtype=np.float64)
    if q.ndim != 1:
        raise ShapeError("knn_query takes a single query vector")
    return knn_query_batch(repmat, q[None, :], k, [query_id])[0]


def label_agreement(model: LayeredModel, train_reps: RepresentationMatrix, train_labels,
                    test_set: LabeledDataset) -> float:
    """Fraction of test points whose 1-NN training label equals the network's prediction.

    ``train_labels`` is aligned with ``train_reps`` rows, or a mapping id -> label.
    """
    if len(test_set) == 0:
        raise ArgError("label agreement needs a nonempty test set")
    overlap = np.intersect1d(train_reps.ids, test_set.ids)
    if len(overlap):
        raise IdError(f"test ids overlap training ids: {overlap[:10].tolist()}")
    if isinstance(train_labels, dict):
        labels = {int(k): int(v) for k, v in train_labels.items()}
    else:
        labels = dict(zip(train_reps.ids.tolist(), np.asarray(train_labels).tolist()))
    test_reps = extract_representations(model, test_set, train_reps.layer)
    nns = knn_query_batch(train_reps, test_reps.vectors, 1, test_set.ids)
    nn_labels = np.array([labels[nl.ids[0]] for nl in nns])
    return float(np.mean(nn_labels == predict(model, test_set.X)))


def agreement_sweep(model: LayeredModel, train: LabeledDataset, test: LabeledDataset) -> list[tuple[str, float]]:
    """Label agreement at every tap, in architecture order."""
    rows = []
    for tap in model.arch.taps:
        reps = extract_representations(model, train, tap)
        rows.append((tap, label_agreement(model, reps, train.y, test)))
    return rows


# ---------------------------------------------------------------- persistence


def write_representations(repmat: RepresentationMatrix, path) -> None:
    """CSV cache: header ``layer,d_layer,n`` then ``id,v1,...,vd`` rows (repr floats)."""
    lines = [f"{repmat.layer},{repmat.dim},{len(repmat)}"]
    for i, v in zip(repmat.ids, repmat.vectors):
        lines.append(",".join([str(int(i))] + [repr(float(x)) for x in v]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_representations(path, source: str = "") -> RepresentationMatrix:
    text = Path(path).read_text().splitlines()
    if not text:
        raise ParseError("empty representation file", row=1)
    head = text[0].rsplit(",", 2)
    try:
        layer, d, n = head[0], int(head[1]), int(head[2])
    except (IndexError, ValueError):
        raise ParseError("bad header, expected layer,d_layer,n", row=1) from None
    rows = text[1:]
    if len(rows) != n:
        raise ParseError(f"header says {n} rows, found {len(rows)}", row=len(text))
    ids = np.empty(n, dtype=np.int64)
    vec = np.empty((n, d))
    for r, line in enumerate(rows):
        cells = line.split(",")
        if len(cells) != d + 1:
            raise ParseError(f"expected {d + 1} cells, got {len(cells)}", row=r + 2)
        try:
            ids[r] = int(cells[0])
            vec[r] = [float(c) for c in cells[1:]]
        except ValueError:
            raise ParseError("non-numeric cell", row=r + 2) from None
    if not np.all(np.isfinite(vec)):
        raise ParseError("non-finite value in representation file", row=None)
    return RepresentationMatrix(layer, ids, vec, source)


__all__ = [
    "EPS", "RepresentationMatrix", "NeighborList", "cosine_distance", "extract_representations",
    "knn_query", "knn_query_batch", "label_agreement", "agreement_sweep",
    "write_representations", "read_representations",
]
