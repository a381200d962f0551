"""Influence of training points on a test loss, restricted to the logit layer.

With all but the last layer held fixed, the loss is convex in the logit-layer
parameters and the (damped) Hessian is small enough to factor exactly, so
``(H + λI)⁻¹`` is applied with a Cholesky solve instead of a stochastic
estimate.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import linalg

from .data import LabeledDataset
from .errors import ArgError, DataError, ModelError, ShapeError, SingularHessianError
from .nn import LayeredModel, grad_last_layer, hessian_last_layer

DEFAULT_DAMPING = 0.01


def _cholesky(H: np.ndarray, damping: float):
    H = np.asarray(H, dtype=np.float64)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ShapeError(f"Hessian must be square, got shape {H.shape}")
    if damping < 0:
        raise ArgError("damping must be >= 0")
    if not np.allclose(H, H.T, rtol=1e-10, atol=1e-12):
        raise ArgError("Hessian is not symmetric")
    A = H + damping * np.eye(len(H)) if damping else H
    try:
        return linalg.cho_factor(A, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError) as e:
        raise SingularHessianError(f"H + {damping}·I is not positive definite: {e}") from None


def inverse_hvp_solve(H: np.ndarray, v, damping: float = 0.0) -> np.ndarray:
    """Solve ``(H + damping·I) s = v`` by Cholesky factorization."""
    factor = _cholesky(H, damping)
    v = np.asarray(v, dtype=np.float64)
    if v.shape[0] != factor[0].shape[0]:
        raise ShapeError(f"vector length {v.shape[0]} != Hessian side {factor[0].shape[0]}")
    return linalg.cho_solve(factor, v)


@dataclass(frozen=True, eq=False)
class InfluenceScores:
    test_id: int
    candidate_ids: tuple[int, ...]
    scores: np.ndarray
    damping: float

    def __post_init__(self):
        s = np.array(self.scores, dtype=np.float64).reshape(-1)
        if len(s) != len(self.candidate_ids):
            raise ShapeError("one score per candidate id")
        if not np.all(np.isfinite(s)):
            raise ModelError("non-finite influence score")
        s.flags.writeable = False
        object.__setattr__(self, "candidate_ids", tuple(int(i) for i in self.candidate_ids))
        object.__setattr__(self, "scores", s)


class LastLayerInfluence:
    """Factor ``H + λI`` once for a model and reuse it across test points.

    ``hessian_data`` defines the empirical Hessian; ``n_train`` is the training
    set size used for the ``1/n`` removal scaling (default ``len(hessian_data)``).
    """

    def __init__(self, model: LayeredModel, hessian_data: LabeledDataset,
                 damping: float = DEFAULT_DAMPING, n_train: int | None = None):
        if not model.trained:
            raise ModelError("influence needs a trained model")
        if not np.all(np.isfinite(model.params)):
            raise ModelError("model has non-finite parameters")
        if len(hessian_data) == 0:
            raise DataError("Hessian dataset is empty")
        self.model = model
        self.damping = float(damping)
        self.n_train = int(n_train if n_train is not None else len(hessian_data))
        self._factor = _cholesky(hessian_last_layer(model, hessian_data), self.damping)

    def solve(self, v) -> np.ndarray:
        return linalg.cho_solve(self._factor, np.asarray(v, dtype=np.float64))

    def test_direction(self, x, y) -> np.ndarray:
        """``(H + λI)⁻¹ ∇L(z_test)``."""
        return self.solve(grad_last_layer(self.model, x, y))

    def scores_from_gradients(self, direction: np.ndarray, train_grads: np.ndarray) -> np.ndarray:
        return np.asarray(train_grads, dtype=np.float64) @ direction / self.n_train

    def scores(self, pool: LabeledDataset, x, y, test_id: int = -1) -> InfluenceScores:
        if len(pool) == 0:
            raise DataError("influence pool is empty")
        direction = self.test_direction(x, y)
        G = grad_last_layer(self.model, pool.X, pool.y)
        return InfluenceScores(test_id, tuple(pool.ids), self.scores_from_gradients(direction, G),
                               self.damping)


def influence_scores(model: LayeredModel, pool: LabeledDataset, test_point, damping: float = DEFAULT_DAMPING,
                     *, train: LabeledDataset | None = None, test_id: int = -1) -> InfluenceScores:
    """Predicted test-loss increase from removing each pool point.

    ``score(z) = ∇L(z_test)ᵀ (H + λI)⁻¹ ∇L(z) / n``. The Hessian and ``n`` come
    from ``train`` when given (the full training set), otherwise from ``pool``.
    """
    x, y = test_point
    data = train if train is not None else pool
    return LastLayerInfluence(model, data, damping).scores(pool, x, y, test_id)


def top_k_influential(scores: InfluenceScores, k: int) -> list[int]:
    """Ids of the ``k`` largest signed scores, largest first; ties by ascending id."""
    n = len(scores.candidate_ids)
    if not isinstance(k, (int, np.integer)) or not 1 <= k <= n:
        raise ArgError(f"k must be in [1, {n}], got {k!r}")
    ids = np.asarray(scores.candidate_ids)
    order = np.lexsort((ids, -scores.scores))
    return [int(i) for i in ids[order[:k]]]


def write_scores_csv(all_scores, path) -> None:
    """Rows ``test_id,train_id,score`` for one or many :class:`InfluenceScores`."""
    if isinstance(all_scores, InfluenceScores):
        all_scores = [all_scores]
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["test_id", "train_id", "score"])
        for sc in all_scores:
            for i, s in zip(sc.candidate_ids, sc.scores):
                w.writerow([sc.test_id, i, repr(float(s))])


def read_scores_csv(path) -> list[InfluenceScores]:
    groups: dict[int, tuple[list, list]] = {}
    with open(Path(path), newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            ids, vals = groups.setdefault(int(row["test_id"]), ([], []))
            ids.append(int(row["train_id"]))
            vals.append(float(row["score"]))
    return [InfluenceScores(t, tuple(ids), np.array(vals), float("nan")) for t, (ids, vals) in groups.items()]
