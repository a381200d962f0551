"""Small layered classifiers in numpy with named activation taps.

A model is an :class:`ArchSpec` plus one flat float64 parameter vector. Every
layer exposes its output under a tap name; the logit layer is always the
final dense layer, so the last tap holds the logits and the tap before it is
the penultimate representation used for nearest-neighbour search.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .data import LabeledDataset
from .errors import ArchError, ArgError, DataError, LabelError, ShapeError, TapError

LAYER_KINDS = ("dense", "conv2d", "relu", "maxpool", "dropout", "flatten")
_PARAMS = {
    "dense": ("out_dim",),
    "conv2d": ("out_channels", "kernel", "stride"),
    "relu": (),
    "maxpool": ("kernel",),
    "dropout": ("rate",),
    "flatten": (),
}


@dataclass(frozen=True)
class Layer:
    kind: str
    tap: str
    out_dim: int | None = None
    out_channels: int | None = None
    kernel: int | None = None
    stride: int = 1
    rate: float | None = None

    def to_dict(self) -> dict:
        d = {"type": self.kind, "tap": self.tap}
        for key in _PARAMS[self.kind]:
            d[key] = getattr(self, key)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Layer":
        d = dict(d)
        kind = d.pop("type", None)
        if kind not in _PARAMS:
            raise ArchError(f"unknown layer type {kind!r}; expected one of {LAYER_KINDS}")
        if "tap" not in d:
            raise ArchError(f"{kind} layer is missing its tap name")
        tap = d.pop("tap")
        extra = set(d) - set(_PARAMS[kind])
        if extra:
            raise ArchError(f"{kind} layer {tap!r}: unexpected keys {sorted(extra)}")
        return cls(kind, str(tap), **d)


def dense(out_dim: int, tap: str) -> Layer:
    return Layer("dense", tap, out_dim=out_dim)


def conv2d(out_channels: int, kernel: int, tap: str, stride: int = 1) -> Layer:
    return Layer("conv2d", tap, out_channels=out_channels, kernel=kernel, stride=stride)


def relu(tap: str) -> Layer:
    return Layer("relu", tap)


def maxpool(kernel: int, tap: str) -> Layer:
    return Layer("maxpool", tap, kernel=kernel)


def dropout(rate: float, tap: str) -> Layer:
    return Layer("dropout", tap, rate=rate)


def flatten(tap: str) -> Layer:
    return Layer("flatten", tap)


@dataclass(frozen=True)
class _Block:
    """Resolved layer: shapes and the slice of the flat parameter vector it owns."""

    layer: Layer
    in_shape: tuple[int, ...]
    out_shape: tuple[int, ...]
    offset: int
    size: int
    w_shape: tuple[int, ...] = ()


@dataclass(frozen=True)
class ArchSpec:
    """Input shape plus an ordered list of layers.

    ``input_shape`` is ``(d,)`` for vectors or ``(channels, height, width)``
    for images; dataset features are the row-major flattening either way.
    """

    input_shape: tuple[int, ...]
    layers: tuple[Layer, ...]
    blocks: tuple[_Block, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "blocks", _resolve(self.input_shape, self.layers))

    @property
    def taps(self) -> tuple[str, ...]:
        return tuple(l.tap for l in self.layers)

    @property
    def input_dim(self) -> int:
        return math.prod(self.input_shape)

    @property
    def num_classes(self) -> int:
        return self.layers[-1].out_dim

    @property
    def num_params(self) -> int:
        b = self.blocks[-1]
        return b.offset + b.size

    @property
    def penultimate_tap(self) -> str | None:
        """Tap feeding the logit layer, or None when the logit layer reads the input."""
        return self.layers[-2].tap if len(self.layers) > 1 else None

    @property
    def penultimate_dim(self) -> int:
        return self.blocks[-1].in_shape[0]

    def block(self, tap: str) -> _Block:
        for b in self.blocks:
            if b.layer.tap == tap:
                return b
        raise TapError(f"unknown tap {tap!r}; taps are {list(self.taps)}")

    def parametric_taps(self) -> tuple[str, ...]:
        return tuple(b.layer.tap for b in self.blocks if b.size)

    def to_dict(self) -> dict:
        return {"input_shape": list(self.input_shape), "layers": [l.to_dict() for l in self.layers]}

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpec":
        extra = set(d) - {"input_shape", "layers"}
        if extra:
            raise ArchError(f"unexpected arch keys {sorted(extra)}")
        try:
            shape = d["input_shape"]
            layers = d["layers"]
        except KeyError as e:
            raise ArchError(f"arch is missing {e.args[0]!r}") from None
        if isinstance(shape, int):
            shape = [shape]
        return cls(tuple(shape), tuple(Layer.from_dict(l) for l in layers))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ArchSpec":
        return cls.from_dict(json.loads(text))


def _pos_int(value, what: str) -> int:
    if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value < 1:
        raise ArchError(f"{what} must be a positive integer, got {value!r}")
    return int(value)


def _resolve(input_shape: tuple[int, ...], layers: tuple[Layer, ...]) -> tuple[_Block, ...]:
    if not input_shape or any(s < 1 for s in input_shape) or len(input_shape) not in (1, 3):
        raise ArchError(f"input_shape must be (d,) or (c, h, w) with positive sizes, got {input_shape}")
    if not layers:
        raise ArchError("architecture has no layers")
    taps = [l.tap for l in layers]
    if len(set(taps)) != len(taps):
        raise ArchError(f"tap names must be unique: {taps}")
    blocks = []
    shape = input_shape
    offset = 0
    for layer in layers:
        where = f"layer {layer.tap!r} ({layer.kind})"
        size, w_shape = 0, ()
        if layer.kind == "dense":
            out = _pos_int(layer.out_dim, f"{where} out_dim")
            if len(shape) != 1:
                raise ArchError(f"{where} needs a flat input, got shape {shape}; add a flatten")
            w_shape = (shape[0], out)
            size = shape[0] * out + out
            new = (out,)
        elif layer.kind == "conv2d":
            oc = _pos_int(layer.out_channels, f"{where} out_channels")
            k = _pos_int(layer.kernel, f"{where} kernel")
            s = _pos_int(layer.stride, f"{where} stride")
            if len(shape) != 3:
                raise ArchError(f"{where} needs a (c, h, w) input, got shape {shape}")
            c, h, w = shape
            if k > h or k > w:
                raise ArchError(f"{where} kernel {k} larger than input {h}x{w}")
            w_shape = (oc, c, k, k)
            size = oc * c * k * k + oc
            new = (oc, (h - k) // s + 1, (w - k) // s + 1)
        elif layer.kind == "maxpool":
            k = _pos_int(layer.kernel, f"{where} kernel")
            if len(shape) != 3:
                raise ArchError(f"{where} needs a (c, h, w) input, got shape {shape}")
            c, h, w = shape
            if k > h or k > w:
                raise ArchError(f"{where} kernel {k} larger than input {h}x{w}")
            new = (c, h // k, w // k)
        elif layer.kind == "dropout":
            if layer.rate is None or not 0 <= layer.rate < 1:
                raise ArchError(f"{where} rate must be in [0, 1), got {layer.rate!r}")
            new = shape
        elif layer.kind == "relu":
            new = shape
        elif layer.kind == "flatten":
            new = (math.prod(shape),)
        else:
            raise ArchError(f"unknown layer type {layer.kind!r}")
        blocks.append(_Block(layer, shape, new, offset, size, w_shape))
        offset += size
        shape = new
    last = layers[-1]
    if last.kind != "dense":
        raise ArchError("the final layer must be the dense logit layer")
    if last.out_dim < 2:
        raise ArchError("the logit layer needs at least 2 classes")
    return tuple(blocks)


# ---------------------------------------------------------------- model


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 0.05
    momentum: float = 0.9
    seed: int = 0
    frozen_layers: frozenset[str] = frozenset()
    # Stop early once the full-batch gradient norm drops below this (None: never).
    grad_tol: float | None = None
    # L2 penalty (weight_decay / 2)·||θ||² on trainable parameters.
    weight_decay: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "frozen_layers", frozenset(self.frozen_layers))
        if self.epochs < 1:
            raise ArgError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ArgError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ArgError("learning_rate must be > 0")
        if not 0 <= self.momentum < 1:
            raise ArgError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ArgError("weight_decay must be >= 0")


@dataclass(frozen=True, eq=False)
class LayeredModel:
    arch: ArchSpec
    params: np.ndarray
    trained: bool = False
    train_seed: int | None = None

    def __post_init__(self):
        p = np.array(self.params, dtype=np.float64, copy=True).reshape(-1)
        if p.size != self.arch.num_params:
            raise ShapeError(f"expected {self.arch.num_params} parameters, got {p.size}")
        p.flags.writeable = False
        object.__setattr__(self, "params", p)

    @property
    def num_classes(self) -> int:
        return self.arch.num_classes

    def layer_params(self, tap: str) -> tuple[np.ndarray, np.ndarray] | None:
        """Read-only (weight, bias) views for a parametric layer, else None."""
        return _split(self.arch.block(tap), self.params)

    def with_params(self, params: np.ndarray, **changes) -> "LayeredModel":
        return replace(self, params=params, **changes)

    def last_layer_slice(self) -> slice:
        b = self.arch.blocks[-1]
        return slice(b.offset, b.offset + b.size)


def _split(block: _Block, params: np.ndarray):
    if not block.size:
        return None
    n_w = math.prod(block.w_shape)
    chunk = params[block.offset:block.offset + block.size]
    return chunk[:n_w].reshape(block.w_shape), chunk[n_w:]


def build_model(arch: ArchSpec, seed: int) -> LayeredModel:
    """Fresh model: weights and biases uniform on ±sqrt(1/fan_in), drawn layer by layer."""
    rng = np.random.default_rng(seed)
    params = np.empty(arch.num_params)
    for b in arch.blocks:
        if not b.size:
            continue
        fan_in = b.w_shape[0] if b.layer.kind == "dense" else math.prod(b.w_shape[1:])
        bound = math.sqrt(1.0 / fan_in)
        params[b.offset:b.offset + b.size] = rng.uniform(-bound, bound, b.size)
    return LayeredModel(arch, params, trained=False, train_seed=None)


# ---------------------------------------------------------------- forward / backward


def _conv_forward(x, w, bias, stride):
    k = w.shape[-1]
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.einsum("nchwij,ocij->nohw", win, w, optimize=True) + bias[None, :, None, None]
    return out


def _conv_backward(x, w, stride, dout):
    n, c, h, wd = x.shape
    oc, _, k, _ = w.shape
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    dw = np.einsum("nchwij,nohw->ocij", win, dout, optimize=True)
    db = dout.sum(axis=(0, 2, 3))
    dx = np.zeros_like(x)
    oh, ow = dout.shape[2], dout.shape[3]
    for i in range(k):
        for j in range(k):
            dx[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += np.einsum(
                "nohw,oc->nchw", dout, w[:, :, i, j], optimize=True)
    return dx, dw, db


def _pool_forward(x, k):
    n, c, h, w = x.shape
    oh, ow = h // k, w // k
    win = x[:, :, :oh * k, :ow * k].reshape(n, c, oh, k, ow, k)
    return win.max(axis=(3, 5))


def _pool_backward(x, k, out, dout):
    n, c, h, w = x.shape
    oh, ow = h // k, w // k
    win = x[:, :, :oh * k, :ow * k].reshape(n, c, oh, k, ow, k)
    hit = win == out[:, :, :, None, :, None]
    # route each window's gradient to its first maximal entry only
    flat = hit.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, oh, ow, k * k)
    first = np.zeros_like(flat)
    np.put_along_axis(first, flat.argmax(axis=-1)[..., None], True, axis=-1)
    mask = first.reshape(n, c, oh, ow, k, k).transpose(0, 1, 2, 4, 3, 5)
    dx = np.zeros_like(x)
    dx[:, :, :oh * k, :ow * k] = (mask * dout[:, :, :, None, :, None]).reshape(n, c, oh * k, ow * k)
    return dx


def _run(model: LayeredModel, X: np.ndarray, params: np.ndarray, rng=None):
    """Batched forward. Returns per-layer outputs and the caches backprop needs.

    ``rng`` switches dropout on (training); None means inference.
    """
    arch = model.arch
    h = X.reshape((X.shape[0],) + arch.input_shape)
    outs, caches = [], []
    for b in arch.blocks:
        kind = b.layer.kind
        cache = h
        if kind == "dense":
            w, bias = _split(b, params)
            h = h @ w + bias
        elif kind == "conv2d":
            w, bias = _split(b, params)
            h = _conv_forward(h, w, bias, b.layer.stride)
        elif kind == "relu":
            h = np.maximum(h, 0.0)
        elif kind == "maxpool":
            h = _pool_forward(h, b.layer.kernel)
        elif kind == "dropout":
            if rng is not None and b.layer.rate > 0:
                keep = 1.0 - b.layer.rate
                mask = (rng.random(h.shape) < keep) / keep
                cache = mask
                h = h * mask
            else:
                cache = None
        elif kind == "flatten":
            h = h.reshape(h.shape[0], -1)
        outs.append(h)
        caches.append(cache)
    return outs, caches


def _backward(model: LayeredModel, params: np.ndarray, outs, caches, dlogits, trainable_from: int = 0):
    """Gradient of the (already batch-reduced) loss w.r.t. the flat parameters.

    Layers before ``trainable_from`` are skipped once no trainable layer remains
    below them.
    """
    grad = np.zeros_like(params)
    d = dlogits
    blocks = model.arch.blocks
    for idx in range(len(blocks) - 1, -1, -1):
        b = blocks[idx]
        kind = b.layer.kind
        x = caches[idx]
        if kind == "dense":
            w, _ = _split(b, params)
            n_w = w.size
            grad[b.offset:b.offset + n_w] = (x.T @ d).ravel()
            grad[b.offset + n_w:b.offset + b.size] = d.sum(axis=0)
            if idx <= trainable_from:
                break
            d = d @ w.T
        elif kind == "conv2d":
            w, _ = _split(b, params)
            dx, dw, db = _conv_backward(x, w, b.layer.stride, d)
            grad[b.offset:b.offset + w.size] = dw.ravel()
            grad[b.offset + w.size:b.offset + b.size] = db
            if idx <= trainable_from:
                break
            d = dx
        elif kind == "relu":
            d = d * (outs[idx] > 0)
        elif kind == "maxpool":
            d = _pool_backward(x, b.layer.kernel, outs[idx], d)
        elif kind == "dropout":
            if x is not None:
                d = d * x
        elif kind == "flatten":
            d = d.reshape((d.shape[0],) + b.in_shape)
        if idx <= trainable_from:
            break
    return grad


def _as_batch(model: LayeredModel, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != model.arch.input_dim:
        raise ShapeError(f"expected input of dimension {model.arch.input_dim}, got shape {x.shape}")
    return X, single


def forward_with_taps(model: LayeredModel, x) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Logits and every tap's activation (flattened) for one input or a batch.

    A 1-D ``x`` gives vectors; a 2-D ``x`` gives one row per input.
    """
    X, single = _as_batch(model, x)
    outs, _ = _run(model, X, model.params)
    taps = {b.layer.tap: o.reshape(len(X), -1) for b, o in zip(model.arch.blocks, outs)}
    logits = taps[model.arch.layers[-1].tap]
    if single:
        taps = {k: v[0] for k, v in taps.items()}
        logits = logits[0]
    return logits, taps


def logits(model: LayeredModel, x) -> np.ndarray:
    X, single = _as_batch(model, x)
    out = _run(model, X, model.params)[0][-1]
    return out[0] if single else out


def predict(model: LayeredModel, x):
    """Argmax class; ties go to the smallest index (``np.argmax`` semantics)."""
    z = logits(model, x)
    return int(np.argmax(z)) if z.ndim == 1 else np.argmax(z, axis=1)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _check_labels(model: LayeredModel, y) -> np.ndarray:
    y = np.asarray(y)
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise LabelError(f"labels must be integers, got {y!r}")
        y = y.astype(np.int64)
    C = model.num_classes
    if np.any(y < 0) or np.any(y >= C):
        raise LabelError(f"label out of range [0, {C}): {y!r}")
    return y


def ce_loss(model: LayeredModel, x, y):
    """Softmax cross-entropy ``-log softmax(logits)[y]``; per-sample for a batch."""
    y = _check_labels(model, y)
    z = logits(model, x)
    if z.ndim == 1:
        return float(-log_softmax(z)[int(y)])
    return -log_softmax(z)[np.arange(len(z)), y]


def _trainable_mask(model: LayeredModel, frozen: Iterable[str]) -> np.ndarray:
    arch = model.arch
    mask = np.ones(arch.num_params, dtype=bool)
    for tap in frozen:
        b = arch.block(tap)
        mask[b.offset:b.offset + b.size] = False
    return mask


def _mean_grad(model, params, X, y, trainable_from, rng=None):
    outs, caches = _run(model, X, params, rng)
    p = softmax(outs[-1])
    p[np.arange(len(y)), y] -= 1.0
    return _backward(model, params, outs, caches, p / len(y), trainable_from)


def loss_gradient(model: LayeredModel, X, y) -> np.ndarray:
    """Gradient of the mean cross-entropy over ``(X, y)`` w.r.t. all parameters."""
    X, _ = _as_batch(model, X)
    y = _check_labels(model, np.atleast_1d(y))
    return _mean_grad(model, model.params, X, y, 0)


def train(model: LayeredModel, dataset: LabeledDataset, cfg: TrainConfig) -> LayeredModel:
    """Mini-batch SGD with (heavy-ball) momentum on mean cross-entropy.

    Each epoch visits a fresh permutation drawn from ``cfg.seed``; dropout masks
    come from a separate stream of the same seed. Layers named in
    ``cfg.frozen_layers`` keep their input parameters bit for bit.
    """
    if len(dataset) == 0:
        raise DataError("cannot train on an empty dataset")
    if dataset.dim != model.arch.input_dim:
        raise ShapeError(f"dataset dimension {dataset.dim} != model input {model.arch.input_dim}")
    if dataset.num_classes != model.num_classes:
        raise ShapeError(f"dataset has {dataset.num_classes} classes, model {model.num_classes}")
    unknown = cfg.frozen_layers - set(model.arch.taps)
    if unknown:
        raise TapError(f"frozen_layers not in architecture: {sorted(unknown)}")
    mask = _trainable_mask(model, cfg.frozen_layers)
    params = model.params.copy()
    if not mask.any():
        return model.with_params(params, trained=True, train_seed=cfg.seed)
    idx = np.flatnonzero(mask)
    # first layer whose parameters still need gradients; backprop stops there
    trainable_from = next(i for i, b in enumerate(model.arch.blocks)
                          if b.size and mask[b.offset])
    shuffle_ss, dropout_ss = np.random.SeedSequence(cfg.seed).spawn(2)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    drop_rng = np.random.default_rng(dropout_ss)
    X, y = dataset.X, dataset.y
    n = len(dataset)
    velocity = np.zeros(idx.size)
    for _ in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            rows = order[start:start + cfg.batch_size]
            g = _mean_grad(model, params, X[rows], y[rows], trainable_from, drop_rng)[idx]
            if cfg.weight_decay:
                g = g + cfg.weight_decay * params[idx]
            velocity = cfg.momentum * velocity + g
            params[idx] -= cfg.learning_rate * velocity
        if cfg.grad_tol is not None:
            full = _mean_grad(model, params, X, y, trainable_from)[idx]
            if cfg.weight_decay:
                full = full + cfg.weight_decay * params[idx]
            if np.linalg.norm(full) < cfg.grad_tol:
                break
    return model.with_params(params, trained=True, train_seed=cfg.seed)


def accuracy(model: LayeredModel, dataset: LabeledDataset) -> float:
    return float(np.mean(predict(model, dataset.X) == dataset.y))


# ---------------------------------------------------------------- last layer


def penultimate(model: LayeredModel, X) -> np.ndarray:
    """Input to the logit layer for each row of ``X`` (batch in, batch out)."""
    X, _ = _as_batch(model, X)
    outs, _ = _run(model, X, model.params)
    return outs[-2].reshape(len(X), -1) if len(outs) > 1 else X


def _last_layer_terms(model: LayeredModel, X, y):
    X, single = _as_batch(model, X)
    y = _check_labels(model, np.atleast_1d(y))
    outs, _ = _run(model, X, model.params)
    a = outs[-2].reshape(len(X), -1) if len(outs) > 1 else X
    a_aug = np.hstack([a, np.ones((len(X), 1))])
    return a_aug, softmax(outs[-1]), y, single


def last_layer_size(model: LayeredModel) -> int:
    return (model.arch.penultimate_dim + 1) * model.num_classes


def grad_last_layer(model: LayeredModel, x, y) -> np.ndarray:
    """Exact cross-entropy gradient w.r.t. the logit layer's weights then bias.

    The layout matches the flat parameter vector: ``W[i, j]`` at ``i*C + j``,
    then ``bias[j]``, i.e. ``kron((a, 1), softmax - onehot(y))``. A batch input
    returns one gradient row per sample.
    """
    a_aug, p, y, single = _last_layer_terms(model, x, y)
    r = p.copy()
    r[np.arange(len(y)), y] -= 1.0
    g = (a_aug[:, :, None] * r[:, None, :]).reshape(len(y), -1)
    return g[0] if single else g


def hessian_last_layer(model: LayeredModel, dataset: LabeledDataset, damping: float = 0.0) -> np.ndarray:
    """Mean per-sample cross-entropy Hessian over the logit layer, plus ``damping * I``.

    Per sample the Hessian is ``kron(a aᵀ, diag(p) - p pᵀ)`` in the same layout as
    :func:`grad_last_layer`, with ``a`` the augmented penultimate activation.
    """
    if len(dataset) == 0:
        raise DataError("Hessian needs a nonempty dataset")
    if damping < 0:
        raise ArgError("damping must be >= 0")
    a_aug, p, _, _ = _last_layer_terms(model, dataset.X, dataset.y)
    n, h1 = a_aug.shape
    C = p.shape[1]
    H = np.zeros((h1 * C, h1 * C))
    # chunk to bound the (n, h1, h1) temporary
    step = max(1, 2_000_000 // max(1, h1 * h1))
    for s in range(0, n, step):
        a = a_aug[s:s + step]
        pc = p[s:s + step]
        S = pc[:, :, None] * -pc[:, None, :]
        S[:, np.arange(C), np.arange(C)] += pc
        H += np.einsum("ni,nj,nab->iajb", a, a, S, optimize=True).reshape(h1 * C, h1 * C)
    H /= n
    H = 0.5 * (H + H.T)
    if damping:
        H[np.diag_indices_from(H)] += damping
    return H


def freeze_all_but_last(arch: ArchSpec) -> frozenset[str]:
    """Tap names of every parametric layer except the logit layer."""
    return frozenset(arch.parametric_taps()[:-1])
