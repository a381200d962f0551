"""Experiment configuration: a JSON document with a fixed schema.

Top-level keys (all optional except ``dataset`` and ``arch``)::

    {
      "dataset": {"source": "blobs", "num_classes": 4, "dim": 20, "per_class": 100,
                  "test_per_class": 50, "spread": 1.0, "sigma": 1.0, "seed": 0},
      "arch": {"input_shape": [20], "layers": [{"type": "dense", "out_dim": 32, "tap": "fc1"}, ...]},
      "train": {"epochs": 30, "batch_size": 32, "learning_rate": 0.05, "momentum": 0.9,
                "seed": 0, "frozen_layers": [], "weight_decay": 0.0},
      "ks": [1, 5, 10, 15, 20],
      "methods": ["knn", "influence"],
      "num_test_samples": 500,
      "agreement_samples": 1000,
      "pool_size": 1000,
      "pool_sampling": "uniform",
      "damping": 0.01,
      "influence_freeze": true,
      "master_seed": 0,
      "output_dir": "out",
      "workers": 1,
      "cache_representations": false
    }

``dataset.source`` may instead be ``"csv"`` (keys ``train``, ``test``,
``num_classes``, ``header``) or ``"idx"`` (keys ``train_images``,
``train_labels``, ``test_images``, ``test_labels``). Every dataset may carry a
``name`` used in report tables. ``arch`` may be a path to an arch JSON file.
Relative paths resolve against the config file's directory.

Precedence: built-in defaults, then the config file, then command-line flags.
Unknown keys anywhere are rejected.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from .data import BlobSpec, LabeledDataset, load_csv, load_idx, make_blobs_split
from .errors import ConfigError, KnnExplainError
from .nn import ArchSpec, TrainConfig, freeze_all_but_last

TOP_KEYS = {
    "dataset", "arch", "train", "ks", "methods", "num_test_samples", "agreement_samples",
    "pool_size", "pool_sampling", "damping", "influence_freeze", "master_seed", "output_dir", "workers",
    "cache_representations",
}
DATASET_KEYS = {
    "blobs": {"source", "name", "num_classes", "dim", "per_class", "test_per_class", "spread", "sigma", "seed"},
    "csv": {"source", "name", "train", "test", "num_classes", "header"},
    "idx": {"source", "name", "train_images", "train_labels", "test_images", "test_labels"},
}
DATASET_PATHS = {"csv": ("train", "test"),
                 "idx": ("train_images", "train_labels", "test_images", "test_labels")}
TRAIN_KEYS = {"epochs", "batch_size", "learning_rate", "momentum", "seed", "frozen_layers", "weight_decay"}


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: dict
    arch: ArchSpec
    train: TrainConfig
    ks: tuple[int, ...] = (1, 5, 10, 15, 20)
    methods: tuple[str, ...] = ("influence", "knn")
    num_test_samples: int = 500
    agreement_samples: int | None = 1000
    pool_size: int = 1000
    pool_sampling: str = "uniform"
    damping: float = 0.01
    influence_freeze: bool = True
    master_seed: int = 0
    output_dir: Path = Path("out")
    workers: int = 1
    cache_representations: bool = False
    base_dir: Path = field(default=Path("."), compare=False)

    @property
    def dataset_name(self) -> str:
        return str(self.dataset.get("name", self.dataset["source"]))

    def load_datasets(self) -> tuple[LabeledDataset, LabeledDataset]:
        """(train, test) with disjoint ids."""
        d = self.dataset
        src = d["source"]
        name = self.dataset_name
        if src == "blobs":
            spec = BlobSpec(d["num_classes"], d["dim"], d["per_class"], d.get("spread", 5.0),
                            d.get("sigma", 1.0), d.get("seed", 0))
            train, test = make_blobs_split(spec, d.get("test_per_class", d["per_class"]))
            return _rename(train, name), _rename(test, name + "-test")
        if src == "csv":
            train = load_csv(self.base_dir / d["train"], d["num_classes"], header=d.get("header", False), name=name)
            test = load_csv(self.base_dir / d["test"], d["num_classes"], header=d.get("header", False))
            return train, _offset(test, len(train), name + "-test")
        train = load_idx(self.base_dir / d["train_images"], self.base_dir / d["train_labels"], name=name)
        test = load_idx(self.base_dir / d["test_images"], self.base_dir / d["test_labels"])
        return train, _offset(test, len(train), name + "-test")

    def influence_train_config(self) -> TrainConfig:
        if not self.influence_freeze:
            return self.train
        return replace(self.train, frozen_layers=self.train.frozen_layers | freeze_all_but_last(self.arch))


def _rename(ds: LabeledDataset, name: str) -> LabeledDataset:
    return LabeledDataset(name, ds.ids, ds.X, ds.y, ds.num_classes)


def _offset(ds: LabeledDataset, offset: int, name: str) -> LabeledDataset:
    return LabeledDataset(name, ds.ids + offset, ds.X, ds.y, ds.num_classes)


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def parse_config(raw: dict[str, Any], base_dir: Path = Path("."), overrides: dict | None = None) -> ExperimentConfig:
    """Validate ``raw`` (plus flag ``overrides``) and build the config.

    Raises :class:`ConfigError` listing every problem found.
    """
    raw = dict(raw)
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    problems: list[str] = []
    for key in sorted(set(raw) - TOP_KEYS):
        problems.append(f"{key}: unknown key")

    ds = raw.get("dataset")
    if not isinstance(ds, dict):
        problems.append("dataset: required object")
        ds = None
    else:
        src = ds.get("source")
        if src not in DATASET_KEYS:
            problems.append(f"dataset.source: must be one of {sorted(DATASET_KEYS)}, got {src!r}")
        else:
            for key in sorted(set(ds) - DATASET_KEYS[src]):
                problems.append(f"dataset.{key}: unknown key for source {src!r}")
            for key in DATASET_PATHS.get(src, ()):
                if not isinstance(ds.get(key), str):
                    problems.append(f"dataset.{key}: required path")
                elif not (base_dir / ds[key]).is_file():
                    problems.append(f"dataset.{key}: file not found: {base_dir / ds[key]}")
            if src in ("blobs", "csv"):
                if not _is_int(ds.get("num_classes")) or ds["num_classes"] < 2:
                    problems.append("dataset.num_classes: integer >= 2 required")
            if src == "blobs":
                for key in ("dim", "per_class"):
                    if not _is_int(ds.get(key)) or ds[key] < 1:
                        problems.append(f"dataset.{key}: positive integer required")
                if "test_per_class" in ds and (not _is_int(ds["test_per_class"]) or ds["test_per_class"] < 1):
                    problems.append("dataset.test_per_class: positive integer required")
                if "sigma" in ds and (not _is_num(ds["sigma"]) or ds["sigma"] <= 0):
                    problems.append("dataset.sigma: positive number required")
                if "spread" in ds and not _is_num(ds["spread"]):
                    problems.append("dataset.spread: number required")
                if "seed" in ds and not _is_int(ds["seed"]):
                    problems.append("dataset.seed: integer required")

    arch = None
    arch_raw = raw.get("arch")
    if isinstance(arch_raw, str):
        path = base_dir / arch_raw
        if not path.is_file():
            problems.append(f"arch: file not found: {path}")
            arch_raw = None
        else:
            try:
                arch_raw = json.loads(path.read_text())
            except json.JSONDecodeError as e:
                problems.append(f"arch: invalid JSON in {path}: {e}")
                arch_raw = None
    if arch_raw is None and "arch" not in raw:
        problems.append("arch: required")
    elif isinstance(arch_raw, dict):
        try:
            arch = ArchSpec.from_dict(arch_raw)
        except (KnnExplainError, TypeError, ValueError) as e:
            problems.append(f"arch: {e}")
    elif arch_raw is not None:
        problems.append("arch: object or path required")

    train_raw = raw.get("train", {})
    tcfg = None
    if not isinstance(train_raw, dict):
        problems.append("train: object required")
    else:
        for key in sorted(set(train_raw) - TRAIN_KEYS):
            problems.append(f"train.{key}: unknown key")
        kw = {k: v for k, v in train_raw.items() if k in TRAIN_KEYS}
        if "frozen_layers" in kw:
            kw["frozen_layers"] = frozenset(kw["frozen_layers"])
        try:
            tcfg = TrainConfig(**kw)
        except (KnnExplainError, TypeError) as e:
            problems.append(f"train: {e}")
        if tcfg is not None and arch is not None:
            unknown = tcfg.frozen_layers - set(arch.taps)
            if unknown:
                problems.append(f"train.frozen_layers: not arch taps: {sorted(unknown)}")

    ks = raw.get("ks", [1, 5, 10, 15, 20])
    if not isinstance(ks, list) or not ks or not all(_is_int(k) and k >= 1 for k in ks):
        problems.append("ks: nonempty list of positive integers required")
    methods = raw.get("methods", ["knn", "influence"])
    if isinstance(methods, str):
        methods = ["knn", "influence"] if methods == "both" else [methods]
    if not isinstance(methods, list) or not methods or not set(methods) <= {"knn", "influence"}:
        problems.append("methods: nonempty subset of ['knn', 'influence'] required")
    for key, minimum in (("num_test_samples", 1), ("pool_size", 1), ("workers", 1)):
        if key in raw and (not _is_int(raw[key]) or raw[key] < minimum):
            problems.append(f"{key}: integer >= {minimum} required")
    if raw.get("agreement_samples") is not None and (
            not _is_int(raw["agreement_samples"]) or raw["agreement_samples"] < 1):
        problems.append("agreement_samples: positive integer or null required")
    if raw.get("pool_sampling", "uniform") not in ("uniform", "stratified"):
        problems.append("pool_sampling: 'uniform' or 'stratified' required")
    if "damping" in raw and (not _is_num(raw["damping"]) or raw["damping"] < 0):
        problems.append("damping: number >= 0 required")
    if "master_seed" in raw and not _is_int(raw["master_seed"]):
        problems.append("master_seed: integer required")
    for key in ("influence_freeze", "cache_representations"):
        if key in raw and not isinstance(raw[key], bool):
            problems.append(f"{key}: boolean required")
    if "output_dir" in raw and not isinstance(raw["output_dir"], str):
        problems.append("output_dir: path string required")
    if ds is not None and arch is not None and ds.get("source") == "blobs" and _is_int(ds.get("dim")):
        if arch.input_dim != ds["dim"]:
            problems.append(f"arch.input_shape: {arch.input_shape} does not match dataset.dim {ds['dim']}")
    if ds is not None and arch is not None and _is_int(ds.get("num_classes")):
        if arch.num_classes != ds["num_classes"]:
            problems.append(f"arch: logit layer has {arch.num_classes} outputs, dataset has "
                            f"{ds['num_classes']} classes")

    if problems:
        raise ConfigError(problems)
    out = Path(raw.get("output_dir", "out"))
    return ExperimentConfig(
        dataset=dict(ds),
        arch=arch,
        train=tcfg,
        ks=tuple(sorted(set(ks))),
        methods=tuple(sorted(set(methods))),
        num_test_samples=raw.get("num_test_samples", 500),
        agreement_samples=raw.get("agreement_samples", 1000),
        pool_size=raw.get("pool_size", 1000),
        pool_sampling=raw.get("pool_sampling", "uniform"),
        damping=float(raw.get("damping", 0.01)),
        influence_freeze=raw.get("influence_freeze", True),
        master_seed=raw.get("master_seed", 0),
        output_dir=out if out.is_absolute() else base_dir / out,
        workers=raw.get("workers", 1),
        cache_representations=raw.get("cache_representations", False),
        base_dir=base_dir,
    )


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError([f"config: file not found: {path}"])
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError([f"config: invalid JSON: {e}"]) from None
    if not isinstance(raw, dict):
        raise ConfigError(["config: top level must be an object"])
    return parse_config(raw, path.parent, overrides)
