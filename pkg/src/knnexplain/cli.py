"""Command-line entry point.

    knnexplain train          --config CFG [--seed N] [--out DIR]
    knnexplain agreement      --config CFG [--seed N] [--out DIR]
    knnexplain counterfactual --config CFG [--seed N] [--workers N] [--out DIR]
                              [--k 1,5,10] [--method knn|influence|both]
    knnexplain report         --config CFG [--out DIR]

Exit status: 0 on success, 1 for invalid configuration or missing inputs,
2 for failures while running.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import report
from .artifacts import load_model, save_model
from .config import ExperimentConfig, load_config
from .counterfactual import (CounterfactualExperiment, aggregate_all, derive_seed, read_records,
                             write_records)
from .data import stratified_sample, uniform_subsample
from .errors import ConfigError, KnnExplainError, MissingArtifactError, TrialError
from .influence import write_scores_csv
from .nn import accuracy, build_model, train
from .representation import agreement_sweep, extract_representations, write_representations

log = logging.getLogger("knnexplain")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


def _k_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--k expects a comma-separated integer list, got {text!r}")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="experiment config (JSON)")
    common.add_argument("--seed", type=int, help="master seed (overrides master_seed)")
    common.add_argument("--workers", type=int, help="parallel retraining workers")
    common.add_argument("--out", help="output directory (overrides output_dir)")
    common.add_argument("--k", type=_k_list, help="comma-separated k values, e.g. 1,5,10")
    common.add_argument("--method", choices=("knn", "influence", "both"))
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="knnexplain", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in (("train", "train the base model"),
                           ("agreement", "per-layer 1-NN label agreement"),
                           ("counterfactual", "leave-k-out retraining trials"),
                           ("report", "rebuild summary tables from records.csv")):
        sub.add_parser(name, parents=[common], help=helptext)
    return p


def _overrides(args) -> dict:
    out = {"master_seed": args.seed, "workers": args.workers, "ks": args.k}
    if args.out is not None:
        out["output_dir"] = str(Path(args.out).resolve())
    if args.method is not None:
        out["methods"] = ["knn", "influence"] if args.method == "both" else [args.method]
    return out


def _write(path: Path, text: str) -> None:
    path.write_text(text)
    log.info("wrote %s", path)


def cmd_train(cfg: ExperimentConfig) -> str:
    train_set, test_set = cfg.load_datasets()
    model = train(build_model(cfg.arch, cfg.train.seed), train_set, cfg.train)
    digest = save_model(model, cfg.output_dir)
    print(f"trained {len(train_set)} samples; train acc {accuracy(model, train_set):.4f}, "
          f"test acc {accuracy(model, test_set):.4f}")
    print(f"model sha256 {digest}")
    return digest


def _load_trained(cfg: ExperimentConfig):
    model = load_model(cfg.output_dir)
    if model.arch != cfg.arch:
        raise ConfigError(["arch: differs from the architecture of the saved model; retrain"])
    return model


def cmd_agreement(cfg: ExperimentConfig) -> list[tuple[str, float]]:
    model = _load_trained(cfg)
    train_set, test_set = cfg.load_datasets()
    if cfg.agreement_samples is not None and cfg.agreement_samples < len(test_set):
        test_set = stratified_sample(test_set, cfg.agreement_samples, derive_seed(cfg.master_seed, "agreement"))
    rows = agreement_sweep(model, train_set, test_set)
    out = cfg.output_dir
    _write(out / "agreement.csv", report.agreement_csv(rows))
    _write(out / "agreement.md", report.agreement_markdown(rows))
    if cfg.cache_representations:
        (out / "reps").mkdir(exist_ok=True)
        for tap in model.arch.taps:
            write_representations(extract_representations(model, train_set, tap), out / "reps" / f"{tap}.csv")
    print(report.agreement_markdown(rows), end="")
    return rows


def write_tables(records, cfg: ExperimentConfig) -> None:
    out = cfg.output_dir
    rows = aggregate_all(records, cfg.dataset_name)
    for method in sorted({r.method for r in rows}):
        sel = [r for r in rows if r.method == method]
        _write(out / f"aggregate_{method}.csv", report.aggregate_csv(sel))
        _write(out / f"aggregate_{method}.md", report.aggregate_markdown(sel))
    _write(out / "flips.csv", report.flips_csv(rows, cfg.dataset_name))
    _write(out / "flips.md", report.flips_markdown(rows, cfg.dataset_name))


def cmd_counterfactual(cfg: ExperimentConfig):
    model = _load_trained(cfg)
    train_set, test_set = cfg.load_datasets()
    n_test = min(cfg.num_test_samples, len(test_set))
    tests = uniform_subsample(test_set, n_test, derive_seed(cfg.master_seed, "test-samples"))
    exp = CounterfactualExperiment(train_set, cfg.arch, cfg.train, pool_size=cfg.pool_size,
                                   damping=cfg.damping, master_seed=cfg.master_seed,
                                   influence_cfg=cfg.influence_train_config(), base_model=model,
                                   pool_sampling=cfg.pool_sampling)
    out = cfg.output_dir
    try:
        records = exp.run(tests, cfg.methods, cfg.ks, workers=cfg.workers)
    except TrialError as e:
        write_records(getattr(e, "partial", []), out / "records.csv")
        raise
    write_records(records, out / "records.csv")
    if exp.influence_scores:
        write_scores_csv([exp.influence_scores[t] for t in sorted(exp.influence_scores)],
                         out / "influence_scores.csv")
    write_tables(records, cfg)
    print(report.flips_markdown(aggregate_all(records, cfg.dataset_name), cfg.dataset_name), end="")
    return records


def cmd_report(cfg: ExperimentConfig):
    path = cfg.output_dir / "records.csv"
    if not path.is_file():
        raise ConfigError([f"records: {path} not found; run the counterfactual command first"])
    records = read_records(path)
    write_tables(records, cfg)
    for method in sorted({r.method for r in records}):
        print((cfg.output_dir / f"aggregate_{method}.md").read_text())
    return records


COMMANDS = {"train": cmd_train, "agreement": cmd_agreement,
            "counterfactual": cmd_counterfactual, "report": cmd_report}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, _overrides(args))
        cfg.output_dir.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](cfg)
    except (ConfigError, MissingArtifactError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except (KnnExplainError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
