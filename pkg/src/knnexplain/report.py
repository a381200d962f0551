"""CSV and Markdown renderings of agreement sweeps and counterfactual summaries.

All numbers are printed with 6 significant digits, identically in both formats.
A missing positive/negative average renders as ``NA``.
"""

from __future__ import annotations

from typing import Sequence

from .counterfactual import AggregateRow, CounterfactualRecord

NA = "NA"
METHOD_LABELS = {"knn": "k-NN", "influence": "IF"}


def fmt(x: float | None) -> str:
    if x is None:
        return NA
    s = f"{x:.6g}"
    return "0" if s == "-0" else s


def _csv(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    return "\n".join(",".join(r) for r in [list(header), *rows]) + "\n"


def _markdown(header: Sequence[str], rows: Sequence[Sequence[str]], align: Sequence[str] | None = None) -> str:
    align = align or ["---"] * len(header)
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join(align) + "|"]
    lines += ["| " + " | ".join(r) + " |" for r in rows]
    return "\n".join(lines) + "\n"


def _pm(mean, std) -> str:
    return NA if mean is None else f"{fmt(mean)} ± {fmt(std)}"


# ---------------------------------------------------------------- agreement

AGREEMENT_HEADER = ("layer", "fraction")


def agreement_csv(rows: Sequence[tuple[str, float]]) -> str:
    return _csv(AGREEMENT_HEADER, [(tap, fmt(f)) for tap, f in rows])


def agreement_markdown(rows: Sequence[tuple[str, float]]) -> str:
    return _markdown(("Layer", "Fraction"), [(tap, fmt(f)) for tap, f in rows], [":---", "---:"])


# ---------------------------------------------------------------- loss change

AGGREGATE_HEADER = ("dataset", "method", "k", "n", "avg_lc", "std_lc", "avg_pos_lc", "std_pos_lc",
                    "avg_neg_lc", "std_neg_lc", "max_lc", "min_lc", "pos_lc_pct", "flip_pct")


def aggregate_csv(rows: Sequence[AggregateRow]) -> str:
    return _csv(AGGREGATE_HEADER, [
        (r.dataset, r.method, str(r.k), str(r.count), fmt(r.avg_lc), fmt(r.std_lc),
         fmt(r.avg_pos_lc), fmt(r.std_pos_lc), fmt(r.avg_neg_lc), fmt(r.std_neg_lc),
         fmt(r.max_lc), fmt(r.min_lc), fmt(r.pos_lc_pct), fmt(r.flip_pct))
        for r in rows
    ])


def aggregate_markdown(rows: Sequence[AggregateRow]) -> str:
    """Loss-change table: Dataset, k, Avg/+ve/-ve LC (± std), Max, Min, +ve LC %."""
    header = ("Dataset", "k", "Avg. LC", "Avg. +ve LC", "Avg. -ve LC", "Max. LC", "Min. LC", "+ve LC %")
    body = [
        (r.dataset, str(r.k), _pm(r.avg_lc, r.std_lc), _pm(r.avg_pos_lc, r.std_pos_lc),
         _pm(r.avg_neg_lc, r.std_neg_lc), fmt(r.max_lc), fmt(r.min_lc), fmt(r.pos_lc_pct))
        for r in rows
    ]
    return _markdown(header, body, [":---", "---:"] + [":---:"] * 6)


# ---------------------------------------------------------------- label flips


def flip_table(rows: Sequence[AggregateRow], dataset: str = "") -> tuple[list[str], list[list[str]]]:
    """k rows by method columns, each cell the flip percentage (NA when absent)."""
    methods = [m for m in ("knn", "influence") if any(r.method == m for r in rows)]
    methods += sorted({r.method for r in rows} - set(methods))
    ks = sorted({r.k for r in rows})
    cell = {(r.k, r.method): r.flip_pct for r in rows}
    prefix = f"{dataset} " if dataset else ""
    header = ["k"] + [prefix + METHOD_LABELS.get(m, m) for m in methods]
    body = [[str(k)] + [fmt(cell.get((k, m))) for m in methods] for k in ks]
    return header, body


def flips_csv(rows: Sequence[AggregateRow], dataset: str = "") -> str:
    header, body = flip_table(rows, dataset)
    return _csv(header, body)


def flips_markdown(rows: Sequence[AggregateRow], dataset: str = "") -> str:
    header, body = flip_table(rows, dataset)
    return _markdown(header, body, [":---"] + [":---:"] * (len(header) - 1))


def flip_pct(records: Sequence[CounterfactualRecord]) -> float:
    return 100.0 * sum(r.flipped for r in records) / len(records)
