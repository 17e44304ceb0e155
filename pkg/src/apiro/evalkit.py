"""Retrieval metrics, annotator agreement, and the evaluation protocols.

Metrics are accumulated in plain Python (not vectorized) so results are
bit-identical to a naive recomputation. A query's outcome is its gold rank
(1-based) or None for a miss; every metric takes such a rank list.
"""

from __future__ import annotations

import json
import math
import statistics
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Sequence


class EvalError(ValueError):
    pass


@dataclass
class EvaluationSet:
    queries: list[tuple[list[str], int, str]]  # tokens, gold class, technique tag
    k: int = 3

    def __post_init__(self) -> None:
        if not self.queries:
            raise EvalError("evaluation set must not be empty")


# --- metric operations --------------------------------------------------------


def _check(ranks: Sequence, k: int) -> None:
    if k < 1:
        raise EvalError("k must be >= 1")
    if len(ranks) == 0:
        raise EvalError("empty query set")


def topk_accuracy(ranks: Sequence, k: int) -> float:
    """Percentage of queries whose gold rank is within the top k."""
    _check(ranks, k)
    hits = sum(1 for r in ranks if r is not None and r <= k)
    return 100.0 * hits / len(ranks)


def mrr_at_k(ranks: Sequence, k: int) -> float:
    """Mean reciprocal gold rank; ranks beyond k contribute 0."""
    _check(ranks, k)
    total = sum(1.0 / r for r in ranks if r is not None and r <= k)
    return total / len(ranks)


def mean_precision_at_k(ranks: Sequence, k: int) -> float:
    """Mean single-gold precision@k (per query: 1/k on a hit, 0 on a miss)."""
    _check(ranks, k)
    total = sum(1.0 / k for r in ranks if r is not None and r <= k)
    return total / len(ranks)


def performance_gain(perf_new: float, perf_base: float) -> float:
    """Relative improvement of perf_new over perf_base, in percent."""
    if perf_base == 0:
        raise EvalError("zero base performance")
    return (perf_new - perf_base) / perf_base * 100.0


def cohen_kappa(labels_a: Sequence[int], labels_b: Sequence[int]) -> float:
    """Chance-corrected agreement between two binary label vectors."""
    if len(labels_a) != len(labels_b):
        raise EvalError("label vectors differ in length")
    n = len(labels_a)
    if n == 0:
        raise EvalError("empty label vectors")
    po = sum(1 for a, b in zip(labels_a, labels_b) if a == b) / n
    values = sorted(set(labels_a) | set(labels_b))
    pe = 0.0
    for v in values:
        pa = sum(1 for a in labels_a if a == v) / n
        pb = sum(1 for b in labels_b if b == v) / n
        pe += pa * pb
    if pe == 1.0:
        if po == 1.0:
            return 1.0
        raise EvalError("degenerate marginals: expected agreement is 1 with po < 1")
    return (po - pe) / (1.0 - pe)


def gold_rank(ranked_class_ids: Sequence[int], gold: int) -> "int | None":
    """1-based position of the gold class in a ranking, or None if absent."""
    for i, class_id in enumerate(ranked_class_ids, start=1):
        if class_id == gold:
            return i
    return None


def percentile(values: Sequence[float], q: float) -> float:
    """Nearest-rank percentile, q in [0, 100]."""
    if not values:
        raise EvalError("no samples")
    ordered = sorted(values)
    idx = max(0, math.ceil(q / 100.0 * len(ordered)) - 1)
    return ordered[idx]


# --- reports -------------------------------------------------------------------


@dataclass
class MetricsReport:
    rows: list[tuple[str, "int | None", float, float]] = field(default_factory=list)
    per_category: dict[str, "MetricsReport"] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def add(self, metric: str, k: "int | None", value: float, stddev: float = 0.0) -> None:
        self.rows.append((metric, k, value, stddev))

    def value(self, metric: str, k: "int | None" = None) -> float:
        for m, kk, value, _ in self.rows:
            if m == metric and kk == k:
                return value
        raise KeyError((metric, k))


def write_report(report: MetricsReport, path: Path) -> None:
    """Tabular text plus a machine-readable .jsonl sibling."""
    path = Path(path)
    lines = [f"{'metric':<24}{'k':>4}  {'value':>12}  {'stddev':>10}"]
    for metric, k, value, stddev in report.rows:
        lines.append(f"{metric:<24}{'' if k is None else k:>4}  {value:>12.4f}  {stddev:>10.4f}")
    for category, sub in sorted(report.per_category.items()):
        lines.append(f"-- category {category}")
        for metric, k, value, stddev in sub.rows:
            lines.append(
                f"{metric:<24}{'' if k is None else k:>4}  {value:>12.4f}  {stddev:>10.4f}"
            )
    for note in report.notes:
        lines.append(f"# {note}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    jsonl = path.with_suffix(path.suffix + ".jsonl")
    with open(jsonl, "w", encoding="utf-8") as fh:
        for metric, k, value, stddev in report.rows:
            fh.write(
                json.dumps(
                    {"metric": metric, "k": k, "value": value, "stddev": stddev},
                    sort_keys=True,
                )
                + "\n"
            )
        for category, sub in sorted(report.per_category.items()):
            for metric, k, value, stddev in sub.rows:
                fh.write(
                    json.dumps(
                        {
                            "category": category,
                            "metric": metric,
                            "k": k,
                            "value": value,
                            "stddev": stddev,
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )


# --- evaluation protocols -------------------------------------------------------

RankFn = Callable[[list[str], int], list[int]]


def evaluate_ranker(
    rank_fn: RankFn,
    queries: Iterable[tuple[list[str], int]],
    ks: Sequence[int] = (1, 2, 3),
) -> dict:
    """Gold ranks plus the three retrieval metrics at each cutoff."""
    kmax = max(ks)
    ranks = []
    for tokens, gold in queries:
        ranks.append(gold_rank(rank_fn(tokens, kmax), gold))
    out = {"ranks": ranks}
    for k in ks:
        out[f"top{k}_acc"] = topk_accuracy(ranks, k)
        out[f"mp@{k}"] = mean_precision_at_k(ranks, k)
    out[f"mrr@{kmax}"] = mrr_at_k(ranks, kmax)
    return out


def run_cross_validation(
    originals: list[tuple[list[str], int]],
    augmented: list[tuple[list[str], int]],
    model_factory: Callable[[list[tuple[list[str], int]], int], RankFn],
    baseline_factory: "Callable[[int], RankFn] | None" = None,
    folds: int = 10,
    repeats: int = 10,
    split: float = 0.8,
    seed: int = 0,
    ks: Sequence[int] = (1, 2, 3),
) -> MetricsReport:
    """Repeated shuffled 80/20 splits of the augmented examples.

    Per run, the held-out augmented rows are the test queries (gold = base
    class); the ranker trains on the originals plus the remaining augmented
    rows. The baseline, when given, is evaluated on the identical queries.
    """
    import numpy as np

    if not augmented:
        raise EvalError("no augmented examples to split")
    per_run: dict[str, list[float]] = {}
    for repeat in range(repeats):
        for fold in range(folds):
            rng = np.random.default_rng((seed, repeat, fold))
            order = rng.permutation(len(augmented))
            n_test = max(1, int(round(len(augmented) * (1.0 - split))))
            if n_test >= len(augmented):
                raise EvalError("split leaves no training data")
            test = [augmented[i] for i in order[:n_test]]
            train = [augmented[i] for i in order[n_test:]]
            run_seed = int(rng.integers(0, 2**31 - 1))
            rank_fn = model_factory(originals + train, run_seed)
            result = evaluate_ranker(rank_fn, test, ks)
            for key, value in result.items():
                if key == "ranks":
                    continue
                per_run.setdefault(f"apiro_{key}", []).append(value)
            if baseline_factory is not None:
                base_fn = baseline_factory(run_seed)
                base_result = evaluate_ranker(base_fn, test, ks)
                for key, value in base_result.items():
                    if key == "ranks":
                        continue
                    per_run.setdefault(f"baseline_{key}", []).append(value)

    report = MetricsReport()
    for key in sorted(per_run):
        values = per_run[key]
        mean = sum(values) / len(values)
        std = statistics.pstdev(values) if len(values) > 1 else 0.0
        report.add(key, None, mean, std)
    return report


DEFAULT_CATEGORIES = ("q1", "q2", "q3", "q4", "q5")


def load_category_map(path: "Path | None" = None) -> dict[str, str]:
    """technique -> query category (q1..q5); bundled map by default."""
    if path is None:
        path = Path(str(resources.files("apiro").joinpath("data", "category_map.txt")))
    mapping = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        technique, category = line.split("\t")
        category = category.strip().lower()
        if category not in DEFAULT_CATEGORIES:
            raise EvalError(f"unknown query category {category!r} for {technique}")
        mapping[technique.strip()] = category
    return mapping


def run_category_eval(
    groups: dict[str, list[tuple[list[str], int]]],
    originals: list[tuple[list[str], int]],
    model_factory: Callable[[list[tuple[list[str], int]], int], RankFn],
    category_map: "dict[str, str] | None" = None,
    ks: Sequence[int] = (1, 2, 3),
    seed: int = 0,
) -> MetricsReport:
    """Leave-one-augmentation-group-out evaluation, aggregated per category.

    Each technique group serves once as the held-out test set while all other
    groups plus the originals train. A category's score is the mean Top-K
    accuracy of its groups.
    """
    if category_map is None:
        category_map = load_category_map()
    unmapped = sorted(t for t in groups if t not in category_map)
    if unmapped:
        raise EvalError(f"selected techniques without a category mapping: {unmapped}")
    empty = sorted(t for t, rows in groups.items() if not rows)
    if empty:
        raise EvalError(f"empty augmentation groups: {empty}")

    per_group: dict[str, dict] = {}
    technique_order = sorted(groups)
    for i, held_out in enumerate(technique_order):
        train = list(originals)
        for other in technique_order:
            if other != held_out:
                train.extend(groups[other])
        rank_fn = model_factory(train, seed + i)
        per_group[held_out] = evaluate_ranker(rank_fn, groups[held_out], ks)

    report = MetricsReport()
    by_category: dict[str, list[str]] = {}
    for technique in technique_order:
        by_category.setdefault(category_map[technique], []).append(technique)
    mapped_counts: dict[str, int] = {}
    for technique, category in category_map.items():
        mapped_counts[category] = mapped_counts.get(category, 0) + 1
    for category in DEFAULT_CATEGORIES:
        members = by_category.get(category, [])
        if not members:
            report.notes.append(f"{category}: no groups available, category skipped")
            continue
        sub = MetricsReport()
        for k in ks:
            scores = [per_group[t][f"top{k}_acc"] for t in members]
            sub.add(f"top{k}_acc", k, sum(scores) / len(scores))
        sub.notes.append(f"groups: {', '.join(members)}")
        if len(members) < mapped_counts.get(category, 0):
            note = (
                f"{category}: computed over {len(members)} of "
                f"{mapped_counts[category]} mapped groups (reduced coverage)"
            )
            sub.notes.append(note)
            report.notes.append(note)
        report.per_category[category] = sub
    report.add("groups_evaluated", None, float(len(technique_order)))
    return report


ABLATION_FACTORS = ("nothing", "clustering", "immutable-words", "subword-embedding")


def run_ablation(
    drop: str,
    build_and_eval: Callable[["str | None"], dict],
    known_techniques: Iterable[str] = (),
) -> MetricsReport:
    """Retrain with one factor removed and report the paired performance gain.

    ``drop`` is one of ABLATION_FACTORS or "dat:<technique_id>";
    ``build_and_eval`` maps a factor (or None for the full system) to a
    metric dict. Positive gains mean the full system wins.
    """
    if drop.startswith("dat:"):
        technique = drop.split(":", 1)[1]
        known = set(known_techniques)
        if known and technique not in known:
            raise EvalError(f"unknown technique to drop: {technique!r}")
    elif drop not in ABLATION_FACTORS:
        raise EvalError(f"unknown ablation factor {drop!r}")

    full = build_and_eval(None)
    ablated = build_and_eval(None if drop == "nothing" else drop)
    report = MetricsReport()
    for key in sorted(full):
        if key == "ranks":
            continue
        report.add(f"full_{key}", None, full[key])
        report.add(f"ablated_{key}", None, ablated[key])
        if ablated[key] != 0:
            report.add(f"gain_{key}", None, performance_gain(full[key], ablated[key]))
    report.notes.append(f"dropped: {drop}")
    return report
