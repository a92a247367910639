"""Statistical core: safe Cohen's kappa, gold-referenced classification metrics,
Pearson correlation with t-test p-values, pairwise agreement matrices, and
average-linkage clustering of annotators.

All functions are pure. Degenerate inputs (single observed label, empty pair
sets, zero variance) yield results flagged as undefined rather than raising.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from scipy import stats as _scipy_stats

from .errors import StatsError


@dataclass(frozen=True)
class AgreementResult:
    """Chance-corrected agreement between two label sequences."""

    kappa: float | None
    n: int
    percent_agreement: float | None
    degenerate: bool = False
    reason: str | None = None


def safe_kappa(pairs: Sequence[tuple[str, str]]) -> AgreementResult:
    """Cohen's unweighted kappa; undefined (not a number) on degenerate input.

    Degenerate means: no pairs, a single label observed across both raters, or
    expected agreement of 1, in which cases kappa carries no information.
    """
    n = len(pairs)
    if n == 0:
        return AgreementResult(None, 0, None, degenerate=True, reason="no paired observations")
    left = Counter(a for a, _ in pairs)
    right = Counter(b for _, b in pairs)
    observed = sum(1 for a, b in pairs if a == b) / n
    labels = set(left) | set(right)
    if len(labels) <= 1:
        return AgreementResult(None, n, observed, degenerate=True, reason="single label observed")
    expected = sum((left[l] / n) * (right[l] / n) for l in labels)
    if math.isclose(expected, 1.0):
        return AgreementResult(None, n, observed, degenerate=True, reason="expected agreement is 1")
    kappa = (observed - expected) / (1.0 - expected)
    return AgreementResult(kappa, n, observed)


@dataclass(frozen=True)
class EvalRecord:
    """Model-vs-gold execution metrics for one skill (or the pooled set)."""

    skill_id: str
    n: int
    accuracy: float | None
    kappa: float | None
    macro_f1: float | None
    weighted_f1: float | None
    random_baseline: float | None


def _per_class_f1(pairs: Sequence[tuple[str, str]], classes: Sequence[str]) -> dict[str, float]:
    """F1 per class from (predicted, gold) pairs; classes absent from pairs get 0."""
    tp: Counter = Counter()
    fp: Counter = Counter()
    fn: Counter = Counter()
    for pred, gold in pairs:
        if pred == gold:
            tp[gold] += 1
        else:
            fp[pred] += 1
            fn[gold] += 1
    f1: dict[str, float] = {}
    for c in classes:
        denom = 2 * tp[c] + fp[c] + fn[c]
        f1[c] = (2 * tp[c] / denom) if denom else 0.0
    return f1


def eval_pairs(
    pairs: Sequence[tuple[str, str]],
    gold_classes: Sequence[str],
    gold_class_counts: Mapping[str, int] | None = None,
    *,
    skill_id: str = "",
    random_baseline: float | None = None,
) -> EvalRecord:
    """Metrics over (predicted, gold) pairs.

    gold_classes fixes the class universe for macro-F1 (classes attested in the
    gold, never the predictions). Weighted-F1 weights by gold-side support within
    the evaluated pairs.
    """
    n = len(pairs)
    if n == 0:
        return EvalRecord(skill_id, 0, None, None, None, None, random_baseline)
    accuracy = sum(1 for p, g in pairs if p == g) / n
    f1 = _per_class_f1(pairs, gold_classes)
    macro_f1 = sum(f1.values()) / len(gold_classes) if gold_classes else None
    support = Counter(g for _, g in pairs)
    total_support = sum(support.values())
    weighted_f1 = sum(f1.get(c, 0.0) * cnt for c, cnt in support.items()) / total_support
    kappa = safe_kappa(pairs).kappa
    return EvalRecord(skill_id, n, accuracy, kappa, macro_f1, weighted_f1, random_baseline)


def pooled_pairs(per_skill_pairs: Mapping[str, Sequence[tuple[str, str]]]) -> list[tuple[str, str]]:
    """Concatenate per-skill pairs under skill-qualified label namespaces."""
    pooled: list[tuple[str, str]] = []
    for skill_id in sorted(per_skill_pairs):
        for pred, gold in per_skill_pairs[skill_id]:
            pooled.append((f"{skill_id}:{pred}", f"{skill_id}:{gold}"))
    return pooled


def evaluable_pairs(predictions, gold, skill_id: str) -> list[tuple[str, str]]:
    """(predicted, gold) label pairs at gold positions with an in-schema prediction.

    predictions: label cells (need .instance_id/.skill_id/.outcome);
    gold: gold cells (need .instance_id/.skill_id/.label).
    """
    pred_map = {
        c.instance_id: c.outcome.value
        for c in predictions
        if c.skill_id == skill_id and c.outcome.is_in_schema
    }
    pairs: list[tuple[str, str]] = []
    for g in sorted((g for g in gold if g.skill_id == skill_id), key=lambda g: g.instance_id):
        pred = pred_map.get(g.instance_id)
        if pred is not None:
            pairs.append((pred, g.label))
    return pairs


def gold_label_universe(gold, skill_id: str) -> list[str]:
    """Distinct labels attested in the skill's gold cells, in sorted order."""
    return sorted({g.label for g in gold if g.skill_id == skill_id})


def eval_vs_gold(predictions, gold, skill_id: str) -> EvalRecord:
    """Execution metrics for one skill against its gold standard.

    Only positions where gold exists and the prediction is in-schema enter n.
    The random baseline is one over the number of labels attested in the gold.
    """
    universe = gold_label_universe(gold, skill_id)
    baseline = 1.0 / len(universe) if universe else None
    pairs = evaluable_pairs(predictions, gold, skill_id)
    return eval_pairs(pairs, universe, skill_id=skill_id, random_baseline=baseline)


def pooled_eval(predictions, gold, retained_skills: Sequence[str]) -> EvalRecord:
    """Pooled metrics over the retained skills under skill-qualified namespaces."""
    per_skill = {s: evaluable_pairs(predictions, gold, s) for s in retained_skills}
    pooled = pooled_pairs(per_skill)
    universe = [
        f"{s}:{label}" for s in sorted(retained_skills) for label in gold_label_universe(gold, s)
    ]
    return eval_pairs(pooled, universe, skill_id="OVERALL", random_baseline=None)


@dataclass(frozen=True)
class CorrelationResult:
    """Pearson correlation with a two-sided t-test p-value (N-2 df)."""

    level: str
    n: int
    r: float | None
    p: float | None
    degenerate: bool = False
    reason: str | None = None


def pearson_r_p(
    x: Sequence[float | None],
    y: Sequence[float | None],
    *,
    level: str = "",
) -> CorrelationResult:
    """Sample Pearson r with p from t = r*sqrt((N-2)/(1-r^2)), N-2 df, two-sided.

    Pairs with an undefined entry on either side are dropped before N is fixed.
    """
    if len(x) != len(y):
        raise StatsError(f"length mismatch: {len(x)} vs {len(y)}")
    pairs = [
        (float(a), float(b))
        for a, b in zip(x, y)
        if a is not None and b is not None and not (math.isnan(float(a)) or math.isnan(float(b)))
    ]
    n = len(pairs)
    if n < 3:
        return CorrelationResult(level, n, None, None, degenerate=True, reason="fewer than 3 usable points")
    xs = [a for a, _ in pairs]
    ys = [b for _, b in pairs]
    mx = sum(xs) / n
    my = sum(ys) / n
    sxx = sum((a - mx) ** 2 for a in xs)
    syy = sum((b - my) ** 2 for b in ys)
    if sxx == 0.0 or syy == 0.0:
        return CorrelationResult(level, n, None, None, degenerate=True, reason="zero variance")
    sxy = sum((a - mx) * (b - my) for a, b in pairs)
    r = sxy / math.sqrt(sxx * syy)
    r = max(-1.0, min(1.0, r))
    if abs(r) == 1.0:
        p = 0.0
    else:
        t = r * math.sqrt((n - 2) / (1.0 - r * r))
        p = 2.0 * float(_scipy_stats.t.sf(abs(t), n - 2))
    return CorrelationResult(level, n, r, p)


@dataclass(frozen=True)
class AgreementMatrix:
    """Symmetric annotator-by-annotator kappa matrix (None where degenerate)."""

    annotators: tuple[str, ...]
    values: tuple[tuple[float | None, ...], ...]

    def get(self, a: str, b: str) -> float | None:
        i = self.annotators.index(a)
        j = self.annotators.index(b)
        return self.values[i][j]


def pairwise_matrix(
    label_maps: Mapping[str, Mapping[tuple[str, str], str]],
    annotators: Sequence[str] | None = None,
) -> AgreementMatrix:
    """Kappa between every annotator pair over positions both labeled in-schema.

    label_maps: annotator id -> {(instance_id, skill_id): label}. Labels are
    skill-qualified before comparison so identical label strings from different
    skills never collide.
    """
    names = tuple(annotators) if annotators is not None else tuple(label_maps)
    if len(names) < 2:
        raise StatsError("pairwise matrix needs at least 2 annotators")
    rows: list[tuple[float | None, ...]] = []
    for a in names:
        row: list[float | None] = []
        for b in names:
            if a == b:
                row.append(1.0)
                continue
            ma, mb = label_maps[a], label_maps[b]
            pairs = [
                (f"{pos[1]}:{ma[pos]}", f"{pos[1]}:{mb[pos]}")
                for pos in sorted(set(ma) & set(mb))
            ]
            row.append(safe_kappa(pairs).kappa)
        rows.append(tuple(row))
    return AgreementMatrix(names, tuple(rows))


@dataclass(frozen=True)
class Merge:
    cluster_a: tuple[str, ...]
    cluster_b: tuple[str, ...]
    distance: float


@dataclass(frozen=True)
class Dendrogram:
    leaves: tuple[str, ...]
    merges: tuple[Merge, ...] = field(default=())


def average_linkage(matrix: AgreementMatrix) -> Dendrogram:
    """Agglomerative clustering under unweighted average linkage on d = 1 - kappa.

    Ties break lexicographically on the sorted member tuples, so merge order is
    deterministic. Raises if any pairwise kappa is undefined.
    """
    names = matrix.annotators
    missing = [
        (names[i], names[j])
        for i in range(len(names))
        for j in range(i + 1, len(names))
        if matrix.values[i][j] is None
    ]
    if missing:
        raise StatsError(f"undefined agreement for pairs: {missing}")

    dist: dict[tuple[str, str], float] = {}
    for i, a in enumerate(names):
        for j, b in enumerate(names):
            if i < j:
                dist[(a, b)] = 1.0 - float(matrix.values[i][j])  # type: ignore[arg-type]

    def leaf_dist(a: str, b: str) -> float:
        return dist[(a, b)] if (a, b) in dist else dist[(b, a)]

    clusters: list[tuple[str, ...]] = sorted((name,) for name in names)
    merges: list[Merge] = []
    last = -math.inf
    while len(clusters) > 1:
        best: tuple[float, tuple[str, ...], tuple[str, ...]] | None = None
        for i in range(len(clusters)):
            for j in range(i + 1, len(clusters)):
                ca, cb = sorted((clusters[i], clusters[j]))
                d = sum(leaf_dist(x, y) for x in ca for y in cb) / (len(ca) * len(cb))
                key = (d, ca, cb)
                if best is None or key < best:
                    best = key
        assert best is not None
        d, ca, cb = best
        # Average linkage is reducible, so merge heights never invert.
        assert d >= last - 1e-12, f"merge distance inversion: {d} after {last}"
        last = d
        merges.append(Merge(ca, cb, d))
        clusters = sorted([c for c in clusters if c != ca and c != cb] + [tuple(sorted(ca + cb))])
    return Dendrogram(leaves=names, merges=tuple(merges))


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Spearman rank correlation (used for noise-recovery checks)."""
    rho = float(_scipy_stats.spearmanr(list(x), list(y)).statistic)
    return rho


def mean(values: Iterable[float]) -> float:
    vals = list(values)
    if not vals:
        raise StatsError("mean of empty sequence")
    return sum(vals) / len(vals)
