"""Scoring metrics for multiple-choice answers with confidences.

All functions take a sequence of item records (anything exposing
``item_id``, ``followed``, ``correct`` and ``confidence``) and are
invariant under record permutation. Records that did not follow the
answer format count against accuracy and IFR but carry no confidence, so
they are left out of the calibration and ranking metrics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import TYPE_CHECKING, Mapping, Sequence

import numpy as np

if TYPE_CHECKING:
    from promptopt.evaluator import ItemRecord

METRIC_NAMES = ("acc", "ece", "auroc", "pr_p", "pr_n")
# metrics where lower raw values are better; folded with 1 - v
LOWER_IS_BETTER = frozenset({"ece", "pr_n"})
DEFAULT_WEIGHTS = {name: 1 / len(METRIC_NAMES) for name in METRIC_NAMES}

ECE_FALLBACK = 1.0
AUROC_FALLBACK = 0.5


class MetricError(ValueError):
    pass


class DegenerateMetricError(MetricError):
    """Raised when a metric is undefined for the given records."""

    def __init__(self, metric: str, reason: str, fallback: float):
        super().__init__(f"{metric} is degenerate: {reason}")
        self.metric = metric
        self.fallback = fallback


@dataclass(frozen=True)
class MetricVector:
    acc: float
    ece: float
    auroc: float
    pr_p: float
    pr_n: float
    ifr: float
    n_scored: int
    n_total: int
    degenerate: tuple[str, ...] = ()

    def __post_init__(self):
        for name in (*METRIC_NAMES, "ifr"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise MetricError(f"{name}={v!r} outside [0, 1]")
        if self.n_scored > self.n_total:
            raise MetricError("n_scored exceeds n_total")

    def raw(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in METRIC_NAMES}

    def to_dict(self) -> dict:
        return {
            "acc": self.acc,
            "ece": self.ece,
            "auroc": self.auroc,
            "pr_p": self.pr_p,
            "pr_n": self.pr_n,
            "ifr": self.ifr,
            "n_scored": self.n_scored,
            "n_total": self.n_total,
            "degenerate": list(self.degenerate),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "MetricVector":
        return cls(
            acc=d["acc"],
            ece=d["ece"],
            auroc=d["auroc"],
            pr_p=d["pr_p"],
            pr_n=d["pr_n"],
            ifr=d["ifr"],
            n_scored=d["n_scored"],
            n_total=d["n_total"],
            degenerate=tuple(d.get("degenerate", ())),
        )


@dataclass(frozen=True)
class CompositeScore:
    value: float
    weights: dict[str, float]
    normalized: dict[str, float]

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "weights": dict(self.weights),
            "normalized": dict(self.normalized),
        }


@dataclass(frozen=True)
class CalibrationBin:
    lower: float
    upper: float
    count: int
    mean_confidence: float
    accuracy: float


@dataclass(frozen=True)
class CalibrationBinning:
    n_bins: int
    bins: list[CalibrationBin] = field(default_factory=list)

    @property
    def n_scored(self) -> int:
        return sum(b.count for b in self.bins)


def _scored(records: Sequence[ItemRecord]) -> list[ItemRecord]:
    return [r for r in records if r.followed]


def accuracy(records: Sequence[ItemRecord]) -> float:
    if not records:
        raise MetricError("accuracy of empty record list")
    return sum(1 for r in records if r.correct) / len(records)


def ifr(records: Sequence[ItemRecord]) -> float:
    """Instruction-following rate: followed / total."""
    if not records:
        raise MetricError("IFR of empty record list")
    return sum(1 for r in records if r.followed) / len(records)


def _bin_index(conf: np.ndarray, n_bins: int) -> np.ndarray:
    # bin i (1-based) holds ((i-1)/n, i/n]; zero joins bin 1
    edges = np.arange(n_bins + 1) / n_bins
    idx = np.searchsorted(edges, conf, side="left")
    return np.maximum(idx, 1)


def calibration_bins(records: Sequence[ItemRecord], n_bins: int = 10) -> CalibrationBinning:
    scored = _scored(records)
    if n_bins < 1:
        raise MetricError("n_bins must be >= 1")
    if not scored:
        return CalibrationBinning(n_bins=n_bins)
    conf = np.array([r.confidence for r in scored], dtype=float)
    hit = np.array([r.correct for r in scored], dtype=float)
    idx = _bin_index(conf, n_bins)
    bins = []
    for i in range(1, n_bins + 1):
        mask = idx == i
        count = int(mask.sum())
        if count:
            bins.append(
                CalibrationBin(
                    lower=(i - 1) / n_bins,
                    upper=i / n_bins,
                    count=count,
                    mean_confidence=float(conf[mask].mean()),
                    accuracy=float(hit[mask].mean()),
                )
            )
    return CalibrationBinning(n_bins=n_bins, bins=bins)


def ece(records: Sequence[ItemRecord], n_bins: int = 10) -> float:
    """Expected calibration error over equal-width bins.

    Per bin, |B|/N * |acc(B) - conf(B)| reduces to |hits(B) - sum_conf(B)| / N.
    The sum is carried out exactly on the float inputs and rounded once.
    """
    scored = _scored(records)
    if not scored:
        raise DegenerateMetricError("ece", "no followed records", ECE_FALLBACK)
    idx = _bin_index(np.array([r.confidence for r in scored], dtype=float), n_bins)
    gap_hits: dict[int, Fraction] = {}
    for r, i in zip(scored, idx.tolist()):
        gap_hits[i] = gap_hits.get(i, Fraction(0)) + (int(r.correct) - Fraction(r.confidence))
    total = sum((abs(g) for g in gap_hits.values()), Fraction(0))
    return float(total / len(scored))


def auroc(records: Sequence[ItemRecord]) -> float:
    """Mann-Whitney AUROC with correct answers as positives, confidence as score."""
    scored = _scored(records)
    n_pos = sum(1 for r in scored if r.correct)
    n_neg = len(scored) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateMetricError("auroc", "needs both correct and incorrect answers", AUROC_FALLBACK)
    conf = np.array([r.confidence for r in scored], dtype=float)
    pos = np.array([r.correct for r in scored], dtype=bool)
    order = np.argsort(conf, kind="stable")
    sorted_conf = conf[order]
    # midranks (1-based), doubled to stay integral
    ranks2 = np.empty(len(conf), dtype=np.int64)
    start = 0
    n = len(conf)
    while start < n:
        stop = start + 1
        while stop < n and sorted_conf[stop] == sorted_conf[start]:
            stop += 1
        ranks2[order[start:stop]] = start + stop + 1
        start = stop
    # 2U = sum of doubled positive ranks - n_pos * (n_pos + 1)
    u2 = int(ranks2[pos].sum()) - n_pos * (n_pos + 1)
    return (u2 / 2) / (n_pos * n_neg)


def pr_auc(records: Sequence[ItemRecord], positive_class: str = "positive") -> float:
    """Average precision for correct ("positive") or incorrect ("negative") answers.

    Negative-class ranking orders by ascending confidence, which is the
    same order as descending 1 - confidence without the rounding of the
    subtraction. Ties fall back to item id.
    """
    if positive_class not in ("positive", "negative"):
        raise MetricError(f"unknown class {positive_class!r}")
    scored = _scored(records)
    if not scored:
        raise DegenerateMetricError(f"pr_{positive_class[0]}", "no followed records", 0.0)
    want = positive_class == "positive"
    labels = [r.correct == want for r in scored]
    n_pos = sum(labels)
    if n_pos == 0:
        # fallback is the class prevalence, which is zero here
        raise DegenerateMetricError(f"pr_{positive_class[0]}", "class is empty", 0.0)
    sign = -1.0 if want else 1.0
    order = sorted(range(len(scored)), key=lambda i: (sign * scored[i].confidence, scored[i].item_id))
    ranked = np.array([labels[i] for i in order], dtype=np.int64)
    tp = np.cumsum(ranked)
    ranks = np.arange(1, len(ranked) + 1)
    hits = ranked.astype(bool)
    return math.fsum((tp[hits] / ranks[hits]).tolist()) / n_pos


def compute_metrics(records: Sequence[ItemRecord], n_bins: int = 10) -> MetricVector:
    """All metrics at once; degenerate entries take their fallback and are flagged."""
    if not records:
        raise MetricError("no records")
    values: dict[str, float] = {}
    degenerate = []
    calls = {
        "ece": lambda: ece(records, n_bins),
        "auroc": lambda: auroc(records),
        "pr_p": lambda: pr_auc(records, "positive"),
        "pr_n": lambda: pr_auc(records, "negative"),
    }
    for name, fn in calls.items():
        try:
            values[name] = fn()
        except DegenerateMetricError as exc:
            values[name] = exc.fallback
            degenerate.append(name)
    return MetricVector(
        acc=accuracy(records),
        ece=values["ece"],
        auroc=values["auroc"],
        pr_p=values["pr_p"],
        pr_n=values["pr_n"],
        ifr=ifr(records),
        n_scored=len(_scored(records)),
        n_total=len(records),
        degenerate=tuple(degenerate),
    )


def normalize_and_compose(metrics: MetricVector, weights: Mapping[str, float] | None = None) -> CompositeScore:
    """Fold lower-is-better metrics with 1 - v and take the weighted sum.

    IFR is reported alongside but does not enter the composite.
    """
    w = dict(DEFAULT_WEIGHTS if weights is None else weights)
    unknown = set(w) - set(METRIC_NAMES)
    if unknown:
        raise MetricError(f"unknown metrics in weights: {sorted(unknown)}")
    if any(v < 0 for v in w.values()):
        raise MetricError("weights must be non-negative")
    if abs(sum(w.values()) - 1.0) > 1e-9:
        raise MetricError(f"weights sum to {sum(w.values())!r}, expected 1")
    w = {name: w.get(name, 0.0) for name in METRIC_NAMES}
    raw = metrics.raw()
    normalized = {name: (1.0 - v if name in LOWER_IS_BETTER else v) for name, v in raw.items()}
    value = sum(w[name] * normalized[name] for name in METRIC_NAMES)
    # guard against 1.0000000000000002 from rounding
    value = min(max(value, 0.0), 1.0)
    return CompositeScore(value=value, weights=w, normalized=normalized)
