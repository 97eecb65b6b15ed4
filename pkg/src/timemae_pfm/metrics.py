"""Classification metrics and confidence intervals over repeated runs."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

METRIC_NAMES = ("auroc", "accuracy", "sensitivity", "specificity", "f1", "precision", "auprc")
REPORT_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


def _check(scores, labels):
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.size == 0:
        raise ValueError("no samples to evaluate")
    if s.shape != y.shape:
        raise ValueError(f"{s.size} scores but {y.size} labels")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    return s, y.astype(int)


def confusion(scores, labels, threshold: float = 0.5) -> ConfusionCounts:
    """Tally predictions ``score >= threshold`` against labels; class 1 is positive."""
    s, y = _check(scores, labels)
    pred = s >= threshold
    pos = y == 1
    return ConfusionCounts(int((pred & pos).sum()), int((~pred & ~pos).sum()),
                           int((pred & ~pos).sum()), int((~pred & pos).sum()))


def _ratio(num, den, name, warn):
    if den == 0:
        warn.append(f"{name}: zero denominator, reported as 0")
        return 0.0
    return num / den


def basic_metrics(c: ConfusionCounts, warn: list | None = None) -> dict[str, float]:
    if c.total <= 0:
        raise ValueError("empty confusion counts")
    warn = [] if warn is None else warn
    acc = (c.tp + c.tn) / c.total
    rec = _ratio(c.tp, c.tp + c.fn, "sensitivity", warn)
    prec = _ratio(c.tp, c.tp + c.fp, "precision", warn)
    tnr = _ratio(c.tn, c.tn + c.fp, "specificity", warn)
    f1 = _ratio(2 * prec * rec, prec + rec, "f1", warn)
    return {"accuracy": acc, "sensitivity": rec, "specificity": tnr, "precision": prec, "f1": f1}


def auroc(scores, labels) -> float:
    """Mann-Whitney AUC from midranks: P(s+ > s-) + P(tie) / 2."""
    s, y = _check(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUROC needs both classes present")
    ranks = rankdata(s)
    return float((ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def auprc(scores, labels) -> float:
    """Step-wise area under the precision-recall curve (average precision).

    Thresholds run over distinct scores from high to low; tied scores enter
    together.
    """
    s, y = _check(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise ValueError("AUPRC needs at least one positive")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s)), s.size - 1]
    tp = np.cumsum(y)[last]
    fp = (last + 1) - tp
    precision = tp / (tp + fp)
    recall = tp / n_pos
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


@dataclass
class MetricsReport:
    values: dict[str, float]
    ci: dict[str, tuple[float, float]] = field(default_factory=dict)
    n_runs: int = 1
    threshold: float = 0.5
    warnings: list[str] = field(default_factory=list)
    counts: ConfusionCounts | None = None

    def to_dict(self) -> dict:
        out = {}
        for k in METRIC_NAMES:
            entry = {"point": self.values[k]}
            if k in self.ci:
                entry["lo"], entry["hi"] = self.ci[k]
            out[k] = entry
        return out


def evaluate(scores, labels, threshold: float = 0.5) -> MetricsReport:
    """Every reported metric for one scored sample."""
    c = confusion(scores, labels, threshold)
    warn: list[str] = []
    vals = basic_metrics(c, warn)
    y = np.asarray(labels).reshape(-1)
    if 0 < y.sum() < y.size:
        vals["auroc"] = auroc(scores, labels)
        vals["auprc"] = auprc(scores, labels)
    else:
        warn.append("single-class labels: auroc/auprc reported as 0")
        vals["auroc"] = vals["auprc"] = 0.0
    return MetricsReport(vals, threshold=threshold, warnings=warn, counts=c)


def ci_over_runs(reports: list[MetricsReport], level: float = 0.95) -> MetricsReport:
    """Mean across independent runs with a percentile interval of the run values."""
    if len(reports) < 2:
        raise ValueError("confidence intervals need at least 2 runs")
    alpha = (1 - level) / 2 * 100
    vals, ci = {}, {}
    for k in METRIC_NAMES:
        v = np.sort([r.values[k] for r in reports])
        vals[k] = float(np.mean(v))
        lo, hi = np.percentile(v, [alpha, 100 - alpha])
        # equal runs can leave the mean one ulp outside the interpolated bounds
        ci[k] = (float(min(lo, vals[k])), float(max(hi, vals[k])))
    warn = sorted({w for r in reports for w in r.warnings})
    return MetricsReport(vals, ci, n_runs=len(reports), threshold=reports[0].threshold, warnings=warn)


def bootstrap_ci(scores, labels, n_boot: int = 1000, level: float = 0.95, seed: int = 0,
                 threshold: float = 0.5) -> MetricsReport:
    """Single-run alternative: resample test subjects with replacement."""
    s, y = _check(scores, labels)
    point = evaluate(s, y, threshold)
    rng = np.random.default_rng(seed)
    samples = {k: [] for k in METRIC_NAMES}
    for _ in range(n_boot):
        idx = rng.integers(0, s.size, size=s.size)
        if y[idx].min() == y[idx].max():
            continue
        r = evaluate(s[idx], y[idx], threshold)
        for k in METRIC_NAMES:
            samples[k].append(r.values[k])
    alpha = (1 - level) / 2 * 100
    for k in METRIC_NAMES:
        lo, hi = np.percentile(samples[k], [alpha, 100 - alpha])
        point.ci[k] = (float(min(lo, point.values[k])), float(max(hi, point.values[k])))
    return point
