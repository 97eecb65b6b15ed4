import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from timemae_pfm.metrics import (
    ConfusionCounts,
    auprc,
    auroc,
    basic_metrics,
    bootstrap_ci,
    ci_over_runs,
    confusion,
    evaluate,
)


def pairwise_auc(s, y):
    pos, neg = s[y == 1], s[y == 0]
    wins = sum((p > n) + 0.5 * (p == n) for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


# 8 samples tallied by hand at threshold 0.5:
# y=1 scores .9 .8 .6 .3 .2 -> tp=3, fn=2 ; y=0 scores .7 .4 .1 -> fp=1, tn=2
SCORES8 = np.array([0.9, 0.8, 0.6, 0.3, 0.2, 0.7, 0.4, 0.1])
LABELS8 = np.array([1, 1, 1, 1, 1, 0, 0, 0])


def test_eight_sample_hand_tally():
    c = confusion(SCORES8, LABELS8)
    assert c == ConfusionCounts(tp=3, tn=2, fp=1, fn=2)
    m = basic_metrics(c)
    assert m["accuracy"] == 5 / 8
    assert m["sensitivity"] == 3 / 5
    assert m["precision"] == 3 / 4
    assert m["specificity"] == 2 / 3
    assert m["f1"] == 2 * 0.75 * 0.6 / 1.35


def test_threshold_tie_predicts_positive():
    c = confusion([0.5, 0.5, 0.5], [1, 0, 1])
    assert (c.tp, c.fp, c.tn, c.fn) == (2, 1, 0, 0)


def test_perfect_and_degenerate():
    assert confusion([0.9, 0.1], [1, 0]) == ConfusionCounts(1, 1, 0, 0)
    m = basic_metrics(ConfusionCounts(4, 0, 0, 0), warn := [])
    assert m["accuracy"] == m["sensitivity"] == m["precision"] == m["f1"] == 1.0
    warn = []
    m = basic_metrics(ConfusionCounts(0, 3, 0, 2), warn)
    assert m["precision"] == 0.0 and any("precision" in w for w in warn)
    with pytest.raises(ValueError):
        confusion([], [])
    with pytest.raises(ValueError):
        basic_metrics(ConfusionCounts(0, 0, 0, 0))


def test_auroc_matches_pairwise_oracle_with_ties():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = 100
        s = rng.integers(0, 15, size=n) / 7.0
        y = rng.integers(0, 2, size=n)
        y[:2] = [0, 1]
        assert abs(auroc(s, y) - pairwise_auc(s, y)) <= 1e-12


def test_auroc_edge_cases():
    assert auroc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    rng = np.random.default_rng(1)
    assert abs(auroc(rng.random(20000), rng.integers(0, 2, 20000)) - 0.5) < 0.02
    with pytest.raises(ValueError):
        auroc([0.1, 0.2], [1, 1])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(-4000, 4000), min_size=4, max_size=40, unique=True), st.integers(0, 10**6))
def test_auroc_rank_invariance_and_symmetry(scores, seed):
    s = np.array(scores) / 64.0
    y = np.random.default_rng(seed).integers(0, 2, size=s.size)
    y[0], y[1] = 0, 1
    a = auroc(s, y)
    assert abs(auroc(s**3 + 2 * s - 7, y) - a) < 1e-12
    assert abs(a + auroc(-s, y) - 1.0) < 1e-12


def test_auprc_staircase():
    # sorted: .9(1) .8(0) .7(1) .6(0): precision at recall steps 1/1 and 2/3
    assert auprc([0.9, 0.8, 0.7, 0.6], [1, 0, 1, 0]) == pytest.approx(0.5 * 1 + 0.5 * 2 / 3, abs=1e-15)
    # tie group enters together: {.9 pos, .9 neg} then .1 pos
    assert auprc([0.9, 0.9, 0.1], [1, 0, 1]) == pytest.approx(0.5 * 0.5 + 0.5 * 2 / 3, abs=1e-15)
    assert auprc([0.9, 0.8, 0.1], [1, 1, 0]) == 1.0
    rng = np.random.default_rng(2)
    y = (rng.random(20000) < 0.3).astype(int)
    assert abs(auprc(rng.random(20000), y) - y.mean()) < 0.02
    with pytest.raises(ValueError):
        auprc([0.1], [0])


def _report(v):
    r = evaluate(SCORES8, LABELS8)
    r.values = {k: v for k in r.values}
    return r


def test_ci_over_runs():
    runs = [_report(v) for v in (0.70, 0.72, 0.74, 0.76, 0.78)]
    out = ci_over_runs(runs)
    assert out.values["auroc"] == pytest.approx(0.74, abs=1e-15)
    lo, hi = out.ci["auroc"]
    assert lo <= 0.74 <= hi and 0.70 <= lo and hi <= 0.78
    flipped = ci_over_runs(runs[::-1])
    assert flipped.values == out.values and flipped.ci == out.ci
    same = ci_over_runs([_report(0.8)] * 5)
    assert same.ci["auroc"][0] == same.ci["auroc"][1] == same.values["auroc"]
    with pytest.raises(ValueError):
        ci_over_runs(runs[:1])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=2, max_size=8))
def test_ci_brackets_mean(values):
    out = ci_over_runs([_report(v) for v in values])
    lo, hi = out.ci["f1"]
    assert lo <= out.values["f1"] <= hi


def test_report_schema_and_bootstrap():
    r = evaluate(SCORES8, LABELS8)
    d = r.to_dict()
    assert set(d) == {"auroc", "accuracy", "sensitivity", "specificity", "f1", "precision", "auprc"}
    assert all(0 <= e["point"] <= 1 for e in d.values())
    b = bootstrap_ci(SCORES8, LABELS8, n_boot=200)
    for k, (lo, hi) in b.ci.items():
        assert lo <= b.values[k] <= hi
