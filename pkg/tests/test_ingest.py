import calendar
import datetime as dt

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from timemae_pfm.config import ConfigError
from timemae_pfm.ingest import (
    GOOD,
    LIMITED,
    DemographicStats,
    ExclusionError,
    MinuteSeries,
    RawSample,
    SynthConfig,
    WearPolicy,
    apply_wear_policy,
    ingest_csv,
    join_demographics,
    label_from_sppb,
    load_actigraphy,
    load_dataset,
    magnitude_minutes,
    save_dataset,
    synth_generate,
    write_actigraphy,
)

MONDAY = calendar.timegm(dt.datetime(2024, 1, 1).timetuple())  # a Monday, UTC


def test_load_empty_and_single(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("subject_id,timestamp,ax,ay,az\n")
    assert load_actigraphy(p) == []
    p.write_text("subject_id,timestamp,ax,ay,az\ns1,0,1.0,2.0,2.0\n")
    assert load_actigraphy(p) == [RawSample("s1", 0, 1.0, 2.0, 2.0)]


def test_load_reports_line_number(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("subject_id,timestamp,ax,ay,az\ns1,0,1,2,3\ns1,x,1,2,3\n")
    with pytest.raises(ValueError, match=":3:"):
        load_actigraphy(p)


def test_load_sorts_out_of_order_with_warning(tmp_path, caplog):
    p = tmp_path / "a.csv"
    p.write_text("subject_id,timestamp,ax,ay,az\ns1,60,1,0,0\ns1,0,2,0,0\n")
    out = load_actigraphy(p)
    assert [s.timestamp for s in out] == [0, 60]
    assert "out of order" in caplog.text


def test_roundtrip_10k_rows(tmp_path):
    rng = np.random.default_rng(0)
    samples = []
    for k in range(4):
        ts = np.sort(rng.integers(0, 10**6, size=2500))
        samples += [RawSample(f"s{k}", int(t), *map(float, rng.normal(size=3))) for t in ts]
    p = tmp_path / "big.csv"
    write_actigraphy(samples, p)
    assert load_actigraphy(p) == samples


def test_magnitude_examples():
    out = magnitude_minutes([RawSample("a", 0, 3.0, 4.0, 0.0)])
    assert out.values.tolist() == [25.0]
    assert magnitude_minutes([RawSample("a", 0, 0.0, 0.0, 0.0)]).values.tolist() == [0.0]
    s10 = RawSample("a", 60, 1.0, 3.0, 0.0)  # 10
    s20 = RawSample("a", 90, 2.0, 4.0, 0.0)  # 20
    out = magnitude_minutes([s10, s20])
    assert out.minutes.tolist() == [1] and out.values.tolist() == [15.0]


@given(st.lists(st.tuples(st.integers(0, 5000), st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5)), max_size=60))
def test_magnitude_properties(rows):
    samples = [RawSample("a", t, x, y, z) for t, x, y, z in sorted(rows)]
    out = magnitude_minutes(samples)
    assert len(out.values) == len({t // 60 for t, *_ in rows})
    assert np.all(out.values >= 0)


def full_days(start_day: int, n_days: int, value=1.0) -> MinuteSeries:
    m0 = MONDAY // 60 + start_day * 1440
    minutes = np.arange(m0, m0 + n_days * 1440)
    return MinuteSeries(minutes, np.full(len(minutes), value))


def test_wear_policy_mon_to_wed():
    out = apply_wear_policy(full_days(0, 3))
    assert len(out) == 3 * 18 * 60 == 3240
    assert np.all(out == 1.0)


def test_wear_policy_weekend_only_and_gap():
    with pytest.raises(ExclusionError) as e:
        apply_wear_policy(full_days(5, 2))
    assert e.value.reason == "insufficient_days"
    mon_tue_thu = MinuteSeries(*(np.concatenate(parts) for parts in zip(
        *[(s.minutes, s.values) for s in (full_days(0, 2), full_days(3, 1))])))
    with pytest.raises(ExclusionError):
        apply_wear_policy(mon_tue_thu)


def test_wear_policy_skips_night_and_weekend_minutes():
    # Fri..Wed, night minutes tagged with a sentinel
    s = full_days(4, 6)
    mod = s.minutes % 1440
    night = (mod >= 23 * 60) | (mod < 5 * 60)
    values = np.where(night, 99.0, 1.0)
    out = apply_wear_policy(MinuteSeries(s.minutes, values))
    assert len(out) == 3240 and np.all(out == 1.0)


def test_wear_policy_fills_gaps_with_zeros():
    s = full_days(0, 3)
    keep = np.ones(len(s.minutes), bool)
    keep[10 * 60:11 * 60] = False  # Monday 10:00-11:00 missing
    out = apply_wear_policy(MinuteSeries(s.minutes[keep], s.values[keep]))
    assert len(out) == 3240
    assert np.all(out[5 * 60:6 * 60] == 0) and out.sum() == 3240 - 60


def test_wear_policy_validates_clock():
    with pytest.raises(ValueError):
        WearPolicy(exclude_start="25:00")


def test_sppb_labels():
    assert label_from_sppb(8) == LIMITED
    assert label_from_sppb(11) == GOOD
    assert label_from_sppb(9) == LIMITED
    assert label_from_sppb(10) == GOOD
    assert label_from_sppb(9, threshold=8) == GOOD
    for bad in (-1, 13, 9.5):
        with pytest.raises(ValueError):
            label_from_sppb(bad)


def test_sppb_monotone():
    labels = [label_from_sppb(s) for s in range(13)]
    assert labels == sorted(labels)


def test_join_demographics_and_normalization():
    rows = [
        {"age": "70", "gender": "male", "bmi": "25", "sppb": "10"},
        {"age": "80", "gender": "female", "bmi": "30", "sppb": "6"},
        {"age": "90", "gender": "female", "bmi": "35", "sppb": "12"},
    ]
    recs = [join_demographics(f"s{i}", np.zeros(5), r) for i, r in enumerate(rows)]
    assert [r.gender for r in recs] == [0, 1, 1]
    assert [r.label for r in recs] == [1, 0, 1]
    stats = DemographicStats.fit(recs)
    z = stats.transform(recs)
    assert z[1, 0] == 0.0  # age equal to the training mean
    # hand z-scores: age sd = sqrt(200/3), gender mean 2/3 sd sqrt(2)/3, bmi sd sqrt(50/3)
    np.testing.assert_allclose(z[0], [-10 / np.sqrt(200 / 3), (0 - 2 / 3) / (np.sqrt(2) / 3), -5 / np.sqrt(50 / 3)],
                               rtol=1e-14)


def test_join_demographics_exclusions():
    with pytest.raises(ExclusionError) as e:
        join_demographics("s", np.zeros(3), {"age": "70", "gender": "m", "bmi": "", "sppb": "3"})
    assert e.value.reason == "missing_demographics"
    with pytest.raises(ExclusionError):
        join_demographics("s", np.zeros(3), None)


def test_ingest_csv_end_to_end(tmp_path):
    act = tmp_path / "act.csv"
    samples = []
    for k, days in enumerate([3, 3, 2]):
        for minute in range(0, days * 1440, 7):
            t = MONDAY + 60 * minute
            samples.append(RawSample(f"p{k}", t, 0.1 * k, 0.2, 0.3))
    write_actigraphy(samples, act)
    demo = tmp_path / "demo.csv"
    demo.write_text("subject_id,age,gender,bmi,sppb\np0,70,male,24,11\np1,82,female,31,7\np2,75,male,28,9\n")
    ds, excluded = ingest_csv(act, demo, fractions=(1, 0, 0))
    assert excluded == {"p2": "insufficient_days"}
    assert [r.subject_id for r in ds.records] == ["p0", "p1"]
    assert all(len(r.intensity) == 3240 for r in ds.records)


def test_synth_determinism_and_validity(tmp_path):
    cfg = SynthConfig(subjects=30, length_minutes=120)
    a, b = synth_generate(cfg, seed=3), synth_generate(cfg, seed=3)
    for ra, rb in zip(a.records, b.records):
        assert ra.intensity.tobytes() == rb.intensity.tobytes()
        assert (ra.age, ra.bmi, ra.label) == (rb.age, rb.bmi, rb.label)
        assert label_from_sppb(ra.sppb) == ra.label
        assert np.all(ra.intensity >= 0)
    save_dataset(a, tmp_path / "x")
    save_dataset(b, tmp_path / "y")
    for f in ("manifest.json", "subjects.csv", "intensity.bin"):
        assert (tmp_path / "x" / f).read_bytes() == (tmp_path / "y" / f).read_bytes()
    c = load_dataset(tmp_path / "x")
    assert [r.intensity.tobytes() for r in c.records] == [r.intensity.tobytes() for r in a.records]
    assert c.splits == a.splits


def test_synth_multichannel_and_bad_config():
    ds = synth_generate(SynthConfig(subjects=4, length_minutes=50, channels=3), seed=0)
    assert ds.records[0].intensity.shape == (50, 3) and ds.channels == 3
    with pytest.raises(ConfigError):
        SynthConfig(motif_width=80, motif_period=60)
    with pytest.raises(ConfigError):
        SynthConfig(prevalence=1.0)


def test_synth_no_signal_labels_independent():
    from sklearn.metrics import roc_auc_score
    ds = synth_generate(SynthConfig(subjects=2000, length_minutes=60, motif_strength=0, demographic_strength=0), 1)
    y = ds.labels(ds.records)
    bmi = np.array([r.bmi for r in ds.records])
    level = np.array([r.intensity.mean() for r in ds.records])
    assert abs(roc_auc_score(y, bmi) - 0.5) < 0.05
    assert abs(roc_auc_score(y, level) - 0.5) < 0.05


def test_synth_temporal_only_signal():
    # logistic oracle on the planted indicator separates; BMI does not
    from sklearn.metrics import roc_auc_score
    ds = synth_generate(SynthConfig(subjects=2000, length_minutes=120, motif_strength=3, demographic_strength=0), 2)
    y = ds.labels(ds.records)
    z = np.isin([r.subject_id for r in ds.records], ds.meta["motif_present"]).astype(float)
    assert roc_auc_score(y, z) > 0.9
    assert abs(roc_auc_score(y, [r.bmi for r in ds.records]) - 0.5) < 0.05
