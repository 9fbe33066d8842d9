import json

import numpy as np
import pytest

from dockobs.impact import (
    AnalysisOptions,
    EmptyPost,
    EmptyPre,
    FitError,
    MetricSeries,
    ZeroBaseline,
    analyze,
    fit_and_predict,
    load_series_document,
    p_value,
    relative_effect,
    result_to_dict,
    series_from_dict,
    series_to_dict,
    split,
)


def make_series(
    n_pre=120,
    n_post=120,
    base=40.0,
    slope_per_s=0.0,
    shift=0.0,
    noise=0.01,
    seed=0,
    cadence_ms=1000,
):
    """Level + trend + relative noise, with a level shift after the split."""
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n_pre + n_post):
        ts = 1_700_000_000_000 + i * cadence_ms
        level = base + slope_per_s * i
        if i >= n_pre:
            level *= 1.0 + shift
        value = level * (1.0 + rng.normal(0.0, noise))
        samples.append((ts, value))
    intervention = 1_700_000_000_000 + n_pre * cadence_ms - cadence_ms // 2
    return MetricSeries("jvm.cpu.load", tuple(samples)), intervention


def test_series_requires_increasing_timestamps():
    with pytest.raises(ValueError):
        MetricSeries("m", ((2000, 1.0), (1000, 2.0)))
    with pytest.raises(ValueError):
        MetricSeries("m", ((1000, 1.0), (1000, 2.0)))


def test_split_is_strict_before_after():
    series = MetricSeries("m", ((1000, 1.0), (2000, 2.0), (3000, 3.0)))
    pre, post = split(series, 2000)
    assert [t for t, _ in pre.samples] == [1000]
    assert [t for t, _ in post.samples] == [2000, 3000]


def test_split_empty_sides_raise():
    series = MetricSeries("m", ((1000, 1.0), (2000, 2.0)))
    with pytest.raises(EmptyPre):
        split(series, 500)
    with pytest.raises(EmptyPost):
        split(series, 9000)


def test_fit_recovers_exact_linear_trend():
    timestamps = [1_000_000 + i * 1000 for i in range(10)]
    values = [5.0 + 0.25 * i for i in range(10)]
    pre = MetricSeries("m", tuple(zip(timestamps, values)))
    post_ts = [1_000_000 + i * 1000 for i in range(10, 15)]
    fit = fit_and_predict(pre, post_ts)
    assert fit.slope == pytest.approx(0.25, abs=1e-9)
    predicted = fit.predicted_post.values()
    expected = [5.0 + 0.25 * i for i in range(10, 15)]
    assert predicted == pytest.approx(expected, abs=1e-6)
    assert fit.residual_sd == pytest.approx(0.0, abs=1e-9)


def test_fit_needs_two_points_and_time_spread():
    with pytest.raises(FitError):
        fit_and_predict(MetricSeries("m", ((1000, 1.0),)), [2000])


def test_relative_effect_analytic():
    actual = MetricSeries("m", ((1000, 30.0), (2000, 30.0)))
    predicted = MetricSeries("m", ((1000, 40.0), (2000, 40.0)))
    assert relative_effect(actual, predicted) == pytest.approx(-0.25)
    assert relative_effect([44.0], [40.0]) == pytest.approx(0.1)


def test_relative_effect_zero_baseline():
    with pytest.raises(ZeroBaseline):
        relative_effect([1.0], [0.0])


def test_relative_effect_length_mismatch():
    with pytest.raises(ValueError):
        relative_effect([1.0, 2.0], [1.0])


def test_large_level_drop_is_detected():
    series, intervention = make_series(shift=-0.6239, seed=42)
    result = analyze(series, intervention, AnalysisOptions(n_boot=1000, seed=7))
    assert abs(result.relative_effect + 0.6239) <= 0.05
    assert result.p_value < 0.01
    assert result.significant


def test_flat_null_series_is_not_significant():
    series, intervention = make_series(shift=0.0, seed=9)
    result = analyze(series, intervention, AnalysisOptions(n_boot=500, seed=1))
    assert result.p_value >= 0.05
    assert not result.significant


def test_null_p_values_are_calibrated():
    hits = 0
    for seed in range(100):
        series, intervention = make_series(
            n_pre=60, n_post=60, shift=0.0, seed=seed
        )
        result = analyze(series, intervention, AnalysisOptions(n_boot=199, seed=seed))
        if result.p_value >= 0.05:
            hits += 1
    assert hits >= 95


def test_trend_alone_is_not_flagged():
    series, intervention = make_series(slope_per_s=0.05, shift=0.0, seed=3)
    result = analyze(series, intervention, AnalysisOptions(n_boot=500, seed=2))
    assert result.p_value >= 0.05


def test_p_value_is_deterministic_per_seed():
    series, intervention = make_series(shift=-0.004, seed=5)
    pre, post = split(series, intervention)
    fit = fit_and_predict(pre, [t for t, _ in post.samples])
    first = p_value(fit, post, n_boot=300, seed=11)
    second = p_value(fit, post, n_boot=300, seed=11)
    third = p_value(fit, post, n_boot=300, seed=13)
    assert first == second
    assert first != third


def test_p_value_never_zero_and_boot_floor():
    series, intervention = make_series(shift=-0.9, seed=1)
    pre, post = split(series, intervention)
    fit = fit_and_predict(pre, [t for t, _ in post.samples])
    p = p_value(fit, post, n_boot=100, seed=0)
    assert p >= 1 / 101
    with pytest.raises(ValueError):
        p_value(fit, post, n_boot=99, seed=0)


def test_analyze_counts_and_alpha():
    series, intervention = make_series(n_pre=30, n_post=20, shift=-0.5, seed=2)
    result = analyze(series, intervention, AnalysisOptions(n_boot=200, seed=0, alpha=0.01))
    assert result.pre_sample_count == 30
    assert result.post_sample_count == 20
    assert result.alpha == 0.01


def test_series_document_round_trip(tmp_path):
    series, intervention = make_series(n_pre=5, n_post=5)
    doc = series_to_dict(series, intervention)
    again = series_from_dict(doc)
    assert again == series
    path = tmp_path / "series.json"
    path.write_text(json.dumps(doc))
    loaded, ts = load_series_document(path)
    assert loaded == series
    assert ts == intervention


def test_document_without_intervention_is_rejected(tmp_path):
    series, _ = make_series(n_pre=3, n_post=3)
    path = tmp_path / "series.json"
    path.write_text(json.dumps(series_to_dict(series)))
    with pytest.raises(ValueError):
        load_series_document(path)


def test_result_serialization():
    series, intervention = make_series(n_pre=20, n_post=20, shift=-0.4, seed=8)
    result = analyze(series, intervention, AnalysisOptions(n_boot=150, seed=3))
    doc = result_to_dict(result)
    assert set(doc) >= {"p_value", "relative_effect", "significant"}
    assert doc["significant"] == result.significant
