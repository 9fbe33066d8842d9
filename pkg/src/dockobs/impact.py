"""Causal impact analysis for intervention experiments on metric series.

The counterfactual model is a least-squares linear trend fitted on the
pre-intervention window and extrapolated over the post window. Significance
comes from a residual bootstrap: each simulated counterfactual rebuilds the
trend from residual-resampled pre data and adds freshly resampled residuals,
so the null distribution reflects both sampling noise and the uncertainty of
the fitted trend itself.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

__all__ = [
    "MetricSeries",
    "PredictionFit",
    "ImpactResult",
    "AnalysisOptions",
    "EmptyPre",
    "EmptyPost",
    "FitError",
    "ZeroBaseline",
    "split",
    "fit_and_predict",
    "relative_effect",
    "p_value",
    "analyze",
    "series_to_dict",
    "series_from_dict",
    "result_to_dict",
    "load_series_document",
]


class EmptyPre(ValueError):
    """No samples before the intervention."""


class EmptyPost(ValueError):
    """No samples at or after the intervention."""


class FitError(ValueError):
    """The pre window cannot support a linear fit."""


class ZeroBaseline(ZeroDivisionError):
    """The predicted mean is zero, so a relative effect is undefined."""


@dataclass(frozen=True)
class MetricSeries:
    """A named series of (epoch-ms timestamp, value) samples.

    Timestamps must be strictly increasing.
    """

    metric_name: str
    samples: tuple[tuple[int, float], ...]

    def __post_init__(self) -> None:
        ts = [t for t, _ in self.samples]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.samples)

    def timestamps(self) -> np.ndarray:
        return np.array([t for t, _ in self.samples], dtype=np.int64)

    def values(self) -> np.ndarray:
        return np.array([v for _, v in self.samples], dtype=float)

    @classmethod
    def from_arrays(
        cls, metric_name: str, timestamps: Sequence[int], values: Sequence[float]
    ) -> MetricSeries:
        samples = tuple((int(t), float(v)) for t, v in zip(timestamps, values))
        return cls(metric_name, samples)


def split(series: MetricSeries, intervention_ts: int) -> tuple[MetricSeries, MetricSeries]:
    """Split at the intervention: pre strictly before, post at or after.

    Raises:
        EmptyPre, EmptyPost: one side of the split has no samples.
    """
    pre = tuple(s for s in series.samples if s[0] < intervention_ts)
    post = tuple(s for s in series.samples if s[0] >= intervention_ts)
    if not pre:
        raise EmptyPre(f"no samples before {intervention_ts}")
    if not post:
        raise EmptyPost(f"no samples at or after {intervention_ts}")
    return (
        MetricSeries(series.metric_name, pre),
        MetricSeries(series.metric_name, post),
    )


@dataclass(frozen=True)
class PredictionFit:
    """A fitted pre-window trend and its extrapolation over the post window.

    Times are centered on the pre-window mean (in seconds), which keeps the
    normal equations well conditioned for epoch-scale timestamps.
    """

    predicted_post: MetricSeries
    residuals: np.ndarray
    residual_sd: float
    slope: float
    intercept: float
    pre_centered_t: np.ndarray
    post_centered_t: np.ndarray


def fit_and_predict(pre: MetricSeries, post_timestamps: Sequence[int]) -> PredictionFit:
    """Fit a linear trend on the pre window and predict the post window.

    Raises:
        FitError: fewer than two pre samples or a degenerate time axis.
    """
    if len(pre) < 2:
        raise FitError(f"need at least 2 pre samples, got {len(pre)}")
    t = pre.timestamps().astype(float) / 1000.0
    v = pre.values()
    if np.ptp(t) == 0.0:
        raise FitError("pre samples share a single timestamp")
    center = t.mean()
    tc = t - center
    slope, intercept = np.polyfit(tc, v, 1)
    residuals = v - (intercept + slope * tc)
    post_t = np.asarray(post_timestamps, dtype=float) / 1000.0
    post_tc = post_t - center
    predicted = intercept + slope * post_tc
    return PredictionFit(
        predicted_post=MetricSeries.from_arrays(
            pre.metric_name, list(post_timestamps), predicted.tolist()
        ),
        residuals=residuals,
        residual_sd=float(residuals.std()),
        slope=float(slope),
        intercept=float(intercept),
        pre_centered_t=tc,
        post_centered_t=post_tc,
    )


def _values(series: MetricSeries | Sequence[float] | np.ndarray) -> np.ndarray:
    if isinstance(series, MetricSeries):
        return series.values()
    return np.asarray(series, dtype=float)


def relative_effect(
    actual_post: MetricSeries | Sequence[float],
    predicted_post: MetricSeries | Sequence[float],
) -> float:
    """Mean shift of the actual post window relative to the counterfactual.

    Raises:
        ZeroBaseline: the predicted mean is zero.
        ValueError: the two windows differ in length.
    """
    actual = _values(actual_post)
    predicted = _values(predicted_post)
    if len(actual) != len(predicted):
        raise ValueError(
            f"length mismatch: {len(actual)} actual vs {len(predicted)} predicted"
        )
    baseline = predicted.mean()
    if baseline == 0.0:
        raise ZeroBaseline("predicted mean is zero")
    return float((actual.mean() - baseline) / abs(baseline))


def p_value(
    fit: PredictionFit,
    actual_post: MetricSeries | Sequence[float],
    n_boot: int = 1000,
    seed: int = 0,
) -> float:
    """Two-sided bootstrap p-value for the post-window mean effect.

    Each bootstrap iteration resamples pre residuals twice: once to refit
    the trend coefficients (capturing their estimation uncertainty) and once
    as noise on the counterfactual post window. The simulated mean effects
    are compared against the observed one with add-one smoothing, so the
    result is never exactly zero.
    """
    if n_boot < 100:
        raise ValueError(f"n_boot must be at least 100, got {n_boot}")
    actual = _values(actual_post)
    predicted = fit.predicted_post.values()
    observed = actual.mean() - predicted.mean()

    residuals = fit.residuals
    n_pre = len(residuals)
    n_post = len(actual)
    tc = fit.pre_centered_t
    stt = float(np.dot(tc, tc))
    post_mean_tc = float(fit.post_centered_t.mean())

    rng = np.random.default_rng(seed)
    pre_draws = residuals[rng.integers(0, n_pre, size=(n_boot, n_pre))]
    post_draws = residuals[rng.integers(0, n_pre, size=(n_boot, n_post))]
    delta_intercept = pre_draws.mean(axis=1)
    if stt > 0.0:
        delta_slope = pre_draws @ tc / stt
    else:
        delta_slope = np.zeros(n_boot)
    simulated = delta_intercept + delta_slope * post_mean_tc + post_draws.mean(axis=1)
    exceed = int(np.count_nonzero(np.abs(simulated) >= abs(observed)))
    return (1 + exceed) / (n_boot + 1)


@dataclass(frozen=True)
class AnalysisOptions:
    n_boot: int = 1000
    seed: int = 0
    alpha: float = 0.05


@dataclass(frozen=True)
class ImpactResult:
    """Outcome of one impact analysis."""

    p_value: float
    relative_effect: float
    predicted_post: MetricSeries
    significant: bool
    pre_sample_count: int
    post_sample_count: int
    alpha: float = 0.05


def analyze(
    series: MetricSeries,
    intervention_ts: int,
    options: AnalysisOptions | None = None,
) -> ImpactResult:
    """Full pipeline: split, fit, effect size, significance."""
    opts = options or AnalysisOptions()
    pre, post = split(series, intervention_ts)
    fit = fit_and_predict(pre, [t for t, _ in post.samples])
    effect = relative_effect(post, fit.predicted_post)
    p = p_value(fit, post, n_boot=opts.n_boot, seed=opts.seed)
    return ImpactResult(
        p_value=p,
        relative_effect=effect,
        predicted_post=fit.predicted_post,
        significant=p < opts.alpha,
        pre_sample_count=len(pre),
        post_sample_count=len(post),
        alpha=opts.alpha,
    )


# -- serialization ------------------------------------------------------


def series_to_dict(series: MetricSeries, intervention_ts: int | None = None) -> dict:
    doc: dict[str, Any] = {
        "metric_name": series.metric_name,
        "samples": [[t, v] for t, v in series.samples],
    }
    if intervention_ts is not None:
        doc["intervention"] = intervention_ts
    return doc


def series_from_dict(doc: Mapping[str, Any]) -> MetricSeries:
    return MetricSeries(
        doc["metric_name"], tuple((int(t), float(v)) for t, v in doc["samples"])
    )


def load_series_document(path: Path | str) -> tuple[MetricSeries, int]:
    """Read a series file carrying its intervention timestamp."""
    doc = json.loads(Path(path).read_text())
    if "intervention" not in doc:
        raise ValueError("series document lacks an intervention timestamp")
    return series_from_dict(doc), int(doc["intervention"])


def result_to_dict(result: ImpactResult) -> dict:
    return {
        "p_value": result.p_value,
        "relative_effect": result.relative_effect,
        "significant": result.significant,
        "pre_sample_count": result.pre_sample_count,
        "post_sample_count": result.post_sample_count,
        "alpha": result.alpha,
        "predicted_post": series_to_dict(result.predicted_post),
    }
