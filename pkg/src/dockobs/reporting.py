"""Rendering of campaign and overhead results as tables or CSV."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable, Sequence

__all__ = [
    "ConsistencyError",
    "CampaignSummary",
    "OverheadRow",
    "OverheadReport",
    "summarize",
    "render_point_table",
    "render_overhead",
    "format_p_value",
    "format_relative_effect",
    "summary_to_dict",
    "summary_from_dict",
]


class ConsistencyError(ValueError):
    """Summary counters disagree with the verdicts they were derived from."""


@dataclass(frozen=True)
class CampaignSummary:
    """Roll-up of one fault-injection campaign."""

    total_points: int
    covered: int
    resilient: int
    performance_issues: int

    def __post_init__(self) -> None:
        if not 0 <= self.covered <= self.total_points:
            raise ConsistencyError(
                f"covered ({self.covered}) outside [0, {self.total_points}]"
            )
        if not 0 <= self.resilient <= self.covered:
            raise ConsistencyError(
                f"resilient ({self.resilient}) outside [0, {self.covered}]"
            )
        if not 0 <= self.performance_issues <= self.covered:
            raise ConsistencyError(
                f"performance issues ({self.performance_issues}) outside [0, {self.covered}]"
            )


def summarize(verdicts: Sequence, total_points: int) -> CampaignSummary:
    """Count covered, resilient, and performance-issue points.

    ``verdicts`` may be any objects exposing ``resilient`` and
    ``performance_issue`` attributes.
    """
    return CampaignSummary(
        total_points=total_points,
        covered=len(verdicts),
        resilient=sum(1 for v in verdicts if v.resilient),
        performance_issues=sum(1 for v in verdicts if v.performance_issue),
    )


def _half_up(value: float, places: int) -> Decimal:
    quantum = Decimal(1).scaleb(-places)
    return Decimal(str(value)).quantize(quantum, rounding=ROUND_HALF_UP)


def format_p_value(p: float) -> str:
    """Two decimals, collapsing anything below 0.01 to "<0.01"."""
    if p < 0.01:
        return "<0.01"
    return f"{_half_up(p, 2)}"


def format_relative_effect(effect: float) -> str:
    """Signed percentage with two decimals."""
    return f"{_half_up(effect * 100.0, 2)}%"


def _format_rate(rate: float) -> str:
    return f"{_half_up(rate * 100.0, 0)}%"


_POINT_HEADER = (
    "no",
    "class",
    "method",
    "exception",
    "correctness_rate",
    "p_value",
    "relative_effect",
)


def _point_rows(verdicts: Sequence) -> list[tuple[str, ...]]:
    rows = []
    for number, verdict in enumerate(verdicts, start=1):
        point = verdict.point
        rows.append(
            (
                str(number),
                point.class_name,
                point.method_name,
                point.exception_type,
                _format_rate(verdict.correctness_rate),
                format_p_value(verdict.impact.p_value),
                format_relative_effect(verdict.impact.relative_effect),
            )
        )
    return rows


def _render_rows(header: tuple[str, ...], rows: list[tuple[str, ...]], fmt: str) -> str:
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(header)
        writer.writerows(rows)
        return buf.getvalue()
    widths = [
        max(len(header[c]), *(len(r[c]) for r in rows)) if rows else len(header[c])
        for c in range(len(header))
    ]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip()]
    for row in rows:
        lines.append("  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip())
    return "\n".join(lines) + "\n"


def render_point_table(verdicts: Sequence, fmt: str = "table") -> str:
    """Per-point campaign table: identity, correctness rate, p, effect."""
    return _render_rows(_POINT_HEADER, _point_rows(verdicts), fmt)


@dataclass(frozen=True)
class OverheadRow:
    """One overhead comparison row.

    ``unit`` is the display unit the values are already expressed in.
    Ratio rows report a percent increase; the CPU row instead reports the
    absolute percentage-point difference, which is what its unit implies.
    """

    category: str
    original: float
    augmented: float
    unit: str

    @property
    def absolute_increase(self) -> float:
        return self.augmented - self.original

    @property
    def percent_increase(self) -> float | None:
        if self.category == "CpuUsage":
            return None
        if self.original == 0:
            return None
        return (self.augmented - self.original) / self.original * 100.0


@dataclass(frozen=True)
class OverheadReport:
    rows: tuple[OverheadRow, ...]
    failures: tuple[str, ...] = ()


def _format_quantity(value: float, unit: str) -> str:
    if unit == "%":
        return f"{value:.2f}%"
    return f"{value:g}{unit}"


def _format_increase(row: OverheadRow) -> str:
    if row.category == "CpuUsage":
        return f"{row.absolute_increase:.2f}%"
    absolute = _format_quantity(row.absolute_increase, row.unit)
    pct = row.percent_increase
    if pct is None:
        return f"{absolute} (n/a)"
    return f"{absolute} ({_half_up(pct, 1)}%)"


_OVERHEAD_HEADER = ("category", "original", "augmented", "increase")


def render_overhead(report: OverheadReport, fmt: str = "table") -> str:
    """Overhead table with absolute and percent increases.

    Percent increases round half-up to one decimal; a ratio row with a zero
    original value renders its percent as "n/a".
    """
    rows = [
        (
            row.category,
            _format_quantity(row.original, row.unit),
            _format_quantity(row.augmented, row.unit),
            _format_increase(row),
        )
        for row in report.rows
    ]
    return _render_rows(_OVERHEAD_HEADER, rows, fmt)


def summary_to_dict(summary: CampaignSummary) -> dict:
    return {
        "total_points": summary.total_points,
        "covered": summary.covered,
        "resilient": summary.resilient,
        "performance_issues": summary.performance_issues,
    }


def summary_from_dict(doc: dict) -> CampaignSummary:
    return CampaignSummary(
        total_points=int(doc["total_points"]),
        covered=int(doc["covered"]),
        resilient=int(doc["resilient"]),
        performance_issues=int(doc["performance_issues"]),
    )
