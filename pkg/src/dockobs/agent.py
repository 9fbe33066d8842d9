"""Environment-variable protocol shared with the in-container agents.

The fault-injection module is configured entirely through eight environment
variables; a ninth, supplementary variable activates specific injection
points by key. Log lines emitted by the agents are single-line and
prefix-tagged so an orchestrator can parse them from container logs.
"""

from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping

__all__ = [
    "FiConfig",
    "InjectionPoint",
    "AgentEventKind",
    "AgentLogEvent",
    "InvalidRate",
    "InvalidCountdown",
    "InvalidOption",
    "RowError",
    "UNLIMITED",
    "ENV_NAMES",
    "ACTIVE_POINTS_ENV",
    "POINTS_CSV_HEADER",
    "to_env",
    "parse_env",
    "parse_active_points",
    "parse_points_csv",
    "points_to_csv",
    "should_inject",
    "format_event",
    "parse_agent_log",
]

ENV_NAMES = (
    "FILTER",
    "EFILTER",
    "RATE",
    "MODE",
    "INJECTPOSITION",
    "DEFAULTMODE",
    "CSVPATH",
    "COUNTDOWN",
)
ACTIVE_POINTS_ENV = "POBS_ACTIVE_POINTS"
POINTS_CSV_HEADER = ("key", "className", "methodName", "exceptionType")

UNLIMITED = -1


class InvalidRate(ValueError):
    """RATE is not a number in [0, 1]."""


class InvalidCountdown(ValueError):
    """COUNTDOWN is below -1 or not an integer."""


class InvalidOption(ValueError):
    """Some other protocol variable has an unusable value."""


class RowError(ValueError):
    """A malformed row in the injection-points CSV."""

    def __init__(self, line: int, message: str) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class FiConfig:
    """Fault-injection configuration, one field per protocol variable."""

    filter: str = ".*"
    efilter: str = ".*"
    rate: float = 1.0
    mode: str = "throw_e"
    inject_position: int = 0
    default_mode: str = "off"
    csv_path: str = "logs/perturbationPointsList.csv"
    countdown: int = 1

    def __post_init__(self) -> None:
        if not 0.0 <= self.rate <= 1.0:
            raise InvalidRate(f"rate must be within [0, 1], got {self.rate}")
        if self.countdown < UNLIMITED:
            raise InvalidCountdown(f"countdown must be >= -1, got {self.countdown}")
        if self.inject_position < 0:
            raise InvalidOption(f"inject position must be >= 0, got {self.inject_position}")
        if self.default_mode not in ("on", "off"):
            raise InvalidOption(f"default mode must be on or off, got {self.default_mode!r}")
        for pattern in (self.filter, self.efilter):
            try:
                re.compile(pattern)
            except re.error as exc:
                raise InvalidOption(f"bad filter pattern {pattern!r}: {exc}") from exc


def _render_number(value: float) -> str:
    # Integral rates render without a decimal point, matching the documented
    # defaults ("1", not "1.0").
    if float(value).is_integer():
        return str(int(value))
    return repr(float(value))


def to_env(config: FiConfig) -> list[str]:
    """Render exactly the eight protocol variables as NAME=VALUE pairs."""
    values = (
        config.filter,
        config.efilter,
        _render_number(config.rate),
        config.mode,
        str(config.inject_position),
        config.default_mode,
        config.csv_path,
        str(config.countdown),
    )
    return [f"{name}={value}" for name, value in zip(ENV_NAMES, values)]


def _as_mapping(pairs: Iterable[str] | Mapping[str, str]) -> dict[str, str]:
    if isinstance(pairs, Mapping):
        return dict(pairs)
    mapping = {}
    for pair in pairs:
        name, sep, value = pair.partition("=")
        if sep:
            mapping[name] = value
    return mapping


def parse_env(pairs: Iterable[str] | Mapping[str, str]) -> FiConfig:
    """Build a config from NAME=VALUE pairs.

    Missing variables fall back to their defaults; unknown names are
    ignored so the protocol can ride along with unrelated environment.
    """
    mapping = _as_mapping(pairs)
    kwargs: dict[str, object] = {}
    if "FILTER" in mapping:
        kwargs["filter"] = mapping["FILTER"]
    if "EFILTER" in mapping:
        kwargs["efilter"] = mapping["EFILTER"]
    if "RATE" in mapping:
        try:
            kwargs["rate"] = float(mapping["RATE"])
        except ValueError as exc:
            raise InvalidRate(f"rate is not a number: {mapping['RATE']!r}") from exc
    if "MODE" in mapping:
        kwargs["mode"] = mapping["MODE"]
    if "INJECTPOSITION" in mapping:
        try:
            kwargs["inject_position"] = int(mapping["INJECTPOSITION"])
        except ValueError as exc:
            raise InvalidOption(
                f"inject position is not an integer: {mapping['INJECTPOSITION']!r}"
            ) from exc
    if "DEFAULTMODE" in mapping:
        kwargs["default_mode"] = mapping["DEFAULTMODE"]
    if "CSVPATH" in mapping:
        kwargs["csv_path"] = mapping["CSVPATH"]
    if "COUNTDOWN" in mapping:
        try:
            kwargs["countdown"] = int(mapping["COUNTDOWN"])
        except ValueError as exc:
            raise InvalidCountdown(
                f"countdown is not an integer: {mapping['COUNTDOWN']!r}"
            ) from exc
    return FiConfig(**kwargs)  # type: ignore[arg-type]


def parse_active_points(pairs: Iterable[str] | Mapping[str, str]) -> tuple[str, ...]:
    """Keys listed in the supplementary activation variable, if any."""
    raw = _as_mapping(pairs).get(ACTIVE_POINTS_ENV, "")
    return tuple(key.strip() for key in raw.split(",") if key.strip())


@dataclass
class InjectionPoint:
    """One place where the agent can throw an exception.

    ``remaining`` counts how many injections are still allowed; -1 means
    unlimited and is never decremented.
    """

    key: str
    class_name: str
    method_name: str
    exception_type: str
    active: bool = False
    remaining: int = 1


def parse_points_csv(text: str, countdown: int = 1) -> list[InjectionPoint]:
    """Parse the injection-points CSV written by the agent.

    Every point starts inactive with ``remaining`` set to ``countdown``.

    Raises:
        RowError: missing or wrong header, a row without exactly four
            non-empty fields, or a duplicate key. The error carries the
            1-based line number.
    """
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != POINTS_CSV_HEADER:
        raise RowError(1, f"expected header {','.join(POINTS_CSV_HEADER)}")
    points: list[InjectionPoint] = []
    seen: set[str] = set()
    for line, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 4:
            raise RowError(line, f"expected 4 fields, got {len(row)}")
        if any(not value for value in row):
            raise RowError(line, "empty field")
        key, class_name, method_name, exception_type = row
        if key in seen:
            raise RowError(line, f"duplicate key {key!r}")
        seen.add(key)
        points.append(
            InjectionPoint(
                key=key,
                class_name=class_name,
                method_name=method_name,
                exception_type=exception_type,
                active=False,
                remaining=countdown,
            )
        )
    return points


def points_to_csv(points: Iterable[InjectionPoint]) -> str:
    """Serialize points in the agent's CSV format."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(POINTS_CSV_HEADER)
    for point in points:
        writer.writerow(
            [point.key, point.class_name, point.method_name, point.exception_type]
        )
    return buf.getvalue()


def should_inject(point: InjectionPoint, config: FiConfig, rng) -> bool:
    """Decide one injection, decrementing the finite budget when it fires.

    A point participates when it is activated or the default mode is on;
    a finite exhausted budget blocks it; otherwise one uniform draw from
    ``rng`` is compared against the rate.
    """
    armed = point.active or config.default_mode == "on"
    if not armed:
        return False
    if point.remaining == 0:
        return False
    if rng.random() >= config.rate:
        return False
    if point.remaining > 0:
        point.remaining -= 1
    return True


class AgentEventKind(str, Enum):
    OBSERVABILITY_ATTACHED = "ObservabilityAttached"
    FAULT_INJECTOR_ATTACHED = "FaultInjectorAttached"
    POINT_REGISTERED = "PointRegistered"
    EXCEPTION_INJECTED = "ExceptionInjected"


@dataclass(frozen=True)
class AgentLogEvent:
    """A structured event recovered from (or destined for) container logs."""

    timestamp: int
    kind: AgentEventKind
    point_key: str | None = None

    def __post_init__(self) -> None:
        if self.kind is AgentEventKind.EXCEPTION_INJECTED and not self.point_key:
            raise ValueError("an injection event must carry its point key")


_EVENT_FORMATS = {
    AgentEventKind.OBSERVABILITY_ATTACHED: "[POBS-OBS] attached",
    AgentEventKind.FAULT_INJECTOR_ATTACHED: "[POBS-FI] attached",
    AgentEventKind.POINT_REGISTERED: "[POBS-FI] registered",
    AgentEventKind.EXCEPTION_INJECTED: "[POBS-FI] injected",
}

_EVENT_RE = re.compile(
    r"^\[POBS-(?:OBS|FI)\] (attached|registered|injected)"
    r"(?: key=(\S+))?(?: ts=(\d+))?$"
)

_WORD_TO_KIND = {
    ("attached", "OBS"): AgentEventKind.OBSERVABILITY_ATTACHED,
    ("attached", "FI"): AgentEventKind.FAULT_INJECTOR_ATTACHED,
    ("registered", "FI"): AgentEventKind.POINT_REGISTERED,
    ("injected", "FI"): AgentEventKind.EXCEPTION_INJECTED,
}


def format_event(event: AgentLogEvent) -> str:
    """Render one event as its single log line."""
    line = _EVENT_FORMATS[event.kind]
    if event.point_key is not None:
        line += f" key={event.point_key}"
    return f"{line} ts={event.timestamp}"


def parse_agent_log(text: str) -> list[AgentLogEvent]:
    """Extract agent events from raw log text, skipping unrelated lines."""
    events = []
    for line in text.splitlines():
        line = line.strip()
        match = _EVENT_RE.match(line)
        if not match:
            continue
        word, key, ts = match.groups()
        tag = "OBS" if line.startswith("[POBS-OBS]") else "FI"
        kind = _WORD_TO_KIND.get((word, tag))
        if kind is None:
            continue
        events.append(
            AgentLogEvent(timestamp=int(ts) if ts else 0, kind=kind, point_key=key)
        )
    return events
