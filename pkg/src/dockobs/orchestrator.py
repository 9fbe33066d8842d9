"""Experiment lifecycles executed against a container runtime.

Four experiments are driven here: base-image validation (build plus the
injection-off / injection-on probe modes), observability verification,
the per-point fault-injection campaign, and overhead measurement. All of
them speak to containers only through the ContainerRuntime interface and
plain HTTP, so the fake and real backends are interchangeable.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

import requests

from .agent import (
    ACTIVE_POINTS_ENV,
    AgentEventKind,
    FiConfig,
    InjectionPoint,
    UNLIMITED,
    parse_agent_log,
    to_env,
)
from .impact import AnalysisOptions, ImpactResult, MetricSeries, analyze, series_to_dict
from .reporting import OverheadReport, OverheadRow
from .runtime import ContainerHandle, ContainerRuntime
from .simulator import artifact_digest, now_ms

__all__ = [
    "Phase",
    "Status",
    "ExperimentOutcome",
    "ProbeSpec",
    "WorkloadRequest",
    "WorkloadSpec",
    "PointVerdict",
    "UnknownMetric",
    "MalformedResponse",
    "ExperimentError",
    "CATEGORY_PROBES",
    "fetch_metrics",
    "validate_base_image",
    "verify_observability",
    "run_fi_campaign",
    "measure_overhead",
    "load_workload",
    "verdict_to_dict",
]

log = logging.getLogger(__name__)


class Phase(str, Enum):
    AUGMENT_BASE = "AugmentBase"
    BUILD_APP = "BuildApp"
    RUN_APP = "RunApp"
    MODE_A = "ModeA"
    MODE_B = "ModeB"
    FI_CAMPAIGN = "FiCampaign"
    OVERHEAD = "Overhead"


class Status(str, Enum):
    PASS = "Pass"
    FAIL = "Fail"


class UnknownMetric(ValueError):
    """The metrics endpoint does not know the requested metric."""


class MalformedResponse(ValueError):
    """The metrics endpoint answered with an unusable document."""


class ExperimentError(RuntimeError):
    """An experiment could not produce a result at all."""


@dataclass(frozen=True)
class ExperimentOutcome:
    """Terminal state of one experiment phase."""

    phase: Phase
    status: Status
    failure_class: str | None = None
    evidence: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.status is Status.FAIL and not self.failure_class:
            raise ValueError("a failed outcome needs a failure class")


@dataclass(frozen=True)
class ProbeSpec:
    """How to probe an augmented base image.

    Mode A runs the probe with injection off and expects the artifact
    checksum to match; Mode B activates ``point_key`` under
    ``mode_b_config`` and expects the artifact to fail while an injection
    message shows up in the logs.
    """

    point_key: str
    request_path: str = "/work?job=probe"
    mode_b_config: FiConfig = field(default_factory=FiConfig)


# Metric names to try per category when verifying observability coverage.
CATEGORY_PROBES: Mapping[str, tuple[str, ...]] = {
    "os": ("os.cpu.load", "os.disk.usage"),
    "jvm": ("jvm.cpu.load", "jvm.heap.used"),
    "library": ("http.response.time", "db.transaction.time"),
}


def _endpoint(handle: ContainerHandle, port: int) -> str:
    return f"http://127.0.0.1:{handle.host_port(port)}"


def fetch_metrics(
    endpoint: str,
    metric_name: str,
    start_ts: int,
    end_ts: int,
    timeout_s: float = 10.0,
) -> MetricSeries:
    """Query one metric over [start_ts, end_ts) from a metrics endpoint.

    Raises:
        UnknownMetric: the endpoint rejected the metric name.
        MalformedResponse: the endpoint answered with an unusable document.
        requests.RequestException: transport-level failure.
    """
    response = requests.post(
        f"{endpoint}/metrics",
        json={"metric": metric_name, "start": start_ts, "end": end_ts},
        timeout=timeout_s,
    )
    if response.status_code == 404:
        raise UnknownMetric(metric_name)
    if response.status_code != 200:
        raise MalformedResponse(f"status {response.status_code}: {response.text[:200]}")
    try:
        doc = response.json()
        samples = tuple((int(t), float(v)) for t, v in doc["samples"])
    except (ValueError, KeyError, TypeError) as exc:
        raise MalformedResponse(f"bad metrics document: {exc}") from exc
    return MetricSeries(metric_name, samples)


def _await_attachment(
    runtime: ContainerRuntime, handle: ContainerHandle, timeout_s: float = 5.0
) -> bool:
    """Wait until both agents report attachment in the container logs."""
    needed = {
        AgentEventKind.OBSERVABILITY_ATTACHED,
        AgentEventKind.FAULT_INJECTOR_ATTACHED,
    }
    deadline = time.monotonic() + timeout_s
    while True:
        kinds = {event.kind for event in parse_agent_log(runtime.logs(handle))}
        if needed <= kinds:
            return True
        if time.monotonic() >= deadline:
            return False
        time.sleep(0.05)


def _tail(text: str, limit: int = 2000) -> str:
    return text[-limit:]


def validate_base_image(
    augmented_ref: str,
    probe: ProbeSpec,
    runtime: ContainerRuntime,
    dockerfile: Path | str,
    context: Path | str,
    *,
    port: int = 4000,
    attach_timeout_s: float = 5.0,
) -> ExperimentOutcome:
    """Build the augmented base image and check both probe modes.

    Mode A (injection off): both agents attach and the probe artifact is
    produced with the correct checksum. Mode B (probe point active): the
    artifact check must fail and an injection message must appear.
    """
    build = runtime.build(augmented_ref, dockerfile, context)
    if not build.ok:
        return ExperimentOutcome(
            Phase.AUGMENT_BASE,
            Status.FAIL,
            "build-error",
            {"build_log": _tail(build.log)},
        )
    expected = artifact_digest(probe.request_path)

    # Mode A: plain run, no injection.
    handle = runtime.run(augmented_ref, to_env(FiConfig()), [port])
    try:
        if not _await_attachment(runtime, handle, attach_timeout_s):
            return ExperimentOutcome(
                Phase.MODE_A,
                Status.FAIL,
                "no-attachment",
                {"logs": _tail(runtime.logs(handle))},
            )
        response = requests.get(_endpoint(handle, port) + probe.request_path, timeout=10)
        artifact_ok = (
            response.status_code == 200
            and response.json().get("status") == "ok"
            and response.json().get("artifact") == expected
        )
        if not artifact_ok:
            return ExperimentOutcome(
                Phase.MODE_A,
                Status.FAIL,
                "probe-mismatch",
                {"response": _tail(response.text)},
            )
    finally:
        runtime.stop(handle)

    # Mode B: activate the probe point.
    env = to_env(probe.mode_b_config) + [f"{ACTIVE_POINTS_ENV}={probe.point_key}"]
    handle = runtime.run(augmented_ref, env, [port])
    try:
        if not _await_attachment(runtime, handle, attach_timeout_s):
            return ExperimentOutcome(
                Phase.MODE_B,
                Status.FAIL,
                "no-attachment",
                {"logs": _tail(runtime.logs(handle))},
            )
        response = requests.get(_endpoint(handle, port) + probe.request_path, timeout=10)
        artifact_ok = (
            response.status_code == 200
            and response.json().get("status") == "ok"
            and response.json().get("artifact") == expected
        )
        if artifact_ok:
            return ExperimentOutcome(
                Phase.MODE_B,
                Status.FAIL,
                "probe-mismatch",
                {"response": _tail(response.text), "detail": "artifact still produced"},
            )
        injected = any(
            event.kind is AgentEventKind.EXCEPTION_INJECTED
            and event.point_key == probe.point_key
            for event in parse_agent_log(runtime.logs(handle))
        )
        if not injected:
            return ExperimentOutcome(
                Phase.MODE_B,
                Status.FAIL,
                "no-injection-message",
                {"logs": _tail(runtime.logs(handle))},
            )
        return ExperimentOutcome(
            Phase.MODE_B, Status.PASS, evidence={"logs": _tail(runtime.logs(handle))}
        )
    finally:
        runtime.stop(handle)


def verify_observability(
    app_image: str,
    runtime: ContainerRuntime,
    duration_s: float = 60.0,
    *,
    metrics_port: int = 4000,
    category_probes: Mapping[str, Sequence[str]] | None = None,
    settle_s: float = 1.5,
    poll_s: float = 0.5,
    attach_timeout_s: float = 5.0,
) -> ExperimentOutcome:
    """Check attachment, per-category metric coverage, and liveness.

    The container must report both attachments, answer at least one metric
    query in every category, and stay alive for ``duration_s``.
    """
    started_wall = time.monotonic()
    probes = category_probes or CATEGORY_PROBES
    handle = runtime.run(app_image, to_env(FiConfig()), [metrics_port])
    try:
        if not _await_attachment(runtime, handle, attach_timeout_s):
            return ExperimentOutcome(
                Phase.RUN_APP,
                Status.FAIL,
                "no-attachment",
                {"logs": _tail(runtime.logs(handle))},
            )
        time.sleep(settle_s)
        endpoint = _endpoint(handle, metrics_port)
        for category, names in probes.items():
            covered = False
            for name in names:
                try:
                    series = fetch_metrics(endpoint, name, handle.started_ms, now_ms())
                except UnknownMetric:
                    continue
                if len(series) > 0:
                    covered = True
                    break
            if not covered:
                return ExperimentOutcome(
                    Phase.RUN_APP,
                    Status.FAIL,
                    f"metrics-missing:{category}",
                    {"tried": ", ".join(names)},
                )
        while time.monotonic() - started_wall < duration_s:
            if not runtime.alive(handle):
                return ExperimentOutcome(
                    Phase.RUN_APP,
                    Status.FAIL,
                    "early-exit",
                    {"logs": _tail(runtime.logs(handle))},
                )
            time.sleep(min(poll_s, 0.25))
        if not runtime.alive(handle):
            return ExperimentOutcome(
                Phase.RUN_APP,
                Status.FAIL,
                "early-exit",
                {"logs": _tail(runtime.logs(handle))},
            )
        return ExperimentOutcome(Phase.RUN_APP, Status.PASS)
    finally:
        runtime.stop(handle)


@dataclass(frozen=True)
class WorkloadRequest:
    method: str = "GET"
    path: str = "/work"


@dataclass(frozen=True)
class WorkloadSpec:
    """Request mix replayed against the service during an experiment."""

    requests: tuple[WorkloadRequest, ...] = (WorkloadRequest(),)
    interval_s: float = 1.0
    matcher: str = "exact"
    port: int = 4000

    def __post_init__(self) -> None:
        if not self.requests:
            raise ValueError("workload needs at least one request")
        if self.matcher not in ("exact", "status"):
            raise ValueError(f"unknown matcher {self.matcher!r}")


def load_workload(path: Path | str) -> WorkloadSpec:
    """Read a workload spec from a YAML or JSON file."""
    import yaml

    doc = yaml.safe_load(Path(path).read_text()) or {}
    reqs = tuple(
        WorkloadRequest(method=r.get("method", "GET"), path=r.get("path", "/work"))
        for r in doc.get("requests") or [{}]
    )
    return WorkloadSpec(
        requests=reqs,
        interval_s=float(doc.get("interval_s", 1.0)),
        matcher=doc.get("matcher", "exact"),
        port=int(doc.get("port", 4000)),
    )


@dataclass(frozen=True)
class PointVerdict:
    """Per-point campaign result."""

    point: InjectionPoint
    correctness_rate: float
    impact: ImpactResult
    resilient: bool
    performance_issue: bool


def _drive_workload(
    endpoint: str, workload: WorkloadSpec, phase_s: float
) -> list[tuple[int, str]]:
    """Send the workload for one phase; returns (status, body) per request."""
    count = max(len(workload.requests), int(round(phase_s / workload.interval_s)))
    records = []
    for i in range(count):
        request = workload.requests[i % len(workload.requests)]
        response = requests.request(
            request.method, endpoint + request.path, timeout=10
        )
        records.append((response.status_code, response.text))
        time.sleep(workload.interval_s)
    return records


def _match(
    record: tuple[int, str], reference: tuple[int, str], matcher: str
) -> bool:
    if matcher == "status":
        return record[0] == reference[0]
    return record == reference


def _correctness_rate(
    reference: list[tuple[int, str]],
    observed: list[tuple[int, str]],
    workload: WorkloadSpec,
) -> float:
    per_spec: dict[int, tuple[int, str]] = {}
    for i, record in enumerate(reference):
        per_spec.setdefault(i % len(workload.requests), record)
    matches = sum(
        1
        for i, record in enumerate(observed)
        if _match(record, per_spec[i % len(workload.requests)], workload.matcher)
    )
    return matches / len(observed) if observed else 0.0


def _stitch(
    pre: MetricSeries, post: MetricSeries, cadence_ms: int
) -> tuple[MetricSeries, int]:
    """Join the two phase series into one contiguous timeline.

    The injection phase ran in a fresh container, so its wall-clock times
    restart; re-basing them one cadence after the reference phase keeps the
    series strictly increasing with the intervention on the boundary.
    """
    base = pre.samples[-1][0]
    shifted = tuple(
        (base + (k + 1) * cadence_ms, v) for k, (_, v) in enumerate(post.samples)
    )
    merged = MetricSeries(pre.metric_name, pre.samples + shifted)
    return merged, base + cadence_ms // 2


def _run_phase(
    runtime: ContainerRuntime,
    image: str,
    env: Sequence[str],
    workload: WorkloadSpec,
    phase_s: float,
    metric: str,
    attach_timeout_s: float,
) -> tuple[list[tuple[int, str]], MetricSeries]:
    handle = runtime.run(image, env, [workload.port])
    try:
        if not _await_attachment(runtime, handle, attach_timeout_s):
            raise ExperimentError(f"agents never attached in {image}")
        endpoint = _endpoint(handle, workload.port)
        records = _drive_workload(endpoint, workload, phase_s)
        window_end = handle.started_ms + int(phase_s * 1000)
        while now_ms() < window_end:
            time.sleep(0.05)
        series = fetch_metrics(endpoint, metric, handle.started_ms, window_end)
        return records, series
    finally:
        runtime.stop(handle)


def run_fi_campaign(
    app_image: str,
    points: Sequence[InjectionPoint],
    workload: WorkloadSpec,
    runtime: ContainerRuntime,
    phase_s: float = 300.0,
    metric: str = "jvm.cpu.load",
    *,
    cadence_s: float = 1.0,
    n_boot: int = 1000,
    seed: int = 0,
    alpha: float = 0.05,
    out_dir: Path | str | None = None,
    attach_timeout_s: float = 5.0,
) -> list[PointVerdict]:
    """Run the per-point injection campaign.

    Every point gets exactly one reference phase (injection off) followed
    by one injection phase with the point activated under an unlimited
    injection budget; correctness compares injection-phase responses with
    the reference ones, and the stitched metric series feeds the impact
    analysis. A point that errors out is recorded and skipped.
    """
    verdicts: list[PointVerdict] = []
    out_root = Path(out_dir) if out_dir else None
    for point in points:
        try:
            reference_env = to_env(FiConfig())
            ref_records, ref_series = _run_phase(
                runtime, app_image, reference_env, workload, phase_s, metric,
                attach_timeout_s,
            )
            injection_config = FiConfig(countdown=UNLIMITED)
            injection_env = to_env(injection_config) + [
                f"{ACTIVE_POINTS_ENV}={point.key}"
            ]
            inj_records, inj_series = _run_phase(
                runtime, app_image, injection_env, workload, phase_s, metric,
                attach_timeout_s,
            )
            rate = _correctness_rate(ref_records, inj_records, workload)
            series, intervention_ts = _stitch(
                ref_series, inj_series, int(cadence_s * 1000)
            )
            impact = analyze(
                series,
                intervention_ts,
                AnalysisOptions(n_boot=n_boot, seed=seed, alpha=alpha),
            )
            verdict = PointVerdict(
                point=point,
                correctness_rate=rate,
                impact=impact,
                resilient=rate == 1.0,
                performance_issue=impact.significant,
            )
            verdicts.append(verdict)
            if out_root is not None:
                _write_point_outputs(
                    out_root / f"point-{point.key}",
                    verdict,
                    series,
                    intervention_ts,
                    inj_records,
                )
        except Exception as exc:  # noqa: BLE001 - campaign must keep going
            log.warning("point %s failed: %s", point.key, exc)
            if out_root is not None:
                target = out_root / f"point-{point.key}"
                target.mkdir(parents=True, exist_ok=True)
                (target / "error.txt").write_text(f"{exc}\n")
    return verdicts


def verdict_to_dict(verdict: PointVerdict) -> dict:
    return {
        "point": {
            "key": verdict.point.key,
            "class_name": verdict.point.class_name,
            "method_name": verdict.point.method_name,
            "exception_type": verdict.point.exception_type,
        },
        "correctness_rate": verdict.correctness_rate,
        "p_value": verdict.impact.p_value,
        "relative_effect": verdict.impact.relative_effect,
        "significant": verdict.impact.significant,
        "resilient": verdict.resilient,
        "performance_issue": verdict.performance_issue,
        "pre_sample_count": verdict.impact.pre_sample_count,
        "post_sample_count": verdict.impact.post_sample_count,
    }


def _write_point_outputs(
    target: Path,
    verdict: PointVerdict,
    series: MetricSeries,
    intervention_ts: int,
    records: list[tuple[int, str]],
) -> None:
    target.mkdir(parents=True, exist_ok=True)
    (target / "metrics.json").write_text(
        json.dumps(series_to_dict(series, intervention_ts), indent=2) + "\n"
    )
    (target / "responses.log").write_text(
        "".join(f"{status} {body}\n" for status, body in records)
    )
    (target / "verdict.json").write_text(
        json.dumps(verdict_to_dict(verdict), indent=2) + "\n"
    )


def measure_overhead(
    original_image: str,
    augmented_image: str,
    workload: WorkloadSpec,
    runtime: ContainerRuntime,
    repeats: int = 30,
    calls_per_api: int = 300,
    *,
    stats_every: int = 10,
) -> OverheadReport:
    """Compare image size, CPU, memory, and response time across images.

    Each repeat runs a fresh container and fires ``calls_per_api`` calls at
    every workload request, sampling runtime stats along the way. A repeat
    that fails is recorded and skipped; an image with no successful repeat
    raises ExperimentError.
    """
    failures: list[str] = []

    def measure(tag: str) -> tuple[float, float, float, float]:
        size_mb = runtime.image_size(tag) / 1e6
        cpu_values: list[float] = []
        memory_values: list[float] = []
        durations: list[float] = []
        successes = 0
        for repeat in range(repeats):
            try:
                handle = runtime.run(tag, to_env(FiConfig()), [workload.port])
                try:
                    endpoint = _endpoint(handle, workload.port)
                    calls = 0
                    for request in workload.requests:
                        for _ in range(calls_per_api):
                            begin = time.perf_counter()
                            requests.request(
                                request.method, endpoint + request.path, timeout=10
                            )
                            durations.append(time.perf_counter() - begin)
                            if calls % stats_every == 0:
                                cpu, memory = runtime.stats(handle)
                                cpu_values.append(cpu)
                                memory_values.append(memory)
                            calls += 1
                    successes += 1
                finally:
                    runtime.stop(handle)
            except Exception as exc:  # noqa: BLE001 - a repeat may die
                failures.append(f"{tag} repeat {repeat}: {exc}")
        if not successes:
            raise ExperimentError(f"no successful repeats for {tag}")
        mean = lambda xs: sum(xs) / len(xs)  # noqa: E731
        return (
            size_mb,
            mean(cpu_values) * 100.0,
            mean(memory_values) / 1e6,
            mean(durations),
        )

    originals = measure(original_image)
    augmenteds = measure(augmented_image)
    categories = ("ImageSize", "CpuUsage", "MemoryUsage", "ResponseTime")
    units = ("MB", "%", "MB", "s")
    rows = tuple(
        OverheadRow(category, orig, aug, unit)
        for category, orig, aug, unit in zip(categories, originals, augmenteds, units)
    )
    return OverheadReport(rows=rows, failures=tuple(failures))
