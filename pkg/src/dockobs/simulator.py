"""In-process stand-in for an instrumented target service.

The simulator behaves like a containerized Java service that both agents
have been attached to: it logs the attachment handshake, writes the
injection-points CSV, serves a toy workload endpoint that the fault
injector can break, and answers metric queries with synthetic series whose
level shifts while injections are active. Behavior is deterministic under a
fixed seed.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
import re
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .agent import (
    AgentEventKind,
    AgentLogEvent,
    FiConfig,
    InjectionPoint,
    format_event,
    points_to_csv,
    should_inject,
)

__all__ = [
    "SimPointSpec",
    "MetricSpec",
    "DEFAULT_METRIC_CATALOG",
    "StartupError",
    "TargetSimulator",
    "run_target_simulator",
    "artifact_digest",
    "now_ms",
]


class StartupError(RuntimeError):
    """The simulator could not start, typically because the port is taken."""


@dataclass(frozen=True)
class SimPointSpec:
    """Wiring for one injection point inside the simulated service.

    ``breaks_response`` distinguishes a point whose exception escapes (error
    payload returned) from one the service recovers from; ``metric_impact``
    is the relative level shift applied to every metric while the point is
    armed (-0.5 halves the level).
    """

    key: str
    class_name: str
    method_name: str
    exception_type: str
    breaks_response: bool = True
    metric_impact: float = 0.0


@dataclass(frozen=True)
class MetricSpec:
    """Category and baseline level of one synthetic metric."""

    category: str
    base: float


DEFAULT_METRIC_CATALOG: Mapping[str, MetricSpec] = {
    "os.cpu.load": MetricSpec("os", 25.0),
    "os.disk.usage": MetricSpec("os", 62.0),
    "jvm.cpu.load": MetricSpec("jvm", 40.0),
    "jvm.heap.used": MetricSpec("jvm", 512.0),
    "jvm.gc.count": MetricSpec("jvm", 12.0),
    "http.response.time": MetricSpec("library", 95.0),
    "db.transaction.time": MetricSpec("library", 14.0),
    "app.active.sessions": MetricSpec("application", 30.0),
}


def now_ms() -> int:
    return int(time.time() * 1000)


def artifact_digest(path: str) -> str:
    """Checksum of the artifact the workload endpoint serves for ``path``."""
    return hashlib.sha256(f"artifact:{path}".encode()).hexdigest()


class TargetSimulator:
    """A running simulated service bound to one localhost port."""

    def __init__(
        self,
        config: FiConfig,
        points: Sequence[SimPointSpec],
        *,
        workdir: Path | str,
        port: int = 0,
        seed: int | str = 0,
        active_keys: Iterable[str] = (),
        attach_logs: bool = True,
        exit_after_s: float | None = None,
        base_latency_s: float = 0.0,
        noise: float = 0.01,
        metric_catalog: Mapping[str, MetricSpec] | None = None,
    ) -> None:
        self.config = config
        self._specs = {spec.key: spec for spec in points}
        self._workdir = Path(workdir)
        self._requested_port = port
        self._seed = seed
        self._active_keys = tuple(active_keys)
        self._attach_logs = attach_logs
        self._exit_after_s = exit_after_s
        self._base_latency_s = base_latency_s
        self._noise = noise
        self._catalog = dict(metric_catalog or DEFAULT_METRIC_CATALOG)

        self._rng = random.Random(seed)
        self._lock = threading.Lock()
        self._log_lines: list[str] = []
        self._impact_events: list[tuple[int, float]] = []
        self._points: dict[str, InjectionPoint] = {}
        self._server: ThreadingHTTPServer | None = None
        self._thread: threading.Thread | None = None
        self._exit_timer: threading.Timer | None = None
        self._alive = False
        self.started_ms = 0
        self._start_sec = 0

    # -- lifecycle -----------------------------------------------------

    def start(self) -> None:
        handler = self._make_handler()
        try:
            self._server = ThreadingHTTPServer(
                ("127.0.0.1", self._requested_port), handler
            )
        except OSError as exc:
            raise StartupError(f"cannot bind port {self._requested_port}: {exc}") from exc
        self.started_ms = now_ms()
        self._start_sec = math.ceil(self.started_ms / 1000)
        # attach_logs=False plays an image whose agents never came up: no
        # handshake, no registration, no CSV, and injections never fire.
        if self._attach_logs:
            self._register_points()
            self._write_points_csv()
            self._log(AgentEventKind.OBSERVABILITY_ATTACHED)
            self._log(AgentEventKind.FAULT_INJECTOR_ATTACHED)
            for key in self._points:
                self._log(AgentEventKind.POINT_REGISTERED, key)
        self._alive = True
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        if self._exit_after_s is not None:
            self._exit_timer = threading.Timer(self._exit_after_s, self.stop)
            self._exit_timer.daemon = True
            self._exit_timer.start()

    def stop(self) -> None:
        # May be called from the exit timer and the owner at once; the swap
        # under the lock makes sure only one caller tears the server down.
        with self._lock:
            timer, self._exit_timer = self._exit_timer, None
            server, self._server = self._server, None
            self._alive = False
        if timer is not None:
            timer.cancel()
        if server is not None:
            server.shutdown()
            server.server_close()

    @property
    def alive(self) -> bool:
        return self._alive

    @property
    def port(self) -> int:
        if self._server is None:
            raise RuntimeError("simulator is not running")
        return self._server.server_address[1]

    @property
    def endpoint(self) -> str:
        return f"http://127.0.0.1:{self.port}"

    # -- agent bookkeeping ---------------------------------------------

    def _register_points(self) -> None:
        # FILTER screens instrumented classes, EFILTER the declared
        # exception types; points failing either never register.
        name_re = re.compile(self.config.filter)
        exc_re = re.compile(self.config.efilter)
        for spec in self._specs.values():
            if not name_re.search(spec.class_name):
                continue
            if not exc_re.search(spec.exception_type):
                continue
            point = InjectionPoint(
                key=spec.key,
                class_name=spec.class_name,
                method_name=spec.method_name,
                exception_type=spec.exception_type,
                active=spec.key in self._active_keys,
                remaining=self.config.countdown,
            )
            self._points[spec.key] = point
            if point.active or self.config.default_mode == "on":
                self._impact_events.append((self.started_ms, spec.metric_impact))

    def _write_points_csv(self) -> None:
        target = Path(self.config.csv_path)
        if not target.is_absolute():
            target = self._workdir / target
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(points_to_csv(self._points.values()))

    def _log(self, kind: AgentEventKind, key: str | None = None) -> None:
        event = AgentLogEvent(timestamp=now_ms(), kind=kind, point_key=key)
        self._log_lines.append(format_event(event))

    def log_text(self) -> str:
        return "\n".join(self._log_lines) + ("\n" if self._log_lines else "")

    def points(self) -> list[InjectionPoint]:
        return list(self._points.values())

    # -- request handling ----------------------------------------------

    def _evaluate_injections(self) -> list[SimPointSpec]:
        fired = []
        with self._lock:
            for key, point in self._points.items():
                before = point.remaining
                if should_inject(point, self.config, self._rng):
                    spec = self._specs[key]
                    fired.append(spec)
                    self._log(AgentEventKind.EXCEPTION_INJECTED, key)
                    if before > 0 and point.remaining == 0:
                        # Budget exhausted: the level shift ends here.
                        self._impact_events.append((now_ms(), -spec.metric_impact))
        return fired

    def _impact_at(self, ms: int) -> float:
        return sum(delta for ts, delta in self._impact_events if ts <= ms)

    def _metric_value(self, metric: str, sec: int) -> float:
        spec = self._catalog[metric]
        rel = sec - self._start_sec
        draw = random.Random(f"{self._seed}:{metric}:{rel}").gauss(0.0, 1.0)
        value = spec.base * (1.0 + self._noise * draw)
        return value * (1.0 + self._impact_at(sec * 1000))

    def metric_samples(
        self, metric: str, start_ms: int, end_ms: int
    ) -> list[tuple[int, float]]:
        """Samples on the 1 Hz grid inside [start_ms, end_ms), clamped to
        the simulator's own lifetime."""
        if metric not in self._catalog:
            raise KeyError(metric)
        lo = max(start_ms, self.started_ms)
        hi = min(end_ms, now_ms())
        if hi <= lo:
            return []
        first = math.ceil(lo / 1000)
        last = math.ceil(hi / 1000)
        return [(sec * 1000, self._metric_value(metric, sec)) for sec in range(first, last)]

    def _make_handler(self):
        simulator = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):  # pragma: no cover - silence stderr
                pass

            def _send_json(self, status: int, payload: dict) -> None:
                body = json.dumps(payload, sort_keys=True).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def do_GET(self) -> None:
                fired = simulator._evaluate_injections()
                if simulator._base_latency_s:
                    time.sleep(simulator._base_latency_s)
                broken = next((s for s in fired if s.breaks_response), None)
                if broken is not None:
                    self._send_json(
                        500,
                        {
                            "status": "error",
                            "exception": broken.exception_type,
                            "point": broken.key,
                        },
                    )
                    return
                self._send_json(
                    200,
                    {
                        "status": "ok",
                        "path": self.path,
                        "artifact": artifact_digest(self.path),
                    },
                )

            def do_POST(self) -> None:
                if self.path.rstrip("/") != "/metrics":
                    self._send_json(404, {"error": "not found"})
                    return
                length = int(self.headers.get("Content-Length") or 0)
                try:
                    query = json.loads(self.rfile.read(length) or b"{}")
                    metric = query["metric"]
                    start = int(query["start"])
                    end = int(query["end"])
                except (ValueError, KeyError, TypeError):
                    self._send_json(400, {"error": "malformed metrics query"})
                    return
                try:
                    samples = simulator.metric_samples(metric, start, end)
                except KeyError:
                    self._send_json(404, {"error": f"unknown metric {metric!r}"})
                    return
                self._send_json(200, {"metric": metric, "samples": samples})

        return Handler


def run_target_simulator(
    config: FiConfig,
    points_spec: Sequence[SimPointSpec],
    metrics_port: int = 0,
    **kwargs,
) -> TargetSimulator:
    """Start a simulator and return the running handle.

    Raises:
        StartupError: the requested port cannot be bound.
    """
    simulator = TargetSimulator(config, points_spec, port=metrics_port, **kwargs)
    simulator.start()
    return simulator
