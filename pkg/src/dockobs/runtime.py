"""Container runtime abstraction with interchangeable backends.

``DockerCliRuntime`` shells out to a real container engine with fixed
command shapes; ``FakeRuntime`` keeps everything in process, running a
``TargetSimulator`` per "container" so the orchestration layer can be
exercised end to end without an engine. Both honor the same contract:
build, run, logs, stop, alive, image_size, stats.
"""

from __future__ import annotations

import abc
import itertools
import random
import subprocess
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .agent import parse_active_points, parse_env
from .dockerfile import extract_base_images, parse
from .simulator import MetricSpec, SimPointSpec, TargetSimulator

__all__ = [
    "BuildResult",
    "ContainerHandle",
    "ContainerRuntime",
    "RunError",
    "SimulatorProfile",
    "FakeRuntime",
    "DockerCliRuntime",
]


class RunError(RuntimeError):
    """A container could not be started or addressed."""


@dataclass(frozen=True)
class BuildResult:
    ok: bool
    tag: str
    log: str


class ContainerHandle(abc.ABC):
    """Opaque reference to one running container."""

    container_id: str
    started_ms: int

    @abc.abstractmethod
    def host_port(self, container_port: int) -> int:
        """Host port that reaches ``container_port`` inside the container."""


class ContainerRuntime(abc.ABC):
    @abc.abstractmethod
    def build(self, tag: str, dockerfile_path: Path | str, context_dir: Path | str) -> BuildResult:
        ...

    @abc.abstractmethod
    def run(self, image: str, env: Sequence[str], ports: Sequence[int]) -> ContainerHandle:
        ...

    @abc.abstractmethod
    def logs(self, handle: ContainerHandle) -> str:
        ...

    @abc.abstractmethod
    def stop(self, handle: ContainerHandle) -> None:
        ...

    @abc.abstractmethod
    def alive(self, handle: ContainerHandle) -> bool:
        ...

    @abc.abstractmethod
    def image_size(self, tag: str) -> int:
        """Image size in bytes."""

    @abc.abstractmethod
    def stats(self, handle: ContainerHandle) -> tuple[float, int]:
        """(cpu fraction, memory bytes) sampled once."""


# -- fake backend -------------------------------------------------------


@dataclass(frozen=True)
class SimulatorProfile:
    """How containers of one image behave when the fake runtime runs them."""

    points: tuple[SimPointSpec, ...] = ()
    base_latency_s: float = 0.0
    cpu_fraction: float = 0.03
    memory_bytes: int = 400_000_000
    attach_logs: bool = True
    exit_after_s: float | None = None
    noise: float = 0.01
    metric_catalog: Mapping[str, MetricSpec] | None = None
    metrics_share_seed: bool = True


@dataclass
class _FakeImage:
    tag: str
    size_bytes: int
    profile: SimulatorProfile = field(default_factory=SimulatorProfile)


class FakeContainer(ContainerHandle):
    def __init__(
        self,
        container_id: str,
        simulator: TargetSimulator,
        profile: SimulatorProfile,
        ordinal: int,
    ):
        self.container_id = container_id
        self.simulator = simulator
        self.profile = profile
        self.started_ms = simulator.started_ms
        self.ordinal = ordinal
        self.stats_calls = 0

    def host_port(self, container_port: int) -> int:
        return self.simulator.port


class FakeRuntime(ContainerRuntime):
    """In-process runtime: each run() starts a TargetSimulator.

    Builds validate the Dockerfile the way an engine would (a FROM must
    exist and resolve to a known, variable-free image) and register the new
    tag with the base image's size plus a fixed layer cost. Behavior
    profiles attach to tags via ``register_image``/``set_profile`` and are
    inherited from the base image on build.
    """

    def __init__(
        self,
        workroot: Path | str | None = None,
        seed: int = 0,
        build_size_delta: int = 44_000_000,
    ) -> None:
        self._workroot = Path(workroot) if workroot else Path(tempfile.mkdtemp(prefix="dockobs-"))
        self._seed = seed
        self._build_size_delta = build_size_delta
        self._images: dict[str, _FakeImage] = {}
        self._ordinals = itertools.count()

    def register_image(
        self, tag: str, size_bytes: int, profile: SimulatorProfile | None = None
    ) -> None:
        self._images[tag] = _FakeImage(tag, size_bytes, profile or SimulatorProfile())

    def set_profile(self, tag: str, profile: SimulatorProfile) -> None:
        self._images[tag].profile = profile

    def build(self, tag: str, dockerfile_path: Path | str, context_dir: Path | str) -> BuildResult:
        try:
            doc = parse(Path(dockerfile_path).read_bytes())
        except OSError as exc:
            return BuildResult(False, tag, f"cannot read Dockerfile: {exc}")
        refs = extract_base_images(doc)
        if not refs:
            return BuildResult(False, tag, "Dockerfile has no FROM instruction")
        base_ref = refs[-1]
        if base_ref.has_variable:
            return BuildResult(
                False, tag, f"invalid reference format: {base_ref.render(with_alias=False)}"
            )
        base_tag = base_ref.render(with_alias=False)
        base = self._images.get(base_tag)
        if base is None:
            return BuildResult(False, tag, f"pull access denied for {base_tag}")
        profile = self._images[tag].profile if tag in self._images else base.profile
        self._images[tag] = _FakeImage(
            tag, base.size_bytes + self._build_size_delta, profile
        )
        return BuildResult(True, tag, f"built {tag} from {base_tag}")

    def run(self, image: str, env: Sequence[str], ports: Sequence[int]) -> ContainerHandle:
        entry = self._images.get(image)
        if entry is None:
            raise RunError(f"unknown image {image!r}")
        config = parse_env(env)
        active = parse_active_points(env)
        ordinal = next(self._ordinals)
        profile = entry.profile
        # Containers of one image share metric noise by default, which keeps
        # restart-based experiments reproducible; opting out gives each
        # container its own stream.
        seed = f"{self._seed}:{image}" if profile.metrics_share_seed else f"{self._seed}:{ordinal}"
        simulator = TargetSimulator(
            config,
            profile.points,
            workdir=self._workroot / f"c{ordinal}",
            port=0,
            seed=seed,
            active_keys=active,
            attach_logs=profile.attach_logs,
            exit_after_s=profile.exit_after_s,
            base_latency_s=profile.base_latency_s,
            noise=profile.noise,
            metric_catalog=profile.metric_catalog,
        )
        simulator.start()
        return FakeContainer(f"fake-{ordinal}", simulator, profile, ordinal)

    def logs(self, handle: ContainerHandle) -> str:
        return self._simulator(handle).log_text()

    def stop(self, handle: ContainerHandle) -> None:
        self._simulator(handle).stop()

    def alive(self, handle: ContainerHandle) -> bool:
        return self._simulator(handle).alive

    def image_size(self, tag: str) -> int:
        entry = self._images.get(tag)
        if entry is None:
            raise RunError(f"unknown image {tag!r}")
        return entry.size_bytes

    def stats(self, handle: ContainerHandle) -> tuple[float, int]:
        container = self._container(handle)
        jitter = random.Random(
            f"{self._seed}:stats:{container.ordinal}:{container.stats_calls}"
        )
        container.stats_calls += 1
        profile = container.profile
        cpu = profile.cpu_fraction * (1.0 + 0.02 * jitter.uniform(-1.0, 1.0))
        memory = int(profile.memory_bytes * (1.0 + 0.01 * jitter.uniform(-1.0, 1.0)))
        return cpu, memory

    @staticmethod
    def _container(handle: ContainerHandle) -> FakeContainer:
        if not isinstance(handle, FakeContainer):
            raise RunError("handle does not belong to this runtime")
        return handle

    @classmethod
    def _simulator(cls, handle: ContainerHandle) -> TargetSimulator:
        return cls._container(handle).simulator


# -- real backend -------------------------------------------------------


class DockerContainer(ContainerHandle):
    def __init__(self, container_id: str, runtime: "DockerCliRuntime"):
        self.container_id = container_id
        self.started_ms = int(time.time() * 1000)
        self._runtime = runtime

    def host_port(self, container_port: int) -> int:
        return self._runtime._host_port(self.container_id, container_port)


class DockerCliRuntime(ContainerRuntime):
    """Shell-out backend using a docker-compatible CLI.

    Build and run keep the canonical command shapes
    ``docker build -t <tag> -f <file> <context>`` and
    ``docker run -e NAME=VALUE ... <image>``.
    """

    def __init__(self, binary: str = "docker", runner=subprocess.run) -> None:
        self._binary = binary
        self._run = runner

    def _invoke(self, argv: list[str], check: bool = True) -> subprocess.CompletedProcess:
        return self._run(argv, capture_output=True, text=True, check=check)

    def build(self, tag: str, dockerfile_path: Path | str, context_dir: Path | str) -> BuildResult:
        argv = [
            self._binary,
            "build",
            "-t",
            tag,
            "-f",
            str(dockerfile_path),
            str(context_dir),
        ]
        proc = self._invoke(argv, check=False)
        return BuildResult(proc.returncode == 0, tag, proc.stdout + proc.stderr)

    def run(self, image: str, env: Sequence[str], ports: Sequence[int]) -> ContainerHandle:
        argv = [self._binary, "run", "-d"]
        for pair in env:
            argv += ["-e", pair]
        for port in ports:
            argv += ["-p", f"127.0.0.1:0:{port}"]
        argv.append(image)
        proc = self._invoke(argv, check=False)
        if proc.returncode != 0:
            raise RunError(proc.stderr.strip() or f"docker run failed for {image}")
        return DockerContainer(proc.stdout.strip(), self)

    def _host_port(self, container_id: str, container_port: int) -> int:
        proc = self._invoke([self._binary, "port", container_id, str(container_port)])
        # Output looks like "0.0.0.0:49153" (possibly several lines).
        first = proc.stdout.strip().splitlines()[0]
        return int(first.rsplit(":", 1)[1])

    def logs(self, handle: ContainerHandle) -> str:
        proc = self._invoke([self._binary, "logs", handle.container_id], check=False)
        return proc.stdout + proc.stderr

    def stop(self, handle: ContainerHandle) -> None:
        self._invoke([self._binary, "stop", handle.container_id], check=False)

    def alive(self, handle: ContainerHandle) -> bool:
        proc = self._invoke(
            [self._binary, "inspect", "-f", "{{.State.Running}}", handle.container_id],
            check=False,
        )
        return proc.stdout.strip() == "true"

    def image_size(self, tag: str) -> int:
        proc = self._invoke([self._binary, "image", "inspect", "-f", "{{.Size}}", tag])
        return int(proc.stdout.strip())

    def stats(self, handle: ContainerHandle) -> tuple[float, int]:
        proc = self._invoke(
            [
                self._binary,
                "stats",
                "--no-stream",
                "--format",
                "{{.CPUPerc}}|{{.MemUsage}}",
                handle.container_id,
            ]
        )
        cpu_text, mem_text = proc.stdout.strip().split("|", 1)
        cpu = float(cpu_text.rstrip("%")) / 100.0
        used = mem_text.split("/")[0].strip()
        return cpu, _parse_mem(used)


_MEM_UNITS = {
    "B": 1,
    "kB": 1000,
    "KB": 1000,
    "MB": 1000**2,
    "GB": 1000**3,
    "KiB": 1024,
    "MiB": 1024**2,
    "GiB": 1024**3,
}


def _parse_mem(text: str) -> int:
    for unit in sorted(_MEM_UNITS, key=len, reverse=True):
        if text.endswith(unit):
            return int(float(text[: -len(unit)]) * _MEM_UNITS[unit])
    return int(float(text))
