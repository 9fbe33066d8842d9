import pytest
from pathlib import Path

from dockobs.augment import (
    ModulePaths,
    default_rulebook,
    generate_augmented_base,
    match_rule,
)
from dockobs.dockerfile import emit, parse_image_ref
from dockobs.runtime import FakeRuntime, SimulatorProfile
from dockobs.simulator import SimPointSpec

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture
def data_dir() -> Path:
    return DATA_DIR


@pytest.fixture
def module_dirs(tmp_path) -> ModulePaths:
    """Two payload directories standing in for the agent jars."""
    obs = tmp_path / "obs_payload"
    obs.mkdir()
    (obs / "agent.jar").write_text("observability agent\n")
    fi = tmp_path / "fi_payload"
    fi.mkdir()
    (fi / "injector.jar").write_text("fault injector\n")
    return ModulePaths(observability=obs, fault_injection=fi)


BREAKING_POINT = SimPointSpec(
    key="svc.read",
    class_name="com.example.Storage",
    method_name="read",
    exception_type="java.io.IOException",
    breaks_response=True,
    metric_impact=-0.62,
)
HANDLED_POINT = SimPointSpec(
    key="svc.retry",
    class_name="com.example.Client",
    method_name="call",
    exception_type="java.net.SocketTimeoutException",
    breaks_response=False,
    metric_impact=0.0,
)


@pytest.fixture
def fake_runtime(tmp_path) -> FakeRuntime:
    """A fake runtime with one base image carrying two injection points."""
    runtime = FakeRuntime(workroot=tmp_path / "containers", seed=11)
    runtime.register_image(
        "openjdk:8-jdk",
        300_000_000,
        SimulatorProfile(points=(BREAKING_POINT, HANDLED_POINT)),
    )
    return runtime


@pytest.fixture
def augmented_context(tmp_path, module_dirs):
    """Build context for the augmented base of openjdk:8-jdk."""
    ref = parse_image_ref("openjdk:8-jdk")
    rule = match_rule(default_rulebook(), ref)
    plan = generate_augmented_base(ref, rule, module_dirs)
    context = tmp_path / "context"
    context.mkdir()
    dockerfile = context / "Dockerfile"
    dockerfile.write_bytes(emit(plan.generated_dockerfile))
    return plan, dockerfile, context
