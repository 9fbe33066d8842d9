"""Command-line front end for the pipeline.

Exit codes: 0 on success, 1 when an operation ran but reported a failure
(a validation that did not pass, a campaign with errored points, an
analysis that could not fit), 2 on usage or input errors.
"""

from __future__ import annotations

import argparse
import json
import shutil
import sys
from pathlib import Path
from types import SimpleNamespace

import yaml

from . import __version__
from .agent import RowError, parse_points_csv
from .augment import (
    AlreadyAugmented,
    FAULT_INJECTION_CONTEXT_DIR,
    ModulePaths,
    NoFromInstruction,
    OBSERVABILITY_CONTEXT_DIR,
    VariableReference,
    default_rulebook,
    generate_augmented_base,
    load_rulebook,
    match_rule,
    rewrite_application,
)
from .corpus import render_stats, scan_corpus
from .dockerfile import (
    EmptyReference,
    InvalidReference,
    Kind,
    emit,
    parse,
    parse_image_ref,
)
from .impact import (
    AnalysisOptions,
    EmptyPost,
    EmptyPre,
    FitError,
    ZeroBaseline,
    analyze,
    load_series_document,
    result_to_dict,
    series_to_dict,
)
from .orchestrator import (
    ExperimentError,
    ProbeSpec,
    Status,
    WorkloadSpec,
    load_workload,
    measure_overhead,
    run_fi_campaign,
    validate_base_image,
    verify_observability,
)
from .reporting import render_overhead, render_point_table, summarize, summary_to_dict
from .runtime import (
    ContainerRuntime,
    DockerCliRuntime,
    FakeRuntime,
    SimulatorProfile,
)
from .simulator import DEFAULT_METRIC_CATALOG, SimPointSpec

__all__ = ["main", "build_runtime", "load_scenario"]


# -- runtime selection --------------------------------------------------


def load_scenario(path: Path | str) -> list[tuple[str, int, SimulatorProfile]]:
    """Read the fake-runtime image catalog from a YAML file.

    Each entry names a tag, a size in MB, and an optional behavior profile
    (injection points, latency, resource footprint, metric gaps, crash
    timer).
    """
    doc = yaml.safe_load(Path(path).read_text()) or {}
    entries = []
    for item in doc.get("images", []):
        profile_doc = item.get("profile") or {}
        points = tuple(
            SimPointSpec(
                key=p["key"],
                class_name=p.get("class_name", "com.example.Service"),
                method_name=p.get("method_name", "handle"),
                exception_type=p.get("exception_type", "java.lang.Exception"),
                breaks_response=bool(p.get("breaks_response", True)),
                metric_impact=float(p.get("metric_impact", 0.0)),
            )
            for p in profile_doc.get("points", [])
        )
        dropped = set(profile_doc.get("drop_categories", []))
        catalog = None
        if dropped:
            catalog = {
                name: spec
                for name, spec in DEFAULT_METRIC_CATALOG.items()
                if spec.category not in dropped
            }
        exit_after = profile_doc.get("exit_after_s")
        profile = SimulatorProfile(
            points=points,
            base_latency_s=float(profile_doc.get("latency_ms", 0.0)) / 1000.0,
            cpu_fraction=float(profile_doc.get("cpu_fraction", 0.03)),
            memory_bytes=int(float(profile_doc.get("memory_mb", 400.0)) * 1e6),
            attach_logs=bool(profile_doc.get("attach_logs", True)),
            exit_after_s=float(exit_after) if exit_after is not None else None,
            noise=float(profile_doc.get("noise", 0.01)),
            metric_catalog=catalog,
            metrics_share_seed=bool(profile_doc.get("metrics_share_seed", True)),
        )
        size_bytes = int(float(item.get("size_mb", 100.0)) * 1e6)
        entries.append((item["tag"], size_bytes, profile))
    return entries


def build_runtime(args: argparse.Namespace) -> ContainerRuntime:
    if args.runtime == "real":
        return DockerCliRuntime()
    runtime = FakeRuntime(seed=args.seed)
    if getattr(args, "scenario", None):
        for tag, size_bytes, profile in load_scenario(args.scenario):
            runtime.register_image(tag, size_bytes, profile)
    return runtime


def _add_runtime_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--runtime",
        choices=("fake", "real"),
        default="fake",
        help="container backend: in-process fake or the docker CLI",
    )
    parser.add_argument(
        "--scenario",
        help="YAML image catalog for the fake runtime",
    )
    parser.add_argument("--seed", type=int, default=0, help="base seed")


# -- subcommands --------------------------------------------------------


def cmd_parse(args: argparse.Namespace) -> int:
    data = Path(args.file).read_bytes()
    doc = parse(data)
    if args.check and emit(doc) != data:
        print("round-trip mismatch", file=sys.stderr)
        return 1
    if args.json:
        listing = [
            {
                "kind": inst.kind.value,
                "lines": list(inst.line_range),
                "arguments": inst.arguments,
                "image": inst.image_ref.render() if inst.image_ref else None,
            }
            for inst in doc.instructions
        ]
        print(json.dumps(listing, indent=2))
        return 0
    for inst in doc.instructions:
        start, end = inst.line_range
        where = f"{start}" if start == end else f"{start}-{end}"
        label = inst.kind.value if inst.kind is not Kind.OTHER else "?"
        print(f"{where:>7}  {label:<8} {inst.arguments}")
    return 0


def cmd_analyze_corpus(args: argparse.Namespace) -> int:
    stats = scan_corpus(args.root, k=args.top, official_allowlist=args.allowlist)
    print(render_stats(stats, fmt=args.format))
    if args.format == "table":
        print(
            f"\ndockerfiles={stats.dockerfile_count}"
            f" from_instructions={stats.from_count}"
            f" unique_images={stats.unique_image_count}"
            f" top{args.top}_coverage={stats.topk_coverage:.4f}"
            f" skipped={len(stats.skipped_files)}"
        )
    return 0


def cmd_augment(args: argparse.Namespace) -> int:
    try:
        ref = parse_image_ref(args.image)
        rulebook = load_rulebook(args.rules) if args.rules else default_rulebook()
        rule = match_rule(rulebook, ref)
        plan = generate_augmented_base(
            ref, rule, ModulePaths(Path(args.obs_dir), Path(args.fi_dir))
        )
    except (EmptyReference, InvalidReference, VariableReference, AlreadyAugmented) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "Dockerfile").write_bytes(emit(plan.generated_dockerfile))
    shutil.copytree(
        plan.module_paths.observability,
        out / OBSERVABILITY_CONTEXT_DIR,
        dirs_exist_ok=True,
    )
    shutil.copytree(
        plan.module_paths.fault_injection,
        out / FAULT_INJECTION_CONTEXT_DIR,
        dirs_exist_ok=True,
    )
    print(plan.augmented.render())
    return 0


def cmd_rewrite(args: argparse.Namespace) -> int:
    doc = parse(Path(args.file).read_bytes())
    try:
        rewritten = rewrite_application(doc)
    except (NoFromInstruction, VariableReference, AlreadyAugmented) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.out and args.out != "-":
        Path(args.out).write_bytes(emit(rewritten))
    else:
        sys.stdout.buffer.write(emit(rewritten))
    return 0


def cmd_validate_base(args: argparse.Namespace) -> int:
    runtime = build_runtime(args)
    probe = ProbeSpec(point_key=args.probe_key, request_path=args.probe_path)
    outcome = validate_base_image(
        args.tag, probe, runtime, Path(args.dockerfile), Path(args.context)
    )
    print(
        json.dumps(
            {
                "phase": outcome.phase.value,
                "status": outcome.status.value,
                "failure_class": outcome.failure_class,
                "evidence": dict(outcome.evidence),
            },
            indent=2,
        )
    )
    return 0 if outcome.status is Status.PASS else 1


def cmd_verify_observability(args: argparse.Namespace) -> int:
    runtime = build_runtime(args)
    outcome = verify_observability(args.image, runtime, duration_s=args.duration)
    print(
        json.dumps(
            {
                "phase": outcome.phase.value,
                "status": outcome.status.value,
                "failure_class": outcome.failure_class,
            },
            indent=2,
        )
    )
    return 0 if outcome.status is Status.PASS else 1


def _load_workload_arg(args: argparse.Namespace) -> WorkloadSpec:
    if getattr(args, "workload", None):
        return load_workload(args.workload)
    return WorkloadSpec()


def cmd_campaign(args: argparse.Namespace) -> int:
    runtime = build_runtime(args)
    try:
        points = parse_points_csv(Path(args.points).read_text())
    except RowError as exc:
        print(f"error: bad points file: {exc}", file=sys.stderr)
        return 2
    workload = _load_workload_arg(args)
    verdicts = run_fi_campaign(
        args.image,
        points,
        workload,
        runtime,
        phase_s=args.phase,
        metric=args.metric,
        cadence_s=args.cadence,
        n_boot=args.boot,
        seed=args.seed,
        alpha=args.alpha,
        out_dir=args.out,
    )
    print(render_point_table(verdicts, fmt=args.format))
    summary = summarize(verdicts, total_points=len(points))
    print()
    print(json.dumps(summary_to_dict(summary)))
    return 0 if summary.covered == summary.total_points else 1


def cmd_overhead(args: argparse.Namespace) -> int:
    runtime = build_runtime(args)
    workload = _load_workload_arg(args)
    try:
        report = measure_overhead(
            args.original,
            args.augmented,
            workload,
            runtime,
            repeats=args.repeats,
            calls_per_api=args.calls,
        )
    except ExperimentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(render_overhead(report, fmt=args.format))
    if report.failures:
        print(f"\n{len(report.failures)} failed repeats", file=sys.stderr)
    if args.json:
        Path(args.json).write_text(
            json.dumps(
                {
                    "rows": [
                        {
                            "category": row.category,
                            "original": row.original,
                            "augmented": row.augmented,
                            "unit": row.unit,
                        }
                        for row in report.rows
                    ],
                    "failures": list(report.failures),
                },
                indent=2,
            )
            + "\n"
        )
    return 0


def cmd_impact(args: argparse.Namespace) -> int:
    series, intervention = load_series_document(args.input)
    try:
        result = analyze(
            series,
            intervention,
            AnalysisOptions(n_boot=args.boot, seed=args.seed, alpha=args.alpha),
        )
    except (EmptyPre, EmptyPost, FitError, ZeroBaseline) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(result_to_dict(result), indent=2))
    if args.plot_data:
        doc = series_to_dict(series, intervention)
        doc["predicted_post"] = [
            [t, v] for t, v in result.predicted_post.samples
        ]
        Path(args.plot_data).write_text(json.dumps(doc, indent=2) + "\n")
    return 0


def _load_verdict_files(root: Path) -> list[SimpleNamespace]:
    verdicts = []
    for path in sorted(root.glob("*/verdict.json")):
        doc = json.loads(path.read_text())
        verdicts.append(
            SimpleNamespace(
                point=SimpleNamespace(**doc["point"]),
                correctness_rate=doc["correctness_rate"],
                impact=SimpleNamespace(
                    p_value=doc["p_value"], relative_effect=doc["relative_effect"]
                ),
                resilient=doc["resilient"],
                performance_issue=doc["performance_issue"],
            )
        )
    return verdicts


def cmd_report(args: argparse.Namespace) -> int:
    verdicts = _load_verdict_files(Path(args.verdicts))
    total = args.total if args.total is not None else len(verdicts)
    print(render_point_table(verdicts, fmt=args.format))
    summary = summarize(verdicts, total_points=total)
    print()
    print(json.dumps(summary_to_dict(summary)))
    if args.overhead_json:
        from .reporting import OverheadReport, OverheadRow

        doc = json.loads(Path(args.overhead_json).read_text())
        report = OverheadReport(
            rows=tuple(
                OverheadRow(r["category"], r["original"], r["augmented"], r["unit"])
                for r in doc["rows"]
            ),
            failures=tuple(doc.get("failures", [])),
        )
        print()
        print(render_overhead(report, fmt=args.format))
    return 0


# -- parser -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dockobs",
        description="augment container base images and measure fault impact",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", help="list the instructions of a Dockerfile")
    p.add_argument("file")
    p.add_argument("--json", action="store_true", help="structured output")
    p.add_argument(
        "--check", action="store_true", help="verify byte-exact reconstruction"
    )
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("analyze-corpus", help="base-image frequency over a tree")
    p.add_argument("root")
    p.add_argument("--top", type=int, default=10, help="coverage cut-off rank")
    p.add_argument("--format", choices=("table", "csv"), default="table")
    p.add_argument("--allowlist", help="file with official image names, one per line")
    p.set_defaults(func=cmd_analyze_corpus)

    p = sub.add_parser("augment", help="generate an augmented base image context")
    p.add_argument("image", help="base image reference to augment")
    p.add_argument("--rules", help="YAML rulebook (built-in defaults if omitted)")
    p.add_argument("--obs-dir", required=True, help="observability payload directory")
    p.add_argument("--fi-dir", required=True, help="fault injector payload directory")
    p.add_argument("--out", required=True, help="build context output directory")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("rewrite", help="point an application Dockerfile at the augmented base")
    p.add_argument("file")
    p.add_argument("--out", help="output path (stdout if omitted)")
    p.set_defaults(func=cmd_rewrite)

    p = sub.add_parser("validate-base", help="build and probe an augmented base image")
    p.add_argument("tag", help="tag for the augmented image")
    p.add_argument("--dockerfile", required=True)
    p.add_argument("--context", required=True)
    p.add_argument("--probe-key", required=True, help="injection point for the active probe")
    p.add_argument("--probe-path", default="/work?job=probe")
    _add_runtime_options(p)
    p.set_defaults(func=cmd_validate_base)

    p = sub.add_parser("verify-observability", help="check metric coverage and liveness")
    p.add_argument("image")
    p.add_argument("--duration", type=float, default=60.0, help="liveness window in seconds")
    _add_runtime_options(p)
    p.set_defaults(func=cmd_verify_observability)

    p = sub.add_parser("campaign", help="run the per-point fault-injection campaign")
    p.add_argument("image")
    p.add_argument("--points", required=True, help="injection points CSV")
    p.add_argument("--workload", help="workload YAML")
    p.add_argument("--phase", type=float, default=300.0, help="seconds per phase")
    p.add_argument("--metric", default="jvm.cpu.load")
    p.add_argument("--cadence", type=float, default=1.0, help="metric cadence in seconds")
    p.add_argument("--boot", type=int, default=1000, help="bootstrap iterations")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--out", help="directory for per-point outputs")
    p.add_argument("--format", choices=("table", "csv"), default="table")
    _add_runtime_options(p)
    p.set_defaults(func=cmd_campaign)

    p = sub.add_parser("overhead", help="compare footprint of original and augmented images")
    p.add_argument("original")
    p.add_argument("augmented")
    p.add_argument("--workload", help="workload YAML")
    p.add_argument("--repeats", type=int, default=30)
    p.add_argument("--calls", type=int, default=300, help="calls per API per repeat")
    p.add_argument("--format", choices=("table", "csv"), default="table")
    p.add_argument("--json", help="also write the raw rows to this file")
    _add_runtime_options(p)
    p.set_defaults(func=cmd_overhead)

    p = sub.add_parser("impact", help="causal impact analysis of one metric series")
    p.add_argument("--input", required=True, help="series JSON with an intervention timestamp")
    p.add_argument("--boot", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--plot-data", help="write actual and predicted series for plotting")
    p.set_defaults(func=cmd_impact)

    p = sub.add_parser("report", help="render campaign verdicts written by `campaign --out`")
    p.add_argument("--verdicts", required=True, help="campaign output directory")
    p.add_argument("--total", type=int, help="total points attempted (covered count if omitted)")
    p.add_argument("--overhead-json", help="overhead rows written by `overhead --json`")
    p.add_argument("--format", choices=("table", "csv"), default="table")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, yaml.YAMLError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
