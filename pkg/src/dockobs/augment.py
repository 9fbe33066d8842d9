"""Case-based generation of augmented base images.

A rulebook maps base images to build templates. Matching is by priority:
an exact name+tag rule beats a name-only rule, which beats the default.
The generated Dockerfile wraps the original base with the observability and
fault-injection payloads and re-exposes the metrics port.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from pathlib import Path
from typing import Any, Mapping

import yaml

from .dockerfile import (
    ImageRef,
    Kind,
    SourceDockerfile,
    parse,
    parse_image_ref,
)

__all__ = [
    "PackageManager",
    "RulePriority",
    "TemplateRule",
    "RuleBook",
    "ModulePaths",
    "AugmentationPlan",
    "VariableReference",
    "NoFromInstruction",
    "AlreadyAugmented",
    "match_rule",
    "infer_package_manager",
    "augmented_name",
    "generate_augmented_base",
    "rewrite_application",
    "load_rulebook",
    "rulebook_from_dict",
    "default_rulebook",
]

AUGMENT_SUFFIX = "-pobs"

OBSERVABILITY_CONTEXT_DIR = "observability_module"
FAULT_INJECTION_CONTEXT_DIR = "fault_injection_module"


class VariableReference(ValueError):
    """The operation needs a concrete image but got a variable-bearing one."""


class NoFromInstruction(ValueError):
    """The Dockerfile has no FROM instruction to rewrite."""


class AlreadyAugmented(ValueError):
    """The image name already carries the augmentation suffix."""


class PackageManager(str, Enum):
    APT = "apt"
    APK = "apk"
    NONE = "none"


class RulePriority(IntEnum):
    NAME_AND_TAG = 3
    NAME_ONLY = 2
    DEFAULT = 1


# Both payload directories are copied into the image, so the only build-time
# dependency the template itself needs is a download tool.
_INSTALL_COMMANDS = {
    PackageManager.APT: "apt-get update && apt-get install -y --no-install-recommends curl",
    PackageManager.APK: "apk add --no-cache curl",
}


def _default_env() -> dict[str, str]:
    return {"FI_MODE": "throw_e"}


@dataclass(frozen=True)
class TemplateRule:
    """One rulebook entry.

    ``pattern_name`` matches the full repository path of the image (for
    example ``jenkins/jenkins``); ``pattern_tag`` is required exactly when
    the priority is NAME_AND_TAG. A ``package_manager`` of NONE defers to
    inference from the image reference.
    """

    pattern_name: str | None
    pattern_tag: str | None
    priority: RulePriority
    package_manager: PackageManager = PackageManager.NONE
    extra_install_commands: tuple[str, ...] = ()
    run_user: str | None = None
    exposed_port: int = 4000
    env_defaults: Mapping[str, str] = field(default_factory=_default_env)

    def __post_init__(self) -> None:
        if self.priority is RulePriority.NAME_AND_TAG:
            if not self.pattern_name or self.pattern_tag is None:
                raise ValueError("name+tag rule needs both pattern fields")
        elif self.priority is RulePriority.NAME_ONLY:
            if not self.pattern_name or self.pattern_tag is not None:
                raise ValueError("name-only rule needs a name and no tag")
        else:
            if self.pattern_name is not None or self.pattern_tag is not None:
                raise ValueError("default rule must not carry patterns")


@dataclass(frozen=True)
class RuleBook:
    """All non-default rules plus exactly one default fallback."""

    rules: tuple[TemplateRule, ...]
    default_rule: TemplateRule

    def __post_init__(self) -> None:
        if self.default_rule.priority is not RulePriority.DEFAULT:
            raise ValueError("default_rule must have DEFAULT priority")
        seen = set()
        for rule in self.rules:
            if rule.priority is RulePriority.DEFAULT:
                raise ValueError("only one default rule is allowed")
            key = (rule.pattern_name, rule.pattern_tag)
            if key in seen:
                raise ValueError(f"duplicate rule for {key}")
            seen.add(key)


@dataclass(frozen=True)
class ModulePaths:
    """Filesystem locations of the two payload directories to bundle."""

    observability: Path
    fault_injection: Path


@dataclass(frozen=True)
class AugmentationPlan:
    """Everything needed to build one augmented base image."""

    original: ImageRef
    augmented: ImageRef
    rule: TemplateRule
    package_manager: PackageManager
    generated_dockerfile: SourceDockerfile
    module_paths: ModulePaths


def match_rule(rulebook: RuleBook, image: ImageRef) -> TemplateRule:
    """Pick the highest-priority rule matching ``image``.

    Raises:
        VariableReference: the image reference contains a variable, so no
            concrete match is possible.
    """
    if image.has_variable:
        raise VariableReference(f"cannot match variable reference {image.render()!r}")
    path = image.path
    for rule in rulebook.rules:
        if (
            rule.priority is RulePriority.NAME_AND_TAG
            and rule.pattern_name == path
            and rule.pattern_tag == image.tag
        ):
            return rule
    for rule in rulebook.rules:
        if rule.priority is RulePriority.NAME_ONLY and rule.pattern_name == path:
            return rule
    return rulebook.default_rule


def infer_package_manager(image: ImageRef) -> PackageManager:
    """apk for alpine-flavored images, apt otherwise.

    The check is a case-insensitive substring match on name and tag.
    """
    if image.has_variable:
        raise VariableReference("cannot infer a package manager for a variable reference")
    haystack = f"{image.name}:{image.tag or ''}".lower()
    return PackageManager.APK if "alpine" in haystack else PackageManager.APT


def augmented_name(image: ImageRef) -> ImageRef:
    """Append the augmentation suffix to the image name, keeping tag and prefix."""
    if image.has_variable:
        raise VariableReference("cannot augment a variable reference")
    if image.name.endswith(AUGMENT_SUFFIX):
        raise AlreadyAugmented(f"{image.render()!r} is already augmented")
    return dataclasses.replace(image, name=image.name + AUGMENT_SUFFIX)


def generate_augmented_base(
    image: ImageRef, rule: TemplateRule, module_paths: ModulePaths
) -> AugmentationPlan:
    """Produce the Dockerfile for an augmented base image.

    Instruction order: FROM the original image, an optional switch to root,
    dependency install through the selected package manager, a COPY for each
    payload directory, the writable log directory, ENV defaults, the exposed
    metrics port, and finally a switch back to the configured run user.
    """
    augmented = augmented_name(image)
    manager = rule.package_manager
    if manager is PackageManager.NONE:
        manager = infer_package_manager(image)

    lines: list[tuple[str, str]] = [("FROM", image.render(with_alias=False))]
    if rule.run_user:
        lines.append(("USER", "root"))
    lines.append(("RUN", _INSTALL_COMMANDS[manager]))
    lines.extend(("RUN", command) for command in rule.extra_install_commands)
    lines.append(("COPY", f"./{OBSERVABILITY_CONTEXT_DIR}/ /home/"))
    lines.append(("COPY", f"./{FAULT_INJECTION_CONTEXT_DIR}/ /home/"))
    lines.append(("RUN", "mkdir /home/logs && chmod -R a+rw /home/logs"))
    env = dict(rule.env_defaults)
    fi_mode = env.pop("FI_MODE", "throw_e")
    lines.append(("ENV", f"FI_MODE {fi_mode}"))
    lines.extend(("ENV", f"{name} {env[name]}") for name in sorted(env))
    lines.append(("EXPOSE", str(rule.exposed_port)))
    if rule.run_user:
        lines.append(("USER", rule.run_user))

    text = "".join(f"{kind} {args}\n" for kind, args in lines)
    return AugmentationPlan(
        original=image,
        augmented=augmented,
        rule=rule,
        package_manager=manager,
        generated_dockerfile=parse(text),
        module_paths=module_paths,
    )


def rewrite_application(dockerfile: SourceDockerfile) -> SourceDockerfile:
    """Point the final build stage at the augmented base image.

    Only the last FROM instruction changes; every other byte of the file is
    preserved.
    """
    from_indexes = [
        i for i, ins in enumerate(dockerfile.instructions) if ins.kind is Kind.FROM
    ]
    if not from_indexes:
        raise NoFromInstruction("no FROM instruction to rewrite")
    index = from_indexes[-1]
    instruction = dockerfile.instructions[index]
    ref = instruction.image_ref
    if ref is None or ref.has_variable:
        raise VariableReference(
            f"cannot rewrite variable reference in {instruction.arguments!r}"
        )
    new_ref = augmented_name(ref)
    tokens = instruction.arguments.split()
    for i, token in enumerate(tokens):
        if not token.startswith("--"):
            tokens[i] = new_ref.render(with_alias=False)
            break
    new_instruction = instruction.with_arguments(" ".join(tokens), image_ref=new_ref)
    return dockerfile.replace_instruction(index, new_instruction)


def default_rulebook() -> RuleBook:
    """A rulebook holding only the built-in default rule."""
    return RuleBook(
        rules=(),
        default_rule=TemplateRule(None, None, RulePriority.DEFAULT),
    )


def _rule_from_entry(entry: Mapping[str, Any], default: bool) -> TemplateRule:
    allowed = {
        "name",
        "tag",
        "package_manager",
        "extra_install_commands",
        "run_user",
        "exposed_port",
        "env",
    }
    unknown = set(entry) - allowed
    if unknown:
        raise ValueError(f"unknown rule keys: {sorted(unknown)}")
    name = entry.get("name")
    tag = entry.get("tag")
    if default:
        if name is not None or tag is not None:
            raise ValueError("the default rule must not name an image")
        priority = RulePriority.DEFAULT
    elif tag is not None:
        priority = RulePriority.NAME_AND_TAG
    else:
        priority = RulePriority.NAME_ONLY
    env = {"FI_MODE": "throw_e", **(entry.get("env") or {})}
    return TemplateRule(
        pattern_name=name,
        pattern_tag=None if tag is None else str(tag),
        priority=priority,
        package_manager=PackageManager(entry.get("package_manager", "none")),
        extra_install_commands=tuple(entry.get("extra_install_commands") or ()),
        run_user=entry.get("run_user"),
        exposed_port=int(entry.get("exposed_port", 4000)),
        env_defaults={k: str(v) for k, v in env.items()},
    )


def rulebook_from_dict(data: Mapping[str, Any]) -> RuleBook:
    """Build a RuleBook from one declarative document.

    Expected shape: an optional ``default`` entry plus a ``rules`` list;
    each rule is keyed by ``name`` and optional ``tag``, which determine
    its priority.
    """
    unknown = set(data) - {"default", "rules"}
    if unknown:
        raise ValueError(f"unknown rulebook keys: {sorted(unknown)}")
    default_entry = data.get("default") or {}
    rules = tuple(
        _rule_from_entry(entry, default=False) for entry in data.get("rules") or ()
    )
    return RuleBook(rules=rules, default_rule=_rule_from_entry(default_entry, default=True))


def load_rulebook(path: Path | str) -> RuleBook:
    """Load a rulebook from a YAML (or JSON) file."""
    data = yaml.safe_load(Path(path).read_text())
    if data is None:
        return default_rulebook()
    if not isinstance(data, Mapping):
        raise ValueError("rulebook document must be a mapping")
    return rulebook_from_dict(data)


def augmented_reference(image_text: str) -> str:
    """Convenience: augment a reference given as text, returning text."""
    return augmented_name(parse_image_ref(image_text)).render(with_alias=False)
