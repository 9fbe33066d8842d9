"""Lossless Dockerfile parsing and re-emission.

The parser is total: any line it does not understand is kept verbatim as an
OTHER instruction, which signals "preserve, do not transform". Every byte of
the input is owned by exactly one instruction span or by the trailing text,
so an unmodified file always re-emits byte-identically.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from enum import Enum

__all__ = [
    "Kind",
    "ImageRef",
    "Instruction",
    "SourceDockerfile",
    "EmptyReference",
    "InvalidReference",
    "parse",
    "emit",
    "parse_image_ref",
    "extract_base_images",
]


class Kind(str, Enum):
    """Dockerfile instruction keywords, plus OTHER for anything unknown."""

    FROM = "FROM"
    RUN = "RUN"
    CMD = "CMD"
    LABEL = "LABEL"
    MAINTAINER = "MAINTAINER"
    EXPOSE = "EXPOSE"
    ENV = "ENV"
    ADD = "ADD"
    COPY = "COPY"
    ENTRYPOINT = "ENTRYPOINT"
    VOLUME = "VOLUME"
    USER = "USER"
    WORKDIR = "WORKDIR"
    ARG = "ARG"
    ONBUILD = "ONBUILD"
    STOPSIGNAL = "STOPSIGNAL"
    HEALTHCHECK = "HEALTHCHECK"
    SHELL = "SHELL"
    OTHER = "OTHER"


_KNOWN_KINDS = frozenset(k.value for k in Kind) - {Kind.OTHER.value}


class EmptyReference(ValueError):
    """Raised when an image reference is empty."""


class InvalidReference(ValueError):
    """Raised when a token cannot be a single well-formed image reference."""


@dataclass(frozen=True)
class ImageRef:
    """A container image reference as written in a FROM instruction.

    ``name`` is the last path segment; everything before the last ``/`` is
    kept in ``repository_prefix`` so that registry hosts with ports
    (``host:5000/img``) never leak into the tag.
    """

    name: str
    repository_prefix: str | None = None
    tag: str | None = None
    digest: str | None = None
    has_variable: bool = False
    stage_alias: str | None = None

    @property
    def path(self) -> str:
        """Repository path: prefix/name, or just name without a prefix."""
        if self.repository_prefix:
            return f"{self.repository_prefix}/{self.name}"
        return self.name

    def render(self, with_alias: bool = True) -> str:
        """Reconstruct the reference text.

        For variable-free references this reproduces the source token
        exactly.
        """
        out = self.path
        if self.tag is not None:
            out += f":{self.tag}"
        if self.digest is not None:
            out += f"@{self.digest}"
        if with_alias and self.stage_alias is not None:
            out += f" AS {self.stage_alias}"
        return out


def parse_image_ref(text: str) -> ImageRef:
    """Parse an image reference token from a FROM argument.

    Accepts an optional trailing ``AS alias`` clause and ignores leading
    ``--`` flags such as ``--platform``. A ``$`` anywhere in the token marks
    the reference as variable-bearing; structural fields are still filled
    on a best-effort basis.

    Raises:
        EmptyReference: no reference token present.
        InvalidReference: more than one token, an empty name or tag, or a
            tag combined with a digest.
    """
    tokens = text.split()
    while tokens and tokens[0].startswith("--"):
        tokens.pop(0)
    alias = None
    if len(tokens) == 3 and tokens[1].upper() == "AS":
        alias = tokens[2]
        tokens = tokens[:1]
    if not tokens:
        raise EmptyReference("empty image reference")
    if len(tokens) != 1:
        raise InvalidReference(f"not a single image token: {text!r}")
    token = tokens[0]

    ref, _, digest = token.partition("@")
    digest = digest or None
    if not ref:
        raise InvalidReference(f"missing name in {token!r}")
    prefix, _, last = ref.rpartition("/")
    prefix = prefix or None
    if ":" in last:
        name, _, tag = last.rpartition(":")
        if not tag:
            raise InvalidReference(f"empty tag in {token!r}")
    else:
        name, tag = last, None
    if not name:
        raise InvalidReference(f"missing name in {token!r}")
    if tag is not None and digest is not None:
        raise InvalidReference(f"tag and digest are mutually exclusive: {token!r}")
    return ImageRef(
        name=name,
        repository_prefix=prefix,
        tag=tag,
        digest=digest,
        has_variable="$" in token,
        stage_alias=alias,
    )


@dataclass(frozen=True)
class Instruction:
    """One instruction span, owning its exact source bytes.

    ``raw_span`` includes any comment or blank lines immediately before the
    instruction; they are attributed to the instruction that follows them.
    ``line_range`` is the 1-based inclusive range of lines the span covers.
    """

    kind: Kind
    arguments: str
    raw_span: str
    line_range: tuple[int, int]
    image_ref: ImageRef | None = None
    modified: bool = False

    def leading_text(self) -> str:
        """Comment and blank lines at the start of this span."""
        out = []
        for line in self.raw_span.splitlines(keepends=True):
            if _is_comment_or_blank(line):
                out.append(line)
            else:
                break
        return "".join(out)

    def emit_text(self) -> str:
        # Untouched instructions reproduce their source bytes; modified ones
        # re-render in canonical single-line form with a \n ending.
        if not self.modified:
            return self.raw_span
        return f"{self.leading_text()}{self.kind.value} {self.arguments}\n"

    def with_arguments(
        self, arguments: str, image_ref: ImageRef | None = None
    ) -> Instruction:
        """Return a modified copy that re-renders canonically on emit."""
        return dataclasses.replace(
            self, arguments=arguments, image_ref=image_ref, modified=True
        )


@dataclass(frozen=True)
class SourceDockerfile:
    """A parsed Dockerfile: instruction spans plus any trailing text."""

    instructions: tuple[Instruction, ...]
    trailing_text: str = ""

    def emit_text(self) -> str:
        return "".join(i.emit_text() for i in self.instructions) + self.trailing_text

    def replace_instruction(
        self, target: int | Instruction, new: Instruction
    ) -> SourceDockerfile:
        instructions = list(self.instructions)
        index = target if isinstance(target, int) else instructions.index(target)
        instructions[index] = new
        return dataclasses.replace(self, instructions=tuple(instructions))

    def from_instructions(self) -> tuple[Instruction, ...]:
        return tuple(i for i in self.instructions if i.kind is Kind.FROM)


def _is_comment_or_blank(line: str) -> bool:
    stripped = line.strip()
    return not stripped or stripped.startswith("#")


def _is_continued(line: str) -> bool:
    return line.rstrip().endswith("\\")


def _logical_arguments(span_lines: list[str]) -> tuple[str, str]:
    """Join continuation lines into (keyword, argument text).

    Comment and blank lines inside a continuation are skipped, matching how
    builders treat them.
    """
    parts = []
    for line in span_lines:
        if _is_comment_or_blank(line):
            continue
        piece = line.strip()
        if piece.endswith("\\"):
            piece = piece[:-1].rstrip()
        parts.append(piece)
    head = parts[0].split(None, 1) if parts else []
    word = head[0] if head else ""
    rest = head[1] if len(head) > 1 else ""
    args = " ".join(p for p in [rest, *parts[1:]] if p)
    return word, args


def _build_instruction(span_lines: list[str], start: int, end: int) -> Instruction:
    word, args = _logical_arguments(span_lines)
    raw_span = "".join(span_lines)
    upper = word.upper()
    if upper not in _KNOWN_KINDS:
        full = " ".join(p for p in [word, args] if p)
        return Instruction(Kind.OTHER, full, raw_span, (start, end))
    kind = Kind(upper)
    image_ref = None
    if kind is Kind.FROM:
        try:
            image_ref = parse_image_ref(args)
        except (EmptyReference, InvalidReference):
            # A FROM we cannot make sense of is preserved untouched.
            full = " ".join(p for p in [word, args] if p)
            return Instruction(Kind.OTHER, full, raw_span, (start, end))
    return Instruction(kind, args, raw_span, (start, end), image_ref=image_ref)


def parse(data: bytes | str) -> SourceDockerfile:
    """Parse Dockerfile source into instruction spans.

    Total over arbitrary input: unknown or malformed lines become OTHER
    instructions, and comment or blank runs attach to the instruction that
    follows them (or to ``trailing_text`` at end of file).
    """
    if isinstance(data, bytes):
        text = data.decode("utf-8", "surrogateescape")
    else:
        text = data
    lines = text.splitlines(keepends=True)
    instructions: list[Instruction] = []
    trailing = ""
    i = 0
    n = len(lines)
    while i < n:
        lead_start = i
        while i < n and _is_comment_or_blank(lines[i]):
            i += 1
        if i == n:
            trailing = "".join(lines[lead_start:])
            break
        k = i + 1
        continued = _is_continued(lines[i])
        while continued and k < n:
            if not _is_comment_or_blank(lines[k]):
                continued = _is_continued(lines[k])
            k += 1
        instructions.append(
            _build_instruction(lines[lead_start:k], lead_start + 1, k)
        )
        i = k
    return SourceDockerfile(tuple(instructions), trailing)


def emit(dockerfile: SourceDockerfile) -> bytes:
    """Serialize back to bytes; inverse of parse for unmodified files."""
    return dockerfile.emit_text().encode("utf-8", "surrogateescape")


def extract_base_images(dockerfile: SourceDockerfile) -> list[ImageRef]:
    """All FROM references in order, one per stage."""
    return [i.image_ref for i in dockerfile.from_instructions() if i.image_ref]
