"""Base-image frequency analysis over a directory tree of Dockerfiles."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .dockerfile import extract_base_images, parse, parse_image_ref

__all__ = ["CorpusStats", "scan_corpus", "render_stats"]


@dataclass(frozen=True)
class CorpusStats:
    """Aggregate counts for one corpus scan.

    ``frequency_table`` is sorted by count descending, ties broken by
    reference text ascending, so output is stable across traversal orders.
    """

    dockerfile_count: int
    from_count: int
    unique_image_count: int
    frequency_table: tuple[tuple[str, int], ...]
    topk_coverage: float
    per_repo_counts: Mapping[str, int] = field(default_factory=dict)
    official_flags: Mapping[str, bool] = field(default_factory=dict)
    skipped_files: tuple[str, ...] = ()

    def coverage_at(self, k: int) -> float:
        """Fraction of all FROM instructions covered by the top k images."""
        if self.from_count == 0:
            return 0.0
        top = sum(count for _, count in self.frequency_table[:k])
        return top / self.from_count


def _is_dockerfile(name: str) -> bool:
    return name == "Dockerfile" or name.endswith(".dockerfile")


def _load_allowlist(allowlist: Path | Iterable[str] | None) -> frozenset[str]:
    if allowlist is None:
        return frozenset()
    if isinstance(allowlist, (str, Path)):
        lines = Path(allowlist).read_text().splitlines()
    else:
        lines = list(allowlist)
    return frozenset(
        s.strip() for s in lines if s.strip() and not s.strip().startswith("#")
    )


def scan_corpus(
    root_dir: Path | str,
    k: int = 10,
    official_allowlist: Path | Iterable[str] | None = None,
) -> CorpusStats:
    """Walk ``root_dir`` and tabulate base-image references.

    Files named ``Dockerfile`` or ``*.dockerfile`` are included; the repo a
    file belongs to is the first-level subdirectory under the root ("." for
    files sitting directly in the root). Unreadable files are recorded in
    ``skipped_files`` rather than aborting the scan.

    An image is flagged official when it has no repository prefix and its
    name appears in the allowlist.
    """
    root = Path(root_dir)
    frequency: dict[str, int] = {}
    per_repo: dict[str, int] = {}
    skipped: list[str] = []
    dockerfile_count = 0
    from_count = 0
    for path in sorted(root.rglob("*")):
        if not path.is_file() or not _is_dockerfile(path.name):
            continue
        rel = path.relative_to(root)
        repo = rel.parts[0] if len(rel.parts) > 1 else "."
        try:
            data = path.read_bytes()
        except OSError:
            skipped.append(str(rel))
            continue
        dockerfile_count += 1
        per_repo[repo] = per_repo.get(repo, 0) + 1
        for ref in extract_base_images(parse(data)):
            text = ref.render(with_alias=False)
            frequency[text] = frequency.get(text, 0) + 1
            from_count += 1

    table = tuple(sorted(frequency.items(), key=lambda kv: (-kv[1], kv[0])))
    allow = _load_allowlist(official_allowlist)
    flags = {}
    for text, _ in table:
        try:
            ref = parse_image_ref(text)
        except ValueError:
            flags[text] = False
            continue
        flags[text] = ref.repository_prefix is None and ref.name in allow

    top = sum(count for _, count in table[:k])
    return CorpusStats(
        dockerfile_count=dockerfile_count,
        from_count=from_count,
        unique_image_count=len(table),
        frequency_table=table,
        topk_coverage=top / from_count if from_count else 0.0,
        per_repo_counts=dict(sorted(per_repo.items())),
        official_flags=flags,
        skipped_files=tuple(sorted(skipped)),
    )


def render_stats(stats: CorpusStats, fmt: str = "table") -> str:
    """Render the frequency table with cumulative coverage.

    Columns: rank, image, count, official flag, cumulative coverage. The
    ``csv`` format carries the same values; zero stats yield a header-only
    document.
    """
    header = ("rank", "image", "count", "official", "cumulative_coverage")
    rows = []
    cumulative = 0
    for rank, (image, count) in enumerate(stats.frequency_table, start=1):
        cumulative += count
        coverage = cumulative / stats.from_count if stats.from_count else 0.0
        official = "yes" if stats.official_flags.get(image) else "no"
        rows.append((str(rank), image, str(count), official, f"{coverage:.4f}"))

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
