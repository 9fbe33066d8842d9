import pytest

from dockobs.corpus import CorpusStats, render_stats, scan_corpus


@pytest.fixture
def mini_stats(data_dir):
    return scan_corpus(
        data_dir / "mini_corpus",
        k=3,
        official_allowlist=data_dir / "official_images.txt",
    )


def test_counts_over_bundled_tree(mini_stats):
    assert mini_stats.dockerfile_count == 12
    assert mini_stats.from_count == 14
    assert mini_stats.unique_image_count == 6
    assert mini_stats.skipped_files == ()


def test_frequency_table_order_and_values(mini_stats):
    assert mini_stats.frequency_table == (
        ("openjdk:8-jdk", 4),
        ("java:8", 3),
        ("maven:3-jdk-8", 2),
        ("openjdk:8-jdk-alpine", 2),
        ("tomcat:9", 2),
        ("ubuntu:18.04", 1),
    )


def test_topk_coverage(mini_stats):
    assert mini_stats.topk_coverage == pytest.approx(9 / 14)
    assert mini_stats.coverage_at(1) == pytest.approx(4 / 14)
    assert mini_stats.coverage_at(100) == pytest.approx(1.0)


def test_per_repo_attribution(mini_stats):
    assert mini_stats.per_repo_counts["repo-c"] == 1
    assert len(mini_stats.per_repo_counts) == 12


def test_official_flag_uses_allowlist_and_prefix(mini_stats):
    assert mini_stats.official_flags["openjdk:8-jdk"] is True
    assert mini_stats.official_flags["maven:3-jdk-8"] is False


def test_unreadable_file_is_skipped_not_fatal(tmp_path, monkeypatch):
    from pathlib import Path

    good = tmp_path / "repo"
    good.mkdir()
    (good / "Dockerfile").write_text("FROM a:1\n")
    locked = tmp_path / "locked"
    locked.mkdir()
    (locked / "Dockerfile").write_text("FROM b:2\n")

    original = Path.read_bytes

    def flaky_read(self):
        if "locked" in str(self):
            raise PermissionError(13, "permission denied", str(self))
        return original(self)

    monkeypatch.setattr(Path, "read_bytes", flaky_read)
    stats = scan_corpus(tmp_path)
    assert stats.dockerfile_count == 1
    assert stats.from_count == 1
    assert stats.skipped_files == ("locked/Dockerfile",)


def test_empty_tree(tmp_path):
    stats = scan_corpus(tmp_path)
    assert stats.dockerfile_count == 0
    assert stats.from_count == 0
    assert stats.coverage_at(5) == 0.0
    rendered = render_stats(stats)
    assert "rank" in rendered


def test_variable_references_count_by_their_text(tmp_path):
    repo = tmp_path / "r"
    repo.mkdir()
    (repo / "Dockerfile").write_text("ARG T\nFROM openjdk:$T\nFROM openjdk:8\n")
    stats = scan_corpus(tmp_path)
    assert stats.from_count == 2
    assert stats.frequency_table == (("openjdk:$T", 1), ("openjdk:8", 1))


def test_root_level_dockerfile_uses_dot_repo(tmp_path):
    (tmp_path / "Dockerfile").write_text("FROM x:1\n")
    stats = scan_corpus(tmp_path)
    assert stats.per_repo_counts == {".": 1}


def test_render_formats(mini_stats):
    table = render_stats(mini_stats)
    assert "openjdk:8-jdk" in table
    assert "0.6429" in table
    csv = render_stats(mini_stats, fmt="csv")
    lines = csv.strip().splitlines()
    assert lines[0] == "rank,image,count,official,cumulative_coverage"
    assert lines[1] == "1,openjdk:8-jdk,4,yes,0.2857"


def test_paper_scale_coverage_arithmetic():
    stats = CorpusStats(
        dockerfile_count=2295,
        from_count=2295,
        unique_image_count=2,
        frequency_table=(("openjdk:8-jdk", 929), ("everything-else", 1366)),
        topk_coverage=929 / 2295,
    )
    assert round(stats.coverage_at(1) * 100, 1) == 40.5
