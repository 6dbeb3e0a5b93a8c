"""The git extractor: unified history, windows, diffs, and the seven
history functions.

The reachability tests check against an independent oracle that walks
the object graph itself: refs from `git show-ref`, parent edges from
`git cat-file -p`. The extractor under test never sees those commands.
"""

from __future__ import annotations

import subprocess

import pytest

from linkhound.domain import ChangeKind, SetupError, TimeWindow, ToolCall, ToolError
from linkhound.fixtures import FIX_T0, HOUR, RENAME_T0, _APP_RS_V1
from linkhound.history import (
    GitHistory,
    GitTools,
    author_matches,
    glob_to_regex,
    safe_lifespan,
)
from linkhound.domain import Author

WEEK = 7 * 86_400


# ---------------------------------------------------------------------------
# An object-graph oracle, independent of the extractor's plumbing.


def _oracle_reachable(repo_path) -> set[str]:
    """Every commit reachable from any ref, found by walking parent edges."""
    refs = subprocess.run(
        ["git", "-C", str(repo_path), "show-ref"], capture_output=True, text=True
    ).stdout.splitlines()
    frontier = []
    for line in refs:
        sha, _, _name = line.partition(" ")
        # annotated tags point at tag objects; peel to the commit
        peeled = subprocess.run(
            ["git", "-C", str(repo_path), "rev-parse", f"{sha}^{{commit}}"],
            capture_output=True,
            text=True,
        ).stdout.strip()
        frontier.append(peeled)
    seen: set[str] = set()
    while frontier:
        sha = frontier.pop()
        if sha in seen:
            continue
        seen.add(sha)
        body = subprocess.run(
            ["git", "-C", str(repo_path), "cat-file", "-p", sha],
            capture_output=True,
            text=True,
        ).stdout
        for line in body.splitlines():
            if line.startswith("parent "):
                frontier.append(line.split()[1])
            elif not line:
                break
    return seen


def _oracle_commit_time(repo_path, sha: str) -> int:
    out = subprocess.run(
        ["git", "-C", str(repo_path), "show", "-s", "--format=%ct", sha],
        capture_output=True,
        text=True,
    ).stdout.strip()
    return int(out)


# ---------------------------------------------------------------------------
# Unified history.


def test_fix_history_is_all_four_commits_oldest_first(tree, fix_history):
    assert [c.hash for c in fix_history.commits] == [
        tree.fix.hash("C1"),
        tree.fix.hash("C2"),
        tree.fix.hash("C3"),
        tree.fix.hash("C4"),
    ]
    assert [c.committed_at for c in fix_history.commits] == [
        FIX_T0,
        FIX_T0 + HOUR,
        FIX_T0 + 2 * HOUR,
        FIX_T0 + 3 * HOUR,
    ]


def test_unified_history_matches_reachability_oracle(tree, fix_history, rename_history, lang_history):
    for repo, history in (
        (tree.fix, fix_history),
        (tree.rename, rename_history),
        (tree.lang, lang_history),
    ):
        assert {c.hash for c in history.commits} == _oracle_reachable(repo.path)


def test_tag_only_commit_is_part_of_the_history(tree, rename_history):
    """R6 lives on a deleted branch; only the v1.1 tag still reaches it."""
    assert rename_history.has_commit(tree.rename.hash("R6"))


def test_history_order_is_deterministic_time_then_hash(rename_history):
    keys = [c.sort_key for c in rename_history.commits]
    assert keys == sorted(keys)


def test_commit_metadata_fields(tree, fix_history):
    c3 = fix_history.get(tree.fix.hash("C3"))
    assert c3.author.name == "bob"
    assert c3.author.email == "bob@example.com"
    assert c3.parents == (tree.fix.hash("C2"),)
    assert c3.message.startswith("handle unicode paths when loading configs")
    assert "Fixes the crash" in c3.message
    assert not c3.message.endswith("\n")


def test_merge_commit_has_two_parents(tree, rename_history):
    r4 = rename_history.get(tree.rename.hash("R4"))
    assert set(r4.parents) == {tree.rename.hash("R2"), tree.rename.hash("R3")}
    assert r4.parents[0] == tree.rename.hash("R2")  # first parent is the merged-into line


def test_open_rejects_a_non_repository(tmp_path):
    with pytest.raises(SetupError):
        GitHistory.open(str(tmp_path / "nowhere"))


def test_open_clones_urls_into_a_reusable_cache(tree, tmp_path):
    url = tree.fix.path.as_uri()  # file:// counts as a remote
    cache = tmp_path / "clones"
    first = GitHistory.open(url, cache_dir=cache)
    clone_dirs = list(cache.iterdir())
    assert len(clone_dirs) == 1
    again = GitHistory.open(url, cache_dir=cache)
    assert list(cache.iterdir()) == clone_dirs
    assert {c.hash for c in first.commits} == {c.hash for c in again.commits}


def test_empty_repository_loads_as_empty_history(tmp_path):
    subprocess.run(["git", "init", "-q", str(tmp_path / "empty")], check=True)
    history = GitHistory.open(str(tmp_path / "empty"))
    assert history.commits == []


# ---------------------------------------------------------------------------
# Safe lifespan.


def test_safe_lifespan_margins_are_seven_days():
    window = safe_lifespan(1_000_000, 2_000_000, now=9_999_999)
    assert window.start == 1_000_000 - WEEK
    assert window.end == 2_000_000 + WEEK


def test_safe_lifespan_open_issue_uses_now():
    window = safe_lifespan(1_000_000, None, now=5_000_000)
    assert window.end == 5_000_000 + WEEK


def test_windowed_is_exact_set_selection(tree, fix_history):
    narrow = TimeWindow(FIX_T0 + HOUR, FIX_T0 + 2 * HOUR)
    assert {c.hash for c in fix_history.windowed(narrow)} == {
        tree.fix.hash("C2"),
        tree.fix.hash("C3"),
    }


def test_get_unknown_hash_is_a_tool_error(fix_history):
    with pytest.raises(ToolError):
        fix_history.get("0" * 40)


# ---------------------------------------------------------------------------
# Diffs.


def test_root_commit_diff_is_all_additions(tree, fix_history):
    diff = fix_history.diff(tree.fix.hash("C1"))
    assert [(f.path, f.kind) for f in diff.files] == [("src/app.rs", ChangeKind.ADDED)]
    assert "+pub fn main()" in diff.files[0].patch


def test_modification_diff_carries_the_patch(tree, fix_history):
    diff = fix_history.diff(tree.fix.hash("C3"))
    files = {f.path: f for f in diff.files}
    assert files["src/app.rs"].kind is ChangeKind.MODIFIED
    assert "+fn normalize_path" in files["src/app.rs"].patch


def test_pure_rename_is_reported_with_the_old_path(tree, rename_history):
    diff = rename_history.diff(tree.rename.hash("R2"))
    assert len(diff.files) == 1
    entry = diff.files[0]
    assert entry.kind is ChangeKind.RENAMED
    assert entry.path == "docs/manual.txt"
    assert entry.old_path == "docs/guide.txt"


def test_deletion_diff(tree, rename_history):
    diff = rename_history.diff(tree.rename.hash("R6"))
    assert [(f.path, f.kind) for f in diff.files] == [("keep.txt", ChangeKind.DELETED)]


def test_merge_diff_is_against_the_first_parent(tree, rename_history):
    diff = rename_history.diff(tree.rename.hash("R4"))
    assert [(f.path, f.kind) for f in diff.files] == [("side.txt", ChangeKind.ADDED)]


def test_diff_changed_paths_match_an_independent_diff_oracle(tree, rename_history):
    """Cross-check every commit's paths against plain `git diff-tree` output."""
    for meta in rename_history.commits:
        parent = meta.parents[0] if meta.parents else None
        if parent is None:
            cmd = ["git", "-C", str(tree.rename.path), "diff-tree", "--root", "--no-commit-id",
                   "--name-only", "-r", "-M", meta.hash]
        else:
            cmd = ["git", "-C", str(tree.rename.path), "diff", "--name-only", "-M",
                   parent, meta.hash]
        expected = set(subprocess.run(cmd, capture_output=True, text=True).stdout.split())
        got = {f.path for f in rename_history.diff(meta.hash).files}
        assert got == expected, meta.hash


def test_read_blob_round_trips_content(tree, fix_history):
    assert fix_history.read_blob(tree.fix.hash("C1"), "src/app.rs") == _APP_RS_V1


def test_read_blob_missing_file_is_a_tool_error(tree, fix_history):
    with pytest.raises(ToolError, match="not found at commit"):
        fix_history.read_blob(tree.fix.hash("C1"), "README.md")


def test_touched_paths_includes_both_rename_sides(tree, rename_history):
    window = TimeWindow(RENAME_T0 - WEEK, RENAME_T0 + WEEK)
    paths = rename_history.touched_paths(window)
    assert "docs/guide.txt" in paths
    assert "docs/manual.txt" in paths
    assert paths == sorted(paths)


# ---------------------------------------------------------------------------
# Glob and author matching.


@pytest.mark.parametrize(
    "pattern,path,matches",
    [
        ("src/*.rs", "src/app.rs", True),
        ("src/*.rs", "src/deep/x.rs", False),
        ("src/**/*.rs", "src/deep/x.rs", True),
        ("src/**", "src/deep/x.rs", True),
        ("**", "anything/at/all", True),
        ("*.md", "README.md", True),
        ("*.md", "docs/README.md", False),
        ("file?.txt", "file1.txt", True),
        ("file?.txt", "file12.txt", False),
        ("[!a]bc.txt", "xbc.txt", True),
        ("[!a]bc.txt", "abc.txt", False),
    ],
)
def test_glob_semantics(pattern, path, matches):
    assert bool(glob_to_regex(pattern).match(path)) is matches


def test_unterminated_character_class_is_a_tool_error():
    with pytest.raises(ToolError):
        glob_to_regex("src/[abc")


@pytest.mark.parametrize(
    "query,matches",
    [
        ("alice", True),
        ("ALICE", True),
        ("alice@example.com", True),
        ("Alice@Example.com", True),
        ("alice <alice@example.com>", True),
        ("Alice <alice@example.com>", False),  # explicit form requires the exact name
        ("bob", False),
        ("bob@example.com", False),
    ],
)
def test_author_matching(query, matches):
    author = Author("alice", "alice@example.com")
    assert author_matches(author, query) is matches


# ---------------------------------------------------------------------------
# The seven functions, as the model sees them.


@pytest.fixture()
def fix_tools(fix_history, gh7_window) -> GitTools:
    return GitTools(fix_history, gh7_window, default_page_size=20)


def _args(tools: GitTools, name: str):
    return {spec.schema.name: spec for spec in tools.specs()}[name]


def test_git_tools_expose_exactly_seven_functions(fix_tools):
    names = [spec.schema.name for spec in fix_tools.specs()]
    assert names == [
        "list_commits",
        "commit_metadata",
        "commit_diff",
        "commits_of_author",
        "commits_on_file",
        "list_files",
        "list_authors",
    ]


def test_list_commits_is_windowed_and_paginated(tree, fix_tools):
    all_lines = fix_tools.list_commits({}).splitlines()
    assert len(all_lines) == 4
    assert all_lines[0].startswith(f"hash={tree.fix.hash('C1')}")
    one = fix_tools.list_commits({"page": 1, "page_size": 3})
    assert one.splitlines() == [all_lines[3]]
    past_end = fix_tools.list_commits({"page": 9})
    assert past_end == "(no results)"


def test_commits_of_author_variants(tree, fix_tools):
    alice = fix_tools.commits_of_author({"author": "alice"})
    assert {line.split()[0] for line in alice.splitlines()} == {
        f"hash={tree.fix.hash(label)}" for label in ("C1", "C2", "C4")
    }
    by_email = fix_tools.commits_of_author({"author": "BOB@example.com"})
    assert tree.fix.hash("C3") in by_email
    assert fix_tools.commits_of_author({"author": "nobody"}) == "(no results)"


def test_commits_on_file_counts_renames_for_both_names(tree, rename_history, w42_snapshot):
    window = safe_lifespan(w42_snapshot.created_at, w42_snapshot.closed_at, now=0)
    tools = GitTools(rename_history, window)
    old = tools.commits_on_file({"path": "docs/guide.txt"})
    new = tools.commits_on_file({"path": "docs/manual.txt"})
    assert tree.rename.hash("R2") in old
    assert tree.rename.hash("R2") in new
    assert tree.rename.hash("R1") in old
    assert tree.rename.hash("R1") not in new


def test_list_files_applies_the_glob(fix_tools):
    assert fix_tools.list_files({"pattern": "src/*.rs"}).splitlines() == [
        "src/app.rs",
        "src/lib.rs",
    ]
    assert fix_tools.list_files({"pattern": "**"}).splitlines() == [
        "README.md",
        "src/app.rs",
        "src/lib.rs",
    ]


def test_list_authors_is_distinct_and_sorted(fix_tools):
    lines = fix_tools.list_authors({}).splitlines()
    assert lines == [
        "name=alice email=alice@example.com",
        "name=bob email=bob@example.com",
    ]


def test_tools_route_through_the_registry(tree, fix_tools):
    from linkhound.domain import SchemaRegistry

    registry = SchemaRegistry()
    registry.extend(fix_tools.specs())
    result = registry.route_call(
        ToolCall("c1", "commit_metadata", {"commit_hash": tree.fix.hash("C2")})
    )
    assert not result.is_error
    assert "describe the project" in result.payload
    bad = registry.route_call(ToolCall("c2", "commit_diff", {"commit_hash": "oops"}))
    assert bad.is_error and "malformed commit_hash" in bad.payload
