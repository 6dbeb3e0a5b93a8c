"""Shared fixtures: the three deterministic repositories, their recorded
tracker responses, and pre-opened histories and snapshots.

Everything heavy is session-scoped; the repositories hash identically on
every build, so sharing them across tests loses nothing.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import pytest

from linkhound.fixtures import (
    FixtureRepo,
    build_fix_repo,
    build_lang_repo,
    build_rename_repo,
    dataset_text,
    eval_scripts,
    write_issue_fixtures,
)
from linkhound.history import GitHistory, safe_lifespan
from linkhound.tracker import IssueSnapshot, RecordedResponses, fetch_issue


@dataclass
class FixtureTree:
    root: Path
    fix: FixtureRepo
    rename: FixtureRepo
    lang: FixtureRepo
    issues_dir: Path
    dataset_path: Path
    issue_urls: dict[str, str]


@pytest.fixture(scope="session")
def tree(tmp_path_factory) -> FixtureTree:
    root = tmp_path_factory.mktemp("fixture-tree")
    fix = build_fix_repo(root / "repos" / "fix")
    rename = build_rename_repo(root / "repos" / "rename")
    lang = build_lang_repo(root / "repos" / "lang")
    issues_dir = root / "issues"
    issue_urls = write_issue_fixtures(issues_dir, fix, rename, lang)
    dataset_path = root / "dataset.tsv"
    dataset_path.write_text(dataset_text(fix, rename, lang), encoding="utf-8")
    return FixtureTree(root, fix, rename, lang, issues_dir, dataset_path, issue_urls)


@pytest.fixture(scope="session")
def fix_history(tree) -> GitHistory:
    return GitHistory.open(str(tree.fix.path))


@pytest.fixture(scope="session")
def rename_history(tree) -> GitHistory:
    return GitHistory.open(str(tree.rename.path))


@pytest.fixture(scope="session")
def lang_history(tree) -> GitHistory:
    return GitHistory.open(str(tree.lang.path))


def _snapshot(tree: FixtureTree, url: str) -> IssueSnapshot:
    with RecordedResponses.load_dir(tree.issues_dir).client() as client:
        return fetch_issue(url, client)


@pytest.fixture(scope="session")
def gh7_snapshot(tree) -> IssueSnapshot:
    return _snapshot(tree, tree.issue_urls["gh7"])


@pytest.fixture(scope="session")
def gh8_snapshot(tree) -> IssueSnapshot:
    return _snapshot(tree, tree.issue_urls["gh8"])


@pytest.fixture(scope="session")
def w42_snapshot(tree) -> IssueSnapshot:
    return _snapshot(tree, tree.issue_urls["w42"])


@pytest.fixture(scope="session")
def w43_snapshot(tree) -> IssueSnapshot:
    return _snapshot(tree, tree.issue_urls["w43"])


@pytest.fixture(scope="session")
def gh7_window(gh7_snapshot):
    return safe_lifespan(gh7_snapshot.created_at, gh7_snapshot.closed_at, now=0)


@pytest.fixture(scope="session")
def eval_script_set(tree) -> dict:
    return eval_scripts(tree.fix, tree.rename)
