"""Deterministic fixtures: repositories, recorded tracker responses,
session scripts, and a small evaluation dataset.

Everything here is reproducible byte for byte: commit timestamps, authors,
and contents are pinned, so the fixture repositories hash identically on
every machine. The `linkhound fixtures` subcommand writes the full set to
disk; the test suite builds the same objects in temporary directories.
"""

from __future__ import annotations

import json
import os
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

from .domain import iso_utc
from .tracker import write_recorded_response

FIX_T0 = 1_709_251_200  # 2024-03-01T00:00:00Z
RENAME_T0 = 1_711_929_600  # 2024-04-01T00:00:00Z
LANG_T0 = 1_714_521_600  # 2024-05-01T00:00:00Z

HOUR = 3_600

ALICE = ("alice", "alice@example.com")
BOB = ("bob", "bob@example.com")
CAROL = ("carol", "carol@example.com")
DAN = ("dan", "dan@example.com")
ERIN = ("erin", "erin@example.com")


@dataclass
class FixtureRepo:
    path: Path
    commits: dict[str, str] = field(default_factory=dict)  # label -> hash
    times: dict[str, int] = field(default_factory=dict)
    authors: dict[str, tuple[str, str]] = field(default_factory=dict)

    def hash(self, label: str) -> str:
        return self.commits[label]


def _git(repo: Path, *args: str, env: dict | None = None) -> str:
    merged = dict(os.environ)
    if env:
        merged.update(env)
    proc = subprocess.run(
        ["git", "-C", str(repo), *args], capture_output=True, text=True, env=merged
    )
    if proc.returncode != 0:
        raise RuntimeError(f"git {' '.join(args)} failed: {proc.stderr.strip()}")
    return proc.stdout.strip()


def _commit_env(author: tuple[str, str], when: int) -> dict:
    name, email = author
    stamp = f"{when} +0000"
    return {
        "GIT_AUTHOR_NAME": name,
        "GIT_AUTHOR_EMAIL": email,
        "GIT_AUTHOR_DATE": stamp,
        "GIT_COMMITTER_NAME": name,
        "GIT_COMMITTER_EMAIL": email,
        "GIT_COMMITTER_DATE": stamp,
    }


def _commit(repo: FixtureRepo, label: str, message: str, author: tuple[str, str], when: int) -> str:
    env = _commit_env(author, when)
    _git(repo.path, "add", "-A", env=env)
    _git(repo.path, "commit", "-q", "--no-gpg-sign", "-m", message, env=env)
    commit_hash = _git(repo.path, "rev-parse", "HEAD")
    repo.commits[label] = commit_hash
    repo.times[label] = when
    repo.authors[label] = author
    return commit_hash


def _init_repo(path: Path) -> FixtureRepo:
    # resolve first: git -C would interpret a relative directory argument
    # against its own changed directory, not the caller's
    path = path.resolve()
    path.mkdir(parents=True, exist_ok=True)
    _git(path, "init", "-q", "-b", "main")
    return FixtureRepo(path=path)


def _write(repo: FixtureRepo, rel: str, content: str) -> None:
    target = repo.path / rel
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(content, encoding="utf-8")


# ---------------------------------------------------------------------------
# Repository 1: two branches, the calibration repo most tests lean on.
#   main: C1 (alice, src/app.rs), C2 (alice, README.md), C3 (bob, src/app.rs)
#   feat, forked at C2: C4 (alice, src/lib.rs)


_APP_RS_V1 = '''\
/// Entry point for the widget config tool.
pub fn main() {
    run(std::env::args().collect());
}

/// Dispatch the parsed arguments.
fn run(args: Vec<String>) {
    let cfg = Config::load(&args[1]);
    println!("{:?}", cfg);
}

#[derive(Debug)]
pub struct Config {
    path: String,
}

impl Config {
    /// Read a config file from disk.
    pub fn load(path: &str) -> Config {
        Config { path: path.to_string() }
    }
}
'''

_APP_RS_V2 = '''\
/// Entry point for the widget config tool.
pub fn main() {
    run(std::env::args().collect());
}

/// Dispatch the parsed arguments.
fn run(args: Vec<String>) {
    let cfg = Config::load(&normalize_path(&args[1]));
    println!("{:?}", cfg);
}

/// Fold a possibly non-unicode path into a safe UTF-8 form.
fn normalize_path(raw: &str) -> String {
    raw.chars().filter(|c| !c.is_control()).collect()
}

#[derive(Debug)]
pub struct Config {
    path: String,
}

impl Config {
    /// Read a config file from disk.
    pub fn load(path: &str) -> Config {
        Config { path: path.to_string() }
    }
}
'''

_LIB_RS = '''\
/// Shared helpers for the widget tool.
pub fn version() -> &'static str {
    "0.2.0"
}

pub fn undocumented_helper() -> u32 {
    41 + 1
}
'''


def build_fix_repo(path: Path) -> FixtureRepo:
    repo = _init_repo(path)
    _write(repo, "src/app.rs", _APP_RS_V1)
    _commit(repo, "C1", "add the config tool skeleton", ALICE, FIX_T0)
    _write(repo, "README.md", "# widget\n\nA tiny config tool used as a fixture.\n")
    _commit(repo, "C2", "describe the project", ALICE, FIX_T0 + HOUR)
    _write(repo, "src/app.rs", _APP_RS_V2)
    _commit(repo, "C3", "handle unicode paths when loading configs\n\nFixes the crash reported for non-ascii config names.", BOB, FIX_T0 + 2 * HOUR)
    _git(repo.path, "checkout", "-q", "-b", "feat", repo.hash("C2"))
    _write(repo, "src/lib.rs", _LIB_RS)
    _commit(repo, "C4", "split shared helpers into a library", ALICE, FIX_T0 + 3 * HOUR)
    _git(repo.path, "checkout", "-q", "main")
    return repo


# ---------------------------------------------------------------------------
# Repository 2: renames, a merge, and a commit reachable only through a tag.


def build_rename_repo(path: Path) -> FixtureRepo:
    repo = _init_repo(path)
    _write(repo, "docs/guide.txt", "how to use the widget\nstep one: install\n")
    _write(repo, "keep.txt", "v1\n")
    _commit(repo, "R1", "initial docs", CAROL, RENAME_T0)
    _git(repo.path, "mv", "docs/guide.txt", "docs/manual.txt")
    _commit(repo, "R2", "rename the guide to manual", CAROL, RENAME_T0 + HOUR)
    _git(repo.path, "checkout", "-q", "-b", "side", repo.hash("R1"))
    _write(repo, "side.txt", "work on a side branch\n")
    _commit(repo, "R3", "start the side experiment", DAN, RENAME_T0 + 2 * HOUR)
    _git(repo.path, "checkout", "-q", "main")
    env = _commit_env(CAROL, RENAME_T0 + 3 * HOUR)
    _git(repo.path, "merge", "-q", "--no-ff", "--no-gpg-sign", "-m", "merge the side experiment", "side", env=env)
    repo.commits["R4"] = _git(repo.path, "rev-parse", "HEAD")
    repo.times["R4"] = RENAME_T0 + 3 * HOUR
    repo.authors["R4"] = CAROL
    _write(repo, "keep.txt", "v2\n")
    _commit(repo, "R5", "update the kept notes", DAN, RENAME_T0 + 4 * HOUR)
    _git(repo.path, "checkout", "-q", "-b", "tmp", repo.hash("R5"))
    _git(repo.path, "rm", "-q", "keep.txt")
    _commit(repo, "R6", "drop the kept notes", CAROL, RENAME_T0 + 5 * HOUR)
    _git(repo.path, "tag", "-a", "v1.1", "-m", "tag the cleanup", env=_commit_env(CAROL, RENAME_T0 + 5 * HOUR))
    _git(repo.path, "checkout", "-q", "main")
    _git(repo.path, "branch", "-q", "-D", "tmp")
    return repo


# ---------------------------------------------------------------------------
# Repository 3: three languages plus a huge flat file for oversized payloads.


_CALC_PY_V1 = '''\
"""Small calculator helpers."""


def add(a, b):
    """Return the sum of a and b."""
    return a + b


def scale(values, factor):
    # left undocumented on purpose
    out = []
    for v in values:
        out.append(v * factor)
    return out


class Accumulator:
    """Keeps a running total."""

    def __init__(self, start=0):
        self.total = start

    def push(self, value):
        """Add one value to the total."""
        self.total += value
        return self.total
'''

_CALC_PY_V2 = _CALC_PY_V1 + '''

def fresh_feature(x):
    """Added in the second revision."""
    return x + 1
'''

_UTIL_GO = '''\
package util

// Greeting returns a friendly line for name.
func Greeting(name string) string {
	return "hello, " + name
}

func internalHelper(n int) int {
	return n * 2
}

// Counter accumulates increments.
type Counter struct {
	total int
}

// Add bumps the counter by delta.
func (c *Counter) Add(delta int) int {
	c.total += delta
	return c.total
}
'''

_SHAPES_RS = '''\
//! Flat geometry primitives.

/// A rectangle on the integer grid.
#[derive(Debug, Clone)]
pub struct Rect {
    pub w: u32,
    pub h: u32,
}

impl Rect {
    /// Area in grid cells.
    pub fn area(&self) -> u32 {
        self.w * self.h
    }
}

pub fn perimeter(r: &Rect) -> u32 {
    2 * (r.w + r.h)
}

/// Supported shapes.
pub enum Shape {
    Rect(Rect),
    Circle { radius: u32 },
}
'''

_HELPERS_PY = '''\
def tiny():
    return 1
'''


def bulk_file_text(lines: int = 7000) -> str:
    out = [f"record {i:05d} value {i * 31:08d} checksum {i * i:012d}" for i in range(lines)]
    return "\n".join(out) + "\n"


def build_lang_repo(path: Path) -> FixtureRepo:
    repo = _init_repo(path)
    _write(repo, "calc.py", _CALC_PY_V1)
    _write(repo, "util.go", _UTIL_GO)
    _write(repo, "shapes.rs", _SHAPES_RS)
    _write(repo, "notes.txt", "plain text, no supported language\n")
    _write(repo, "bulk.txt", bulk_file_text())
    _commit(repo, "L1", "seed the sample sources", ERIN, LANG_T0)
    _write(repo, "calc.py", _CALC_PY_V2)
    _write(repo, "extra/helpers.py", _HELPERS_PY)
    _commit(repo, "L2", "add the fresh feature and helpers", ERIN, LANG_T0 + HOUR)
    return repo


# ---------------------------------------------------------------------------
# Recorded tracker responses for four fixture issues.

GITHUB_ISSUE_7_URL = "https://github.com/acme/widget/issues/7"
GITHUB_ISSUE_8_URL = "https://github.com/acme/widget/issues/8"
JIRA_ISSUE_42_URL = "https://jira.example.com/browse/WIDGET-42"
JIRA_ISSUE_43_URL = "https://jira.example.com/browse/WIDGET-43"

_GH_API = "https://api.github.com/repos/acme/widget/issues"
_JIRA_FIELDS = (
    "summary,description,created,resolutiondate,reporter,creator,comment,"
    "status,statuscategorychangedate"
)


def _gh_time(ts: int) -> str:
    return iso_utc(ts)


def _jira_time(ts: int) -> str:
    return iso_utc(ts).replace("Z", ".000+0000")


def write_issue_fixtures(out_dir: Path, fix: FixtureRepo, rename: FixtureRepo, lang: FixtureRepo) -> dict[str, str]:
    """Record the tracker responses the four fixture issues are served from."""
    issue7_created = FIX_T0 + 1_800
    issue7_closed = FIX_T0 + 5 * HOUR
    issue7 = {
        "number": 7,
        "title": "Crash when saving config with unicode paths",
        "body": (
            "Saving a config whose filename has non-ascii characters crashes "
            "the tool.\n\nThe loader in src/app.rs (Config::load) never "
            "normalizes the path."
        ),
        "user": {"login": "dana"},
        "created_at": _gh_time(issue7_created),
        "closed_at": _gh_time(issue7_closed),
    }
    issue7_comments = [
        {
            "user": {"login": "dana"},
            "body": "Happens on every non-ascii path, for example 'cafè.toml'.",
            "created_at": _gh_time(issue7_created + 600),
        },
        {
            "user": {"login": "erik"},
            "body": (
                f"Bisected: the crash went away after {fix.hash('C3')}. The helper "
                f"split in {fix.hash('C4')} kept it fixed on the feature branch."
            ),
            "created_at": _gh_time(issue7_created + 2 * HOUR),
        },
    ]
    issue8 = {
        "number": 8,
        "title": "Document the quick start",
        "body": "The README should explain how to run the tool.",
        "user": {"login": "dana"},
        "created_at": _gh_time(FIX_T0 + 600),
        "closed_at": None,
    }

    w42_created = RENAME_T0 + 600
    w42 = {
        "key": "WIDGET-42",
        "fields": {
            "summary": "Stale notes shipped with the manual",
            "description": "keep.txt still shows the v1 notes after the rename.",
            "created": _jira_time(w42_created),
            "resolutiondate": _jira_time(RENAME_T0 + 5 * HOUR + 1_800),
            "reporter": {
                "displayName": "Fatima Q",
                "name": "fatima",
                "emailAddress": "fatima@example.com",
            },
            "status": {"name": "Done", "statusCategory": {"key": "done"}},
            "statuscategorychangedate": _jira_time(RENAME_T0 + 5 * HOUR + 1_800),
            "comment": {
                "comments": [
                    {
                        "author": {"displayName": "Gustav H", "name": "gustav"},
                        "body": "Reproduced against the merged side branch.",
                        "created": _jira_time(w42_created + 1_200),
                    },
                    {
                        "author": {"displayName": "Fatima Q", "name": "fatima"},
                        "body": "dan updated the notes, looks fixed now.",
                        "created": _jira_time(RENAME_T0 + 4 * HOUR + 600),
                    },
                ],
                "maxResults": 2,
                "total": 2,
                "startAt": 0,
            },
        },
    }

    w43_created = LANG_T0 + 300
    w43 = {
        "key": "WIDGET-43",
        "fields": {
            "summary": "Calculator misses the fresh feature",
            "description": "calc.py needs the new entry point.",
            "created": _jira_time(w43_created),
            "resolutiondate": _jira_time(LANG_T0 + 6 * HOUR),
            "reporter": {"displayName": "Fatima Q", "name": "fatima"},
            "status": {"name": "Done", "statusCategory": {"key": "done"}},
            "statuscategorychangedate": _jira_time(LANG_T0 + 6 * HOUR),
            "comment": {
                "comments": [
                    {
                        "author": {"displayName": "Gustav H", "name": "gustav"},
                        "body": "Needs the helper split too.",
                        "created": _jira_time(w43_created + 900),
                    },
                    {
                        "author": {"displayName": "Erin S", "name": "erin"},
                        "body": "Working on it.",
                        "created": _jira_time(w43_created + 1_800),
                    },
                ],
                "maxResults": 2,
                "total": 3,
                "startAt": 0,
            },
        },
    }
    w43_page2 = {
        "comments": [
            {
                "author": {"displayName": "Erin S", "name": "erin"},
                "body": "Landed with the fresh feature commit.",
                "created": _jira_time(LANG_T0 + 5 * HOUR),
            }
        ],
        "maxResults": 100,
        "total": 3,
        "startAt": 2,
    }

    write_recorded_response(out_dir, "github_issue_7", f"{_GH_API}/7", 200, json.dumps(issue7))
    write_recorded_response(
        out_dir,
        "github_issue_7_comments",
        f"{_GH_API}/7/comments?per_page=100&page=1",
        200,
        json.dumps(issue7_comments),
    )
    write_recorded_response(out_dir, "github_issue_8", f"{_GH_API}/8", 200, json.dumps(issue8))
    write_recorded_response(
        out_dir,
        "github_issue_8_comments",
        f"{_GH_API}/8/comments?per_page=100&page=1",
        200,
        json.dumps([]),
    )
    write_recorded_response(
        out_dir,
        "jira_widget_42",
        f"https://jira.example.com/rest/api/2/issue/WIDGET-42?fields={_JIRA_FIELDS}",
        200,
        json.dumps(w42),
    )
    write_recorded_response(
        out_dir,
        "jira_widget_43",
        f"https://jira.example.com/rest/api/2/issue/WIDGET-43?fields={_JIRA_FIELDS}",
        200,
        json.dumps(w43),
    )
    write_recorded_response(
        out_dir,
        "jira_widget_43_comments_2",
        "https://jira.example.com/rest/api/2/issue/WIDGET-43/comment?startAt=2&maxResults=100",
        200,
        json.dumps(w43_page2),
    )
    return {
        "gh7": GITHUB_ISSUE_7_URL,
        "gh8": GITHUB_ISSUE_8_URL,
        "w42": JIRA_ISSUE_42_URL,
        "w43": JIRA_ISSUE_43_URL,
    }


# ---------------------------------------------------------------------------
# Session scripts.


def _call(name: str, **arguments) -> dict:
    return {"tool_calls": [{"name": name, "arguments": arguments}]}


def oracle_script_fix7(fix: FixtureRepo) -> dict:
    """A plausible investigation of the unicode-path issue ending at C4."""
    return {
        "turns": [
            _call("issue_title"),
            _call("issue_comments"),
            _call("issue_participants"),
            _call("commits_of_author", author="alice"),
            _call("list_files", pattern="src/*.rs"),
            _call("commits_on_file", path="src/lib.rs"),
            _call("commit_diff", commit_hash=fix.hash("C4")),
            _call("finish", commit_hash=fix.hash("C4")),
        ]
    }


def wrong_script_fix8(fix: FixtureRepo) -> dict:
    """Finishes with a commit that exists but is not the ground truth."""
    return {
        "turns": [
            _call("issue_title"),
            _call("finish", commit_hash=fix.hash("C1")),
        ]
    }


def oracle_script_w42(rename: FixtureRepo) -> dict:
    return {
        "turns": [
            _call("issue_comments"),
            _call("commits_on_file", path="keep.txt"),
            _call("finish", commit_hash=rename.hash("R5")),
        ]
    }


def surrender_script_w43() -> dict:
    return {
        "turns": [
            _call("issue_title"),
            _call("give_up"),
        ]
    }


def iteration_overrun_script(turns: int = 25) -> dict:
    """More data calls than any session is allowed assistant turns."""
    return {"turns": [_call("issue_title") for _ in range(turns)]}


def token_flood_script(lang: FixtureRepo, fetches: int = 4) -> dict:
    """Oversized reads, each explicitly preserved so the ledger climbs."""
    turns = []
    for _ in range(fetches):
        turns.append(
            _call(
                "fetch_lines_in_file",
                commit_hash=lang.hash("L1"),
                path="bulk.txt",
                start_line=1,
                end_line=7000,
            )
        )
        turns.append(_call("feedback", call_id="$pending", verdict="preserve"))
    return {"turns": turns}


def feedback_discard_script(lang: FixtureRepo) -> dict:
    """Reads an oversized payload, discards it, then finishes."""
    return {
        "turns": [
            _call(
                "fetch_lines_in_file",
                commit_hash=lang.hash("L1"),
                path="bulk.txt",
                start_line=1,
                end_line=7000,
            ),
            _call("feedback", call_id="$pending", verdict="discard"),
            _call("commit_metadata", commit_hash=lang.hash("L2")),
            _call("finish", commit_hash=lang.hash("L2")),
        ]
    }


# ---------------------------------------------------------------------------
# The dataset and the full fixture tree.


def dataset_text(fix: FixtureRepo, rename: FixtureRepo, lang: FixtureRepo) -> str:
    rows = [
        "# issue_id\tissue_url\trepo_id\tlink_hashes",
        f"gh7\t{GITHUB_ISSUE_7_URL}\tfix\t{fix.hash('C3')};{fix.hash('C4')}",
        f"gh8\t{GITHUB_ISSUE_8_URL}\tfix\t{fix.hash('C2')}",
        f"w42\t{JIRA_ISSUE_42_URL}\trename\t{rename.hash('R2')};{rename.hash('R5')}",
        f"w43\t{JIRA_ISSUE_43_URL}\tlang\t{lang.hash('L2')}",
    ]
    return "\n".join(rows) + "\n"


def eval_scripts(fix: FixtureRepo, rename: FixtureRepo) -> dict:
    """Scripts that answer exactly half of the fixture issues correctly."""
    return {
        "issues": {
            "gh7": oracle_script_fix7(fix),
            "gh8": wrong_script_fix8(fix),
            "w42": oracle_script_w42(rename),
            "w43": surrender_script_w43(),
        }
    }


def build_all(out_dir: str | Path) -> dict:
    """Write the complete fixture tree and return its manifest."""
    out = Path(out_dir)
    repos_dir = out / "repos"
    repos_dir.mkdir(parents=True, exist_ok=True)
    fix = build_fix_repo(repos_dir / "fix")
    rename = build_rename_repo(repos_dir / "rename")
    lang = build_lang_repo(repos_dir / "lang")

    issue_urls = write_issue_fixtures(out / "issues", fix, rename, lang)
    (out / "dataset.tsv").write_text(dataset_text(fix, rename, lang), encoding="utf-8")

    scripts_dir = out / "scripts"
    scripts_dir.mkdir(parents=True, exist_ok=True)
    (scripts_dir / "link_gh7.json").write_text(
        json.dumps(oracle_script_fix7(fix), indent=2) + "\n", encoding="utf-8"
    )
    (scripts_dir / "feedback_demo.json").write_text(
        json.dumps(feedback_discard_script(lang), indent=2) + "\n", encoding="utf-8"
    )
    (scripts_dir / "eval_scripts.json").write_text(
        json.dumps(eval_scripts(fix, rename), indent=2) + "\n", encoding="utf-8"
    )

    manifest = {
        "repos": {
            "fix": {"path": str(fix.path), "commits": fix.commits},
            "rename": {"path": str(rename.path), "commits": rename.commits},
            "lang": {"path": str(lang.path), "commits": lang.commits},
        },
        "issues": issue_urls,
        "issue_fixtures": str(out / "issues"),
        "dataset": str(out / "dataset.tsv"),
        "scripts": {
            "link_gh7": str(scripts_dir / "link_gh7.json"),
            "feedback_demo": str(scripts_dir / "feedback_demo.json"),
            "eval_scripts": str(scripts_dir / "eval_scripts.json"),
        },
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return manifest
