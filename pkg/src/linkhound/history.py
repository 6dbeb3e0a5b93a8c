"""Commit history extraction over a local clone.

Builds one unified view of a repository: every commit reachable from any
branch head or tag (remote-tracking heads included), deduplicated across
branches and sorted by (commit time, hash). All queries run against that
in-memory view or against plumbing calls on the local clone; nothing here
touches the network after `GitHistory.open` returns.
"""

from __future__ import annotations

import hashlib
import re
import subprocess
import tempfile
import threading
from dataclasses import dataclass
from pathlib import Path

from .domain import (
    EMPTY_RESULT,
    Author,
    ChangeKind,
    CommitDiff,
    CommitMeta,
    FileDiff,
    SetupError,
    TimeWindow,
    ToolError,
    ToolParam,
    ToolSchema,
    ToolSpec,
    page_arguments,
    paginate,
    render_authors,
    render_commit_full,
    render_commit_listing,
    render_diff,
    render_paths,
    require_hash,
)

SAFE_LIFESPAN_MARGIN = 7 * 86_400

_PERSON_RE = re.compile(r"^(author|committer) (.*) <([^>]*)> (\d+) ([+-]\d{4})$")
_STATUS_RE = re.compile(r"^([AMDRC])\d*$")


def safe_lifespan(created_at: int, closed_at: int | None, now: int) -> TimeWindow:
    """Default query window for an issue: its lifetime padded by a week on
    both sides. Open issues extend to the session's capture of now."""
    end = closed_at if closed_at is not None else now
    return TimeWindow(created_at - SAFE_LIFESPAN_MARGIN, end + SAFE_LIFESPAN_MARGIN)


class GitCommandError(Exception):
    def __init__(self, argv: list[str], returncode: int, stderr: str) -> None:
        super().__init__(f"git {' '.join(argv)} failed ({returncode}): {stderr.strip()}")
        self.returncode = returncode
        self.stderr = stderr


def _run_git(repo_dir: Path | str, *args: str, input_bytes: bytes | None = None) -> bytes:
    argv = ["git", "-C", str(repo_dir), *args]
    proc = subprocess.run(argv, capture_output=True, input=input_bytes)
    if proc.returncode != 0:
        raise GitCommandError(list(args), proc.returncode, proc.stderr.decode("utf-8", "replace"))
    return proc.stdout


@dataclass(frozen=True)
class NameStatusEntry:
    """One changed path from a commit's first-parent name-status diff."""

    kind: ChangeKind
    path: str
    old_path: str = ""

    @property
    def touched(self) -> tuple[str, ...]:
        return (self.path, self.old_path) if self.old_path else (self.path,)


def _looks_like_url(source: str) -> bool:
    return "://" in source or re.match(r"^[\w.+-]+@[\w.-]+:", source) is not None


class GitHistory:
    """The unified commit view plus the plumbing handles to query it."""

    def __init__(self, repo_dir: Path, commits: list[CommitMeta], name_status: dict[str, tuple[NameStatusEntry, ...]]):
        self.repo_dir = repo_dir
        self.commits = commits  # ascending (committed_at, hash)
        self.by_hash = {c.hash: c for c in commits}
        self.name_status = name_status
        self._diff_cache: dict[str, CommitDiff] = {}
        self._diff_lock = threading.Lock()  # histories are shared across parallel sessions

    # -- construction -------------------------------------------------

    @classmethod
    def open(cls, source: str, cache_dir: str | Path | None = None) -> "GitHistory":
        """Open a local repository path, or clone a URL into the cache.

        Clones are mirror clones keyed by a hash of the URL, so a second
        session for the same remote reuses the first session's copy.
        """
        if _looks_like_url(source):
            base = Path(cache_dir) if cache_dir else Path(tempfile.gettempdir()) / "linkhound-clones"
            base.mkdir(parents=True, exist_ok=True)
            dest = base / hashlib.sha256(source.encode("utf-8")).hexdigest()[:16]
            if not dest.exists():
                proc = subprocess.run(
                    ["git", "clone", "--mirror", "--quiet", source, str(dest)],
                    capture_output=True,
                )
                if proc.returncode != 0:
                    raise SetupError(
                        f"could not clone {source}: {proc.stderr.decode('utf-8', 'replace').strip()}"
                    )
            repo_dir = dest
        else:
            repo_dir = Path(source)
            probe = subprocess.run(
                ["git", "-C", str(repo_dir), "rev-parse", "--git-dir"], capture_output=True
            )
            if probe.returncode != 0:
                raise SetupError(f"not a git repository: {source}")
        return cls.load(repo_dir)

    @classmethod
    def load(cls, repo_dir: Path) -> "GitHistory":
        hashes = _run_git(repo_dir, "rev-list", "--branches", "--tags", "--remotes").decode().split()
        seen: set[str] = set()
        unique = [h for h in hashes if not (h in seen or seen.add(h))]
        commits = _read_commit_objects(repo_dir, unique)
        commits.sort(key=lambda c: c.sort_key)
        name_status = _read_name_status(repo_dir, commits)
        return cls(repo_dir, commits, name_status)

    # -- queries ------------------------------------------------------

    def windowed(self, window: TimeWindow) -> list[CommitMeta]:
        return [c for c in self.commits if window.contains(c.committed_at)]

    def get(self, commit_hash: str) -> CommitMeta:
        meta = self.by_hash.get(commit_hash)
        if meta is None:
            raise ToolError(f"unknown commit hash {commit_hash!r}: not in this repository's history")
        return meta

    def has_commit(self, commit_hash: str) -> bool:
        return commit_hash in self.by_hash

    def diff(self, commit_hash: str) -> CommitDiff:
        """First-parent diff of a commit, with per-file patch text."""
        with self._diff_lock:
            cached = self._diff_cache.get(commit_hash)
            if cached is not None:
                return cached
            meta = self.get(commit_hash)
            entries = self.name_status.get(commit_hash, ())
            chunks = _read_patch_chunks(self.repo_dir, meta)
            files = []
            for i, entry in enumerate(entries):
                patch = chunks[i] if i < len(chunks) else ""
                files.append(
                    FileDiff(path=entry.path, kind=entry.kind, old_path=entry.old_path, patch=patch)
                )
            diff = CommitDiff(commit_hash=commit_hash, files=tuple(files))
            self._diff_cache[commit_hash] = diff
            return diff

    def read_blob(self, commit_hash: str, path: str) -> str:
        self.get(commit_hash)
        try:
            data = _run_git(self.repo_dir, "show", f"{commit_hash}:{path}")
        except GitCommandError as exc:
            raise ToolError(f"file {path!r} not found at commit {commit_hash}") from exc
        return data.decode("utf-8", "replace")

    def touched_paths(self, window: TimeWindow) -> list[str]:
        """Every path appearing in any in-window commit's diff, old names
        of renames included, sorted."""
        paths: set[str] = set()
        for meta in self.windowed(window):
            for entry in self.name_status.get(meta.hash, ()):
                paths.update(entry.touched)
        return sorted(paths)


def _read_commit_objects(repo_dir: Path, hashes: list[str]) -> list[CommitMeta]:
    if not hashes:
        return []
    stdin = ("\n".join(hashes) + "\n").encode()
    out = _run_git(repo_dir, "cat-file", "--batch", input_bytes=stdin)
    commits = []
    pos = 0
    while pos < len(out):
        nl = out.index(b"\n", pos)
        header = out[pos:nl].decode()
        parts = header.split()
        if len(parts) != 3 or parts[1] != "commit":
            raise SetupError(f"unexpected object in history: {header}")
        size = int(parts[2])
        body = out[nl + 1 : nl + 1 + size]
        pos = nl + 1 + size + 1  # trailing newline after each object
        commits.append(_parse_commit_object(parts[0], body))
    return commits


def _parse_commit_object(commit_hash: str, body: bytes) -> CommitMeta:
    text = body.decode("utf-8", "replace")
    head, _, message = text.partition("\n\n")
    message = message.rstrip("\n")
    author = committer = Author(name="", email="")
    authored_at = committed_at = 0
    parents: list[str] = []
    for line in head.splitlines():
        if line.startswith("parent "):
            parents.append(line.split()[1])
            continue
        m = _PERSON_RE.match(line)
        if m is None:
            continue
        person = Author(name=m.group(2), email=m.group(3))
        if m.group(1) == "author":
            author, authored_at = person, int(m.group(4))
        else:
            committer, committed_at = person, int(m.group(4))
    return CommitMeta(
        hash=commit_hash,
        author=author,
        committer=committer,
        authored_at=authored_at,
        committed_at=committed_at,
        message=message,
        parents=tuple(parents),
    )


def _diff_request_line(meta: CommitMeta) -> str:
    if meta.parents:
        return f"{meta.hash} {meta.parents[0]}"
    return meta.hash


def _read_name_status(repo_dir: Path, commits: list[CommitMeta]) -> dict[str, tuple[NameStatusEntry, ...]]:
    """Batched first-parent name-status diffs for the whole view.

    Feeding `<commit> <first-parent>` pairs makes merge commits behave
    like ordinary ones (diff against first parent only).
    """
    if not commits:
        return {}
    stdin = ("\n".join(_diff_request_line(c) for c in commits) + "\n").encode()
    out = _run_git(
        repo_dir, "diff-tree", "--stdin", "-r", "-M", "--name-status", "--root",
        input_bytes=stdin,
    ).decode("utf-8", "replace")
    result: dict[str, tuple[NameStatusEntry, ...]] = {c.hash: () for c in commits}
    current: str | None = None
    entries: list[NameStatusEntry] = []
    for line in out.splitlines():
        if not line:
            continue
        if "\t" not in line:
            if current is not None:
                result[current] = tuple(entries)
            current = line.split()[0]
            entries = []
            continue
        fields = line.split("\t")
        status = fields[0]
        m = _STATUS_RE.match(status)
        if m is None:
            continue
        letter = m.group(1)
        if letter in ("R", "C"):
            old, new = fields[1], fields[2]
            kind = ChangeKind.RENAMED if letter == "R" else ChangeKind.ADDED
            entries.append(NameStatusEntry(kind=kind, path=new, old_path=old))
        else:
            kind = {
                "A": ChangeKind.ADDED,
                "M": ChangeKind.MODIFIED,
                "D": ChangeKind.DELETED,
            }[letter]
            entries.append(NameStatusEntry(kind=kind, path=fields[1]))
    if current is not None:
        result[current] = tuple(entries)
    return result


def _read_patch_chunks(repo_dir: Path, meta: CommitMeta) -> list[str]:
    """Per-file patch text for one commit, in name-status order."""
    stdin = (_diff_request_line(meta) + "\n").encode()
    out = _run_git(
        repo_dir, "diff-tree", "--stdin", "-r", "-M", "-p", "--root",
        input_bytes=stdin,
    ).decode("utf-8", "replace")
    chunks: list[str] = []
    current: list[str] = []
    started = False
    for line in out.splitlines():
        if line.startswith("diff --git "):
            if started:
                chunks.append("\n".join(current))
            current = [line]
            started = True
        elif started:
            current.append(line)
    if started:
        chunks.append("\n".join(current))
    return chunks


def glob_to_regex(pattern: str) -> re.Pattern:
    """Translate a path glob to a regex over full repository paths.

    `*` and `?` stay inside one path segment, `**` crosses segments, and
    `[...]` classes pass through. Anything else is literal.
    """
    if not pattern:
        raise ToolError("pattern must not be empty")
    out = []
    i = 0
    n = len(pattern)
    while i < n:
        ch = pattern[i]
        if ch == "*":
            if pattern[i : i + 3] == "**/":
                out.append("(?:.*/)?")
                i += 3
            elif pattern[i : i + 2] == "**":
                out.append(".*")
                i += 2
            else:
                out.append("[^/]*")
                i += 1
        elif ch == "?":
            out.append("[^/]")
            i += 1
        elif ch == "[":
            end = pattern.find("]", i + 2)  # allow a leading ] or ! inside
            if end == -1:
                raise ToolError(
                    f"invalid pattern {pattern!r}: unterminated character class "
                    "(every '[' needs a matching ']')"
                )
            cls = pattern[i : end + 1]
            if cls.startswith("[!"):
                cls = "[^" + cls[2:]
            out.append(cls)
            i = end + 1
        else:
            out.append(re.escape(ch))
            i += 1
    try:
        return re.compile("^" + "".join(out) + "$")
    except re.error as exc:
        raise ToolError(f"invalid pattern {pattern!r}: {exc}") from exc


def author_matches(author: Author, query: str) -> bool:
    """Match an author query the way the listing renders authors.

    Accepts `Name <email>` (both parts must agree), a bare email
    (case-insensitive), or a bare name (case-insensitive).
    """
    q = query.strip()
    m = re.fullmatch(r"(.*)<([^>]*)>", q)
    if m is not None:
        return (
            author.name == m.group(1).strip()
            and author.email.lower() == m.group(2).strip().lower()
        )
    if "@" in q:
        return author.email.lower() == q.lower()
    return author.name.lower() == q.lower()


class GitTools:
    """The seven history functions a session exposes to the model."""

    def __init__(self, history: GitHistory, window: TimeWindow, default_page_size: int = 20):
        self.history = history
        self.window = window
        self.default_page_size = default_page_size

    def specs(self) -> list[ToolSpec]:
        page_params = (
            ToolParam("page", "integer", required=False, description="zero-based page index"),
            ToolParam("page_size", "integer", required=False, description="results per page, 1 to 100"),
        )
        return [
            ToolSpec(
                ToolSchema(
                    "list_commits",
                    "List commits inside the issue's safe lifespan, across every branch, "
                    "oldest first. One line per commit: hash, commit time, author, subject.",
                    page_params,
                ),
                self.list_commits,
            ),
            ToolSpec(
                ToolSchema(
                    "commit_metadata",
                    "Full metadata for one commit: author, committer, both timestamps, "
                    "parents, and the complete message.",
                    (ToolParam("commit_hash", "string", description="full 40-character hash"),),
                ),
                self.commit_metadata,
            ),
            ToolSpec(
                ToolSchema(
                    "commit_diff",
                    "The changes a commit introduced over its first parent: changed paths "
                    "with their change kind, plus the patch hunks.",
                    (ToolParam("commit_hash", "string", description="full 40-character hash"),),
                ),
                self.commit_diff,
            ),
            ToolSpec(
                ToolSchema(
                    "commits_of_author",
                    "Commits inside the safe lifespan written by one author. The author "
                    "argument is a name, an email, or 'Name <email>'.",
                    (ToolParam("author", "string", description="author name or email"),) + page_params,
                ),
                self.commits_of_author,
            ),
            ToolSpec(
                ToolSchema(
                    "commits_on_file",
                    "Commits inside the safe lifespan that touched the given path "
                    "(renames count for both the old and the new name). Use list_files "
                    "first to discover the exact path.",
                    (ToolParam("path", "string", description="repository-relative path"),) + page_params,
                ),
                self.commits_on_file,
            ),
            ToolSpec(
                ToolSchema(
                    "list_files",
                    "Repository paths touched inside the safe lifespan that match a glob "
                    "pattern. '*' stays inside a path segment, '**' crosses segments.",
                    (ToolParam("pattern", "string", description="glob pattern, e.g. src/*.rs or **"),) + page_params,
                ),
                self.list_files,
            ),
            ToolSpec(
                ToolSchema(
                    "list_authors",
                    "Every distinct commit author inside the safe lifespan.",
                    page_params,
                ),
                self.list_authors,
            ),
        ]

    # -- handlers (validated arguments in, payload text out) ----------

    def list_commits(self, args: dict) -> str:
        page, size = page_arguments(args, self.default_page_size)
        return render_commit_listing(paginate(self.history.windowed(self.window), page, size))

    def commit_metadata(self, args: dict) -> str:
        commit_hash = require_hash(args)
        return render_commit_full(self.history.get(commit_hash))

    def commit_diff(self, args: dict) -> str:
        commit_hash = require_hash(args)
        return render_diff(self.history.diff(commit_hash))

    def commits_of_author(self, args: dict) -> str:
        query = args.get("author", "").strip()
        if not query:
            raise ToolError("author must not be empty")
        page, size = page_arguments(args, self.default_page_size)
        hits = [
            c for c in self.history.windowed(self.window) if author_matches(c.author, query)
        ]
        return render_commit_listing(paginate(hits, page, size))

    def commits_on_file(self, args: dict) -> str:
        path = args.get("path", "").strip()
        if not path:
            raise ToolError("path must not be empty")
        page, size = page_arguments(args, self.default_page_size)
        hits = []
        for meta in self.history.windowed(self.window):
            touched = {
                p for entry in self.history.name_status.get(meta.hash, ()) for p in entry.touched
            }
            if path in touched:
                hits.append(meta)
        return render_commit_listing(paginate(hits, page, size))

    def list_files(self, args: dict) -> str:
        pattern = args.get("pattern", "")
        if not pattern:
            raise ToolError("pattern must not be empty")
        regex = glob_to_regex(pattern)
        page, size = page_arguments(args, self.default_page_size)
        paths = [p for p in self.history.touched_paths(self.window) if regex.match(p)]
        return render_paths(paginate(paths, page, size))

    def list_authors(self, args: dict) -> str:
        page, size = page_arguments(args, self.default_page_size)
        distinct = sorted(
            {c.author for c in self.history.windowed(self.window)},
            key=lambda a: (a.name, a.email),
        )
        return render_authors(paginate(distinct, page, size))
