"""Batch evaluation over a linked-issue dataset.

Loads issue-to-commit link records, adjusts each record's ground truth to
the final commit of its link set, runs R sessions per issue, and reports
Hit@1 per project and overall: the fraction of issues whose session
finished with exactly the ground-truth commit. Sessions that give up,
exhaust a budget, or fail setup count as misses.
"""

from __future__ import annotations

import csv
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import httpx

from .domain import Budgets, OutcomeKind, SetupError, is_commit_hash
from .history import GitHistory, safe_lifespan
from .metrics import DEFAULT_USD_PER_TOKEN, render_metrics_line
from .middleware import ScriptExhausted, TransportFailure
from .orchestrator import SessionResult, run_prepared
from .tracker import IssueSnapshot, fetch_issue


@dataclass(frozen=True)
class DatasetRecord:
    issue_id: str
    issue_url: str
    repo_id: str
    link_hashes: tuple[str, ...]


@dataclass(frozen=True)
class AdjustedRecord:
    """A dataset record whose ground truth is pinned to one commit."""

    record: DatasetRecord
    resolving_commit: str


# ---------------------------------------------------------------------------
# Dataset loading. The native format is tab-delimited: issue id, issue URL,
# repository id, semicolon-joined commit hashes. A CSV adapter accepts the
# common one-row-per-link layout instead.


def load_dataset(path: str | Path, fmt: str | None = None) -> tuple[list[DatasetRecord], list[str]]:
    path = Path(path)
    fmt = fmt or ("csv" if path.suffix.lower() == ".csv" else "tsv")
    if fmt == "csv":
        return _load_csv(path)
    if fmt == "tsv":
        return _load_tsv(path)
    raise ValueError(f"unknown dataset format {fmt!r} (expected tsv or csv)")


def _validated(issue_id, issue_url, repo_id, hashes, where, warnings) -> DatasetRecord | None:
    if not issue_id or not issue_url or not repo_id:
        warnings.append(f"{where}: missing issue id, URL, or repository id; skipped")
        return None
    bad = [h for h in hashes if not is_commit_hash(h)]
    if bad:
        warnings.append(f"{where}: malformed commit hash {bad[0]!r}; record skipped")
        return None
    if not hashes:
        warnings.append(f"{where}: record has no commit hashes; skipped")
        return None
    return DatasetRecord(issue_id, issue_url, repo_id, tuple(hashes))


def _load_tsv(path: Path) -> tuple[list[DatasetRecord], list[str]]:
    records: list[DatasetRecord] = []
    warnings: list[str] = []
    seen: set[str] = set()
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            warnings.append(
                f"line {lineno}: expected 4 tab-separated fields, got {len(parts)}; skipped"
            )
            continue
        issue_id, issue_url, repo_id, raw_hashes = (p.strip() for p in parts)
        hashes = [h for h in raw_hashes.split(";") if h]
        record = _validated(issue_id, issue_url, repo_id, hashes, f"line {lineno}", warnings)
        if record is None:
            continue
        if record.issue_id in seen:
            warnings.append(f"line {lineno}: duplicate issue id {record.issue_id!r}; skipped")
            continue
        seen.add(record.issue_id)
        records.append(record)
    return records, warnings


def _load_csv(path: Path) -> tuple[list[DatasetRecord], list[str]]:
    warnings: list[str] = []
    grouped: dict[str, dict] = {}
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        required = {"issue_id", "issue_url", "repo_id", "commit_hash"}
        missing = required - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"CSV dataset is missing columns: {', '.join(sorted(missing))}")
        for lineno, row in enumerate(reader, start=2):
            issue_id = (row.get("issue_id") or "").strip()
            if not issue_id:
                warnings.append(f"line {lineno}: missing issue_id; skipped")
                continue
            entry = grouped.setdefault(
                issue_id,
                {
                    "issue_url": (row.get("issue_url") or "").strip(),
                    "repo_id": (row.get("repo_id") or "").strip(),
                    "hashes": [],
                },
            )
            entry["hashes"].append((row.get("commit_hash") or "").strip())
    records = []
    for issue_id, entry in grouped.items():
        record = _validated(
            issue_id,
            entry["issue_url"],
            entry["repo_id"],
            entry["hashes"],
            f"issue {issue_id}",
            warnings,
        )
        if record is not None:
            records.append(record)
    return records, warnings


# ---------------------------------------------------------------------------
# Ground-truth adjustment.


def adjust_ground_truth(
    records: Sequence[DatasetRecord],
    commit_time_of: Callable[[DatasetRecord, str], int | None],
) -> tuple[list[AdjustedRecord], list[tuple[DatasetRecord, str]]]:
    """Pin every record's ground truth to the final commit of its links.

    The resolving commit is the maximum by (commit time, hash), so the
    choice does not depend on the order hashes were listed in. A record
    containing a hash the repository does not know is excluded.
    """
    adjusted: list[AdjustedRecord] = []
    excluded: list[tuple[DatasetRecord, str]] = []
    for record in records:
        keyed: list[tuple[int, str]] = []
        unresolvable = None
        for commit_hash in record.link_hashes:
            ts = commit_time_of(record, commit_hash)
            if ts is None:
                unresolvable = commit_hash
                break
            keyed.append((ts, commit_hash))
        if unresolvable is not None:
            excluded.append(
                (record, f"hash {unresolvable} not found in repository {record.repo_id!r}")
            )
            continue
        adjusted.append(AdjustedRecord(record, max(keyed)[1]))
    return adjusted, excluded


# ---------------------------------------------------------------------------
# Hit@K.


def hit_at_k(ranked: Sequence[str], truth: str, k: int) -> int:
    """1 when the truth appears within the first k ranked candidates."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return int(truth in list(ranked)[:k])


def mean_hit_at_k(rankings: Sequence[Sequence[str]], truths: Sequence[str], k: int) -> float:
    """Average the Hit@K indicator over a query set."""
    if len(rankings) != len(truths):
        raise ValueError("rankings and truths differ in length")
    if not rankings:
        raise ValueError("empty query set")
    return sum(hit_at_k(r, t, k) for r, t in zip(rankings, truths)) / len(rankings)


# ---------------------------------------------------------------------------
# The evaluation loop.


@dataclass
class SessionReport:
    run: int
    issue_id: str
    repo_id: str
    truth: str
    outcome_kind: str  # an OutcomeKind value or "setup_failed"
    candidate: str = ""
    hit: bool = False
    reason: str = ""
    metrics_line: str = ""


@dataclass
class EvalReport:
    runs: int
    sessions: list[SessionReport] = field(default_factory=list)
    excluded: list[tuple[DatasetRecord, str]] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def projects(self) -> list[str]:
        return sorted({s.repo_id for s in self.sessions})

    def hit1(self, repo_id: str | None = None, run: int | None = None) -> float:
        pool = [
            s
            for s in self.sessions
            if (repo_id is None or s.repo_id == repo_id) and (run is None or s.run == run)
        ]
        if not pool:
            return 0.0
        return sum(s.hit for s in pool) / len(pool)

    def mean_hit1(self, repo_id: str | None = None) -> float:
        per_run = [self.hit1(repo_id, run) for run in range(1, self.runs + 1)]
        return statistics.fmean(per_run) if per_run else 0.0

    def outcome_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for s in self.sessions:
            counts[s.outcome_kind] = counts.get(s.outcome_kind, 0) + 1
        return dict(sorted(counts.items()))

    def to_record_lines(self) -> list[str]:
        lines = []
        for project in self.projects():
            for run in range(1, self.runs + 1):
                n = sum(1 for s in self.sessions if s.repo_id == project and s.run == run)
                lines.append(
                    f"project={project} run={run} hit1={self.hit1(project, run):.6f} sessions={n}"
                )
            lines.append(f"project={project} run=mean hit1={self.mean_hit1(project):.6f}")
        for run in range(1, self.runs + 1):
            lines.append(f"project=all run={run} hit1={self.hit1(run=run):.6f}")
        lines.append(f"project=all run=mean hit1={self.mean_hit1():.6f}")
        return lines

    def to_text(self) -> str:
        lines = [
            f"evaluation: {len(self.sessions)} sessions over "
            f"{len({s.issue_id for s in self.sessions})} issues, {self.runs} run(s)",
            "",
            f"{'project':<20} {'run':>4} {'hit@1':>8} {'sessions':>9}",
        ]
        for project in self.projects():
            for run in range(1, self.runs + 1):
                n = sum(1 for s in self.sessions if s.repo_id == project and s.run == run)
                lines.append(f"{project:<20} {run:>4} {self.hit1(project, run):>8.3f} {n:>9}")
            lines.append(f"{project:<20} {'mean':>4} {self.mean_hit1(project):>8.3f}")
        lines.append(f"{'all':<20} {'mean':>4} {self.mean_hit1():>8.3f}")
        lines.append("")
        lines.append(
            "outcomes: "
            + (
                ", ".join(f"{kind}={count}" for kind, count in self.outcome_counts().items())
                or "none"
            )
        )
        for record, reason in self.excluded:
            lines.append(f"excluded: issue {record.issue_id}: {reason}")
        for warning in self.warnings:
            lines.append(f"warning: {warning}")
        return "\n".join(lines)

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(self.to_text() + "\n", encoding="utf-8")
        (out / "report.records").write_text(
            "\n".join(self.to_record_lines()) + "\n", encoding="utf-8"
        )
        metric_lines = [s.metrics_line for s in self.sessions if s.metrics_line]
        (out / "sessions.metrics").write_text(
            "\n".join(metric_lines) + ("\n" if metric_lines else ""), encoding="utf-8"
        )


def run_eval(
    records: Sequence[DatasetRecord],
    repo_source_of: Callable[[str], str],
    backend_factory: Callable[[DatasetRecord, int], object],
    *,
    issue_client: httpx.Client | None = None,
    budgets: Budgets = Budgets(),
    runs: int = 3,
    parallel: int = 1,
    page_size: int = 20,
    model: str | None = None,
    usd_per_token: float = DEFAULT_USD_PER_TOKEN,
    now: int | None = None,
    warnings: Sequence[str] = (),
) -> EvalReport:
    """Evaluate every record R times and report Hit@1.

    Repository histories and issue snapshots are fetched once and shared;
    each (record, run) session gets a fresh backend from the factory.
    """
    report = EvalReport(runs=runs, warnings=list(warnings))

    histories: dict[str, GitHistory] = {}
    history_errors: dict[str, str] = {}
    for repo_id in sorted({r.repo_id for r in records}):
        try:
            histories[repo_id] = GitHistory.open(repo_source_of(repo_id))
        except SetupError as exc:
            history_errors[repo_id] = str(exc)

    def commit_time_of(record: DatasetRecord, commit_hash: str) -> int | None:
        history = histories.get(record.repo_id)
        if history is None:
            return 0  # repo failed to open; keep the record so its sessions report the miss
        meta = history.by_hash.get(commit_hash)
        return None if meta is None else meta.committed_at

    adjusted, excluded = adjust_ground_truth(records, commit_time_of)
    report.excluded = excluded

    captured_now = int(time.time()) if now is None else now
    snapshots: dict[str, IssueSnapshot] = {}
    snapshot_errors: dict[str, str] = {}
    client = issue_client or httpx.Client(timeout=30.0)
    try:
        for url in sorted({a.record.issue_url for a in adjusted}):
            try:
                snapshots[url] = fetch_issue(url, client)
            except SetupError as exc:
                snapshot_errors[url] = str(exc)
    finally:
        if issue_client is None:
            client.close()

    def one_session(adj: AdjustedRecord, run: int) -> SessionReport:
        record = adj.record
        base = SessionReport(
            run=run,
            issue_id=record.issue_id,
            repo_id=record.repo_id,
            truth=adj.resolving_commit,
            outcome_kind="setup_failed",
        )
        if record.repo_id in history_errors:
            base.reason = history_errors[record.repo_id]
            return base
        if record.issue_url in snapshot_errors:
            base.reason = snapshot_errors[record.issue_url]
            return base
        snapshot = snapshots[record.issue_url]
        history = histories[record.repo_id]
        window = safe_lifespan(snapshot.created_at, snapshot.closed_at, captured_now)
        try:
            result: SessionResult = run_prepared(
                snapshot,
                history,
                window,
                backend=backend_factory(record, run),
                budgets=budgets,
                model=model,
                page_size=page_size,
                usd_per_token=usd_per_token,
            )
        except (ScriptExhausted, TransportFailure, SetupError) as exc:
            base.reason = str(exc)
            return base
        base.outcome_kind = result.outcome.kind.value
        base.candidate = result.outcome.commit_hash
        base.hit = (
            result.outcome.kind is OutcomeKind.FINISHED
            and result.outcome.commit_hash == adj.resolving_commit
        )
        base.reason = result.outcome.reason
        base.metrics_line = render_metrics_line(result.metrics)
        return base

    for run in range(1, runs + 1):
        if parallel > 1 and len(adjusted) > 1:
            with ThreadPoolExecutor(max_workers=parallel) as pool:
                report.sessions.extend(pool.map(lambda a: one_session(a, run), adjusted))
        else:
            report.sessions.extend(one_session(adj, run) for adj in adjusted)
    return report


# ---------------------------------------------------------------------------
# The single-session output record. `linkhound link` prints exactly one of
# these lines; the loader below reads them back.


def render_record_line(result: SessionResult) -> str:
    outcome = result.outcome
    commit = outcome.commit_hash if outcome.kind is OutcomeKind.FINISHED else "-"
    reason = outcome.reason or "-"
    return (
        f"outcome={outcome.kind.value} commit={commit} reason={reason} "
        f"iterations={result.iterations} tokens={result.total_tokens} "
        f"wall_time_s={result.wall_time_s:.3f}"
    )


def parse_record_line(line: str) -> dict:
    """Read a session output record back into typed fields."""
    fields = {}
    for token in line.strip().split():
        key, sep, value = token.partition("=")
        if not sep:
            raise ValueError(f"malformed record token {token!r}")
        fields[key] = value
    expected = {"outcome", "commit", "reason", "iterations", "tokens", "wall_time_s"}
    missing = expected - set(fields)
    if missing:
        raise ValueError(f"record is missing fields: {', '.join(sorted(missing))}")
    if fields["outcome"] not in {k.value for k in OutcomeKind}:
        raise ValueError(f"unknown outcome kind {fields['outcome']!r}")
    return {
        "outcome": fields["outcome"],
        "commit_hash": "" if fields["commit"] == "-" else fields["commit"],
        "reason": "" if fields["reason"] == "-" else fields["reason"],
        "iterations": int(fields["iterations"]),
        "tokens": int(fields["tokens"]),
        "wall_time_s": float(fields["wall_time_s"]),
    }
