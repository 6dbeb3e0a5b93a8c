"""The session loop.

Wires the three extractors and the control functions into one registry,
opens the dialogue, and drives assistant turns until the session reaches
its single terminal outcome: finished with a validated commit, given up,
or stopped by a budget. Tool failures stay in-band as error payloads; the
loop itself only ever stops at a terminal outcome or a setup/transport
failure.
"""

from __future__ import annotations

import time

import httpx

from dataclasses import dataclass, field

from .codenav import CodeTools
from .domain import (
    Budgets,
    CallLogEntry,
    OutcomeKind,
    SchemaRegistry,
    SessionOutcome,
    TimeWindow,
    ToolCall,
    ToolError,
    ToolParam,
    ToolResult,
    ToolSchema,
    ToolSpec,
    is_commit_hash,
)
from .history import GitHistory, GitTools, safe_lifespan
from .metrics import DEFAULT_USD_PER_TOKEN, SessionMetrics, record
from .middleware import Dialogue, ScriptedBackend
from .tracker import IssueSnapshot, IssueTools, fetch_issue

_CORRECTIVE_NUDGE = (
    "Your last reply contained no function call. Reply with exactly one "
    "function call: use finish(commit_hash=\"...\") when you are confident, "
    "or give_up() if the answer cannot be determined."
)


class MonotonicClock:
    def now(self) -> float:
        return time.monotonic()


class FixedClock:
    """Stands in for the wall clock when runs must be byte-reproducible."""

    def __init__(self, value: float = 0.0):
        self.value = value

    def now(self) -> float:
        return self.value


def control_specs() -> list[ToolSpec]:
    """Schemas for the three session-control functions.

    Their handlers only matter when someone routes them outside a session;
    the loop intercepts these names before routing.
    """

    def _handled(args: dict) -> str:
        return "(control function: handled by the session loop)"

    return [
        ToolSpec(
            ToolSchema(
                "finish",
                "End the session with the resolving commit. The hash must be the "
                "full 40-character id of a commit that exists in this repository.",
                (ToolParam("commit_hash", "string", description="full 40-character hash"),),
            ),
            _handled,
        ),
        ToolSpec(
            ToolSchema(
                "give_up",
                "End the session declaring that the resolving commit cannot be "
                "determined.",
                (),
            ),
            _handled,
        ),
        ToolSpec(
            ToolSchema(
                "feedback",
                "Answer a pending feedback request on an oversized result: discard "
                "it to reclaim its tokens, or preserve it.",
                (
                    ToolParam("call_id", "string", description="the call the request names"),
                    ToolParam("verdict", "string", description="'discard' or 'preserve'"),
                ),
            ),
            _handled,
        ),
    ]


def build_registry(
    git_tools: GitTools, issue_tools: IssueTools, code_tools: CodeTools
) -> SchemaRegistry:
    registry = SchemaRegistry()
    registry.extend(git_tools.specs())
    registry.extend(issue_tools.specs())
    registry.extend(code_tools.specs())
    registry.extend(control_specs())
    return registry


def tool_catalog() -> list[ToolSchema]:
    """Every schema a standard session registers, without live bindings."""
    placeholder_window = TimeWindow(0, 0)
    git = GitTools(history=None, window=placeholder_window)  # type: ignore[arg-type]
    issue = IssueTools(snapshot=None)  # type: ignore[arg-type]
    code = CodeTools(history=None)
    specs = git.specs() + issue.specs() + code.specs() + control_specs()
    return [spec.schema for spec in specs]


@dataclass
class SessionResult:
    outcome: SessionOutcome
    iterations: int
    total_tokens: int
    wall_time_s: float
    call_log: list[CallLogEntry]
    metrics: SessionMetrics
    dialogue: Dialogue = field(repr=False, default=None)  # type: ignore[assignment]


def prepare_session(
    issue_url: str,
    repo_source: str,
    *,
    client: httpx.Client | None = None,
    cache_dir: str | None = None,
    now: int | None = None,
) -> tuple[IssueSnapshot, GitHistory, TimeWindow]:
    """Fetch the issue snapshot, open the repository, derive the window.

    `now` is captured here, once, so an open issue's window stays fixed
    for the rest of the session.
    """
    owns_client = client is None
    client = client or httpx.Client(timeout=30.0)
    try:
        snapshot = fetch_issue(issue_url, client)
    finally:
        if owns_client:
            client.close()
    history = GitHistory.open(repo_source, cache_dir=cache_dir)
    captured_now = int(time.time()) if now is None else now
    window = safe_lifespan(snapshot.created_at, snapshot.closed_at, captured_now)
    return snapshot, history, window


def run_session(
    issue_url: str,
    repo_source: str,
    *,
    backend,
    budgets: Budgets = Budgets(),
    model: str | None = None,
    client: httpx.Client | None = None,
    cache_dir: str | None = None,
    page_size: int = 20,
    clock=None,
    now: int | None = None,
    usd_per_token: float = DEFAULT_USD_PER_TOKEN,
) -> SessionResult:
    snapshot, history, window = prepare_session(
        issue_url, repo_source, client=client, cache_dir=cache_dir, now=now
    )
    return run_prepared(
        snapshot,
        history,
        window,
        backend=backend,
        budgets=budgets,
        model=model,
        page_size=page_size,
        clock=clock,
        usd_per_token=usd_per_token,
    )


def run_prepared(
    snapshot: IssueSnapshot,
    history: GitHistory,
    window: TimeWindow,
    *,
    backend,
    budgets: Budgets = Budgets(),
    model: str | None = None,
    page_size: int = 20,
    clock=None,
    usd_per_token: float = DEFAULT_USD_PER_TOKEN,
) -> SessionResult:
    """Drive a session over an already prepared issue and repository."""
    if clock is None:
        clock = FixedClock() if getattr(backend, "deterministic", False) else MonotonicClock()
    registry = build_registry(
        GitTools(history, window, default_page_size=page_size),
        IssueTools(snapshot, default_page_size=page_size),
        CodeTools(history),
    )
    kwargs = {} if model is None else {"model": model}
    dialogue = Dialogue(backend, registry, budgets, **kwargs)

    started = clock.now()
    dialogue.open_with_prompt(snapshot.url)
    call_log: list[CallLogEntry] = []
    outcome: SessionOutcome | None = None
    iterations = 0

    def _mark_auto_discards(seen_before: int) -> None:
        for call_id in dialogue.auto_discards[seen_before:]:
            for entry in call_log:
                if entry.call.call_id == call_id:
                    entry.feedback = "auto_discard"

    while outcome is None:
        if iterations >= budgets.max_iterations:
            outcome = SessionOutcome(OutcomeKind.BUDGET_EXHAUSTED, reason="iterations")
            break
        if dialogue.ledger.cumulative_total > budgets.max_total_tokens:
            outcome = SessionOutcome(OutcomeKind.BUDGET_EXHAUSTED, reason="tokens")
            break
        auto_seen = len(dialogue.auto_discards)
        turn = dialogue.next_action()
        _mark_auto_discards(auto_seen)
        iterations += 1
        if not turn.tool_calls:
            dialogue.append_system(_CORRECTIVE_NUDGE)
            continue
        for call in turn.tool_calls:
            if outcome is not None:
                break  # a terminal outcome was set earlier this turn
            result, outcome = _execute(call, registry, history, dialogue, call_log)
            dialogue.append_result(result)
            call_log.append(
                CallLogEntry(iteration=iterations, call=call, byte_size=result.byte_size)
            )

    elapsed = clock.now() - started
    session_metrics = record(call_log, dialogue.ledger, elapsed, usd_per_token)
    return SessionResult(
        outcome=outcome,
        iterations=iterations,
        total_tokens=dialogue.ledger.cumulative_total,
        wall_time_s=elapsed,
        call_log=call_log,
        metrics=session_metrics,
        dialogue=dialogue,
    )


def _execute(
    call: ToolCall,
    registry: SchemaRegistry,
    history: GitHistory,
    dialogue: Dialogue,
    call_log: list[CallLogEntry],
) -> tuple[ToolResult, SessionOutcome | None]:
    """Run one call: control functions are intercepted, everything else
    routes through the registry. Always returns a result payload."""
    if call.arguments_raw or call.name not in ("finish", "give_up", "feedback"):
        return registry.route_call(call), None

    if call.name == "finish":
        commit_hash = call.arguments.get("commit_hash", "")
        if not is_commit_hash(commit_hash):
            return (
                ToolResult.for_payload(
                    call,
                    "error: malformed commit_hash: expected 40 lowercase hex "
                    f"characters, got {commit_hash!r}",
                    is_error=True,
                ),
                None,
            )
        if not history.has_commit(commit_hash):
            return (
                ToolResult.for_payload(
                    call,
                    f"error: unknown commit hash {commit_hash!r}: not in this "
                    "repository's history. finish needs a commit that exists here",
                    is_error=True,
                ),
                None,
            )
        return (
            ToolResult.for_payload(call, f"session finished: commit {commit_hash} recorded"),
            SessionOutcome(OutcomeKind.FINISHED, commit_hash=commit_hash),
        )

    if call.name == "give_up":
        return (
            ToolResult.for_payload(call, "session closed without an answer"),
            SessionOutcome(OutcomeKind.GAVE_UP),
        )

    # feedback
    call_id = str(call.arguments.get("call_id", ""))
    verdict = str(call.arguments.get("verdict", ""))
    try:
        payload = dialogue.apply_feedback(call_id, verdict)
    except ToolError as exc:
        return ToolResult.for_payload(call, f"error: {exc}", is_error=True), None
    for entry in call_log:
        if entry.call.call_id == call_id:
            entry.feedback = verdict
    return ToolResult.for_payload(call, payload), None
