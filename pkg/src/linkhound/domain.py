"""Shared value types, the tool registry, and payload rendering.

Everything the extractors, the middleware, and the orchestrator exchange is
defined here: commit and issue metadata, tool schemas and calls, budgets,
session outcomes, and the compact line-oriented text form that tool results
are serialized to before they reach the model.
"""

from __future__ import annotations

import datetime
import json
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

HASH_RE = re.compile(r"[0-9a-f]{40}")

EMPTY_RESULT = "(no results)"

# The functions every session registers, grouped by owner.
GIT_TOOL_NAMES = (
    "list_commits",
    "commit_metadata",
    "commit_diff",
    "commits_of_author",
    "commits_on_file",
    "list_files",
    "list_authors",
)
ISSUE_TOOL_NAMES = (
    "issue_title",
    "issue_description",
    "issue_comments",
    "issue_participants",
    "issue_created_at",
    "issue_closed_at",
    "issue_url",
)
CODE_TOOL_NAMES = (
    "fetch_definition",
    "fetch_document",
    "fetch_lines_in_file",
)
CONTROL_TOOL_NAMES = (
    "finish",
    "give_up",
    "feedback",
)
STANDARD_TOOL_NAMES = GIT_TOOL_NAMES + ISSUE_TOOL_NAMES + CODE_TOOL_NAMES + CONTROL_TOOL_NAMES


def is_commit_hash(value: str) -> bool:
    """True when value is a full 40-character lowercase hex object name."""
    return isinstance(value, str) and HASH_RE.fullmatch(value) is not None


def byte_length(text: str) -> int:
    """Exact UTF-8 byte length of a payload."""
    return len(text.encode("utf-8"))


def iso_utc(ts: int) -> str:
    """Render an epoch timestamp as ISO-8601 UTC with a Z suffix."""
    return datetime.datetime.fromtimestamp(ts, tz=datetime.timezone.utc).strftime(
        "%Y-%m-%dT%H:%M:%SZ"
    )


class ToolError(Exception):
    """An in-band tool failure.

    Raised by tool handlers for anything the model itself can correct
    (bad arguments, unknown hashes, missing files). The registry turns it
    into an error payload; it never escapes a session.
    """


class SetupError(Exception):
    """A failure before the dialogue starts: bad repo source, unreachable
    tracker, unparseable issue URL. These abort the session instead of
    reaching the model."""


@dataclass(frozen=True)
class Author:
    name: str
    email: str = ""
    tracker_username: str = ""

    def render(self) -> str:
        parts = [f"name={self.name}"]
        if self.email:
            parts.append(f"email={self.email}")
        if self.tracker_username:
            parts.append(f"username={self.tracker_username}")
        return " ".join(parts)


@dataclass(frozen=True)
class CommitMeta:
    """Metadata for one commit in the unified history."""

    hash: str
    author: Author
    committer: Author
    authored_at: int
    committed_at: int
    message: str
    parents: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not is_commit_hash(self.hash):
            raise ValueError(f"not a commit hash: {self.hash!r}")

    @property
    def sort_key(self) -> tuple[int, str]:
        return (self.committed_at, self.hash)

    @property
    def subject(self) -> str:
        return self.message.splitlines()[0] if self.message else ""


class ChangeKind(str, Enum):
    ADDED = "added"
    MODIFIED = "modified"
    DELETED = "deleted"
    RENAMED = "renamed"


@dataclass(frozen=True)
class FileDiff:
    path: str
    kind: ChangeKind
    old_path: str = ""
    patch: str = ""


@dataclass(frozen=True)
class CommitDiff:
    commit_hash: str
    files: tuple[FileDiff, ...]


@dataclass(frozen=True)
class TimeWindow:
    """A closed interval of epoch seconds."""

    start: int
    end: int

    def __post_init__(self) -> None:
        if self.start > self.end:
            raise ValueError(f"window start {self.start} is after end {self.end}")

    def contains(self, ts: int) -> bool:
        return self.start <= ts <= self.end


@dataclass(frozen=True)
class Budgets:
    """Per-session resource limits, defaulting to the shipped configuration."""

    max_iterations: int = 20
    max_total_tokens: int = 200_000
    feedback_threshold_bytes: int = 40_000

    def __post_init__(self) -> None:
        for name in ("max_iterations", "max_total_tokens", "feedback_threshold_bytes"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


class OutcomeKind(str, Enum):
    FINISHED = "finished"
    GAVE_UP = "gave_up"
    BUDGET_EXHAUSTED = "budget_exhausted"


@dataclass(frozen=True)
class SessionOutcome:
    """The single terminal state of a session."""

    kind: OutcomeKind
    commit_hash: str = ""
    reason: str = ""

    def __post_init__(self) -> None:
        if self.kind is OutcomeKind.FINISHED:
            if not is_commit_hash(self.commit_hash):
                raise ValueError("a finished outcome needs a full commit hash")
        elif self.commit_hash:
            raise ValueError(f"outcome {self.kind.value} must not carry a commit hash")
        if self.kind is OutcomeKind.BUDGET_EXHAUSTED and self.reason not in (
            "iterations",
            "tokens",
        ):
            raise ValueError(f"unknown budget reason: {self.reason!r}")


@dataclass(frozen=True)
class ToolParam:
    name: str
    type: str  # "string" or "integer"
    required: bool = True
    description: str = ""


@dataclass(frozen=True)
class ToolSchema:
    """A callable function exposed to the model."""

    name: str
    description: str
    parameters: tuple[ToolParam, ...] = ()

    def signature(self) -> str:
        rendered = ", ".join(
            f"{p.name}: {p.type}" + ("" if p.required else " (optional)")
            for p in self.parameters
        )
        return f"{self.name}({rendered})"

    def to_wire(self) -> dict:
        """OpenAI-style function schema for the chat completions request."""
        properties = {}
        for p in self.parameters:
            properties[p.name] = {"type": p.type, "description": p.description}
        return {
            "type": "function",
            "function": {
                "name": self.name,
                "description": self.description,
                "parameters": {
                    "type": "object",
                    "properties": properties,
                    "required": [p.name for p in self.parameters if p.required],
                },
            },
        }


@dataclass(frozen=True)
class ToolCall:
    call_id: str
    name: str
    arguments: dict = field(default_factory=dict)
    arguments_raw: str = ""  # set instead of arguments when the JSON did not parse


@dataclass(frozen=True)
class ToolResult:
    call_id: str
    name: str
    payload: str
    byte_size: int
    is_error: bool = False

    @classmethod
    def for_payload(
        cls, call: ToolCall, payload: str, *, is_error: bool = False
    ) -> "ToolResult":
        return cls(
            call_id=call.call_id,
            name=call.name,
            payload=payload,
            byte_size=byte_length(payload),
            is_error=is_error,
        )


@dataclass
class CallLogEntry:
    """One executed tool call, as recorded by the orchestrator.

    The feedback field is filled in after the fact when the model (or the
    auto-discard safety valve) rules on this call's oversized result.
    """

    iteration: int
    call: ToolCall
    byte_size: int
    feedback: str = ""  # "discard", "preserve", "auto_discard", or empty


Handler = Callable[[dict], str]


@dataclass(frozen=True)
class ToolSpec:
    schema: ToolSchema
    handler: Handler


class RegistrationError(Exception):
    """A tool name was registered twice."""


class SchemaRegistry:
    """Maps every registered function name to its schema and handler.

    Later registrations may extend the registry but never shadow an
    existing name. Routing is total: any call, however malformed, comes
    back as a payload rather than an exception.
    """

    def __init__(self) -> None:
        self._specs: dict[str, ToolSpec] = {}

    def register(self, spec: ToolSpec) -> None:
        name = spec.schema.name
        if name in self._specs:
            raise RegistrationError(f"tool {name!r} is already registered")
        self._specs[name] = spec

    def extend(self, specs: list[ToolSpec]) -> None:
        for spec in specs:
            self.register(spec)

    def names(self) -> tuple[str, ...]:
        return tuple(self._specs)

    def schemas(self) -> tuple[ToolSchema, ...]:
        return tuple(spec.schema for spec in self._specs.values())

    def __len__(self) -> int:
        return len(self._specs)

    def __contains__(self, name: str) -> bool:
        return name in self._specs

    def route_call(self, call: ToolCall) -> ToolResult:
        spec = self._specs.get(call.name)
        if spec is None:
            payload = (
                f"error: unknown function {call.name!r}. "
                f"available functions: {', '.join(self._specs)}"
            )
            return ToolResult.for_payload(call, payload, is_error=True)
        if call.arguments_raw:
            payload = (
                f"error: arguments for {call.name!r} were not valid JSON "
                f"({call.arguments_raw[:200]!r}). expected {spec.schema.signature()}"
            )
            return ToolResult.for_payload(call, payload, is_error=True)
        try:
            args = self._validated_arguments(spec.schema, call.arguments)
            payload = spec.handler(args)
            return ToolResult.for_payload(call, payload)
        except ToolError as exc:
            return ToolResult.for_payload(call, f"error: {exc}", is_error=True)
        except Exception as exc:  # noqa: BLE001  routing must never crash a session
            return ToolResult.for_payload(
                call, f"error: internal failure in {call.name}: {exc}", is_error=True
            )

    @staticmethod
    def _validated_arguments(schema: ToolSchema, arguments: dict) -> dict:
        if not isinstance(arguments, dict):
            raise ToolError(
                f"arguments must be an object. expected {schema.signature()}"
            )
        known = {p.name: p for p in schema.parameters}
        unknown = [k for k in arguments if k not in known]
        if unknown:
            raise ToolError(
                f"unknown argument {unknown[0]!r}. expected {schema.signature()}"
            )
        out: dict = {}
        for param in schema.parameters:
            if param.name not in arguments:
                if param.required:
                    raise ToolError(
                        f"missing required argument {param.name!r}. "
                        f"expected {schema.signature()}"
                    )
                continue
            value = arguments[param.name]
            if param.type == "integer":
                if isinstance(value, bool) or not isinstance(value, (int, str)):
                    raise ToolError(
                        f"argument {param.name!r} must be an integer, "
                        f"got {value!r}"
                    )
                try:
                    value = int(value)
                except ValueError:
                    raise ToolError(
                        f"argument {param.name!r} must be an integer, got {value!r}"
                    ) from None
            elif param.type == "string":
                if not isinstance(value, str):
                    raise ToolError(
                        f"argument {param.name!r} must be a string, got {value!r}"
                    )
            out[param.name] = value
        return out


def paginate(items: list, page: int, page_size: int) -> list:
    """Return the page-th slice of items (zero-based pages).

    Pages past the end are empty, never an error, so the model can walk
    a listing until it runs dry.
    """
    if page < 0:
        raise ToolError(f"page must be >= 0, got {page}")
    if not 1 <= page_size <= 100:
        raise ToolError(f"page_size must be between 1 and 100, got {page_size}")
    start = page * page_size
    return items[start : start + page_size]


def page_arguments(args: dict, default_page_size: int) -> tuple[int, int]:
    """Extract validated (page, page_size) from tool arguments."""
    page = args.get("page", 0)
    page_size = args.get("page_size", default_page_size)
    if page < 0:
        raise ToolError(f"page must be >= 0, got {page}")
    if not 1 <= page_size <= 100:
        raise ToolError(f"page_size must be between 1 and 100, got {page_size}")
    return page, page_size


def require_hash(args: dict, key: str = "commit_hash") -> str:
    value = args.get(key, "")
    if not is_commit_hash(value):
        raise ToolError(
            f"malformed {key}: expected 40 lowercase hex characters, got {value!r}"
        )
    return value


# ---------------------------------------------------------------------------
# Line-oriented rendering. One record per line with labeled fields; free
# text (messages, comment bodies, patches) is kept verbatim after a header.


def render_commit_line(meta: CommitMeta) -> str:
    return (
        f"hash={meta.hash} time={iso_utc(meta.committed_at)} "
        f"author={meta.author.name} <{meta.author.email}> subject={meta.subject}"
    )


def render_commit_listing(metas: list[CommitMeta]) -> str:
    if not metas:
        return EMPTY_RESULT
    return "\n".join(render_commit_line(m) for m in metas)


def render_commit_full(meta: CommitMeta) -> str:
    lines = [
        f"hash={meta.hash}",
        f"author={meta.author.name} <{meta.author.email}>",
        f"committer={meta.committer.name} <{meta.committer.email}>",
        f"authored={iso_utc(meta.authored_at)}",
        f"committed={iso_utc(meta.committed_at)}",
        f"parents={','.join(meta.parents) if meta.parents else '(root)'}",
        "message:",
        meta.message,
    ]
    return "\n".join(lines)


def render_authors(authors: list[Author]) -> str:
    if not authors:
        return EMPTY_RESULT
    return "\n".join(a.render() for a in authors)


def render_paths(paths: list[str]) -> str:
    if not paths:
        return EMPTY_RESULT
    return "\n".join(paths)


def render_diff(diff: CommitDiff) -> str:
    if not diff.files:
        return f"commit={diff.commit_hash}\n(no file changes)"
    blocks = [f"commit={diff.commit_hash}"]
    for f in diff.files:
        header = f"file={f.path} change={f.kind.value}"
        if f.old_path:
            header += f" from={f.old_path}"
        block = header
        if f.patch:
            block += "\n" + f.patch.rstrip("\n")
        blocks.append(block)
    return "\n\n".join(blocks)


def dump_json_line(record: dict) -> str:
    """Canonical single-line JSON used by machine-readable outputs."""
    return json.dumps(record, sort_keys=True, separators=(",", ":"))
