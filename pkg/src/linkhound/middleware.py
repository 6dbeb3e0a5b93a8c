"""The conversation layer between the orchestrator and the model.

Owns the chat history, the token ledger, and the feedback protocol for
oversized tool results. Two interchangeable backends produce assistant
turns: an HTTP client speaking the chat-completions wire format, and a
scripted backend that replays a fixed list of turns for reproducible
sessions. Both see byte-identical request bodies for identical histories.
"""

from __future__ import annotations

import json
import math
import os
import re
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import httpx

from .domain import (
    Budgets,
    SchemaRegistry,
    ToolCall,
    ToolError,
    ToolResult,
    byte_length,
)

DEFAULT_MODEL = "gpt-4o-nano"

_FEEDBACK_MARKER = "awaiting feedback: call_id="


def estimate_tokens(text: str) -> int:
    """Budget estimate for a piece of conversation text.

    One token per four UTF-8 bytes, rounded up; a 40,000-byte payload
    therefore counts as 10,000 tokens.
    """
    return math.ceil(byte_length(text) / 4)


class Role(str, Enum):
    SYSTEM = "system"
    ASSISTANT = "assistant"
    TOOL_RESULT = "tool_result"


@dataclass
class ChatTurn:
    """One turn of the conversation.

    tool_result turns always reference a prior assistant tool call via
    call_id. The suffix carries protocol text (the feedback request)
    that is transmitted with the payload but dropped once resolved.
    """

    role: Role
    text: str = ""
    tool_calls: tuple[ToolCall, ...] = ()
    call_id: str = ""
    tool_name: str = ""
    suffix: str = ""
    token_estimate: int = 0
    pruned: bool = False

    @property
    def wire_text(self) -> str:
        return self.text + self.suffix

    def serialized(self) -> str:
        """The text this turn contributes to the token ledger."""
        if self.role is Role.ASSISTANT:
            rendered = [self.text] if self.text else []
            for call in self.tool_calls:
                args = call.arguments_raw or json.dumps(call.arguments, sort_keys=True)
                rendered.append(f"{call.name}({args})")
            return "\n".join(rendered)
        return self.wire_text

    def reestimate(self) -> None:
        self.token_estimate = estimate_tokens(self.serialized())


class TokenLedger:
    """Running token accounting over the live conversation.

    The total sums every turn's current estimate, both the prompt side
    (system and tool_result turns) and the completion side (assistant
    turns). Pruning a result replaces its estimate with the notice's,
    so the total strictly decreases on every discard.
    """

    def __init__(self, turns: list[ChatTurn]):
        self._turns = turns

    @property
    def cumulative_total(self) -> int:
        return sum(t.token_estimate for t in self._turns)


@dataclass
class PendingFeedback:
    call_id: str
    tool_name: str
    byte_size: int
    assistant_turns_seen: int = 0


class TransportFailure(Exception):
    """The model endpoint stayed unreachable through every retry."""


class ScriptExhausted(Exception):
    """A scripted session ran past the end of its script."""


def build_prompt(issue_url: str, budgets: Budgets, registry: SchemaRegistry) -> str:
    """The system prompt that opens every session."""
    by_name = {schema.name: schema for schema in registry.schemas()}
    lines = [
        "You are a software archaeologist. Your job is to find the single commit "
        "that resolved the issue below.",
        "",
        f"Issue: {issue_url}",
        "",
        "You can query the issue tracker, the repository's commit history, and "
        "the code itself through function calls. History queries are scoped to "
        "the issue's safe lifespan: from one week before the issue was opened "
        "to one week after it was closed (or up to now while it stays open). "
        "The resolving commit virtually always lies inside that window.",
        "",
        f"You have at most {budgets.max_iterations} assistant turns and a budget "
        f"of {budgets.max_total_tokens} tokens for the whole session. Make every "
        "turn count: reply with exactly one function call per turn and no "
        "other text.",
        "",
        "Available functions:",
    ]
    for name in by_name:
        schema = by_name[name]
        lines.append(f"- {schema.signature()}: {schema.description}")
    lines += [
        "",
        "A proven route: read the issue first (issue_title, issue_description, "
        "issue_comments), then use issue_participants to pick the people likely "
        "to have written the fix and look up their commits with "
        "commits_of_author. When the issue names a file, call list_files first "
        "to discover the exact repository path, then commits_on_file with that "
        "path. Confirm a suspect commit by reading its commit_diff.",
        "",
        f"When a result exceeds {budgets.feedback_threshold_bytes} bytes it "
        "arrives with a feedback request. You must answer it with the feedback "
        "function before moving on, for example: "
        'feedback(call_id="call-7", verdict="discard") to drop the oversized '
        'text and reclaim its tokens, or verdict="preserve" to keep it. '
        "Unanswered requests are discarded automatically.",
        "",
        "When you are confident you found the resolving commit, call "
        'finish(commit_hash="<full 40-character hash>"). If you conclude the '
        "answer cannot be determined, call give_up(). Every session must end "
        "with one of the two.",
    ]
    return "\n".join(lines)


class Dialogue:
    """The session's chat history plus everything that governs it."""

    def __init__(
        self,
        backend,
        registry: SchemaRegistry,
        budgets: Budgets,
        model: str = DEFAULT_MODEL,
    ):
        self.backend = backend
        self.registry = registry
        self.budgets = budgets
        self.model = model
        self.turns: list[ChatTurn] = []
        self.ledger = TokenLedger(self.turns)
        self.pending: dict[str, PendingFeedback] = {}
        self.sent_bodies: list[str] = []
        self.auto_discards: list[str] = []

    # -- history building ----------------------------------------------

    def open_with_prompt(self, issue_url: str) -> ChatTurn:
        turn = ChatTurn(role=Role.SYSTEM, text=build_prompt(issue_url, self.budgets, self.registry))
        turn.reestimate()
        self.turns.append(turn)
        return turn

    def append_system(self, text: str) -> ChatTurn:
        turn = ChatTurn(role=Role.SYSTEM, text=text)
        turn.reestimate()
        self.turns.append(turn)
        return turn

    def append_result(self, result: ToolResult) -> ChatTurn:
        """Add a tool result, opening a feedback request when oversized."""
        turn = ChatTurn(
            role=Role.TOOL_RESULT,
            text=result.payload,
            call_id=result.call_id,
            tool_name=result.name,
        )
        if result.byte_size > self.budgets.feedback_threshold_bytes:
            turn.suffix = (
                f"\n\n[this result is {result.byte_size} bytes, above the "
                f"{self.budgets.feedback_threshold_bytes}-byte threshold. "
                f"{_FEEDBACK_MARKER}{result.call_id}. answer with "
                f'feedback(call_id="{result.call_id}", verdict="discard") to drop it '
                f'or verdict="preserve" to keep it]'
            )
            self.pending[result.call_id] = PendingFeedback(
                call_id=result.call_id,
                tool_name=result.name,
                byte_size=result.byte_size,
            )
        turn.reestimate()
        self.turns.append(turn)
        return turn

    # -- the feedback protocol -------------------------------------------

    def apply_feedback(self, call_id: str, verdict: str) -> str:
        if verdict not in ("discard", "preserve"):
            raise ToolError(
                f"verdict must be 'discard' or 'preserve', got {verdict!r}"
            )
        pending = self.pending.pop(call_id, None)
        if pending is None:
            raise ToolError(f"no pending feedback request for call_id {call_id!r}")
        if verdict == "discard":
            self._discard(call_id, pending, auto=False)
            return f"feedback acknowledged: result {call_id} discarded"
        turn = self._result_turn(call_id)
        if turn is not None:
            turn.suffix = ""
            turn.reestimate()
        return f"feedback acknowledged: result {call_id} preserved"

    def _result_turn(self, call_id: str) -> ChatTurn | None:
        for turn in self.turns:
            if turn.role is Role.TOOL_RESULT and turn.call_id == call_id:
                return turn
        return None

    def _discard(self, call_id: str, pending: PendingFeedback, auto: bool) -> None:
        turn = self._result_turn(call_id)
        if turn is None:
            return
        how = "auto-discarded after the feedback request went unanswered" if auto else "discarded"
        turn.text = f"(omitted: {pending.tool_name} result of {pending.byte_size} bytes was {how})"
        turn.suffix = ""
        turn.pruned = True
        turn.reestimate()
        if auto:
            self.auto_discards.append(call_id)

    def _expire_stale_pending(self) -> None:
        for call_id in [c for c, p in self.pending.items() if p.assistant_turns_seen >= 1]:
            pending = self.pending.pop(call_id)
            self._discard(call_id, pending, auto=True)

    # -- talking to the backend --------------------------------------------

    def next_action(self) -> ChatTurn:
        """Request one assistant turn.

        Feedback requests the model has already had a full turn to answer
        are auto-discarded first, so an ignored oversized payload never
        rides along more than once.
        """
        self._expire_stale_pending()
        request = self.wire_request()
        self.sent_bodies.append(json.dumps(request, sort_keys=True))
        response = self.backend.complete(request)
        turn = self._parse_assistant(response)
        self.turns.append(turn)
        for pending in self.pending.values():
            pending.assistant_turns_seen += 1
        return turn

    def wire_request(self) -> dict:
        messages = []
        for turn in self.turns:
            if turn.role is Role.SYSTEM:
                messages.append({"role": "system", "content": turn.text})
            elif turn.role is Role.ASSISTANT:
                message: dict = {"role": "assistant", "content": turn.text or None}
                if turn.tool_calls:
                    message["tool_calls"] = [
                        {
                            "id": call.call_id,
                            "type": "function",
                            "function": {
                                "name": call.name,
                                "arguments": call.arguments_raw
                                or json.dumps(call.arguments, sort_keys=True),
                            },
                        }
                        for call in turn.tool_calls
                    ]
                messages.append(message)
            else:
                messages.append(
                    {
                        "role": "tool",
                        "tool_call_id": turn.call_id,
                        "content": turn.wire_text,
                    }
                )
        return {
            "model": self.model,
            "messages": messages,
            "tools": [schema.to_wire() for schema in self.registry.schemas()],
            "tool_choice": "auto",
        }

    @staticmethod
    def _parse_assistant(response: dict) -> ChatTurn:
        try:
            message = response["choices"][0]["message"]
        except (KeyError, IndexError, TypeError) as exc:
            raise TransportFailure(f"malformed completion response: {exc}") from exc
        calls = []
        for raw in message.get("tool_calls") or []:
            function = raw.get("function", {})
            arguments_raw = function.get("arguments", "")
            try:
                arguments = json.loads(arguments_raw) if arguments_raw else {}
                if not isinstance(arguments, dict):
                    raise ValueError("arguments must decode to an object")
            except ValueError:
                calls.append(
                    ToolCall(
                        call_id=raw.get("id", ""),
                        name=function.get("name", ""),
                        arguments_raw=arguments_raw or "(empty)",
                    )
                )
                continue
            calls.append(
                ToolCall(
                    call_id=raw.get("id", ""),
                    name=function.get("name", ""),
                    arguments=arguments,
                )
            )
        turn = ChatTurn(
            role=Role.ASSISTANT,
            text=message.get("content") or "",
            tool_calls=tuple(calls),
        )
        turn.reestimate()
        return turn


# ---------------------------------------------------------------------------
# Backends.


class HttpChatBackend:
    """Chat-completions client for a hosted model.

    The endpoint and key come from the environment (LLM_BASE_URL,
    LLM_API_KEY or OPENAI_API_KEY) unless given explicitly. Rate limits,
    5xx responses, and transport blips retry with exponential backoff.
    """

    deterministic = False
    _MAX_ATTEMPTS = 4

    def __init__(
        self,
        base_url: str | None = None,
        api_key: str | None = None,
        client: httpx.Client | None = None,
        sleeper=time.sleep,
    ):
        self.base_url = (base_url or os.environ.get("LLM_BASE_URL") or "https://api.openai.com/v1").rstrip("/")
        self.api_key = api_key or os.environ.get("LLM_API_KEY") or os.environ.get("OPENAI_API_KEY") or ""
        self.client = client or httpx.Client(timeout=120.0)
        self.sleeper = sleeper

    def complete(self, request: dict) -> dict:
        url = f"{self.base_url}/chat/completions"
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        delay = 1.0
        for attempt in range(self._MAX_ATTEMPTS):
            try:
                response = self.client.post(url, json=request, headers=headers)
            except httpx.TransportError as exc:
                if attempt == self._MAX_ATTEMPTS - 1:
                    raise TransportFailure(f"model endpoint unreachable: {exc}") from exc
                self.sleeper(delay)
                delay *= 2
                continue
            if response.status_code == 429 or response.status_code >= 500:
                if attempt == self._MAX_ATTEMPTS - 1:
                    raise TransportFailure(
                        f"model endpoint kept failing with {response.status_code}"
                    )
                retry_after = response.headers.get("retry-after")
                self.sleeper(float(retry_after) if retry_after else delay)
                delay *= 2
                continue
            if response.status_code != 200:
                raise TransportFailure(
                    f"model endpoint returned {response.status_code}: {response.text[:500]}"
                )
            return response.json()
        raise TransportFailure("model endpoint retries exhausted")


class ScriptedBackend:
    """Deterministic backend replaying a scripted list of turns.

    Each step is either {"text": ...} or {"tool_calls": [{"name": ...,
    "arguments": {...}}]}. Two placeholders resolve at playback time:
    "$pending" becomes the call_id of the most recent unanswered feedback
    request visible in the conversation, "$last" the most recently issued
    call_id.
    """

    deterministic = True

    def __init__(self, steps: list[dict]):
        self.steps = list(steps)
        self.position = 0
        self.issued_ids: list[str] = []

    def complete(self, request: dict) -> dict:
        if self.position >= len(self.steps):
            raise ScriptExhausted(
                f"script ended after {len(self.steps)} turns but the session is still running"
            )
        step = self.steps[self.position]
        self.position += 1
        message: dict = {"role": "assistant", "content": step.get("text") or None}
        calls = []
        for raw in step.get("tool_calls") or []:
            call_id = f"call-{len(self.issued_ids) + 1}"
            self.issued_ids.append(call_id)
            arguments = self._substitute(raw.get("arguments", {}), request)
            calls.append(
                {
                    "id": call_id,
                    "type": "function",
                    "function": {
                        "name": raw["name"],
                        "arguments": json.dumps(arguments, sort_keys=True),
                    },
                }
            )
        if calls:
            message["tool_calls"] = calls
        return {"choices": [{"message": message}]}

    def _substitute(self, arguments: dict, request: dict) -> dict:
        out = {}
        for key, value in arguments.items():
            if value == "$pending":
                out[key] = self._pending_call_id(request)
            elif value == "$last":
                out[key] = self.issued_ids[-2] if len(self.issued_ids) >= 2 else ""
            else:
                out[key] = value
        return out

    @staticmethod
    def _pending_call_id(request: dict) -> str:
        marker = re.escape(_FEEDBACK_MARKER)
        found = ""
        for message in request.get("messages", []):
            content = message.get("content") or ""
            for m in re.finditer(marker + r"([\w-]+)", content):
                found = m.group(1)
        return found


def load_script(path: str | Path) -> list[dict]:
    """Read a script file ({"turns": [...]}) and validate its shape."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return validate_script(data)


def validate_script(data: dict) -> list[dict]:
    turns = data.get("turns")
    if not isinstance(turns, list) or not turns:
        raise ValueError("a script needs a non-empty 'turns' list")
    for i, step in enumerate(turns):
        if not isinstance(step, dict) or ("text" not in step and "tool_calls" not in step):
            raise ValueError(f"script turn {i} needs 'text' or 'tool_calls'")
        for call in step.get("tool_calls") or []:
            if "name" not in call:
                raise ValueError(f"script turn {i} has a tool call without a name")
    return turns
