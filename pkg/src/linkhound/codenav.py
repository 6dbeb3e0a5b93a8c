"""Code navigation at a historical commit.

Definitions are located with per-language profiles: small JSON data files
holding two query templates (one for functions, one for structures), a
block rule, and a documentation rule. The engine masks strings and
comments out of the source, matches the query heads, then walks the block
structure (indentation or braces) to recover the exact definition span.
Returned definition text is always a verbatim slice of the blob.
"""

from __future__ import annotations

import inspect
import json
import re
from dataclasses import dataclass
from importlib import resources

from .domain import (
    ToolError,
    ToolParam,
    ToolSchema,
    ToolSpec,
    require_hash,
)

_MAX_LISTED_NAMES = 50


class ParseFailure(Exception):
    """The file's structure could not be recovered at this commit."""


@dataclass(frozen=True)
class LanguageProfile:
    language: str
    extensions: tuple[str, ...]
    lexer: str
    definition_query: str
    structure_query: str
    name_pattern: str
    block_style: str  # "indent" or "brace"
    doc_style: str  # "docstring" or "preceding_comment"
    doc_prefixes: tuple[str, ...] = ()
    attr_prefixes: tuple[str, ...] = ()
    string_flavor: str = ""
    nested_block_comments: bool = False
    newline_ends_declaration: bool = False


@dataclass(frozen=True)
class DefinitionMatch:
    name: str
    kind: str  # "function" or "structure"
    start_line: int  # 1-based, inclusive
    end_line: int
    text: str
    depth: int  # 0 for top-level definitions


def load_profiles() -> dict[str, LanguageProfile]:
    """Load every language profile shipped with the package, keyed by
    file extension."""
    by_ext: dict[str, LanguageProfile] = {}
    root = resources.files("linkhound") / "profiles"
    for entry in sorted(root.iterdir(), key=lambda e: e.name):
        if not entry.name.endswith(".json"):
            continue
        raw = json.loads(entry.read_text(encoding="utf-8"))
        profile = LanguageProfile(
            language=raw["language"],
            extensions=tuple(raw["extensions"]),
            lexer=raw["lexer"],
            definition_query=raw["definition_query"],
            structure_query=raw["structure_query"],
            name_pattern=raw["name_pattern"],
            block_style=raw["block_style"],
            doc_style=raw["doc_style"],
            doc_prefixes=tuple(raw.get("doc_prefixes", [])),
            attr_prefixes=tuple(raw.get("attr_prefixes", [])),
            string_flavor=raw.get("string_flavor", ""),
            nested_block_comments=raw.get("nested_block_comments", False),
            newline_ends_declaration=raw.get("newline_ends_declaration", False),
        )
        for ext in profile.extensions:
            if ext in by_ext:
                raise ValueError(f"extension {ext} claimed twice")
            by_ext[ext] = profile
    return by_ext


# ---------------------------------------------------------------------------
# Masking: strings and comments are blanked (newlines preserved) so the
# query regexes and the block walkers only ever see real code structure.


def _blank(chars: list[str], start: int, end: int) -> None:
    for i in range(start, end):
        if chars[i] != "\n":
            chars[i] = " "


def _mask_python(text: str) -> str:
    chars = list(text)
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch == "#":
            j = text.find("\n", i)
            j = n if j == -1 else j
            _blank(chars, i, j)
            i = j
        elif ch in "\"'":
            quote = ch * 3 if text.startswith(ch * 3, i) else ch
            j = i + len(quote)
            while j < n:
                if text[j] == "\\":
                    j += 2
                    continue
                if text.startswith(quote, j):
                    j += len(quote)
                    break
                if len(quote) == 1 and text[j] == "\n":
                    break  # unterminated single-quoted string ends at EOL
                j += 1
            j = min(j, n)
            _blank(chars, i, j)
            i = j
        else:
            i += 1
    return "".join(chars)


_RUST_RAW_RE = re.compile(r'b?r(#*)"')
_CHAR_LIT_RE = re.compile(r"'(?:[^'\\\n]|\\.)'")


def _mask_clike(text: str, profile: LanguageProfile) -> str:
    chars = list(text)
    i, n = 0, len(text)
    while i < n:
        if text.startswith("//", i):
            j = text.find("\n", i)
            j = n if j == -1 else j
            _blank(chars, i, j)
            i = j
        elif text.startswith("/*", i):
            depth, j = 1, i + 2
            while j < n and depth:
                if profile.nested_block_comments and text.startswith("/*", j):
                    depth += 1
                    j += 2
                elif text.startswith("*/", j):
                    depth -= 1
                    j += 2
                else:
                    j += 1
            _blank(chars, i, j)
            i = j
        elif profile.string_flavor == "rust" and _RUST_RAW_RE.match(text, i):
            m = _RUST_RAW_RE.match(text, i)
            closer = '"' + m.group(1)
            j = text.find(closer, m.end())
            j = n if j == -1 else j + len(closer)
            _blank(chars, i, j)
            i = j
        elif profile.string_flavor == "go" and text[i] == "`":
            j = text.find("`", i + 1)
            j = n if j == -1 else j + 1
            _blank(chars, i, j)
            i = j
        elif text[i] == '"':
            j = i + 1
            while j < n:
                if text[j] == "\\":
                    j += 2
                    continue
                if text[j] == '"':
                    j += 1
                    break
                j += 1
            j = min(j, n)
            _blank(chars, i, j)
            i = j
        elif text[i] == "'":
            m = _CHAR_LIT_RE.match(text, i)
            if m is not None:
                _blank(chars, i, m.end())
                i = m.end()
            else:
                i += 1  # a lifetime tick in Rust generics, not a string
        else:
            i += 1
    return "".join(chars)


def mask_source(text: str, profile: LanguageProfile) -> str:
    if profile.lexer == "python":
        return _mask_python(text)
    return _mask_clike(text, profile)


# ---------------------------------------------------------------------------
# Block walking.


def _line_starts(text: str) -> list[int]:
    starts = [0]
    for i, ch in enumerate(text):
        if ch == "\n":
            starts.append(i + 1)
    return starts


def _line_of(starts: list[int], pos: int) -> int:
    """Zero-based line index containing character position pos."""
    lo, hi = 0, len(starts) - 1
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if starts[mid] <= pos:
            lo = mid
        else:
            hi = mid - 1
    return lo


def _indent_width(line: str) -> int:
    return len(line) - len(line.lstrip(" \t"))


def _indent_block_end(masked: str, lines: list[str], starts: list[int], match_start: int) -> int:
    """End line (zero-based) of an indentation-delimited definition."""
    head_line = _line_of(starts, match_start)
    depth = 0
    pos = match_start
    header_end_pos = -1
    while pos < len(masked):
        ch = masked[pos]
        if ch in "([{":
            depth += 1
        elif ch in ")]}":
            depth -= 1
        elif ch == ":" and depth == 0:
            header_end_pos = pos
            break
        elif ch == "\n" and depth == 0:
            raise ParseFailure("definition header has no ':' terminator")
        pos += 1
    if header_end_pos == -1:
        raise ParseFailure("definition header has no ':' terminator")
    header_line = _line_of(starts, header_end_pos)
    head_indent = _indent_width(lines[head_line])
    end = header_line
    for idx in range(header_line + 1, len(lines)):
        line = lines[idx]
        if not line.strip():
            continue
        if _indent_width(line) > head_indent:
            end = idx
            continue
        break
    return end


def _brace_block_end(masked: str, starts: list[int], match_start: int, profile: LanguageProfile) -> int:
    """End line (zero-based) of a brace- or semicolon-delimited definition."""
    n = len(masked)
    paren = 0
    i = match_start
    while i < n:
        ch = masked[i]
        if ch in "([":
            paren += 1
        elif ch in ")]":
            paren -= 1
        elif ch == "{":
            depth, j = 1, i + 1
            while j < n and depth:
                if masked[j] == "{":
                    depth += 1
                elif masked[j] == "}":
                    depth -= 1
                j += 1
            if depth:
                raise ParseFailure("unbalanced braces")
            return _line_of(starts, j - 1)
        elif ch == ";" and paren == 0:
            return _line_of(starts, i)
        elif ch == "\n" and paren == 0 and profile.newline_ends_declaration and i > match_start:
            return _line_of(starts, i - 1)
        i += 1
    raise ParseFailure("no declaration terminator before end of file")


def scan_definitions(
    source: str, profile: LanguageProfile, name: str | None = None
) -> list[DefinitionMatch]:
    """All definitions in the source, functions before structures.

    With a name, only that identifier's definitions are returned; without
    one, the queries enumerate every definition (used for name listings).
    """
    masked = mask_source(source, profile)
    lines = source.split("\n")
    starts = _line_starts(source)
    brace_depth_before: list[int] = []
    depth = 0
    for ch in masked:
        brace_depth_before.append(depth)
        if ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1

    target = re.escape(name) if name is not None else f"(?P<name>{profile.name_pattern})"
    matches: list[DefinitionMatch] = []
    for kind, template in (
        ("function", profile.definition_query),
        ("structure", profile.structure_query),
    ):
        pattern = re.compile(template.replace("{name}", target), re.MULTILINE)
        for m in pattern.finditer(masked):
            head_line = _line_of(starts, m.start())
            if profile.block_style == "indent":
                end_line = _indent_block_end(masked, lines, starts, m.start())
                match_depth = 0 if _indent_width(lines[head_line]) == 0 else 1
            else:
                end_line = _brace_block_end(masked, starts, m.start(), profile)
                match_depth = brace_depth_before[m.start()]
            text = "\n".join(lines[head_line : end_line + 1])
            matches.append(
                DefinitionMatch(
                    name=name if name is not None else m.group("name"),
                    kind=kind,
                    start_line=head_line + 1,
                    end_line=end_line + 1,
                    text=text,
                    depth=match_depth,
                )
            )
    return matches


def extract_documentation(source: str, profile: LanguageProfile, match: DefinitionMatch) -> str:
    """The documentation attached to one definition, or '' if none."""
    lines = source.split("\n")
    if profile.doc_style == "docstring":
        return _docstring_of(source, lines, match)
    collected: list[str] = []
    idx = match.start_line - 2  # line above the head, zero-based
    while idx >= 0:
        stripped = lines[idx].strip()
        if not stripped:
            break
        if any(stripped.startswith(p) for p in profile.attr_prefixes):
            idx -= 1
            continue
        prefix = next(
            (p for p in sorted(profile.doc_prefixes, key=len, reverse=True) if stripped.startswith(p)),
            None,
        )
        if prefix is None:
            break
        body = stripped[len(prefix) :]
        collected.append(body[1:] if body.startswith(" ") else body)
        idx -= 1
    collected.reverse()
    return "\n".join(collected)


_DOCSTRING_OPEN_RE = re.compile(r"^[rRbBuUfF]{0,2}('''|\"\"\"|'|\")")


def _docstring_of(source: str, lines: list[str], match: DefinitionMatch) -> str:
    header_end = None
    for idx in range(match.start_line - 1, match.end_line):
        if lines[idx].rstrip().endswith(":"):
            header_end = idx
            break
    if header_end is None:
        header_end = match.start_line - 1
    for idx in range(header_end + 1, match.end_line):
        stripped = lines[idx].strip()
        if not stripped:
            continue
        m = _DOCSTRING_OPEN_RE.match(stripped)
        if m is None:
            return ""
        quote = m.group(1)
        offset = source.find(stripped, _line_starts(source)[idx])
        open_end = offset + m.end()
        close = source.find(quote, open_end)
        if close == -1:
            return ""
        return inspect.cleandoc(source[open_end:close])
    return ""


# ---------------------------------------------------------------------------
# The three navigation functions.


class CodeTools:
    """Code navigation over the repository's blobs at a given commit."""

    def __init__(self, history, profiles: dict[str, LanguageProfile] | None = None):
        self.history = history
        self.profiles = profiles if profiles is not None else load_profiles()

    def specs(self) -> list[ToolSpec]:
        loc_params = (
            ToolParam("commit_hash", "string", description="full 40-character hash"),
            ToolParam("path", "string", description="repository-relative file path"),
            ToolParam("name", "string", description="definition name to look up"),
        )
        return [
            ToolSpec(
                ToolSchema(
                    "fetch_definition",
                    "The full source text of a named function or structure as it "
                    "existed at a commit, with its line span.",
                    loc_params,
                ),
                self.fetch_definition,
            ),
            ToolSpec(
                ToolSchema(
                    "fetch_document",
                    "The documentation attached to a named definition at a commit "
                    "(docstring or doc comment).",
                    loc_params,
                ),
                self.fetch_document,
            ),
            ToolSpec(
                ToolSchema(
                    "fetch_lines_in_file",
                    "A line range of a file at a commit, each line prefixed with "
                    "its line number.",
                    (
                        ToolParam("commit_hash", "string", description="full 40-character hash"),
                        ToolParam("path", "string", description="repository-relative file path"),
                        ToolParam("start_line", "integer", description="first line, 1-based"),
                        ToolParam("end_line", "integer", description="last line, inclusive"),
                    ),
                ),
                self.fetch_lines_in_file,
            ),
        ]

    def _resolve(self, args: dict) -> tuple[str, str, str]:
        commit_hash = require_hash(args)
        path = args.get("path", "").strip()
        if not path:
            raise ToolError("path must not be empty")
        return commit_hash, path, self.history.read_blob(commit_hash, path)

    def _profile_for(self, path: str) -> LanguageProfile:
        for ext, profile in self.profiles.items():
            if path.endswith(ext):
                return profile
        known = ", ".join(sorted(self.profiles))
        raise ToolError(f"unsupported language for {path!r}: known extensions are {known}")

    def _matches(self, source: str, profile: LanguageProfile, name: str, path: str, commit_hash: str) -> tuple[list[DefinitionMatch], str]:
        """Definition matches for a name plus a note line ('' when exact)."""
        try:
            matches = scan_definitions(source, profile, name)
            if matches:
                return matches, ""
            relaxed = [
                m
                for m in scan_definitions(source, profile)
                if m.name.lower() == name.lower()
            ]
            if relaxed:
                return relaxed, f"note: no exact match for {name!r}; showing case-insensitive matches"
            available = []
            for m in scan_definitions(source, profile):
                if m.depth == 0 and m.name not in available:
                    available.append(m.name)
        except ParseFailure as exc:
            raise ToolError(f"definition not found (file did not parse: {exc})") from exc
        listing = ", ".join(available[:_MAX_LISTED_NAMES]) or "(none found)"
        raise ToolError(
            f"definition {name!r} not found in {path} at commit {commit_hash}. "
            f"top-level names: {listing}"
        )

    def fetch_definition(self, args: dict) -> str:
        commit_hash, path, source = self._resolve(args)
        name = args.get("name", "").strip()
        if not name:
            raise ToolError("name must not be empty")
        profile = self._profile_for(path)
        matches, note = self._matches(source, profile, name, path, commit_hash)
        blocks = []
        for m in matches:
            header = (
                f"definition name={m.name} kind={m.kind} path={path} "
                f"commit={commit_hash} lines={m.start_line}-{m.end_line}"
            )
            blocks.append(f"{header}\n{m.text}")
        payload = "\n----\n".join(blocks)
        kinds = {m.kind for m in matches}
        notes = []
        if note:
            notes.append(note)
        if len(kinds) > 1:
            notes.append(
                f"note: {name!r} names both a function and a structure; returning all matches"
            )
        if notes:
            payload = "\n".join(notes) + "\n" + payload
        return payload

    def fetch_document(self, args: dict) -> str:
        commit_hash, path, source = self._resolve(args)
        name = args.get("name", "").strip()
        if not name:
            raise ToolError("name must not be empty")
        profile = self._profile_for(path)
        matches, note = self._matches(source, profile, name, path, commit_hash)
        blocks = []
        for m in matches:
            doc = extract_documentation(source, profile, m)
            if not doc:
                continue
            header = (
                f"documentation name={m.name} kind={m.kind} path={path} "
                f"commit={commit_hash} lines={m.start_line}-{m.end_line}"
            )
            blocks.append(f"{header}\n{doc}")
        if not blocks:
            return "(no documentation)"
        payload = "\n----\n".join(blocks)
        if note:
            payload = note + "\n" + payload
        return payload

    def fetch_lines_in_file(self, args: dict) -> str:
        commit_hash, path, source = self._resolve(args)
        start = args.get("start_line")
        end = args.get("end_line")
        if start is None or end is None:
            raise ToolError("start_line and end_line are required")
        if start < 1:
            raise ToolError(f"start_line must be >= 1, got {start}")
        if end < start:
            raise ToolError(f"end_line {end} is before start_line {start}")
        lines = source.split("\n")
        if lines and lines[-1] == "":
            lines = lines[:-1]  # do not number the phantom line after a trailing newline
        if start > len(lines):
            raise ToolError(
                f"start_line {start} is past the end of the file ({len(lines)} lines)"
            )
        clamped = min(end, len(lines))
        out = [f"{n}: {lines[n - 1]}" for n in range(start, clamped + 1)]
        if clamped < end:
            out.append("(end of file)")
        return "\n".join(out)
