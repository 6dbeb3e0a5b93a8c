"""Issue tracker extraction.

`fetch_issue` resolves an issue URL against GitHub or Jira, walks comment
pagination, and freezes everything into an immutable snapshot. The seven
issue functions answer from that snapshot alone; once it is built the
session makes no further tracker requests.

Credentials come from the environment (GITHUB_TOKEN, or JIRA_EMAIL plus
JIRA_API_TOKEN, or JIRA_TOKEN), never from flags.
"""

from __future__ import annotations

import base64
import datetime
import os
import re
import time
from dataclasses import dataclass, field
from pathlib import Path

import httpx

from .domain import (
    EMPTY_RESULT,
    Author,
    SetupError,
    ToolError,
    ToolParam,
    ToolSchema,
    ToolSpec,
    iso_utc,
    page_arguments,
    paginate,
    render_authors,
)

OPEN_ISSUE_SENTINEL = "unresolved"

_GITHUB_URL_RE = re.compile(r"^https?://([^/]+)/([^/]+)/([^/]+)/issues/(\d+)/?$")
_JIRA_URL_RE = re.compile(r"^(https?)://([^/]+)/browse/([A-Z][A-Z0-9_]*-\d+)/?$")

_MAX_ATTEMPTS = 5
_PAGE_SIZE = 100


@dataclass(frozen=True)
class CommentMeta:
    author: Author
    body: str
    created_at: int


@dataclass(frozen=True)
class IssueSnapshot:
    """Everything a session knows about one issue."""

    url: str
    tracker: str  # "github" or "jira"
    title: str
    description: str
    author: Author
    created_at: int
    closed_at: int | None
    comments: tuple[CommentMeta, ...] = ()

    def participants(self) -> list[Author]:
        """Reporter plus commenters, in order of first appearance.

        Nobody is filtered out; automation accounts participate like
        anyone else.
        """
        seen: set[str] = set()
        out = []
        for person in [self.author] + [c.author for c in self.comments]:
            key = person.tracker_username or person.name
            if key in seen:
                continue
            seen.add(key)
            out.append(person)
        return out


def parse_tracker_timestamp(raw: str) -> int:
    """Parse the tracker date formats into epoch seconds.

    GitHub sends `2024-03-01T00:30:00Z`, Jira sends
    `2024-03-01T00:30:00.000+0000`; both normalize to ISO-8601.
    """
    text = raw.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    text = re.sub(r"([+-]\d{2})(\d{2})$", r"\1:\2", text)
    try:
        parsed = datetime.datetime.fromisoformat(text)
    except ValueError as exc:
        raise SetupError(f"unparseable tracker timestamp {raw!r}") from exc
    if parsed.tzinfo is None:
        parsed = parsed.replace(tzinfo=datetime.timezone.utc)
    return int(parsed.timestamp())


def _request_json(
    client: httpx.Client,
    url: str,
    headers: dict,
    sleeper=time.sleep,
) -> httpx.Response:
    """GET with bounded exponential backoff on rate limits and transport
    blips. Anything else comes back for the caller to judge."""
    delay = 0.5
    for attempt in range(_MAX_ATTEMPTS):
        try:
            response = client.get(url, headers=headers)
        except httpx.TransportError as exc:
            if attempt == _MAX_ATTEMPTS - 1:
                raise SetupError(f"tracker unreachable: {exc}") from exc
            sleeper(delay)
            delay *= 2
            continue
        rate_limited = response.status_code == 429 or (
            response.status_code == 403
            and response.headers.get("x-ratelimit-remaining") == "0"
        )
        if rate_limited and attempt < _MAX_ATTEMPTS - 1:
            retry_after = response.headers.get("retry-after")
            sleeper(float(retry_after) if retry_after else delay)
            delay *= 2
            continue
        return response
    raise SetupError(f"tracker rate limit persisted after {_MAX_ATTEMPTS} attempts: {url}")


def _github_headers() -> dict:
    headers = {"Accept": "application/vnd.github+json"}
    token = os.environ.get("GITHUB_TOKEN", "")
    if token:
        headers["Authorization"] = f"Bearer {token}"
    return headers


def _jira_headers() -> dict:
    headers = {"Accept": "application/json"}
    email = os.environ.get("JIRA_EMAIL", "")
    api_token = os.environ.get("JIRA_API_TOKEN", "")
    if email and api_token:
        raw = f"{email}:{api_token}".encode()
        headers["Authorization"] = "Basic " + base64.b64encode(raw).decode()
    elif os.environ.get("JIRA_TOKEN", ""):
        headers["Authorization"] = f"Bearer {os.environ['JIRA_TOKEN']}"
    return headers


def _github_author(user: dict | None) -> Author:
    if not user:
        return Author(name="ghost", tracker_username="ghost")
    login = user.get("login", "")
    return Author(name=login, tracker_username=login)


def _fetch_github(client: httpx.Client, url: str, match: re.Match, sleeper) -> IssueSnapshot:
    host, owner, repo, number = match.groups()
    api_base = "https://api.github.com" if host == "github.com" else f"https://{host}/api/v3"
    issue_api = f"{api_base}/repos/{owner}/{repo}/issues/{number}"
    headers = _github_headers()
    response = _request_json(client, issue_api, headers, sleeper)
    if response.status_code == 404:
        raise SetupError(f"issue not found: {url}")
    if response.status_code != 200:
        raise SetupError(f"tracker returned {response.status_code} for {issue_api}")
    data = response.json()

    comments: list[CommentMeta] = []
    page = 1
    while True:
        page_url = f"{issue_api}/comments?per_page={_PAGE_SIZE}&page={page}"
        response = _request_json(client, page_url, headers, sleeper)
        if response.status_code != 200:
            raise SetupError(f"tracker returned {response.status_code} for {page_url}")
        batch = response.json()
        for item in batch:
            comments.append(
                CommentMeta(
                    author=_github_author(item.get("user")),
                    body=item.get("body") or "",
                    created_at=parse_tracker_timestamp(item["created_at"]),
                )
            )
        if len(batch) < _PAGE_SIZE:
            break
        page += 1

    closed_raw = data.get("closed_at")
    return IssueSnapshot(
        url=url,
        tracker="github",
        title=data.get("title") or "",
        description=data.get("body") or "",
        author=_github_author(data.get("user")),
        created_at=parse_tracker_timestamp(data["created_at"]),
        closed_at=parse_tracker_timestamp(closed_raw) if closed_raw else None,
        comments=tuple(sorted(comments, key=lambda c: c.created_at)),
    )


def _jira_author(person: dict | None) -> Author:
    if not person:
        return Author(name="anonymous", tracker_username="anonymous")
    name = person.get("displayName") or person.get("name") or "anonymous"
    username = person.get("name") or person.get("accountId") or name
    return Author(name=name, email=person.get("emailAddress") or "", tracker_username=username)


def _fetch_jira(client: httpx.Client, url: str, match: re.Match, sleeper) -> IssueSnapshot:
    scheme, host, key = match.groups()
    base = f"{scheme}://{host}"
    fields = "summary,description,created,resolutiondate,reporter,creator,comment,status,statuscategorychangedate"
    issue_api = f"{base}/rest/api/2/issue/{key}?fields={fields}"
    headers = _jira_headers()
    response = _request_json(client, issue_api, headers, sleeper)
    if response.status_code == 404:
        raise SetupError(f"issue not found: {url}")
    if response.status_code != 200:
        raise SetupError(f"tracker returned {response.status_code} for {issue_api}")
    data = response.json().get("fields", {})

    comment_block = data.get("comment") or {}
    comments_raw = list(comment_block.get("comments") or [])
    total = comment_block.get("total", len(comments_raw))
    start = len(comments_raw)
    while start < total:
        page_url = f"{base}/rest/api/2/issue/{key}/comment?startAt={start}&maxResults={_PAGE_SIZE}"
        response = _request_json(client, page_url, headers, sleeper)
        if response.status_code != 200:
            raise SetupError(f"tracker returned {response.status_code} for {page_url}")
        block = response.json()
        batch = block.get("comments") or []
        if not batch:
            break
        comments_raw.extend(batch)
        total = block.get("total", total)
        start = len(comments_raw)

    comments = [
        CommentMeta(
            author=_jira_author(item.get("author")),
            body=item.get("body") or "",
            created_at=parse_tracker_timestamp(item["created"]),
        )
        for item in comments_raw
    ]

    closed_at = None
    if data.get("resolutiondate"):
        closed_at = parse_tracker_timestamp(data["resolutiondate"])
    else:
        status = data.get("status") or {}
        category = (status.get("statusCategory") or {}).get("key", "")
        if category == "done" and data.get("statuscategorychangedate"):
            closed_at = parse_tracker_timestamp(data["statuscategorychangedate"])

    return IssueSnapshot(
        url=url,
        tracker="jira",
        title=data.get("summary") or "",
        description=data.get("description") or "",
        author=_jira_author(data.get("reporter") or data.get("creator")),
        created_at=parse_tracker_timestamp(data["created"]),
        closed_at=closed_at,
        comments=tuple(sorted(comments, key=lambda c: c.created_at)),
    )


def fetch_issue(url: str, client: httpx.Client, sleeper=time.sleep) -> IssueSnapshot:
    """Build the immutable snapshot for an issue URL.

    Raises SetupError for URLs that match no supported tracker, missing
    issues, and exhausted retries.
    """
    m = _GITHUB_URL_RE.match(url)
    if m is not None:
        return _fetch_github(client, url, m, sleeper)
    m = _JIRA_URL_RE.match(url)
    if m is not None:
        return _fetch_jira(client, url, m, sleeper)
    raise SetupError(
        f"unsupported issue URL {url!r}: expected a GitHub issue "
        "(https://host/owner/repo/issues/N) or a Jira browse link (https://host/browse/KEY-N)"
    )


# ---------------------------------------------------------------------------
# Recorded responses: a directory of plain-text files, one HTTP exchange
# each, served through httpx.MockTransport for offline runs and tests.


@dataclass
class RecordedResponses:
    responses: dict[str, tuple[int, str]] = field(default_factory=dict)
    request_count: int = 0
    requested_urls: list[str] = field(default_factory=list)

    @classmethod
    def load_dir(cls, directory: str | Path) -> "RecordedResponses":
        store = cls()
        for path in sorted(Path(directory).glob("*.http")):
            text = path.read_text(encoding="utf-8")
            head, _, body = text.partition("\n\n")
            url = status = None
            for line in head.splitlines():
                key, _, value = line.partition(":")
                if key.strip() == "url":
                    url = value.strip()
                elif key.strip() == "status":
                    status = int(value.strip())
            if url is None or status is None:
                raise ValueError(f"recorded response {path} needs url and status headers")
            store.responses[url] = (status, body)
        return store

    def handle(self, request: httpx.Request) -> httpx.Response:
        self.request_count += 1
        url = str(request.url)
        self.requested_urls.append(url)
        if url in self.responses:
            status, body = self.responses[url]
            return httpx.Response(status, text=body, headers={"content-type": "application/json"})
        return httpx.Response(404, text=f"no recorded response for {url}")

    def client(self) -> httpx.Client:
        return httpx.Client(transport=httpx.MockTransport(self.handle))


def write_recorded_response(directory: str | Path, name: str, url: str, status: int, body: str) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{name}.http"
    path.write_text(f"url: {url}\nstatus: {status}\n\n{body}", encoding="utf-8")
    return path


class IssueTools:
    """The seven issue functions a session exposes to the model."""

    def __init__(self, snapshot: IssueSnapshot, default_page_size: int = 20):
        self.snapshot = snapshot
        self.default_page_size = default_page_size

    def specs(self) -> list[ToolSpec]:
        page_params = (
            ToolParam("page", "integer", required=False, description="zero-based page index"),
            ToolParam("page_size", "integer", required=False, description="results per page, 1 to 100"),
        )
        no_params: tuple[ToolParam, ...] = ()
        return [
            ToolSpec(ToolSchema("issue_title", "The issue's title.", no_params), self.issue_title),
            ToolSpec(
                ToolSchema(
                    "issue_description",
                    "The issue's description text, verbatim.",
                    no_params,
                ),
                self.issue_description,
            ),
            ToolSpec(
                ToolSchema(
                    "issue_comments",
                    "The issue's comments in chronological order, bodies verbatim.",
                    page_params,
                ),
                self.issue_comments,
            ),
            ToolSpec(
                ToolSchema(
                    "issue_participants",
                    "Everyone who wrote on the issue: the reporter first, then "
                    "commenters in order of first appearance.",
                    no_params,
                ),
                self.issue_participants,
            ),
            ToolSpec(
                ToolSchema("issue_created_at", "When the issue was opened.", no_params),
                self.issue_created_at,
            ),
            ToolSpec(
                ToolSchema(
                    "issue_closed_at",
                    "When the issue was closed, or 'unresolved' if it is still open.",
                    no_params,
                ),
                self.issue_closed_at,
            ),
            ToolSpec(
                ToolSchema("issue_url", "The issue's own URL.", no_params),
                self.issue_url,
            ),
        ]

    def issue_title(self, args: dict) -> str:
        return self.snapshot.title or "(no title)"

    def issue_description(self, args: dict) -> str:
        return self.snapshot.description or "(no description)"

    def issue_comments(self, args: dict) -> str:
        page, size = page_arguments(args, self.default_page_size)
        window = paginate(list(self.snapshot.comments), page, size)
        if not window:
            return EMPTY_RESULT
        blocks = [
            f"comment author={c.author.tracker_username or c.author.name} "
            f"time={iso_utc(c.created_at)}\n{c.body}"
            for c in window
        ]
        return "\n\n".join(blocks)

    def issue_participants(self, args: dict) -> str:
        return render_authors(self.snapshot.participants())

    def issue_created_at(self, args: dict) -> str:
        return iso_utc(self.snapshot.created_at)

    def issue_closed_at(self, args: dict) -> str:
        if self.snapshot.closed_at is None:
            return OPEN_ISSUE_SENTINEL
        return iso_utc(self.snapshot.closed_at)

    def issue_url(self, args: dict) -> str:
        return self.snapshot.url
