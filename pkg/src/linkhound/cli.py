"""Command line front end.

The CLI is a thin client over the HTTP service. By default each command
spins the service up in-process and talks to it over an ASGI transport;
`--server` points the same requests at a running instance instead. Exit
codes: 0 finished, 1 setup or transport error, 2 gave up, 3 budget
exhausted, 64 usage error.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import httpx

from .fixtures import build_all

EXIT_ERROR = 1
EXIT_GAVE_UP = 2
EXIT_BUDGET = 3
EXIT_USAGE = 64

_OUTCOME_EXIT = {"finished": 0, "gave_up": EXIT_GAVE_UP, "budget_exhausted": EXIT_BUDGET}


def _client(server: str | None) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server.rstrip("/"), timeout=None)
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        from fastapi.testclient import TestClient

    from .service.app import create_app

    return TestClient(create_app())


def _fail(message: str) -> int:
    click.echo(f"error: {message}", err=True)
    return EXIT_ERROR


def _detail(response: httpx.Response) -> str:
    try:
        body = response.json()
    except ValueError:
        return response.text.strip() or f"service returned {response.status_code}"
    if isinstance(body, dict) and "detail" in body:
        detail = body["detail"]
        return detail if isinstance(detail, str) else json.dumps(detail)
    return json.dumps(body)


def _post(server: str | None, path: str, payload: dict) -> httpx.Response | None:
    try:
        with _client(server) as client:
            return client.post(path, json=payload)
    except httpx.TransportError as exc:
        click.echo(f"error: cannot reach service: {exc}", err=True)
        return None


_BUDGET_OPTIONS = [
    click.option("--max-iterations", default=20, show_default=True, help="assistant turn budget"),
    click.option("--max-total-tokens", default=200_000, show_default=True, help="token budget"),
    click.option(
        "--feedback-threshold-bytes",
        default=40_000,
        show_default=True,
        help="results at least this large trigger a feedback request",
    ),
]


def _with_budget_options(command):
    for option in reversed(_BUDGET_OPTIONS):
        command = option(command)
    return command


@click.group()
@click.version_option(package_name="linkhound")
def cli() -> None:
    """Recover the commit that resolved a tracker issue.

    An agent session reads the repository history, the issue discussion,
    and the code through a fixed set of functions, then names the
    resolving commit. Credentials come from the environment only:
    GITHUB_TOKEN, JIRA_EMAIL with JIRA_API_TOKEN (or JIRA_TOKEN), and
    LLM_API_KEY or OPENAI_API_KEY with optional LLM_BASE_URL.
    """


@cli.command()
@click.argument("issue_url")
@click.argument("repo")
@click.option(
    "--script",
    type=click.Path(exists=True, dir_okay=False),
    default=None,
    help="replay a scripted session from this JSON file instead of a live model",
)
@click.option("--server", default=None, metavar="URL", help="use a running service instead of in-process")
@click.option("--model", default=None, help="model identifier for the live backend")
@click.option("--page-size", default=20, show_default=True)
@click.option(
    "--recorded-responses",
    type=click.Path(exists=True, file_okay=False),
    default=None,
    help="serve tracker requests from this directory of recorded responses",
)
@click.option("--cache-dir", default=None, help="where cloned repositories are kept")
@click.option("--now", type=int, default=None, help="fixed current time for open issues, epoch seconds")
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="also write the record line here")
@click.option(
    "--metrics-out",
    type=click.Path(dir_okay=False),
    default=None,
    help="write the session metrics line here",
)
@_with_budget_options
def link(
    issue_url: str,
    repo: str,
    script: str | None,
    server: str | None,
    model: str | None,
    page_size: int,
    recorded_responses: str | None,
    cache_dir: str | None,
    now: int | None,
    out: str | None,
    metrics_out: str | None,
    max_iterations: int,
    max_total_tokens: int,
    feedback_threshold_bytes: int,
) -> int:
    """Run one linking session and print its outcome record."""
    payload: dict = {
        "issue_url": issue_url,
        "repo": repo,
        "budgets": {
            "max_iterations": max_iterations,
            "max_total_tokens": max_total_tokens,
            "feedback_threshold_bytes": feedback_threshold_bytes,
        },
        "page_size": page_size,
    }
    if script:
        try:
            payload["script"] = json.loads(Path(script).read_text(encoding="utf-8"))
        except ValueError as exc:
            return _fail(f"script file {script}: {exc}")
    if model:
        payload["model"] = model
    if recorded_responses:
        payload["recorded_responses"] = str(Path(recorded_responses).resolve())
    if cache_dir:
        payload["cache_dir"] = cache_dir
    if now is not None:
        payload["now"] = now

    response = _post(server, "/link", payload)
    if response is None:
        return EXIT_ERROR
    if response.status_code != 200:
        return _fail(_detail(response))
    body = response.json()
    click.echo(body["record"])
    if out:
        Path(out).write_text(body["record"] + "\n", encoding="utf-8")
    if metrics_out:
        Path(metrics_out).write_text(body["metrics"] + "\n", encoding="utf-8")
    return _OUTCOME_EXIT.get(body["outcome"], EXIT_ERROR)


@cli.command(name="eval")
@click.argument("dataset", type=click.Path(exists=True, dir_okay=False))
@click.option(
    "--repo",
    "repos",
    multiple=True,
    required=True,
    metavar="ID=SOURCE",
    help="map a dataset repository id to a path or clone URL (repeatable)",
)
@click.option(
    "--scripts",
    type=click.Path(exists=True, dir_okay=False),
    default=None,
    help="JSON file of scripted sessions keyed by issue id",
)
@click.option("--server", default=None, metavar="URL", help="use a running service instead of in-process")
@click.option("--runs", default=3, show_default=True, help="sessions per issue")
@click.option("--parallel", default=1, show_default=True, help="sessions run at once within a run")
@click.option("--model", default=None)
@click.option("--page-size", default=20, show_default=True)
@click.option(
    "--format",
    "dataset_format",
    type=click.Choice(["tsv", "csv"]),
    default=None,
    help="override the format inferred from the dataset extension",
)
@click.option(
    "--recorded-responses",
    type=click.Path(exists=True, file_okay=False),
    default=None,
    help="serve tracker requests from this directory of recorded responses",
)
@click.option("--now", type=int, default=None, help="fixed current time for open issues, epoch seconds")
@click.option(
    "--out-dir",
    type=click.Path(file_okay=False),
    default=None,
    help="write report.txt, report.records, and sessions.metrics here",
)
@_with_budget_options
def evaluate(
    dataset: str,
    repos: tuple[str, ...],
    scripts: str | None,
    server: str | None,
    runs: int,
    parallel: int,
    model: str | None,
    page_size: int,
    dataset_format: str | None,
    recorded_responses: str | None,
    now: int | None,
    out_dir: str | None,
    max_iterations: int,
    max_total_tokens: int,
    feedback_threshold_bytes: int,
) -> int:
    """Score Hit@1 over a dataset of issue-to-commit links."""
    repo_map: dict[str, str] = {}
    for spec in repos:
        repo_id, sep, source = spec.partition("=")
        if not sep or not repo_id or not source:
            raise click.UsageError(f"--repo needs ID=SOURCE, got {spec!r}")
        repo_map[repo_id] = source

    payload: dict = {
        "dataset_text": Path(dataset).read_text(encoding="utf-8"),
        "dataset_format": dataset_format or ("csv" if dataset.endswith(".csv") else "tsv"),
        "repos": repo_map,
        "runs": runs,
        "parallel": parallel,
        "page_size": page_size,
        "budgets": {
            "max_iterations": max_iterations,
            "max_total_tokens": max_total_tokens,
            "feedback_threshold_bytes": feedback_threshold_bytes,
        },
    }
    if scripts:
        try:
            payload["scripts"] = json.loads(Path(scripts).read_text(encoding="utf-8"))
        except ValueError as exc:
            return _fail(f"scripts file {scripts}: {exc}")
    if model:
        payload["model"] = model
    if recorded_responses:
        payload["recorded_responses"] = str(Path(recorded_responses).resolve())
    if now is not None:
        payload["now"] = now
    if out_dir:
        payload["out_dir"] = str(Path(out_dir).resolve())

    response = _post(server, "/eval", payload)
    if response is None:
        return EXIT_ERROR
    if response.status_code != 200:
        return _fail(_detail(response))
    click.echo(response.json()["text"])
    return 0


@cli.command()
@click.argument("out_dir", type=click.Path(file_okay=False))
def fixtures(out_dir: str) -> int:
    """Write the deterministic fixture tree: repositories, recorded issues,
    a dataset, and session scripts."""
    manifest = build_all(out_dir)
    click.echo(json.dumps(manifest, indent=2))
    return 0


@cli.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8800, show_default=True)
def serve(host: str, port: int) -> int:
    """Run the HTTP service."""
    import uvicorn

    from .service.app import create_app

    uvicorn.run(create_app(), host=host, port=port)
    return 0


def main(argv: list[str] | None = None) -> int:
    """Entry point with plain integer exit codes."""
    try:
        result = cli.main(args=argv, standalone_mode=False)
    except click.UsageError as exc:
        exc.show()
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_ERROR
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return EXIT_ERROR
    return result if isinstance(result, int) else 0


if __name__ == "__main__":
    sys.exit(main())
