"""The FastAPI application.

Four endpoints: a health probe, the function catalog, one-shot linking,
and batch evaluation. Setup problems (bad URLs, missing repositories,
malformed datasets or scripts) come back as 400; upstream model failures
as 502. Session-level trouble inside an evaluation never fails the
request: those sessions are reported as misses with a reason.
"""

from __future__ import annotations

import tempfile
from pathlib import Path

import httpx
from fastapi import FastAPI, HTTPException

from .. import __version__
from ..domain import Budgets, SetupError
from ..evaluation import EvalReport, load_dataset, render_record_line, run_eval
from ..metrics import render_metrics_line
from ..middleware import (
    HttpChatBackend,
    ScriptedBackend,
    ScriptExhausted,
    TransportFailure,
    validate_script,
)
from ..orchestrator import SessionResult, run_session, tool_catalog
from ..tracker import RecordedResponses
from .schemas import (
    BudgetSpec,
    CallRecord,
    EvalRequest,
    EvalResponse,
    LinkRequest,
    LinkResponse,
    ParamInfo,
    SessionRow,
    ToolInfo,
)


def _budgets(spec: BudgetSpec) -> Budgets:
    try:
        return Budgets(
            max_iterations=spec.max_iterations,
            max_total_tokens=spec.max_total_tokens,
            feedback_threshold_bytes=spec.feedback_threshold_bytes,
        )
    except ValueError as exc:
        raise HTTPException(status_code=400, detail=str(exc))


def _issue_client(recorded_responses: str | None) -> httpx.Client | None:
    if recorded_responses is None:
        return None
    directory = Path(recorded_responses)
    if not directory.is_dir():
        raise HTTPException(
            status_code=400, detail=f"recorded responses directory not found: {directory}"
        )
    return RecordedResponses.load_dir(directory).client()


def _link_response(result: SessionResult) -> LinkResponse:
    outcome = result.outcome
    return LinkResponse(
        outcome=outcome.kind.value,
        commit_hash=outcome.commit_hash,
        reason=outcome.reason,
        iterations=result.iterations,
        total_tokens=result.total_tokens,
        wall_time_s=result.wall_time_s,
        estimated_cost_usd=result.metrics.estimated_cost_usd,
        record=render_record_line(result),
        metrics=render_metrics_line(result.metrics),
        calls=[
            CallRecord(
                iteration=entry.iteration,
                name=entry.call.name,
                byte_size=entry.byte_size,
                feedback=entry.feedback,
            )
            for entry in result.call_log
        ],
    )


def _eval_response(report: EvalReport) -> EvalResponse:
    return EvalResponse(
        runs=report.runs,
        hit1_overall=report.mean_hit1(),
        hit1_by_project={p: report.mean_hit1(p) for p in report.projects()},
        hit1_by_run=[report.hit1(run=r) for r in range(1, report.runs + 1)],
        outcome_counts=report.outcome_counts(),
        sessions=[
            SessionRow(
                run=s.run,
                issue_id=s.issue_id,
                repo_id=s.repo_id,
                truth=s.truth,
                outcome=s.outcome_kind,
                candidate=s.candidate,
                hit=s.hit,
                reason=s.reason,
                metrics=s.metrics_line,
            )
            for s in report.sessions
        ],
        record_lines=report.to_record_lines(),
        excluded=[f"issue {rec.issue_id}: {reason}" for rec, reason in report.excluded],
        warnings=report.warnings,
        text=report.to_text(),
    )


def create_app() -> FastAPI:
    app = FastAPI(title="linkhound", version=__version__)

    @app.get("/healthz")
    def healthz() -> dict:
        return {"status": "ok", "version": __version__}

    @app.get("/tools", response_model=list[ToolInfo])
    def tools() -> list[ToolInfo]:
        return [
            ToolInfo(
                name=schema.name,
                description=schema.description,
                parameters=[
                    ParamInfo(
                        name=p.name,
                        type=p.type,
                        required=p.required,
                        description=p.description,
                    )
                    for p in schema.parameters
                ],
            )
            for schema in tool_catalog()
        ]

    @app.post("/link", response_model=LinkResponse)
    def link(request: LinkRequest) -> LinkResponse:
        budgets = _budgets(request.budgets)
        if request.script is not None:
            try:
                backend = ScriptedBackend(validate_script(request.script))
            except ValueError as exc:
                raise HTTPException(status_code=400, detail=str(exc))
        else:
            backend = HttpChatBackend()
        client = _issue_client(request.recorded_responses)
        try:
            kwargs = {} if request.model is None else {"model": request.model}
            result = run_session(
                request.issue_url,
                request.repo,
                backend=backend,
                budgets=budgets,
                client=client,
                cache_dir=request.cache_dir,
                page_size=request.page_size,
                now=request.now,
                usd_per_token=request.usd_per_token,
                **kwargs,
            )
        except SetupError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        except (TransportFailure, ScriptExhausted) as exc:
            raise HTTPException(status_code=502, detail=str(exc))
        finally:
            if client is not None:
                client.close()
        return _link_response(result)

    @app.post("/eval", response_model=EvalResponse)
    def evaluate(request: EvalRequest) -> EvalResponse:
        budgets = _budgets(request.budgets)
        if request.runs < 1:
            raise HTTPException(status_code=400, detail="runs must be >= 1")
        try:
            if request.dataset_text is not None:
                suffix = ".csv" if request.dataset_format == "csv" else ".tsv"
                with tempfile.NamedTemporaryFile(
                    "w", suffix=suffix, delete=False, encoding="utf-8"
                ) as handle:
                    handle.write(request.dataset_text)
                    temp_path = Path(handle.name)
                try:
                    records, warnings = load_dataset(temp_path, fmt=request.dataset_format)
                finally:
                    temp_path.unlink(missing_ok=True)
            elif request.dataset is not None:
                records, warnings = load_dataset(request.dataset, fmt=request.dataset_format)
            else:
                raise HTTPException(
                    status_code=400, detail="provide either dataset or dataset_text"
                )
        except FileNotFoundError as exc:
            raise HTTPException(status_code=400, detail=f"dataset not found: {exc}")
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))

        if request.scripts is not None:
            issues = request.scripts.get("issues")
            if not isinstance(issues, dict):
                raise HTTPException(
                    status_code=400, detail="scripts needs an 'issues' mapping of issue_id to script"
                )
            turns_by_issue: dict[str, list[dict]] = {}
            for issue_id, script in issues.items():
                try:
                    turns_by_issue[issue_id] = validate_script(script)
                except (ValueError, AttributeError) as exc:
                    raise HTTPException(
                        status_code=400, detail=f"script for issue {issue_id!r}: {exc}"
                    )
            missing = sorted(r.issue_id for r in records if r.issue_id not in turns_by_issue)
            if missing:
                raise HTTPException(
                    status_code=400,
                    detail="scripts were given but these issues have none: " + ", ".join(missing),
                )

            def backend_factory(record, run):
                return ScriptedBackend(turns_by_issue[record.issue_id])

        else:

            def backend_factory(record, run):
                return HttpChatBackend()

        def repo_source_of(repo_id: str) -> str:
            try:
                return request.repos[repo_id]
            except KeyError:
                raise SetupError(f"no repository source configured for repo id {repo_id!r}")

        client = _issue_client(request.recorded_responses)
        try:
            report = run_eval(
                records,
                repo_source_of,
                backend_factory,
                issue_client=client,
                budgets=budgets,
                runs=request.runs,
                parallel=request.parallel,
                page_size=request.page_size,
                model=request.model,
                usd_per_token=request.usd_per_token,
                now=request.now,
                warnings=warnings,
            )
        finally:
            if client is not None:
                client.close()
        if request.out_dir:
            report.write(request.out_dir)
        return _eval_response(report)

    return app
