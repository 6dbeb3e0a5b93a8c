"""Request and response bodies for the HTTP service."""

from __future__ import annotations

from pydantic import BaseModel, Field

from ..metrics import DEFAULT_USD_PER_TOKEN


class BudgetSpec(BaseModel):
    max_iterations: int = 20
    max_total_tokens: int = 200_000
    feedback_threshold_bytes: int = 40_000


class LinkRequest(BaseModel):
    issue_url: str
    repo: str = Field(description="repository path on the server, or a clone URL")
    script: dict | None = Field(
        default=None,
        description="scripted turns ({'turns': [...]}) replayed instead of a live model",
    )
    budgets: BudgetSpec = BudgetSpec()
    model: str | None = None
    page_size: int = 20
    recorded_responses: str | None = Field(
        default=None,
        description="directory of recorded tracker responses to serve instead of the network",
    )
    cache_dir: str | None = None
    now: int | None = Field(
        default=None, description="fixed 'current time' for open issues, epoch seconds"
    )
    usd_per_token: float = DEFAULT_USD_PER_TOKEN


class CallRecord(BaseModel):
    iteration: int
    name: str
    byte_size: int
    feedback: str = ""


class LinkResponse(BaseModel):
    outcome: str
    commit_hash: str = ""
    reason: str = ""
    iterations: int
    total_tokens: int
    wall_time_s: float
    estimated_cost_usd: float
    record: str
    metrics: str
    calls: list[CallRecord]


class EvalRequest(BaseModel):
    dataset: str | None = Field(default=None, description="dataset path on the server")
    dataset_text: str | None = Field(
        default=None, description="dataset content sent inline, parsed per dataset_format"
    )
    dataset_format: str | None = Field(default=None, description="tsv or csv")
    repos: dict[str, str] = Field(
        description="repository id to path-or-clone-URL, as used in the dataset"
    )
    scripts: dict | None = Field(
        default=None,
        description="{'issues': {issue_id: {'turns': [...]}}} replayed instead of a live model",
    )
    runs: int = 3
    parallel: int = 1
    budgets: BudgetSpec = BudgetSpec()
    model: str | None = None
    page_size: int = 20
    recorded_responses: str | None = None
    usd_per_token: float = DEFAULT_USD_PER_TOKEN
    now: int | None = None
    out_dir: str | None = Field(
        default=None, description="when set, the report files are written here on the server"
    )


class SessionRow(BaseModel):
    run: int
    issue_id: str
    repo_id: str
    truth: str
    outcome: str
    candidate: str = ""
    hit: bool
    reason: str = ""
    metrics: str = ""


class EvalResponse(BaseModel):
    runs: int
    hit1_overall: float
    hit1_by_project: dict[str, float]
    hit1_by_run: list[float]
    outcome_counts: dict[str, int]
    sessions: list[SessionRow]
    record_lines: list[str]
    excluded: list[str]
    warnings: list[str]
    text: str


class ParamInfo(BaseModel):
    name: str
    type: str
    required: bool
    description: str = ""


class ToolInfo(BaseModel):
    name: str
    description: str
    parameters: list[ParamInfo]
