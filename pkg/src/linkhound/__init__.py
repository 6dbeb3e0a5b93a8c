"""linkhound: recover the commit that resolved a tracker issue.

An agent session walks a repository's history, the issue's discussion,
and the code itself through a fixed set of read-only functions, then
names the resolving commit (or gives up, or runs out of budget). The
package also ships the batch evaluation harness that scores sessions
with Hit@1, an HTTP service, and a command line front end.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .domain import Budgets, OutcomeKind, SessionOutcome, SetupError, ToolError
from .evaluation import EvalReport, load_dataset, run_eval
from .history import GitHistory, safe_lifespan
from .middleware import Dialogue, HttpChatBackend, ScriptedBackend, estimate_tokens
from .orchestrator import SessionResult, run_prepared, run_session
from .tracker import IssueSnapshot, fetch_issue

__all__ = [
    "Budgets",
    "Dialogue",
    "EvalReport",
    "GitHistory",
    "HttpChatBackend",
    "IssueSnapshot",
    "OutcomeKind",
    "ScriptedBackend",
    "SessionOutcome",
    "SessionResult",
    "SetupError",
    "ToolError",
    "estimate_tokens",
    "fetch_issue",
    "load_dataset",
    "run_eval",
    "run_prepared",
    "run_session",
    "safe_lifespan",
    "__version__",
]
