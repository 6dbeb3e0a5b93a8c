"""Per-session resource metrics and their aggregation.

Every session records how many times each function was called, the exact
call order, wall time, token consumption, and the estimated spend at the
configured per-token price.
"""

from __future__ import annotations

import statistics
from collections import Counter
from dataclasses import dataclass

from .domain import CallLogEntry

DEFAULT_USD_PER_TOKEN = 8.76e-8


@dataclass(frozen=True)
class SessionMetrics:
    function_calls: dict[str, int]
    call_sequence: tuple[str, ...]
    wall_time_s: float
    total_tokens: int
    estimated_cost_usd: float


@dataclass(frozen=True)
class AggregateMetrics:
    sessions: int
    mean_calls_per_function: dict[str, float]
    median_wall_time_s: float
    median_total_tokens: float
    median_cost_usd: float


def record(
    call_log: list[CallLogEntry],
    ledger,
    wall_time_s: float,
    usd_per_token: float = DEFAULT_USD_PER_TOKEN,
) -> SessionMetrics:
    """Freeze one terminated session's resource usage.

    The token count is the ledger's cumulative total at termination; the
    cost is exactly tokens times the per-token price.
    """
    sequence = tuple(entry.call.name for entry in call_log)
    counts = dict(sorted(Counter(sequence).items()))
    total_tokens = ledger.cumulative_total
    return SessionMetrics(
        function_calls=counts,
        call_sequence=sequence,
        wall_time_s=wall_time_s,
        total_tokens=total_tokens,
        estimated_cost_usd=total_tokens * usd_per_token,
    )


def aggregate(all_metrics: list[SessionMetrics]) -> AggregateMetrics:
    """Mean call counts per function and medians of time, tokens, cost.

    A function a session never called counts as zero calls for that
    session, so means are comparable across sessions.
    """
    if not all_metrics:
        return AggregateMetrics(0, {}, 0.0, 0.0, 0.0)
    names = sorted({name for m in all_metrics for name in m.function_calls})
    means = {
        name: sum(m.function_calls.get(name, 0) for m in all_metrics) / len(all_metrics)
        for name in names
    }
    return AggregateMetrics(
        sessions=len(all_metrics),
        mean_calls_per_function=means,
        median_wall_time_s=statistics.median(m.wall_time_s for m in all_metrics),
        median_total_tokens=statistics.median(m.total_tokens for m in all_metrics),
        median_cost_usd=statistics.median(m.estimated_cost_usd for m in all_metrics),
    )


def render_metrics_line(metrics: SessionMetrics) -> str:
    calls = ",".join(f"{name}:{count}" for name, count in metrics.function_calls.items()) or "-"
    sequence = ",".join(metrics.call_sequence) or "-"
    return (
        f"calls={calls} sequence={sequence} "
        f"wall_time_s={metrics.wall_time_s:.3f} tokens={metrics.total_tokens} "
        f"cost_usd={metrics.estimated_cost_usd:.8f}"
    )
