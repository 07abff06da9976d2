"""Run-level metrics over episode records."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ReportError
from .runner import EpisodeRecord

PERCENTILES = (2.5, 25.0, 50.0, 75.0, 97.5)


@dataclass
class RunReport:
    mode: str
    episodes: int
    steps: int
    task_success_rate: float
    mse: float
    tr: float
    tsr: float | None
    mean_per_action_latency_ms: float
    action_throughput: float
    throughput_percentiles: dict[float, float]
    fallback_count: int
    config_hash: str = ""

    def row(self) -> dict:
        out = asdict(self)
        pct = out.pop("throughput_percentiles")
        for q, v in pct.items():
            out[f"throughput_p{q:g}"] = v
        return out


def shadow_tsr(records: list[EpisodeRecord]) -> float | None:
    """Fraction of shadow-checked skipped steps whose primary draft index would be accepted."""
    skipped = [r for rec in records for r in rec.rows if not r.transmitted and r.shadow_would_reject is not None]
    if not skipped:
        return None
    return sum(not r.shadow_would_reject for r in skipped) / len(skipped)


def episode_throughputs(records: list[EpisodeRecord]) -> np.ndarray:
    """Actions per second for each episode (end-to-end latency over action count)."""
    return np.array([rec.steps_used / (rec.latency_micros / 1e6) if rec.latency_micros else math.inf
                     for rec in records])


def compute_metrics(records: list[EpisodeRecord], config_hash: str = "") -> RunReport:
    if not records:
        raise ReportError("no episode records to summarize")
    modes = {rec.mode for rec in records}
    rows = [r for rec in records for r in rec.rows]
    if not rows:
        raise ReportError("episode records hold no steps")
    executed = np.vstack([r.action for r in rows])
    expert = np.vstack([r.expert_action for r in rows])
    per_action_ms = [rec.latency_micros / 1000.0 / rec.steps_used for rec in records]
    thr = episode_throughputs(records)
    return RunReport(
        mode=modes.pop() if len(modes) == 1 else "mixed",
        episodes=len(records),
        steps=len(rows),
        task_success_rate=sum(rec.success for rec in records) / len(records),
        mse=float(np.mean((executed - expert) ** 2)),
        tr=sum(r.transmitted for r in rows) / len(rows),
        tsr=shadow_tsr(records),
        mean_per_action_latency_ms=float(np.mean(per_action_ms)),
        action_throughput=float(np.mean(thr)),
        throughput_percentiles={q: float(np.percentile(thr, q)) for q in PERCENTILES},
        fallback_count=sum(r.fallback for r in rows),
        config_hash=config_hash,
    )


def throughput_cdf(records: list[EpisodeRecord]) -> list[tuple[float, float]]:
    """Empirical CDF points ``(throughput, F)`` of per-episode action throughput."""
    thr = np.sort(episode_throughputs(records))
    n = thr.size
    return [(float(x), (i + 1) / n) for i, x in enumerate(thr)]
