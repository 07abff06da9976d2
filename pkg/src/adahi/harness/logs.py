"""CSV persistence for step logs, episode summaries and reports.

``steps.csv`` columns::

    mode, episode, seed, step, delta_net, delta, transmitted, primary_rejected,
    shadow_would_reject, fallback, latency_micros, action, expert_action

Booleans are ``0``/``1``, absent optionals and undefined deviations are empty,
vectors are space-separated floats.  ``episodes.csv`` holds
``mode, episode, seed, success, steps_used, latency_micros``.
"""
from __future__ import annotations

import csv
import math
from collections import defaultdict
from pathlib import Path

import numpy as np

from ..errors import ReportError
from .metrics import RunReport, throughput_cdf
from .runner import EpisodeRecord, StepRow

STEP_FIELDS = [
    "mode", "episode", "seed", "step", "delta_net", "delta", "transmitted", "primary_rejected",
    "shadow_would_reject", "fallback", "latency_micros", "action", "expert_action",
]
EPISODE_FIELDS = ["mode", "episode", "seed", "success", "steps_used", "latency_micros"]


def _fmt_float(x: float) -> str:
    return "" if math.isnan(x) else repr(float(x))


def _fmt_opt(b: bool | None) -> str:
    return "" if b is None else str(int(b))


def _fmt_vec(v) -> str:
    return " ".join(repr(float(x)) for x in v)


def _parse_float(s: str) -> float:
    return math.nan if s == "" else float(s)


def _parse_opt(s: str) -> bool | None:
    return None if s == "" else s == "1"


def write_records(records: list[EpisodeRecord], out_dir: str | Path, append: bool = False) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    mode = "a" if append else "w"
    steps_path, eps_path = out / "steps.csv", out / "episodes.csv"
    new_steps = not (append and steps_path.exists())
    new_eps = not (append and eps_path.exists())
    with open(steps_path, mode, newline="") as fs, open(eps_path, mode, newline="") as fe:
        ws, we = csv.writer(fs), csv.writer(fe)
        if new_steps:
            ws.writerow(STEP_FIELDS)
        if new_eps:
            we.writerow(EPISODE_FIELDS)
        for rec in records:
            we.writerow([rec.mode, rec.episode, rec.seed, int(rec.success), rec.steps_used, rec.latency_micros])
            for r in rec.rows:
                ws.writerow([
                    rec.mode, rec.episode, rec.seed, r.step, _fmt_float(r.delta_net), _fmt_float(r.delta),
                    int(r.transmitted), _fmt_opt(r.primary_rejected), _fmt_opt(r.shadow_would_reject),
                    int(r.fallback), r.latency_micros, _fmt_vec(r.action), _fmt_vec(r.expert_action),
                ])


def read_records(run_dir: str | Path) -> list[EpisodeRecord]:
    run = Path(run_dir)
    try:
        with open(run / "episodes.csv", newline="") as fh:
            episodes = list(csv.DictReader(fh))
        with open(run / "steps.csv", newline="") as fh:
            steps = list(csv.DictReader(fh))
    except FileNotFoundError as exc:
        raise ReportError(f"missing run log {exc.filename}") from None
    by_key = defaultdict(list)
    for s in steps:
        by_key[(s["mode"], int(s["episode"]), int(s["seed"]))].append(StepRow(
            step=int(s["step"]),
            delta_net=_parse_float(s["delta_net"]),
            delta=_parse_float(s["delta"]),
            transmitted=s["transmitted"] == "1",
            primary_rejected=_parse_opt(s["primary_rejected"]),
            shadow_would_reject=_parse_opt(s["shadow_would_reject"]),
            fallback=s["fallback"] == "1",
            latency_micros=int(s["latency_micros"]),
            action=np.array(s["action"].split(), dtype=float),
            expert_action=np.array(s["expert_action"].split(), dtype=float),
        ))
    records = []
    for e in episodes:
        key = (e["mode"], int(e["episode"]), int(e["seed"]))
        rows = sorted(by_key.get(key, []), key=lambda r: r.step)
        if len(rows) != int(e["steps_used"]):
            raise ReportError(f"episode {key} lists {e['steps_used']} steps but the step log holds {len(rows)}")
        records.append(EpisodeRecord(key[0], key[1], key[2], e["success"] == "1", rows))
    return records


def group_by_mode(records: list[EpisodeRecord]) -> dict[str, list[EpisodeRecord]]:
    groups: dict[str, list[EpisodeRecord]] = {}
    for rec in records:
        groups.setdefault(rec.mode, []).append(rec)
    return groups


def write_report(reports: list[RunReport], path: str | Path) -> None:
    rows = [r.row() for r in reports]
    if not rows:
        raise ReportError("no reports to write")
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for row in rows:
            w.writerow({k: ("" if v is None else v) for k, v in row.items()})


def write_cdf(groups: dict[str, list[EpisodeRecord]], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mode", "throughput", "cdf"])
        for mode, recs in groups.items():
            for x, f in throughput_cdf(recs):
                w.writerow([mode, repr(x), repr(f)])


def format_table(reports: list[RunReport]) -> str:
    """Fixed-width text table, one line per mode."""
    head = f"{'mode':<12}{'success':>9}{'mse':>12}{'TR':>8}{'TSR':>8}{'lat_ms':>10}{'thr/s':>9}{'thr_p2.5':>10}"
    lines = [head, "-" * len(head)]
    for r in reports:
        tsr = "-" if r.tsr is None else f"{r.tsr:.3f}"
        lines.append(
            f"{r.mode:<12}{r.task_success_rate:>9.3f}{r.mse:>12.4e}{r.tr:>8.3f}{tsr:>8}"
            f"{r.mean_per_action_latency_ms:>10.3f}{r.action_throughput:>9.2f}"
            f"{r.throughput_percentiles[2.5]:>10.2f}"
        )
    return "\n".join(lines)
