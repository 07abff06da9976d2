from .metrics import RunReport, compute_metrics, shadow_tsr
from .runner import EpisodeRecord, Setup, StepRow, run_episode, run_episodes

__all__ = [
    "EpisodeRecord", "RunReport", "Setup", "StepRow",
    "compute_metrics", "run_episode", "run_episodes", "shadow_tsr",
]
