"""Device-side action-deviation gate.

The gate keeps an exponential moving average of executed actions, scores the
current draft action by its distance from that average (normalized by a
frozen corpus standard deviation), and transmits only when the score exceeds
the calibrated threshold.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractViolation

FORMS = ("linear", "logarithmic")


@dataclass(frozen=True)
class RejectionModel:
    """Primary-codebook rejection probability as a function of deviation."""

    form: str
    m: float
    b: float
    kappa: float | None = None

    def __post_init__(self):
        if self.form not in FORMS:
            raise ConfigError(f"rejection model form must be one of {FORMS}, got {self.form!r}")
        if self.form == "logarithmic" and not (self.kappa is not None and self.kappa > 0):
            raise ConfigError("logarithmic rejection model needs kappa > 0")

    def raw(self, delta):
        """Unclamped model value; accepts scalars or arrays."""
        if self.form == "linear":
            return self.m * delta + self.b
        return self.m * np.log1p(self.kappa * delta) + self.b


def predict_rejection(model: RejectionModel, delta):
    out = np.clip(model.raw(delta), 0.0, 1.0)
    return float(out) if np.ndim(out) == 0 else out


class DeviationGate:
    """Episode-local gate state.

    ``threshold = math.inf`` never transmits; ``threshold = 0`` transmits on
    any non-zero deviation.
    """

    def __init__(
        self,
        alpha: float = 0.3,
        sigma: float | None = None,
        threshold: float = math.inf,
        model: RejectionModel | None = None,
    ):
        if not 0 < alpha <= 1:
            raise ConfigError(f"alpha must lie in (0, 1], got {alpha}")
        if sigma is not None and not sigma > 0:
            raise ConfigError(f"sigma must be positive, got {sigma}")
        if not threshold >= 0:
            raise ConfigError(f"threshold must be non-negative, got {threshold}")
        self.alpha = alpha
        self.sigma = sigma
        self.threshold = threshold
        self.model = model
        self.ema: np.ndarray | None = None

    @property
    def initialized(self) -> bool:
        return self.ema is not None

    def reset(self) -> None:
        self.ema = None

    def update_ema(self, prev_action) -> DeviationGate:
        """Fold the previously executed action into the average (first call copies it)."""
        a = np.asarray(prev_action, dtype=np.float64)
        if self.ema is None:
            self.ema = a.copy()
        elif a.shape != self.ema.shape:
            raise ContractViolation(f"action has shape {a.shape}, average has {self.ema.shape}")
        else:
            self.ema = (1.0 - self.alpha) * self.ema + self.alpha * a
        return self

    def net_deviation(self, a) -> float:
        if self.ema is None:
            raise ContractViolation("deviation is undefined before the first action")
        a = np.asarray(a, dtype=np.float64)
        if a.shape != self.ema.shape:
            raise ContractViolation(f"action has shape {a.shape}, average has {self.ema.shape}")
        return float(np.linalg.norm(a - self.ema))

    def deviation(self, a) -> float:
        if self.sigma is None:
            raise ConfigError("gate sigma is unset; load a calibration artifact first")
        return self.net_deviation(a) / self.sigma

    def should_transmit(self, delta: float) -> bool:
        return delta > self.threshold


def update_ema(s: DeviationGate, prev_action) -> DeviationGate:
    return s.update_ema(prev_action)


def deviation(s: DeviationGate, a) -> float:
    return s.deviation(a)


def should_transmit(s: DeviationGate, delta: float) -> bool:
    return s.should_transmit(delta)
