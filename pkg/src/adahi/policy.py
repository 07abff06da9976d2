"""Draft and target code-predictor policies.

Both roles share one construction: an ideal feedback action, a distance-based
code predictor over the residual recursion, softmax normalization, inverse-CDF
sampling of one index per codebook, and an offset head that restores the part
of the ideal action the codes cannot express.  The roles differ only in their
knobs (temperature, systematic gain perturbation, offset scale).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractViolation
from .quantizer import CodebookSet, CodeTuple, decode, encode_residual, residual_path

ROLES = ("draft", "target")


@dataclass(frozen=True)
class Observation:
    state: np.ndarray
    goal: np.ndarray
    step: int = 0

    def __post_init__(self):
        object.__setattr__(self, "state", np.asarray(self.state, dtype=np.float64))
        object.__setattr__(self, "goal", np.asarray(self.goal, dtype=np.float64))


@dataclass(frozen=True, eq=False)
class PolicyHead:
    """Immutable policy knobs.

    ``perturbation`` is a fixed unit-spectral-norm matrix; the effective
    feedback map is ``gain @ (I + gain_noise * perturbation)``.
    """

    gain: np.ndarray
    temperature: float
    gain_noise: float = 0.0
    offset_scale: float = 0.0
    role: str = "target"
    perturbation: np.ndarray | None = None
    _effective: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not self.temperature > 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")
        if self.role not in ROLES:
            raise ConfigError(f"role must be one of {ROLES}, got {self.role!r}")
        if self.gain_noise < 0 or self.offset_scale < 0:
            raise ConfigError("gain_noise and offset_scale must be non-negative")
        gain = np.atleast_2d(np.asarray(self.gain, dtype=np.float64))
        m = gain.shape[1]
        pert = np.zeros((m, m)) if self.perturbation is None else np.asarray(self.perturbation, dtype=np.float64)
        if pert.shape != (m, m):
            raise ContractViolation(f"perturbation must be {m}x{m}, got {pert.shape}")
        object.__setattr__(self, "gain", gain)
        object.__setattr__(self, "perturbation", pert)
        object.__setattr__(self, "_effective", gain @ (np.eye(m) + self.gain_noise * pert))


def make_head(
    action_dim: int,
    *,
    gain: float | np.ndarray = 1.0,
    temperature: float = 0.5,
    gain_noise: float = 0.0,
    offset_scale: float = 0.0,
    role: str = "target",
    seed: int = 0,
) -> PolicyHead:
    """Build a head with a seeded perturbation direction."""
    g = gain * np.eye(action_dim) if np.isscalar(gain) else np.asarray(gain, dtype=np.float64)
    rng = np.random.default_rng(seed)
    pert = rng.standard_normal((g.shape[1], g.shape[1]))
    pert /= np.linalg.norm(pert, 2)
    return PolicyHead(
        gain=g,
        temperature=temperature,
        gain_noise=gain_noise,
        offset_scale=offset_scale,
        role=role,
        perturbation=pert,
    )


def check_pair(draft: PolicyHead, target: PolicyHead) -> None:
    if draft.temperature < target.temperature:
        raise ConfigError(
            f"draft temperature {draft.temperature} is below target temperature {target.temperature}"
        )


@dataclass(frozen=True, eq=False)
class CategoricalBundle:
    """``probs[l]`` is the distribution over codebook ``l``; shape ``(n, K)``."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 2:
            raise ContractViolation(f"bundle must be 2-D (n, K), got shape {p.shape}")
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise ContractViolation("bundle holds negative or non-finite probabilities")
        bad = np.flatnonzero(np.abs(p.sum(axis=1) - 1.0) > 1e-9)
        if bad.size:
            raise ContractViolation(f"bundle row {int(bad[0])} sums to {p[bad[0]].sum()!r}, not 1")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def n(self) -> int:
        return self.probs.shape[0]

    @property
    def K(self) -> int:
        return self.probs.shape[1]


def ideal_action(head: PolicyHead, o: Observation) -> np.ndarray:
    err = o.goal - o.state
    if err.shape != (head._effective.shape[1],):
        raise ContractViolation(
            f"goal - state has shape {err.shape}, head expects ({head._effective.shape[1]},)"
        )
    return head._effective @ err


def logits(head: PolicyHead, o: Observation, cb: CodebookSet) -> np.ndarray:
    """Per-codebook logits ``-||r_l - e_k||^2 / temperature`` on the greedy residual path."""
    a_star = ideal_action(head, o)
    if a_star.shape != (cb.d,):
        raise ContractViolation(f"head produces {a_star.shape[0]}-D actions, decoder expects {cb.d}")
    _, residuals = residual_path(cb.lift(a_star), cb)
    dist = np.sum((cb.entries - residuals[:, None, :]) ** 2, axis=2)
    return -dist / head.temperature


def normalize(z: np.ndarray) -> CategoricalBundle:
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    if not np.all(np.isfinite(z)):
        raise ContractViolation("logits must be finite")
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return CategoricalBundle(e / e.sum(axis=1, keepdims=True))


def inverse_cdf(p: np.ndarray, u: float) -> int:
    """Smallest index whose cumulative mass exceeds ``u``; never a zero-mass index."""
    cdf = np.cumsum(p)
    k = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    if k >= p.size:  # u * total rounded onto the last cumulative value
        k = int(np.flatnonzero(p > 0)[-1])
    return k


def sample_codes(b: CategoricalBundle, rng: np.random.Generator) -> CodeTuple:
    """One uniform per codebook, mapped through that codebook's inverse CDF."""
    u = rng.random(b.n)
    return tuple(inverse_cdf(b.probs[stage], u[stage]) for stage in range(b.n))


def offset(head: PolicyHead, o: Observation, cb: CodebookSet) -> np.ndarray:
    """Scaled quantization residual of the ideal action, clipped to norm ``offset_scale``."""
    if head.offset_scale == 0:
        return np.zeros(cb.d)
    a_star = ideal_action(head, o)
    resid = head.offset_scale * (a_star - decode(encode_residual(a_star, cb), cb))
    norm = np.linalg.norm(resid)
    if norm > head.offset_scale:
        resid *= head.offset_scale / norm
    return resid


def act(
    head: PolicyHead,
    o: Observation,
    cb: CodebookSet,
    rng: np.random.Generator,
    apply_offset: bool = True,
) -> tuple[np.ndarray, CodeTuple, CategoricalBundle]:
    bundle = normalize(logits(head, o, cb))
    codes = sample_codes(bundle, rng)
    action = decode(codes, cb)
    if apply_offset:
        action = action + offset(head, o, cb)
    return action, codes, bundle


def entropy(b: CategoricalBundle) -> np.ndarray:
    p = b.probs
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log(p), 0.0)
    return terms.sum(axis=1)
