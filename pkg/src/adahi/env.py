"""Toy linear control tasks used as stand-ins for the robot benchmarks.

Dynamics are ``s' = A s + B a + noise``.  Goals are drawn uniformly from a box
and initial states sit at a uniformly distributed distance in
``[init_radius_min, init_radius_max]`` from the goal, independently per agent,
so the mean initial per-agent distance is the midpoint of that interval.
A step is in the goal region when every agent is within ``success_radius``
of its goal; an episode succeeds once that holds for ``hold_steps``
consecutive steps.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, ContractViolation
from .policy import Observation


@dataclass(frozen=True, eq=False)
class EnvSpec:
    name: str
    state_dim: int
    A: np.ndarray
    B: np.ndarray
    expert_gain: np.ndarray
    success_radius: float
    horizon: int
    process_noise: float | None = None  # None -> 0.01 * ||B||_2
    agents: int = 1
    goal_range: float = 1.0
    init_radius_min: float = 0.5
    init_radius_max: float = 1.5
    hold_steps: int = 1
    _noise: float = field(init=False, repr=False)

    def __post_init__(self):
        for name in ("A", "B", "expert_gain"):
            object.__setattr__(self, name, np.atleast_2d(np.asarray(getattr(self, name), dtype=np.float64)))
        if self.A.shape != (self.state_dim, self.state_dim):
            raise ConfigError(f"{self.name}: A must be {self.state_dim}x{self.state_dim}")
        if self.B.shape[0] != self.state_dim:
            raise ConfigError(f"{self.name}: B must have {self.state_dim} rows")
        if self.expert_gain.shape != (self.action_dim, self.state_dim):
            raise ConfigError(f"{self.name}: expert_gain must be {self.action_dim}x{self.state_dim}")
        if not self.success_radius > 0:
            raise ConfigError(f"{self.name}: success_radius must be positive")
        if self.horizon < 1:
            raise ConfigError(f"{self.name}: horizon must be >= 1")
        if self.hold_steps < 1:
            raise ConfigError(f"{self.name}: hold_steps must be >= 1")
        if self.state_dim % self.agents:
            raise ConfigError(f"{self.name}: state_dim {self.state_dim} not divisible by {self.agents} agents")
        if max(abs(np.linalg.eigvals(self.A))) > 1.05:
            raise ConfigError(f"{self.name}: spectral radius of A exceeds 1.05")
        if not 0 <= self.init_radius_min <= self.init_radius_max:
            raise ConfigError(f"{self.name}: need 0 <= init_radius_min <= init_radius_max")
        noise = 0.01 * np.linalg.norm(self.B, 2) if self.process_noise is None else self.process_noise
        if noise < 0:
            raise ConfigError(f"{self.name}: process_noise must be non-negative")
        object.__setattr__(self, "_noise", float(noise))

    @property
    def action_dim(self) -> int:
        return self.B.shape[1]

    @property
    def goal_dim(self) -> int:
        return self.state_dim

    @property
    def noise_std(self) -> float:
        return self._noise

    @property
    def mean_initial_distance(self) -> float:
        """Analytic mean of the per-agent initial distance to goal."""
        return 0.5 * (self.init_radius_min + self.init_radius_max)

    def agent_distances(self, state, goal) -> np.ndarray:
        diff = (np.asarray(state) - np.asarray(goal)).reshape(self.agents, -1)
        return np.linalg.norm(diff, axis=1)


@dataclass(frozen=True)
class StepResult:
    next_state: np.ndarray
    success: bool
    expert_action: np.ndarray


def expert_action(spec: EnvSpec, o: Observation) -> np.ndarray:
    return spec.expert_gain @ (o.goal - o.state)


def reset(spec: EnvSpec, seed) -> Observation:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    goal = rng.uniform(-spec.goal_range, spec.goal_range, spec.state_dim)
    per_agent = spec.state_dim // spec.agents
    dirs = rng.standard_normal((spec.agents, per_agent))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = rng.uniform(spec.init_radius_min, spec.init_radius_max, spec.agents)
    state = goal + (dirs * radii[:, None]).reshape(-1)
    return Observation(state=state, goal=goal, step=0)


def step(spec: EnvSpec, o: Observation, a, rng: np.random.Generator) -> StepResult:
    a = np.asarray(a, dtype=np.float64)
    if a.shape != (spec.action_dim,):
        raise ContractViolation(f"{spec.name}: action has shape {a.shape}, expected ({spec.action_dim},)")
    if o.state.shape != (spec.state_dim,):
        raise ContractViolation(f"{spec.name}: state has shape {o.state.shape}, expected ({spec.state_dim},)")
    nxt = spec.A @ o.state + spec.B @ a
    if spec.noise_std > 0:
        nxt = nxt + spec.noise_std * rng.standard_normal(spec.state_dim)
    success = bool(np.all(spec.agent_distances(nxt, o.goal) < spec.success_radius))
    return StepResult(next_state=nxt, success=success, expert_action=expert_action(spec, o))


def _fixture(name, dim, *, agents=1, radius, horizon, expert=0.5, **kw) -> EnvSpec:
    eye = np.eye(dim)
    return EnvSpec(
        name=name,
        state_dim=dim,
        A=eye,
        B=eye,
        expert_gain=expert * eye,
        success_radius=radius,
        horizon=horizon,
        agents=agents,
        **kw,
    )


def make_env(name: str, **overrides) -> EnvSpec:
    """Named fixture with optional field overrides."""
    try:
        base = FIXTURES[name]()
    except KeyError:
        raise ConfigError(f"unknown env fixture {name!r}; choose from {sorted(FIXTURES)}") from None
    return replace(base, **overrides) if overrides else base


FIXTURES = {
    # ball-balancing analog: planar point mass, tight goal radius
    "reach-2d": lambda: _fixture("reach-2d", 2, radius=0.05, horizon=40, expert=0.2, hold_steps=3),
    # kitchen analog: 7-D action, looser radius, longer horizon
    "reach-7d": lambda: _fixture("reach-7d", 7, radius=0.15, horizon=60, expert=0.2, hold_steps=3),
    # swarm analog: 4 planar agents driven by one shared policy
    "swarm-2d": lambda: _fixture("swarm-2d", 8, agents=4, radius=0.1, horizon=60, expert=0.2, hold_steps=3),
}
