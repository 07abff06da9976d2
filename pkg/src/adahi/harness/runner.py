"""Episode runner for the five inference modes."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .. import env as envmod
from ..errors import ConfigError, TransportError
from ..gate import DeviationGate, RejectionModel
from ..policy import Observation, PolicyHead, act, logits, normalize
from ..proto import DelayModel, VerifyRequest
from ..quantizer import CodebookSet, decode
from ..specsamp import verify_one

# fixed stream ids so every mode draws from identically seeded generators
STREAMS = {"env": 0, "device": 1, "coin": 2, "shadow": 3, "delay": 4, "verify": 5}


def stream(seed: int, episode: int, name: str, step: int | None = None) -> np.random.Generator:
    key = [seed, episode, STREAMS[name]] + ([] if step is None else [step])
    return np.random.default_rng(np.random.SeedSequence(key))


def verify_token(seed: int, episode: int, step: int) -> int:
    words = np.random.SeedSequence([seed, episode, STREAMS["verify"], step]).generate_state(2, np.uint32)
    return (int(words[0]) << 31) | (int(words[1]) >> 1)


@dataclass(frozen=True)
class LatencyModel:
    clock: str = "virtual"
    device_compute_ms: float = 20.0
    server_compute_ms: float = 4.0
    target_local_compute_ms: float = 60.0


@dataclass
class Setup:
    """Everything an episode needs besides its mode and seed."""

    spec: envmod.EnvSpec
    cb: CodebookSet
    draft: PolicyHead
    target: PolicyHead
    transport: object = None  # has .verify(VerifyRequest) -> (VerifyReply, seconds)
    alpha: float = 0.3
    sigma: float | None = None
    threshold: float = math.inf
    model: RejectionModel | None = None
    random_tr: float | None = None
    shadow: bool = True
    draft_offset: bool = False
    delay: DelayModel = field(default_factory=DelayModel)
    latency: LatencyModel = field(default_factory=LatencyModel)


@dataclass
class StepRow:
    step: int
    delta_net: float
    delta: float
    transmitted: bool
    primary_rejected: bool | None
    shadow_would_reject: bool | None
    fallback: bool
    latency_micros: int
    action: np.ndarray
    expert_action: np.ndarray


@dataclass
class EpisodeRecord:
    mode: str
    episode: int
    seed: int
    success: bool
    rows: list[StepRow]

    @property
    def steps_used(self) -> int:
        return len(self.rows)

    @property
    def latency_micros(self) -> int:
        return sum(r.latency_micros for r in self.rows)


def _shadow_reject(setup: Setup, obs: Observation, qb, codes, rng: np.random.Generator) -> bool:
    pb = normalize(logits(setup.target, obs, setup.cb))
    _, accepted = verify_one(qb.probs[0], pb.probs[0], codes[0], rng)
    return not accepted


def run_episode(mode: str, setup: Setup, episode: int, seed: int) -> EpisodeRecord:
    if mode == "adahi" and (setup.sigma is None or setup.model is None):
        raise ConfigError("adahi mode needs a calibration artifact; run `adahi calibrate` first")
    if mode == "random" and setup.random_tr is None:
        raise ConfigError("random mode needs a transmission rate to match")
    if mode in ("hybrid", "random", "adahi") and setup.transport is None:
        raise ConfigError(f"{mode} mode needs a verification transport")

    spec, cb = setup.spec, setup.cb
    env_rng = stream(seed, episode, "env")
    device_rng = stream(seed, episode, "device")
    coin_rng = stream(seed, episode, "coin")
    shadow_rng = stream(seed, episode, "shadow")
    delay_rng = stream(seed, episode, "delay")
    gate = DeviationGate(setup.alpha, setup.sigma, setup.threshold, setup.model)
    lat = setup.latency
    wall = lat.clock == "wall"

    obs = envmod.reset(spec, env_rng)
    rows: list[StepRow] = []
    success = False
    streak = 0
    prev_exec = None
    for t in range(spec.horizon):
        t0 = time.perf_counter()
        virtual_ms = lat.device_compute_ms
        transmitted = fallback = False
        rejected = shadow = None
        delta_net = delta = math.nan

        if mode == "target_only":
            action, _, _ = act(setup.target, obs, cb, device_rng, apply_offset=True)
            virtual_ms = lat.target_local_compute_ms
        else:
            draft_action, codes, qb = act(setup.draft, obs, cb, device_rng, apply_offset=setup.draft_offset)
            if prev_exec is not None:
                gate.update_ema(prev_exec)
                delta_net = gate.net_deviation(draft_action)
                if setup.sigma is not None:
                    delta = delta_net / setup.sigma
            coin = coin_rng.random()
            if mode == "hybrid":
                transmitted = True
            elif mode == "random":
                transmitted = coin < setup.random_tr
            elif mode == "adahi":
                transmitted = gate.initialized and gate.should_transmit(delta)

            action = draft_action
            if transmitted:
                req = VerifyRequest(
                    episode_id=episode,
                    step=t,
                    state=obs.state,
                    goal=obs.goal,
                    q_bundle=qb.probs,
                    draft_indices=codes,
                    codebook_checksum=cb.checksum,
                    rng_token=verify_token(seed, episode, t),
                )
                injected = setup.delay.sample_ms(delay_rng)
                if wall and injected:
                    time.sleep(injected / 1000.0)
                try:
                    reply, _ = setup.transport.verify(req)
                except TransportError:
                    fallback = True
                else:
                    action = decode(reply.final_indices, cb) + np.asarray(reply.offset)
                    rejected = not reply.accepted_mask[0]
                virtual_ms += injected + lat.server_compute_ms
            elif setup.shadow:
                shadow = _shadow_reject(setup, obs, qb, codes, shadow_rng)

        expert = envmod.expert_action(spec, obs)
        res = envmod.step(spec, obs, action, env_rng)
        elapsed = time.perf_counter() - t0 if wall else virtual_ms / 1000.0
        rows.append(StepRow(t, delta_net, delta, transmitted, rejected, shadow, fallback,
                            int(round(elapsed * 1e6)), action, expert))
        prev_exec = action
        streak = streak + 1 if res.success else 0
        if streak >= spec.hold_steps:
            success = True
            break
        obs = Observation(res.next_state, obs.goal, t + 1)
    return EpisodeRecord(mode, episode, seed, success, rows)


def run_episodes(mode: str, setup: Setup, episodes: int, seed: int, first: int = 0) -> list[EpisodeRecord]:
    return [run_episode(mode, setup, ep, seed) for ep in range(first, first + episodes)]
