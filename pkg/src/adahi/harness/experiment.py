"""Glue between a resolved config and the runner: setup, calibration corpus, mode sweeps."""
from __future__ import annotations

import math
from dataclasses import replace

from .. import env as envmod
from ..calibrate import CalibrationArtifact, CalibrationCorpus, calibrate
from ..errors import ConfigError
from ..policy import check_pair, make_head
from ..proto import DelayModel, InProcessTransport, VerifyClient
from ..quantizer import CodebookSet, QuantizerConfig, build_codebooks
from .config import config_hash
from .runner import LatencyModel, Setup, run_episode, run_episodes

ENV_KEYS = ("success_radius", "horizon", "process_noise", "hold_steps")
MODE_ORDER = ("draft_only", "target_only", "hybrid", "adahi", "random")


def build_codebook_set(cfg: dict, spec: envmod.EnvSpec) -> CodebookSet:
    q = cfg["quantizer"]
    qcfg = QuantizerConfig(
        n=q["n"], K=q["K"], action_dim=spec.action_dim, scale=q["scale"], decay=q["decay"],
        include_zero=q["include_zero"], radial=q["radial"],
    )
    return build_codebooks(qcfg, q["seed"])


def build_setup(cfg: dict, cb: CodebookSet | None = None, transport=None) -> Setup:
    e = cfg["env"]
    overrides = {k: e[k] for k in ENV_KEYS if k in e}
    spec = envmod.make_env(e["name"], **overrides)
    cb = cb or build_codebook_set(cfg, spec)
    heads = {}
    for role in ("draft", "target"):
        p = cfg["policy"][role]
        heads[role] = make_head(
            spec.action_dim, gain=spec.expert_gain if p["gain"] is None else p["gain"], temperature=p["temperature"], gain_noise=p["gain_noise"],
            offset_scale=p["offset_scale"], role=role, seed=p["seed"],
        )
    check_pair(heads["draft"], heads["target"])
    pr = cfg["proto"]
    if transport is None:
        if pr["transport"] == "inproc":
            transport = InProcessTransport(heads["target"], cb, pr["paper_literal_adjust"])
        else:
            transport = VerifyClient(pr["endpoint"], timeout_ms=pr["timeout_ms"], retries=pr["retries"],
                                     max_payload_bytes=pr["max_payload_bytes"])
    d = pr["injected_delay"]
    lat = cfg["latency"]
    return Setup(
        spec=spec, cb=cb, draft=heads["draft"], target=heads["target"], transport=transport,
        alpha=cfg["gate"]["alpha"], shadow=cfg["run"]["shadow"], draft_offset=cfg["run"]["draft_offset"],
        delay=DelayModel(d["mean_ms"], d["jitter_ms"], d["enabled"]),
        latency=LatencyModel(lat["clock"], lat["device_compute_ms"], lat["server_compute_ms"],
                             lat["target_local_compute_ms"]),
    )


def collect_corpus(setup: Setup, mode: str, min_samples: int, seed: int, first_episode: int = 0) -> CalibrationCorpus:
    """Log ``(net deviation, primary rejected)`` until ``min_samples`` pairs exist.

    Transmitted steps contribute the server's verdict, skipped steps the
    shadow verdict; the first step of each episode has no deviation.
    """
    if mode in ("target_only",):
        raise ConfigError("calibration needs draft actions; target_only cannot produce a corpus")
    setup = replace(setup, shadow=True, random_tr=setup.random_tr if setup.random_tr is not None else 0.5)
    if mode == "adahi" and setup.model is None:
        raise ConfigError("calibrating in adahi mode needs an existing artifact")
    nets, rej = [], []
    ep = first_episode
    while len(nets) < min_samples:
        rec = run_episode(mode, setup, ep, seed)
        for r in rec.rows:
            verdict = r.primary_rejected if r.transmitted else r.shadow_would_reject
            if not math.isnan(r.delta_net) and verdict is not None:
                nets.append(r.delta_net)
                rej.append(verdict)
        ep += 1
    return CalibrationCorpus(nets, rej)


def run_calibration(cfg: dict, setup: Setup, min_samples: int | None = None) -> tuple[CalibrationArtifact, CalibrationCorpus]:
    c = cfg["calibration"]
    n = c["min_samples"] if min_samples is None else min_samples
    corpus = collect_corpus(setup, c["mode"], n, c["seed"])
    art = calibrate(
        corpus, c["target_tr"], alpha=setup.alpha, n_bins=c["n_bins"], min_samples=n,
        config_hash=config_hash(cfg), seed=c["seed"], codebook_checksum=setup.cb.checksum,
    )
    return art, corpus


def apply_artifact(setup: Setup, art: CalibrationArtifact, threshold: float | None = None) -> Setup:
    if art.codebook_checksum and art.codebook_checksum != setup.cb.checksum:
        raise ConfigError("calibration artifact was produced with different codebooks; rerun calibrate")
    return replace(
        setup, sigma=art.sigma, model=art.model, alpha=art.alpha,
        threshold=art.delta_th if threshold is None else threshold,
    )


def run_modes(setup: Setup, episodes: int, seed: int, modes=MODE_ORDER) -> dict:
    """Run each mode on identical seeds; random inherits ADAHI's realized TR."""
    out = {}
    for mode in MODE_ORDER:
        if mode not in modes:
            continue
        s = setup
        if mode == "random":
            if "adahi" not in out:
                out_adahi = run_episodes("adahi", setup, episodes, seed)
            else:
                out_adahi = out["adahi"]
            rows = [r for rec in out_adahi for r in rec.rows]
            s = replace(setup, random_tr=sum(r.transmitted for r in rows) / len(rows))
        out[mode] = run_episodes(mode, s, episodes, seed)
    return {m: out[m] for m in modes if m in out}
