"""Run configuration: a TOML file layered over per-fixture defaults.

Documented keys (all optional)::

    [env]        name, success_radius, horizon, process_noise, hold_steps
    [quantizer]  n, K, scale, decay, include_zero, radial, seed
    [policy.draft] / [policy.target]
                 gain, temperature, gain_noise, offset_scale, seed
    [gate]       alpha
    [calibration] target_tr, n_bins, min_samples, mode, seed
    [proto]      transport ("inproc" | "http"), endpoint, timeout_ms, retries,
                 max_payload_bytes, paper_literal_adjust
    [proto.injected_delay] enabled, mean_ms, jitter_ms
    [latency]    clock ("virtual" | "wall"), device_compute_ms,
                 server_compute_ms, target_local_compute_ms
    [run]        mode, episodes, seed, shadow, draft_offset
"""
from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from ..errors import ConfigError

ENV_KEYS = {"success_radius", "horizon", "process_noise", "hold_steps"}
MODES = ("draft_only", "target_only", "hybrid", "random", "adahi")

BASE = {
    "env": {"name": "reach-2d"},
    "quantizer": {"n": 2, "K": 64, "scale": 0.2, "decay": 0.3, "include_zero": True, "radial": "volume", "seed": 11},
    "policy": {
        # gain None -> the env's expert gain
        "draft": {"gain": None, "temperature": 0.002, "gain_noise": 0.15, "offset_scale": 1.0, "seed": 101},
        "target": {"gain": None, "temperature": 0.0005, "gain_noise": 0.0, "offset_scale": 1.0, "seed": 202},
    },
    "gate": {"alpha": 0.5},
    "calibration": {"target_tr": 0.6, "n_bins": 20, "min_samples": 50_000, "mode": "hybrid", "seed": 7},
    "proto": {
        "transport": "inproc",
        "endpoint": "http://127.0.0.1:8765",
        "timeout_ms": 1000.0,
        "retries": 3,
        "max_payload_bytes": 1 << 20,
        "paper_literal_adjust": False,
        "injected_delay": {"enabled": True, "mean_ms": 12.054, "jitter_ms": 0.302},
    },
    "latency": {
        "clock": "virtual",
        "device_compute_ms": 20.0,
        "server_compute_ms": 4.0,
        "target_local_compute_ms": 60.0,
    },
    "run": {"mode": "adahi", "episodes": 200, "seed": 1, "shadow": True, "draft_offset": False},
}

# per-fixture overrides applied before the user's file
FIXTURE_DEFAULTS: dict[str, dict] = {
    "reach-2d": {},
    "reach-7d": {
        "quantizer": {"radial": "norm"},
        "policy": {"draft": {"temperature": 0.008}, "target": {"temperature": 0.002}},
    },
    "swarm-2d": {
        "quantizer": {"radial": "norm"},
        "policy": {"draft": {"temperature": 0.008}, "target": {"temperature": 0.002}},
        # the shared four-agent policy has a noisier deviation signal; transmit more
        "calibration": {"target_tr": 0.7},
    },
}


def merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = v
    return out


def resolve(user: dict | None = None) -> dict:
    """Defaults, then fixture defaults for the chosen env, then ``user``."""
    user = user or {}
    name = user.get("env", {}).get("name", BASE["env"]["name"])
    if name not in FIXTURE_DEFAULTS:
        raise ConfigError(f"unknown env fixture {name!r}; choose from {sorted(FIXTURE_DEFAULTS)}")
    cfg = merge(merge(BASE, FIXTURE_DEFAULTS[name]), user)
    validate(cfg)
    return cfg


def validate(cfg: dict) -> None:
    for section in BASE:
        allowed = set(BASE[section]) | (ENV_KEYS if section == "env" else set())
        extra = set(cfg.get(section, {})) - allowed
        if extra:
            raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(extra))}")
    if cfg["run"]["mode"] not in MODES:
        raise ConfigError(f"run.mode must be one of {MODES}, got {cfg['run']['mode']!r}")
    if cfg["proto"]["transport"] not in ("inproc", "http"):
        raise ConfigError("proto.transport must be 'inproc' or 'http'")
    if cfg["latency"]["clock"] not in ("virtual", "wall"):
        raise ConfigError("latency.clock must be 'virtual' or 'wall'")
    if cfg["run"]["episodes"] < 1:
        raise ConfigError("run.episodes must be >= 1")
    if cfg["calibration"]["mode"] not in MODES:
        raise ConfigError(f"calibration.mode must be one of {MODES}")


def read_user(path: str | Path | None) -> dict:
    """Raw user table from a TOML file, before defaults are layered in."""
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def load(path: str | Path | None, overrides: dict | None = None) -> dict:
    return resolve(merge(read_user(path), overrides or {}))


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
