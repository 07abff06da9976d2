"""Residual-quantized latent action space.

A :class:`CodebookSet` holds ``n`` ordered codebooks of ``K`` latent vectors
each plus an affine decoder ``W @ z + c`` into action space.  Actions are
encoded greedily stage by stage on the residual and decoded as the decoder
applied to the sum of the selected entries.

Code tuples are plain tuples of 0-based indices, one per codebook.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractViolation

CodeTuple = tuple[int, ...]

FIXTURE_MAGIC = b"ADAHICB\x00"
FIXTURE_VERSION = 1
_HEADER = struct.Struct("<IIIIIQ")  # version, n, K, D, d, seed


@dataclass(frozen=True)
class QuantizerConfig:
    n: int = 2
    K: int = 16
    action_dim: int = 2
    latent_dim: int | None = None  # defaults to action_dim
    scale: float = 1.0
    decay: float = 0.5
    include_zero: bool = True
    decoder_noise: float = 0.1
    bias_scale: float = 0.0
    radial: str = "volume"

    def validate(self) -> None:
        if self.n < 1:
            raise ConfigError(f"quantizer.n must be >= 1, got {self.n}")
        if self.K < 2:
            raise ConfigError(f"quantizer.K must be >= 2, got {self.K}")
        if self.action_dim < 1:
            raise ConfigError("quantizer.action_dim must be >= 1")
        if self.latent_dim is not None and self.latent_dim < self.action_dim:
            raise ConfigError("latent_dim must be >= action_dim so the decoder has full row rank")
        if not self.scale > 0:
            raise ConfigError(f"quantizer.scale must be positive, got {self.scale}")
        if not 0 < self.decay < 1:
            raise ConfigError(f"quantizer.decay must lie in (0, 1), got {self.decay}")
        if self.radial not in ("volume", "norm"):
            raise ConfigError(f"quantizer.radial must be 'volume' or 'norm', got {self.radial!r}")
        if self.decoder_noise < 0 or self.bias_scale < 0:
            raise ConfigError("decoder_noise and bias_scale must be non-negative")


@dataclass(frozen=True, eq=False)
class CodebookSet:
    """Immutable codebooks ``entries[l, k]`` (shape ``(n, K, D)``) and decoder ``(W, c)``."""

    entries: np.ndarray
    W: np.ndarray
    c: np.ndarray
    seed: int = 0
    _pinv: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        entries = np.array(self.entries, dtype=np.float64)
        W = np.atleast_2d(np.array(self.W, dtype=np.float64))
        c = np.array(self.c, dtype=np.float64).reshape(-1)
        if entries.ndim != 3:
            raise ContractViolation(f"entries must have shape (n, K, D), got {entries.shape}")
        n, K, D = entries.shape
        if n < 1 or K < 2:
            raise ContractViolation(f"need n >= 1 and K >= 2, got n={n}, K={K}")
        if W.shape[1] != D:
            raise ContractViolation(f"decoder W has {W.shape[1]} columns, latent dimension is {D}")
        if c.shape != (W.shape[0],):
            raise ContractViolation(f"decoder bias has shape {c.shape}, expected ({W.shape[0]},)")
        if np.linalg.matrix_rank(W) < W.shape[0]:
            raise ContractViolation("decoder W must have full row rank")
        for arr in (entries, W, c):
            arr.setflags(write=False)
        pinv = np.linalg.pinv(W)
        pinv.setflags(write=False)
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "_pinv", pinv)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @property
    def K(self) -> int:
        return self.entries.shape[1]

    @property
    def D(self) -> int:
        return self.entries.shape[2]

    @property
    def d(self) -> int:
        return self.W.shape[0]

    def payload_bytes(self) -> bytes:
        le = np.dtype("<f8")
        return b"".join(a.astype(le).tobytes() for a in (self.entries, self.W, self.c))

    @cached_property
    def checksum(self) -> str:
        """SHA-256 over the shape header and little-endian float payload."""
        h = hashlib.sha256()
        h.update(struct.pack("<IIII", self.n, self.K, self.D, self.d))
        h.update(self.payload_bytes())
        return h.hexdigest()

    def lift(self, a: np.ndarray) -> np.ndarray:
        """Map an action into latent space with the decoder's pseudo-inverse."""
        a = np.asarray(a, dtype=np.float64)
        if a.shape != (self.d,):
            raise ContractViolation(f"action has shape {a.shape}, expected ({self.d},)")
        return self._pinv @ (a - self.c)

    def check_codes(self, t) -> CodeTuple:
        t = tuple(int(i) for i in t)
        if len(t) != self.n:
            raise ContractViolation(f"code tuple has length {len(t)}, expected {self.n}")
        for stage, idx in enumerate(t):
            if not 0 <= idx < self.K:
                raise ContractViolation(f"index {idx} at codebook {stage} outside 0..{self.K - 1}")
        return t


def build_codebooks(cfg: QuantizerConfig, rng_seed: int) -> CodebookSet:
    """Seeded random codebooks whose mean entry norm decays as ``scale * decay**l``.

    Each stage draws uniform directions with radii either uniform in volume
    (``radial="volume"``, uniform in the unit ball) or uniform in norm
    (``radial="norm"``, which keeps small corrections expressible in higher
    dimensions).  The stage is then rescaled so the mean norm of its non-zero
    entries is exactly the stage scale.  With
    ``include_zero`` the first entry of every codebook is the zero vector.
    """
    cfg.validate()
    D = cfg.latent_dim or cfg.action_dim
    d = cfg.action_dim
    rng = np.random.default_rng(rng_seed)

    if D == d:
        W = np.eye(d) + cfg.decoder_noise * rng.standard_normal((d, D))
    else:
        W = rng.standard_normal((d, D)) / np.sqrt(D)
    if np.linalg.matrix_rank(W) < d:  # measure-zero event
        raise ConfigError(f"seed {rng_seed} produced a rank-deficient decoder")
    c = cfg.bias_scale * rng.standard_normal(d)

    entries = np.zeros((cfg.n, cfg.K, D))
    first = 1 if cfg.include_zero else 0
    m = cfg.K - first
    for stage in range(cfg.n):
        dirs = rng.standard_normal((m, D))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        radii = rng.random(m)
        if cfg.radial == "volume":
            radii = radii ** (1.0 / D)
        pts = dirs * radii[:, None]
        target = cfg.scale * cfg.decay**stage
        pts *= target / np.linalg.norm(pts, axis=1).mean()
        entries[stage, first:] = pts
    return CodebookSet(entries=entries, W=W, c=c, seed=int(rng_seed))


def residual_path(z: np.ndarray, cb: CodebookSet) -> tuple[CodeTuple, np.ndarray]:
    """Greedy residual quantization of a latent vector.

    Returns the chosen indices and an ``(n, D)`` array whose row ``l`` is the
    residual entering stage ``l``.  Ties go to the lowest index.
    """
    r = np.array(z, dtype=np.float64)
    residuals = np.empty((cb.n, cb.D))
    chosen = []
    for stage in range(cb.n):
        residuals[stage] = r
        dist = np.sum((cb.entries[stage] - r) ** 2, axis=1)
        k = int(np.argmin(dist))
        chosen.append(k)
        r = r - cb.entries[stage, k]
    return tuple(chosen), residuals


def encode_residual(a, cb: CodebookSet) -> CodeTuple:
    """Encode a continuous action to the greedy residual code tuple."""
    return residual_path(cb.lift(a), cb)[0]


def latent_sum(t, cb: CodebookSet) -> np.ndarray:
    t = cb.check_codes(t)
    return cb.entries[np.arange(cb.n), list(t)].sum(axis=0)


def decode(t, cb: CodebookSet) -> np.ndarray:
    """Decoded action ``W @ sum(entries[l][t_l]) + c``."""
    return cb.W @ latent_sum(t, cb) + cb.c


def save_codebooks(cb: CodebookSet, path: str | Path) -> None:
    """Write the fixture file: magic, header, SHA-256 digest, float64 payload."""
    header = _HEADER.pack(FIXTURE_VERSION, cb.n, cb.K, cb.D, cb.d, cb.seed)
    digest = bytes.fromhex(cb.checksum)
    Path(path).write_bytes(FIXTURE_MAGIC + header + digest + cb.payload_bytes())


def load_codebooks(path: str | Path) -> CodebookSet:
    raw = Path(path).read_bytes()
    if not raw.startswith(FIXTURE_MAGIC):
        raise ConfigError(f"{path}: not a codebook fixture file")
    off = len(FIXTURE_MAGIC)
    version, n, K, D, d, seed = _HEADER.unpack_from(raw, off)
    if version != FIXTURE_VERSION:
        raise ConfigError(f"{path}: unsupported codebook fixture version {version}")
    off += _HEADER.size
    digest = raw[off:off + 32].hex()
    off += 32
    floats = np.frombuffer(raw[off:], dtype="<f8")
    sizes = (n * K * D, d * D, d)
    if floats.size != sum(sizes):
        raise ConfigError(f"{path}: payload holds {floats.size} floats, header implies {sum(sizes)}")
    entries = floats[: sizes[0]].reshape(n, K, D)
    W = floats[sizes[0]: sizes[0] + sizes[1]].reshape(d, D)
    c = floats[sizes[0] + sizes[1]:]
    cb = CodebookSet(entries=entries, W=W, c=c, seed=seed)
    if cb.checksum != digest:
        raise ConfigError(f"{path}: checksum mismatch, fixture has drifted")
    return cb
