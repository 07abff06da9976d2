"""Device/server verification protocol.

Wire format is canonical JSON: UTF-8, compact separators, keys in the fixed
order of the dataclass fields below, floats as Python's shortest round-trip
repr.  The server exposes ``POST /verify`` and ``GET /health``.
"""
from __future__ import annotations

import json
import logging
import math
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from . import policy
from .errors import (
    ConnectionRefused,
    ProtocolError,
    SerializationError,
    ServerStatusError,
    TransportError,
    TransportTimeout,
)
from .policy import CategoricalBundle, Observation, PolicyHead
from .quantizer import CodebookSet, CodeTuple
from .specsamp import verify_tuple

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
DEFAULT_MAX_PAYLOAD = 1 << 20
PROB_TOL = 1e-6
STATUSES = ("ok", "checksum_mismatch", "malformed")
VERIFY_ROUTE = "/verify"
HEALTH_ROUTE = "/health"


@dataclass(frozen=True, eq=False)
class VerifyRequest:
    episode_id: int
    step: int
    state: np.ndarray
    goal: np.ndarray
    q_bundle: np.ndarray
    draft_indices: CodeTuple
    codebook_checksum: str
    rng_token: int | None = None
    protocol_version: int = PROTOCOL_VERSION

    @property
    def observation(self) -> Observation:
        return Observation(self.state, self.goal, self.step)

    def to_obj(self) -> dict:
        return {
            "protocol_version": int(self.protocol_version),
            "episode_id": int(self.episode_id),
            "step": int(self.step),
            "observation": {
                "state": _floats(self.state, "observation.state"),
                "goal": _floats(self.goal, "observation.goal"),
            },
            "q_bundle": [_floats(row, f"q_bundle[{i}]") for i, row in enumerate(np.atleast_2d(self.q_bundle))],
            "draft_indices": [int(i) for i in self.draft_indices],
            "codebook_checksum": str(self.codebook_checksum),
            "rng_token": None if self.rng_token is None else int(self.rng_token),
        }


@dataclass(frozen=True)
class VerifyReply:
    final_indices: CodeTuple = ()
    accepted_mask: tuple[bool, ...] = ()
    offset: tuple[float, ...] = ()
    server_compute_micros: int = 0
    status: str = "ok"
    message: str = ""

    def to_obj(self) -> dict:
        return {
            "final_indices": [int(i) for i in self.final_indices],
            "accepted_mask": [bool(b) for b in self.accepted_mask],
            "offset": _floats(self.offset, "offset"),
            "server_compute_micros": int(self.server_compute_micros),
            "status": self.status,
            "message": self.message,
        }

    def content(self) -> dict:
        """Reply fields minus timing, for transport-equivalence checks."""
        obj = self.to_obj()
        del obj["server_compute_micros"]
        return obj


def _floats(values, name: str) -> list[float]:
    out = [float(v) for v in np.asarray(values, dtype=np.float64).reshape(-1)]
    if not all(math.isfinite(v) for v in out):
        raise SerializationError(f"{name} holds a non-finite value")
    return out


def _dump(obj) -> bytes:
    try:
        return json.dumps(obj, separators=(",", ":"), allow_nan=False, ensure_ascii=False).encode("utf-8")
    except ValueError as exc:
        raise SerializationError(str(exc)) from None


def encode_request(r: VerifyRequest) -> bytes:
    return _dump(r.to_obj())


def encode_reply(r: VerifyReply) -> bytes:
    return _dump(r.to_obj())


def _require(obj: dict, key: str, kind, where: str = ""):
    name = f"{where}{key}"
    if not isinstance(obj, dict) or key not in obj:
        raise ProtocolError(f"missing field {name!r}", name)
    value = obj[key]
    if kind is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif kind is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    else:
        ok = isinstance(value, kind)
    if not ok:
        raise ProtocolError(f"field {name!r} has the wrong type", name)
    return value


def _vector(value, name: str) -> np.ndarray:
    if not isinstance(value, list) or not all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
    ):
        raise ProtocolError(f"field {name!r} must be a list of numbers", name)
    arr = np.array(value, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ProtocolError(f"field {name!r} holds a non-finite number", name)
    return arr


def _parse(data: bytes, max_size: int):
    if len(data) > max_size:
        raise ProtocolError(f"payload of {len(data)} bytes exceeds the {max_size}-byte limit", "payload")
    try:
        return json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"payload is not valid JSON: {exc}", "payload") from None


def decode_request(data: bytes, max_size: int = DEFAULT_MAX_PAYLOAD) -> VerifyRequest:
    obj = _parse(data, max_size)
    if not isinstance(obj, dict):
        raise ProtocolError("payload must be a JSON object", "payload")
    version = _require(obj, "protocol_version", int)
    if version != PROTOCOL_VERSION:
        raise ProtocolError(f"unsupported protocol_version {version}", "protocol_version")
    obs = _require(obj, "observation", dict)
    state = _vector(_require(obs, "state", list, "observation."), "observation.state")
    goal = _vector(_require(obs, "goal", list, "observation."), "observation.goal")
    if state.shape != goal.shape:
        raise ProtocolError("observation.state and observation.goal differ in length", "observation.goal")

    rows = _require(obj, "q_bundle", list)
    if not rows:
        raise ProtocolError("q_bundle is empty", "q_bundle")
    q = [_vector(row, f"q_bundle[{i}]") for i, row in enumerate(rows)]
    K = q[0].size
    for i, row in enumerate(q):
        name = f"q_bundle[{i}]"
        if row.size != K or K < 2:
            raise ProtocolError(f"{name} has {row.size} entries, expected {K} (>= 2)", name)
        if np.any(row < 0):
            raise ProtocolError(f"{name} holds a negative probability", name)
        if abs(row.sum() - 1.0) > PROB_TOL:
            raise ProtocolError(f"{name} sums to {row.sum():.9g}, not 1", name)

    idx = _require(obj, "draft_indices", list)
    if len(idx) != len(q):
        raise ProtocolError(f"draft_indices has {len(idx)} entries, q_bundle has {len(q)} rows", "draft_indices")
    for i, k in enumerate(idx):
        name = f"draft_indices[{i}]"
        if not isinstance(k, int) or isinstance(k, bool):
            raise ProtocolError(f"{name} must be an integer", name)
        if not 0 <= k < K:
            raise ProtocolError(f"{name} = {k} outside 0..{K - 1}", name)

    token = obj.get("rng_token")
    if token is not None and (not isinstance(token, int) or isinstance(token, bool) or token < 0):
        raise ProtocolError("rng_token must be a non-negative integer or null", "rng_token")

    return VerifyRequest(
        protocol_version=version,
        episode_id=_require(obj, "episode_id", int),
        step=_require(obj, "step", int),
        state=state,
        goal=goal,
        q_bundle=np.vstack(q),
        draft_indices=tuple(idx),
        codebook_checksum=_require(obj, "codebook_checksum", str),
        rng_token=token,
    )


def decode_reply(data: bytes, max_size: int = DEFAULT_MAX_PAYLOAD) -> VerifyReply:
    obj = _parse(data, max_size)
    status = _require(obj, "status", str)
    if status not in STATUSES:
        raise ProtocolError(f"unknown reply status {status!r}", "status")
    final = _require(obj, "final_indices", list)
    mask = _require(obj, "accepted_mask", list)
    if not all(isinstance(k, int) and not isinstance(k, bool) for k in final):
        raise ProtocolError("final_indices must be integers", "final_indices")
    if not all(isinstance(b, bool) for b in mask) or len(mask) != len(final):
        raise ProtocolError("accepted_mask must be booleans matching final_indices", "accepted_mask")
    return VerifyReply(
        final_indices=tuple(final),
        accepted_mask=tuple(mask),
        offset=tuple(_vector(_require(obj, "offset", list), "offset").tolist()),
        server_compute_micros=_require(obj, "server_compute_micros", int),
        status=status,
        message=obj.get("message", ""),
    )


def rng_from_token(token: int | None) -> np.random.Generator:
    return np.random.default_rng(None if token is None else np.random.SeedSequence(token))


def serve_verify(
    req: VerifyRequest,
    target: PolicyHead,
    cb: CodebookSet,
    *,
    paper_literal_adjust: bool = False,
    fixed_compute_micros: int | None = None,
) -> VerifyReply:
    """Run the target head and per-codebook speculative sampling for one request.

    ``fixed_compute_micros`` replaces the measured compute time so replies are
    byte-reproducible.
    """
    t0 = time.perf_counter()
    if req.codebook_checksum != cb.checksum:
        return VerifyReply(status="checksum_mismatch", message="codebook checksum does not match the server's")
    q = np.atleast_2d(req.q_bundle)
    if q.shape != (cb.n, cb.K) or req.state.shape != (target.gain.shape[1],):
        return VerifyReply(status="malformed", message=f"request shapes do not fit the served model ({cb.n}x{cb.K})")
    obs = req.observation
    pb = policy.normalize(policy.logits(target, obs, cb))
    # tolerate transport rounding up to PROB_TOL
    qb = CategoricalBundle(q / q.sum(axis=1, keepdims=True))
    out = verify_tuple(qb, pb, req.draft_indices, rng_from_token(req.rng_token), paper_literal_adjust)
    off = policy.offset(target, obs, cb)
    micros = fixed_compute_micros
    if micros is None:
        micros = int(round((time.perf_counter() - t0) * 1e6))
    return VerifyReply(
        final_indices=out.final,
        accepted_mask=out.accepted_mask,
        offset=tuple(float(v) for v in off),
        server_compute_micros=micros,
    )


@dataclass
class DelayModel:
    """Symmetric injected round-trip delay: normal(mean, jitter), floored at zero."""

    mean_ms: float = 12.054
    jitter_ms: float = 0.302
    enabled: bool = False

    def sample_ms(self, rng: np.random.Generator) -> float:
        if not self.enabled:
            return 0.0
        return max(0.0, float(rng.normal(self.mean_ms, self.jitter_ms)))


class VerifyServer:
    """Threaded HTTP server around :func:`serve_verify`.

    Use ``port=0`` to bind an ephemeral port; ``url`` reports the bound
    endpoint once started.
    """

    def __init__(
        self,
        target: PolicyHead,
        cb: CodebookSet,
        host: str = "127.0.0.1",
        port: int = 0,
        max_payload_bytes: int = DEFAULT_MAX_PAYLOAD,
        paper_literal_adjust: bool = False,
        fixed_compute_micros: int | None = None,
    ):
        self.target = target
        self.cb = cb
        self.max_payload_bytes = max_payload_bytes
        self.paper_literal_adjust = paper_literal_adjust
        self.fixed_compute_micros = fixed_compute_micros
        self.httpd = ThreadingHTTPServer((host, port), self._handler_class())
        self.httpd.daemon_threads = True
        self._thread: threading.Thread | None = None

    @property
    def url(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}"

    def handle_bytes(self, body: bytes) -> tuple[int, bytes]:
        try:
            req = decode_request(body, self.max_payload_bytes)
        except ProtocolError as exc:
            code = 413 if exc.field == "payload" and "exceeds" in str(exc) else 400
            return code, encode_reply(VerifyReply(status="malformed", message=str(exc)))
        reply = serve_verify(
            req,
            self.target,
            self.cb,
            paper_literal_adjust=self.paper_literal_adjust,
            fixed_compute_micros=self.fixed_compute_micros,
        )
        code = {"ok": 200, "checksum_mismatch": 409, "malformed": 400}[reply.status]
        return code, encode_reply(reply)

    def health(self) -> bytes:
        return _dump({"status": "ok", "codebook_checksum": self.cb.checksum, "protocol_version": PROTOCOL_VERSION})

    def _handler_class(self):
        server = self

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def _send(self, code: int, body: bytes) -> None:
                self.send_response(code)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def do_GET(self):
                if self.path == HEALTH_ROUTE:
                    self._send(200, server.health())
                else:
                    self._send(404, _dump({"status": "not_found"}))

            def do_POST(self):
                if self.path != VERIFY_ROUTE:
                    self._send(404, _dump({"status": "not_found"}))
                    return
                length = int(self.headers.get("Content-Length") or 0)
                if length > server.max_payload_bytes:
                    msg = f"payload of {length} bytes exceeds the {server.max_payload_bytes}-byte limit"
                    self.close_connection = True
                    self._send(413, encode_reply(VerifyReply(status="malformed", message=msg)))
                    return
                self._send(*server.handle_bytes(self.rfile.read(length)))

            def log_message(self, fmt, *args):
                log.debug("%s - " + fmt, self.address_string(), *args)

        return Handler

    def start(self) -> VerifyServer:
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self.httpd.serve_forever()

    def stop(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()
        if self._thread is not None:
            self._thread.join()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


@dataclass
class VerifyClient:
    """HTTP client for ``POST /verify``.

    ``retries`` is the total number of attempts before giving up.  With an
    enabled delay model the client sleeps for a sampled round-trip delay
    before each attempt.
    """

    endpoint: str
    timeout_ms: float = 1000.0
    retries: int = 3
    delay: DelayModel = field(default_factory=DelayModel)
    delay_rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    max_payload_bytes: int = DEFAULT_MAX_PAYLOAD
    attempts: int = 0

    def __post_init__(self):
        if self.retries < 1:
            raise ValueError("retries must be >= 1")

    def verify(self, r: VerifyRequest) -> tuple[VerifyReply, float]:
        """Send one request; returns the reply and the measured round-trip seconds."""
        body = encode_request(r)
        url = self.endpoint.rstrip("/") + VERIFY_ROUTE
        last: TransportError | None = None
        self.attempts = 0
        for _ in range(self.retries):
            self.attempts += 1
            t0 = time.perf_counter()
            injected = self.delay.sample_ms(self.delay_rng)
            if injected:
                time.sleep(injected / 1000.0)
            try:
                raw = self._post(url, body)
            except TransportError as exc:
                last = exc
                continue
            rtt = time.perf_counter() - t0
            reply = decode_reply(raw, self.max_payload_bytes)
            if reply.status != "ok":
                raise ServerStatusError(reply.message or reply.status, reply.status)
            return reply, rtt
        assert last is not None
        raise last

    def _post(self, url: str, body: bytes) -> bytes:
        req = urllib.request.Request(url, data=body, method="POST", headers={"Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(req, timeout=self.timeout_ms / 1000.0) as resp:
                return resp.read()
        except urllib.error.HTTPError as exc:
            return exc.read()
        except urllib.error.URLError as exc:
            if isinstance(exc.reason, TimeoutError) or "timed out" in str(exc.reason):
                raise TransportTimeout(f"{url}: timed out") from None
            raise ConnectionRefused(f"{url}: {exc.reason}") from None
        except (TimeoutError, ConnectionError) as exc:
            if isinstance(exc, TimeoutError):
                raise TransportTimeout(f"{url}: timed out") from None
            raise ConnectionRefused(f"{url}: {exc}") from None

    def health(self) -> dict:
        url = self.endpoint.rstrip("/") + HEALTH_ROUTE
        with urllib.request.urlopen(url, timeout=self.timeout_ms / 1000.0) as resp:
            return json.loads(resp.read())


def client_verify(r: VerifyRequest, endpoint: str, timeout_ms: float = 1000.0, retries: int = 3) -> tuple[VerifyReply, float]:
    return VerifyClient(endpoint, timeout_ms=timeout_ms, retries=retries).verify(r)


class InProcessTransport:
    """Calls :func:`serve_verify` directly, still passing through the wire codec."""

    def __init__(self, target: PolicyHead, cb: CodebookSet, paper_literal_adjust: bool = False,
                 fixed_compute_micros: int | None = None):
        self.target = target
        self.cb = cb
        self.paper_literal_adjust = paper_literal_adjust
        self.fixed_compute_micros = fixed_compute_micros

    def verify(self, r: VerifyRequest) -> tuple[VerifyReply, float]:
        t0 = time.perf_counter()
        req = decode_request(encode_request(r))
        reply = serve_verify(req, self.target, self.cb, paper_literal_adjust=self.paper_literal_adjust,
                             fixed_compute_micros=self.fixed_compute_micros)
        reply = decode_reply(encode_reply(reply))
        if reply.status != "ok":
            raise ServerStatusError(reply.message or reply.status, reply.status)
        return reply, time.perf_counter() - t0

