import json
import socket
import time
from pathlib import Path

import numpy as np
import pytest

from adahi.errors import ConnectionRefused, ProtocolError, SerializationError, ServerStatusError
from adahi.policy import logits, make_head, normalize, sample_codes
from adahi.proto import (
    DelayModel,
    InProcessTransport,
    VerifyClient,
    VerifyRequest,
    VerifyServer,
    client_verify,
    decode_reply,
    decode_request,
    encode_reply,
    encode_request,
    serve_verify,
)
from adahi.quantizer import QuantizerConfig, build_codebooks

from .oracles import golden_reply, golden_request

GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture(scope="module")
def cb():
    return build_codebooks(QuantizerConfig(n=2, K=8, action_dim=2, scale=0.5, decay=0.4), 5)


@pytest.fixture(scope="module")
def target():
    return make_head(2, temperature=0.05, role="target", seed=1)


@pytest.fixture(scope="module")
def draft():
    return make_head(2, temperature=0.2, gain_noise=0.3, role="draft", seed=2)


def request_for(draft, cb, seed, token=None, episode=0):
    rng = np.random.default_rng(seed)
    state, goal = rng.normal(size=2), rng.normal(size=2)
    from adahi.policy import Observation

    b = normalize(logits(draft, Observation(state, goal), cb))
    return VerifyRequest(
        episode_id=episode,
        step=seed,
        state=state,
        goal=goal,
        q_bundle=b.probs,
        draft_indices=sample_codes(b, rng),
        codebook_checksum=cb.checksum,
        rng_token=seed if token is None else token,
    )


def free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_golden_request_bytes():
    assert encode_request(golden_request()) == (GOLDEN / "request_min.json").read_bytes()


def test_golden_reply_bytes():
    assert encode_reply(golden_reply()) == (GOLDEN / "reply_min.json").read_bytes()


def test_golden_payload_decodes():
    req = decode_request((GOLDEN / "request_min.json").read_bytes())
    want = golden_request()
    assert req.to_obj() == want.to_obj()
    assert decode_reply((GOLDEN / "reply_min.json").read_bytes()) == golden_reply()


def test_encoding_is_stable(draft, cb):
    r = request_for(draft, cb, 3)
    assert encode_request(r) == encode_request(r)


def test_round_trip(draft, cb):
    r = request_for(draft, cb, 4)
    back = decode_request(encode_request(r))
    np.testing.assert_allclose(back.q_bundle, r.q_bundle, atol=1e-12, rtol=0)
    np.testing.assert_array_equal(back.state, r.state)
    assert back.draft_indices == r.draft_indices
    assert back.codebook_checksum == r.codebook_checksum


def test_non_finite_is_serialization_error():
    r = golden_request()
    bad = VerifyRequest(**{**r.__dict__, "state": np.array([np.nan, 0.0])})
    with pytest.raises(SerializationError):
        encode_request(bad)


def mutate(fn):
    obj = json.loads((GOLDEN / "request_min.json").read_bytes())
    fn(obj)
    return json.dumps(obj).encode()


@pytest.mark.parametrize(
    "change,field",
    [
        (lambda o: o["q_bundle"].__setitem__(0, [0.73, 0.25]), "q_bundle[0]"),
        (lambda o: o["draft_indices"].__setitem__(0, 3), "draft_indices[0]"),
        (lambda o: o.__setitem__("protocol_version", 2), "protocol_version"),
        (lambda o: o.pop("codebook_checksum"), "codebook_checksum"),
        (lambda o: o["observation"].__setitem__("goal", [0.0]), "observation.goal"),
        (lambda o: o.__setitem__("step", "four"), "step"),
        (lambda o: o.__setitem__("rng_token", -1), "rng_token"),
    ],
)
def test_field_level_validation(change, field):
    with pytest.raises(ProtocolError) as info:
        decode_request(mutate(change))
    assert info.value.field == field
    assert field in str(info.value)


def test_oversize_rejected_before_parse():
    with pytest.raises(ProtocolError, match="exceeds"):
        decode_request(b"{" * 100, max_size=10)
    with pytest.raises(ProtocolError):
        decode_request(b"not json")


def test_identical_bundles_accept_everything(cb, target):
    from adahi.policy import Observation

    state, goal = np.array([0.3, 0.1]), np.array([-0.2, 0.2])
    p = normalize(logits(target, Observation(state, goal), cb)).probs
    req = VerifyRequest(0, 0, state, goal, p, (0, 0), cb.checksum, rng_token=1)
    reply = serve_verify(req, target, cb)
    if all(p[i, 0] > 0 for i in range(cb.n)):
        assert reply.final_indices == (0, 0)
        assert reply.accepted_mask == (True, True)


def test_disjoint_one_hot_rejects(cb):
    # near-zero temperature makes the target effectively one-hot at its greedy code
    cold = make_head(2, temperature=1e-9)
    from adahi.policy import Observation

    state, goal = np.array([0.0, 0.0]), np.array([0.4, -0.3])
    p = normalize(logits(cold, Observation(state, goal), cb)).probs
    best = tuple(int(k) for k in p.argmax(axis=1))
    draft_idx = tuple((k + 1) % cb.K for k in best)
    q = np.zeros((cb.n, cb.K))
    q[np.arange(cb.n), draft_idx] = 1.0
    reply = serve_verify(VerifyRequest(0, 0, state, goal, q, draft_idx, cb.checksum, 3), cold, cb)
    assert reply.accepted_mask == (False, False)
    assert reply.final_indices == best


def test_checksum_mismatch_status(draft, target, cb):
    r = request_for(draft, cb, 5)
    tampered = VerifyRequest(**{**r.__dict__, "codebook_checksum": "0" * 64})
    decoded = decode_request(encode_request(tampered))  # decodes fine
    assert serve_verify(decoded, target, cb).status == "checksum_mismatch"


def test_replay_is_byte_identical(draft, target, cb):
    r = request_for(draft, cb, 6)
    a = encode_reply(serve_verify(r, target, cb, fixed_compute_micros=100))
    b = encode_reply(serve_verify(r, target, cb, fixed_compute_micros=100))
    assert a == b


def test_loopback_server(draft, target, cb):
    with VerifyServer(target, cb) as server:
        reply, rtt = client_verify(request_for(draft, cb, 7), server.url)
        assert reply.status == "ok" and rtt > 0
        health = VerifyClient(server.url).health()
        assert health["codebook_checksum"] == cb.checksum


def test_server_status_codes(draft, target, cb):
    with VerifyServer(target, cb, max_payload_bytes=2000) as server:
        r = request_for(draft, cb, 8)
        tampered = VerifyRequest(**{**r.__dict__, "codebook_checksum": "bad"})
        with pytest.raises(ServerStatusError) as info:
            VerifyClient(server.url).verify(tampered)
        assert info.value.status == "checksum_mismatch"
        code, _ = server.handle_bytes(b"x" * 3000)
        assert code == 413


def test_server_down_retries_exactly(draft, cb):
    client = VerifyClient(f"http://127.0.0.1:{free_port()}", timeout_ms=200, retries=3)
    with pytest.raises(ConnectionRefused):
        client.verify(request_for(draft, cb, 9))
    assert client.attempts == 3


def test_injected_delay(draft, target, cb):
    with VerifyServer(target, cb) as server:
        client = VerifyClient(server.url, delay=DelayModel(enabled=True))
        _, rtt = client.verify(request_for(draft, cb, 10))
        assert rtt >= 0.012


def test_delay_model_seeded():
    d = DelayModel(enabled=True)
    a = [d.sample_ms(np.random.default_rng(1)) for _ in range(2)]
    assert a[0] == a[1]
    draws = [d.sample_ms(g) for g in [np.random.default_rng(2)] for _ in range(5000)]
    assert np.mean(draws) == pytest.approx(12.054, abs=0.02)
    assert DelayModel().sample_ms(np.random.default_rng(0)) == 0.0


def test_transport_transparency(draft, target, cb):
    local = InProcessTransport(target, cb)
    with VerifyServer(target, cb) as server:
        client = VerifyClient(server.url)
        for i in range(1000):
            r = request_for(draft, cb, i, episode=i % 7)
            over, _ = client.verify(r)
            direct, _ = local.verify(r)
            assert over.content() == direct.content()
            assert serve_verify(r, target, cb).content() == direct.content()
