import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from adahi.errors import ConfigError, ContractViolation
from adahi.gate import DeviationGate, RejectionModel, deviation, predict_rejection, should_transmit, update_ema

BALL = RejectionModel("logarithmic", m=0.214, b=0.160, kappa=4.383)
KITCHEN = RejectionModel("linear", m=0.068, b=0.053)
SWARM = RejectionModel("linear", m=0.047, b=0.166)


def test_first_update_copies_action():
    g = DeviationGate(alpha=0.3).update_ema([1.5, -2.0])
    np.testing.assert_array_equal(g.ema, [1.5, -2.0])


def test_alpha_one_tracks_previous_action():
    g = DeviationGate(alpha=1.0)
    for a in ([1.0], [3.0], [-2.0]):
        update_ema(g, a)
        np.testing.assert_array_equal(g.ema, a)


def test_geometric_convergence():
    g = DeviationGate(alpha=0.25).update_ema([0.0])
    for k in range(1, 8):
        g.update_ema([1.0])
        assert g.ema[0] == pytest.approx(1.0 - 0.75**k, abs=1e-15)


def test_three_step_stream():
    # hand recursion: 1 -> 0.7*1 + 0.3*2 = 1.3 -> 0.7*1.3 + 0.3*4 = 2.11
    g = DeviationGate(alpha=0.3)
    for a in (1.0, 2.0, 4.0):
        g.update_ema([a])
    assert g.ema[0] == pytest.approx(2.11, abs=1e-12)


def test_dimension_mismatch():
    g = DeviationGate(sigma=1.0).update_ema([0.0, 0.0])
    with pytest.raises(ContractViolation):
        g.update_ema([1.0])
    with pytest.raises(ContractViolation):
        g.deviation([1.0, 2.0, 3.0])


def test_deviation_examples():
    g = DeviationGate(sigma=0.5).update_ema([1.0, 1.0])
    assert deviation(g, [1.0, 1.0]) == 0.0
    assert deviation(g, [1.3, 1.4]) == pytest.approx(1.0, abs=1e-12)


def test_deviation_errors():
    with pytest.raises(ContractViolation):
        DeviationGate(sigma=1.0).deviation([0.0])
    with pytest.raises(ConfigError):
        DeviationGate().update_ema([0.0]).deviation([1.0])


def test_deviation_matches_direct_recomputation():
    rng = np.random.default_rng(17)
    actions = rng.normal(size=(30, 3))
    g = DeviationGate(alpha=0.4, sigma=0.7)
    ema = actions[0].copy()
    g.update_ema(actions[0])
    for t in range(1, 30):
        expected = math.sqrt(sum((actions[t][i] - ema[i]) ** 2 for i in range(3))) / 0.7
        assert g.deviation(actions[t]) == pytest.approx(expected, rel=1e-12)
        ema = [0.6 * ema[i] + 0.4 * actions[t][i] for i in range(3)]
        g.update_ema(actions[t])


def test_published_models():
    assert predict_rejection(BALL, 0.0) == pytest.approx(0.160, abs=1e-12)
    assert predict_rejection(KITCHEN, 0.750) == pytest.approx(0.104, abs=1e-12)
    assert predict_rejection(SWARM, 3.276) == pytest.approx(0.320, abs=5e-4)


def test_prediction_clamped():
    assert predict_rejection(KITCHEN, 1e6) == 1.0
    assert predict_rejection(RejectionModel("linear", m=0.1, b=-0.5), 0.0) == 0.0
    out = predict_rejection(KITCHEN, np.array([0.0, 1e6]))
    np.testing.assert_allclose(out, [0.053, 1.0])


def test_model_validation():
    with pytest.raises(ConfigError):
        RejectionModel("logarithmic", m=0.1, b=0.0)
    with pytest.raises(ConfigError):
        RejectionModel("cubic", m=0.1, b=0.0)


def test_transmit_boundaries():
    g = DeviationGate(threshold=0.8)
    assert should_transmit(g, 0.8) is False
    assert should_transmit(g, 0.8000001) is True
    zero = DeviationGate(threshold=0.0)
    assert not zero.should_transmit(0.0) and zero.should_transmit(1e-12)
    never = DeviationGate(threshold=math.inf)
    assert not never.should_transmit(1e300)


def test_gate_validation():
    for kwargs in ({"alpha": 0.0}, {"alpha": 1.5}, {"sigma": 0.0}, {"threshold": -1.0}):
        with pytest.raises(ConfigError):
            DeviationGate(**kwargs)


def test_reset():
    g = DeviationGate().update_ema([1.0])
    g.reset()
    assert not g.initialized


@settings(max_examples=100, deadline=None)
@given(
    actions=arrays(np.float64, (12, 2), elements=st.floats(-10, 10)),
    scale=st.floats(0.01, 100),
    alpha=st.floats(0.05, 1.0),
)
def test_scale_consistency(actions, scale, alpha):
    base = DeviationGate(alpha=alpha, sigma=0.3, threshold=1.0)
    scaled = DeviationGate(alpha=alpha, sigma=0.3 * scale, threshold=1.0)
    base.update_ema(actions[0])
    scaled.update_ema(actions[0] * scale)
    for a in actions[1:]:
        d1, d2 = base.deviation(a), scaled.deviation(a * scale)
        assert d1 == pytest.approx(d2, rel=1e-9, abs=1e-9)
        if abs(d1 - 1.0) > 1e-9:
            assert base.should_transmit(d1) == scaled.should_transmit(d2)
        base.update_ema(a)
        scaled.update_ema(a * scale)


@settings(max_examples=100, deadline=None)
@given(stream=st.lists(st.floats(-100, 100), min_size=1, max_size=30), alpha=st.floats(0.01, 1.0))
def test_ema_convex_combination(stream, alpha):
    g = DeviationGate(alpha=alpha)
    for a in stream:
        g.update_ema([a])
        assert min(stream) - 1e-9 <= g.ema[0] <= max(stream) + 1e-9


@settings(max_examples=100, deadline=None)
@given(a=st.floats(0, 50), b=st.floats(0, 50), th=st.floats(0, 50))
def test_transmit_monotone(a, b, th):
    g = DeviationGate(threshold=th)
    lo, hi = sorted((a, b))
    assert g.should_transmit(lo) <= g.should_transmit(hi)


@settings(max_examples=100, deadline=None)
@given(
    m=st.floats(1e-3, 5), b=st.floats(-1, 1), kappa=st.floats(0.01, 100),
    d1=st.floats(0, 100), d2=st.floats(0, 100),
)
def test_prediction_monotone(m, b, kappa, d1, d2):
    lo, hi = sorted((d1, d2))
    for model in (RejectionModel("linear", m, b), RejectionModel("logarithmic", m, b, kappa)):
        assert predict_rejection(model, lo) <= predict_rejection(model, hi)
