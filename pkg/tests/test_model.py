import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from netdyn.model import (
    LeakyFlow,
    NetworkParams,
    ParamError,
    StateError,
    apply_spike,
    check_state,
    flow_at,
    random_params,
    spike_time,
    step_batch,
    validate_params,
)
from netdyn.poincare import first_spike

from conftest import networks
from oracles import leaky_rate, rk4_flow


def two(beta=(2.0, 2.0), h=0.2, gamma=(1.0, 1.0), theta=1.0):
    return NetworkParams(2, theta, gamma, beta, [[0, h], [h, 0]])


def test_symmetric_params_accepted(sym):
    assert validate_params(sym) is sym


@pytest.mark.parametrize(
    "params, message",
    [
        (lambda: two(beta=(1.0, 2.0)), "beta must exceed theta"),
        (lambda: two(h=1.0), "h equals theta"),
        (lambda: two(gamma=(0.0, 1.0)), "gamma must be positive"),
        (lambda: two(h=-0.1), "h must be positive"),
        (lambda: NetworkParams(1, 1.0, [1.0], [2.0], [[0.0]]), "n must be an integer >= 2"),
    ],
)
def test_invalid_params_rejected_with_distinct_messages(params, message):
    with pytest.raises(ParamError, match=message):
        validate_params(params())


def test_diagonal_of_h_is_ignored():
    p = NetworkParams(2, 1.0, [1, 1], [2, 2], [[5.0, 0.2], [0.2, 7.0]])
    assert p.h[0, 0] == 0.0 and p.h[1, 1] == 0.0
    validate_params(p)


def test_params_arrays_are_read_only(sym):
    with pytest.raises(ValueError):
        sym.gamma[0] = 3.0


def test_flow_identity_at_zero_time(sym):
    v = np.array([0.3, -0.7])
    assert np.array_equal(flow_at(sym, v, 0.0), v)


def test_flow_hand_value(sym):
    assert flow_at(sym, [0.0, 0.0], math.log(2))[0] == pytest.approx(1.0, abs=1e-15)


def test_flow_rejects_negative_time(sym):
    with pytest.raises(ValueError):
        flow_at(sym, [0.0, 0.0], -1e-3)


def test_flow_matches_rk4_small_sample():
    rng = np.random.default_rng(11)
    m = 100
    gamma, beta = rng.uniform(0.5, 2, m), 1 + rng.uniform(0.2, 2, m)
    v = rng.uniform(-1, 1, m)
    t = rng.uniform(0, 1, m) * np.log1p((1 - v) / (beta - 1)) / gamma
    t = np.minimum(t, 0.5)
    flow = LeakyFlow(gamma, beta)
    ref = rk4_flow(leaky_rate(gamma, beta), v, t)
    assert np.max(np.abs(flow.phi(v, t) - ref)) < 1e-8


def test_spike_time_closed_form(sym):
    assert spike_time(sym, 0, 0.0) == pytest.approx(0.6931471805599453, abs=1e-15)


def test_spike_time_vanishes_near_threshold(sym):
    times = [spike_time(sym, 1, 1.0 - 10.0**-k) for k in range(2, 12)]
    assert all(a > b > 0 for a, b in zip(times, times[1:]))
    assert times[-1] < 1e-10


@pytest.mark.parametrize("vi", [1.0, 1.5, -1.2])
def test_spike_time_rejects_bad_potentials(sym, vi):
    with pytest.raises(StateError):
        spike_time(sym, 0, vi)


def test_newton_path_agrees_with_closed_form():
    rng = np.random.default_rng(5)
    p = random_params(4, rng)
    v = rng.uniform(-1, 1, (500, 4))
    closed = p.flow.spike_times(v, p.theta)
    newton = p.flow.newton_spike_times(v, p.theta)
    assert np.max(np.abs(closed - newton)) < 1e-10


def test_apply_spike_examples(sym):
    assert np.allclose(apply_spike(sym, [1.0, 0.5], {0}), [0.0, 0.3], atol=1e-15)
    assert np.array_equal(apply_spike(sym, [1.0, -0.95], {0}), [0.0, -1.0])
    p3 = NetworkParams.symmetric(n=3, h=0.3)
    assert np.allclose(apply_spike(p3, [1.0, 1.0, 0.9], {0, 1}), [0.0, 0.0, 0.3], atol=1e-15)


def test_apply_spike_errors(sym):
    with pytest.raises(ValueError):
        apply_spike(sym, [1.0, 0.5], set())
    with pytest.raises(StateError):
        apply_spike(sym, [0.9, 0.5], {0})


def test_check_state_rejects_outside_cube(sym):
    for bad in ([1.1, 0.0], [0.0, -1.0001], [np.nan, 0.0], [0.0, 0.0, 0.0]):
        with pytest.raises(StateError):
            check_state(sym, bad)


def test_clamp_fixed_point():
    # h[0, 1] = 1.8 > theta: neuron 1 is pushed to the floor at every spike of neuron 0.
    p = NetworkParams(2, 1.0, [1.0, 1.0], [2.0, 2.0], [[0.0, 1.8], [0.2, 0.0]])
    out, win, _, _, clamped = step_batch(p, np.array([[0.0, -1.0]]))
    assert win[0].tolist() == [True, False]
    assert clamped[0, 1]
    assert np.array_equal(out[0], [0.0, -1.0])


# -- invariants -------------------------------------------------------------


@given(networks(), st.integers(0, 2**31), st.floats(0.05, 0.95))
def test_flow_monotone_and_concave(p, seed, frac):
    v = np.random.default_rng(seed).uniform(-p.theta, p.theta * 0.99, p.n)
    tbar = p.flow.spike_times(v, p.theta).min()
    ts = np.linspace(0.0, tbar, 17)
    traj = np.array([flow_at(p, v, t) for t in ts])
    assert np.all(np.diff(traj, axis=0) > 0)
    assert np.all(np.diff(traj, 2, axis=0) < 0)


@given(networks(), st.integers(0, 2**31), st.floats(0.0, 1.0))
def test_flow_semigroup(p, seed, frac):
    v = np.random.default_rng(seed).uniform(-p.theta, p.theta * 0.99, p.n)
    total = p.flow.spike_times(v, p.theta).min()
    s, t = frac * total, (1 - frac) * total
    assert np.max(np.abs(flow_at(p, flow_at(p, v, s), t) - flow_at(p, v, s + t))) < 1e-12


def test_flow_to_spike_time_stays_in_q():
    p = NetworkParams(
        4, 1.0,
        np.array([1.45617387, 1.32495071, 1.60797426, 1.50571623]),
        np.array([1.8954024, 2.89948398, 2.74782077, 1.59514062]),
        np.full((4, 4), 0.2) - 0.2 * np.eye(4),
    )
    rng = np.random.default_rng(0)
    for _ in range(200):
        v = rng.uniform(-1.0, 0.99, 4)
        out = flow_at(p, v, p.flow.spike_times(v, 1.0).min())
        assert out.max() <= 1.0
        assert np.array_equal(flow_at(p, out, 0.0), out)


@given(networks(), st.integers(0, 2**31))
def test_spike_time_reaches_threshold(p, seed):
    rng = np.random.default_rng(seed)
    i = int(rng.integers(p.n))
    vi = rng.uniform(-p.theta, p.theta * 0.999)
    t = spike_time(p, i, vi)
    assert abs(p.flow.phi(np.full(p.n, vi), t)[i] - p.theta) < 1e-12


@given(networks(), st.integers(0, 2**31))
def test_reset_stays_in_cube_and_zeroes_winners(p, seed):
    v = np.random.default_rng(seed).uniform(-p.theta, p.theta * 0.99, p.n)
    out = first_spike(p, v)
    assert all(out.pre_jump[i] == p.theta for i in out.winners)
    assert all(out.pre_jump[j] < p.theta for j in range(p.n) if j not in out.winners)
    w = apply_spike(p, out.pre_jump, out.winners)
    assert np.all(np.abs(w) <= p.theta)
    assert all(w[i] == 0.0 for i in out.winners)
