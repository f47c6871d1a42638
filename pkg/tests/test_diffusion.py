import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from porodiff.boundary import BoundaryGraph
from porodiff.diffusion import (
    NoiseSchedule,
    categorical_posterior,
    corrupt,
    cumulative_transition,
    edge_weights,
    estimate_priors,
    forward_geometry,
    loss_boundary,
    loss_categorical,
    loss_geo,
    mixture_posterior,
    one_hot,
    sample_terminal,
)
from porodiff.errors import ConfigError, DegenerateRow, EmptyInput, InvalidDistribution
from porodiff.pore_graph import ACTIVE, PoreGraph

from oracles import path_cumulative, path_posterior

priors = st.lists(st.floats(0.05, 1.0), min_size=2, max_size=3).map(lambda w: tuple(np.array(w) / sum(w)))


def schedule(T, pi):
    return NoiseSchedule(np.linspace(0.1, 0.4, T), pi, pi)


@given(pi=priors, T=st.integers(1, 5))
def test_transitions_are_stochastic(pi, T):
    s = schedule(T, pi)
    for t in range(1, T + 1):
        Q = s.transition("c", t)
        np.testing.assert_allclose(Q.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(Q >= 0)
        # the prior is stationary
        np.testing.assert_allclose(np.asarray(pi) @ Q, pi, atol=1e-12)


@given(pi=priors, T=st.integers(1, 5))
def test_cumulative_matches_paths(pi, T):
    s = schedule(T, pi)
    Qs = [s.transition("c", t) for t in range(1, T + 1)]
    for t in range(T + 1):
        np.testing.assert_allclose(cumulative_transition(s, "c", t), path_cumulative(Qs, t), atol=1e-12, rtol=0)


@given(pi=priors, T=st.integers(1, 5), data=st.data())
def test_posterior_matches_paths(pi, T, data):
    s = schedule(T, pi)
    K = len(pi)
    Qs = [s.transition("c", t) for t in range(1, T + 1)]
    t = data.draw(st.integers(1, T))
    for z0 in range(K):
        for zt in range(K):
            got = categorical_posterior(one_hot([zt], K), one_hot([z0], K), "c", t, s)[0]
            np.testing.assert_allclose(got, path_posterior(Qs, t, zt, z0), atol=1e-12, rtol=0)


@given(pi=priors, T=st.integers(2, 5))
def test_posterior_marginalization(pi, T):
    # sum over z_{t-1} of q(z_t | z_{t-1}) q(z_{t-1} | z0) recovers q(z_t | z0)
    s = schedule(T, pi)
    for t in range(1, T + 1):
        lhs = cumulative_transition(s, "c", t - 1) @ s.transition("c", t)
        np.testing.assert_allclose(lhs, cumulative_transition(s, "c", t), atol=1e-12)


def test_mixture_reduces_to_posterior_for_point_mass():
    s = schedule(4, (0.3, 0.7))
    zt = one_hot([0, 1, 1], 2)
    p0 = one_hot([1, 0, 1], 2)
    np.testing.assert_allclose(mixture_posterior(zt, p0, "c", 3, s), categorical_posterior(zt, p0, "c", 3, s))


def test_degenerate_posterior():
    s = NoiseSchedule([0.5], (0.5, 0.5), (0.5, 0.5), betas_c=[1.0], absorbing=True)
    # absorbing prior: z_t = active is unreachable from z0 = null at t = 1 with beta = 1
    with pytest.raises(DegenerateRow):
        categorical_posterior(one_hot([1], 2), one_hot([0], 2), "c", 1, s)


def test_schedule_validation_and_roundtrip():
    with pytest.raises(ConfigError):
        NoiseSchedule([0.0, 0.1])
    with pytest.raises(InvalidDistribution):
        NoiseSchedule([0.1], (0.2, 0.2))
    s = NoiseSchedule.linear(20, pi_c=(0.4, 0.6))
    assert NoiseSchedule.from_dict(s.to_dict()).hash() == s.hash()
    assert s.alpha_bar[0] == 1.0 and s.beta[0] == 0.0
    np.testing.assert_allclose(s.alpha_bar[1:], np.cumprod(1 - np.linspace(1e-4, 0.02, 20)))


def test_gaussian_moments():
    s = NoiseSchedule.linear(200)
    rng = np.random.default_rng(0)
    b0 = np.array([[0.3, -0.2, 0.9, 0.1]])
    for t in (1, 100, 200):
        noise = rng.standard_normal((100_000, 4))
        bt = forward_geometry(np.repeat(b0, 100_000, axis=0), t, noise, s)
        np.testing.assert_allclose(bt.mean(axis=0), np.sqrt(s.alpha_bar[t]) * b0[0], atol=0.01)
        np.testing.assert_allclose(bt.var(axis=0), 1 - s.alpha_bar[t], rtol=0.02)


def test_corrupt_keeps_null_slots_zero():
    g = PoreGraph(64, (32, 32, 32))
    g.C[:5] = ACTIVE
    g.B[:5] = 0.5
    st_ = corrupt(g, 50, NoiseSchedule.linear(100), np.random.default_rng(1))
    assert np.all(st_.state.B[5:] == 0) and np.all(st_.noise[5:] == 0)
    assert st_.state.E.shape == g.E.shape


def test_edge_weights_examples():
    w = edge_weights(np.r_[np.zeros(1000), np.ones(10)])
    assert w[-1] == 20.0 and w[0] == 1.0
    w = edge_weights(np.r_[np.zeros(1000), np.ones(100)])
    assert w[-1] == pytest.approx(10.0)


def test_losses():
    assert loss_geo(np.ones((3, 4)), np.zeros((3, 4)), [1, 1, 0]) == 4.0
    assert loss_geo(np.ones((3, 4)), np.zeros((3, 4)), [0, 0, 0]) == 0.0
    q = [[1.0, 0.0]]
    p = [[0.5, 0.5]]
    assert loss_categorical(q, p) == pytest.approx(np.log(2))
    assert loss_categorical(q, q) == 0.0
    with pytest.raises(InvalidDistribution):
        loss_categorical(q, [[0.7, 0.7]])


def test_loss_boundary_ignores_soft_edges():
    gb = BoundaryGraph.empty(64, (16, 16, 16))
    gb.mask_B[0] = gb.mask_C[0] = True
    gb.values.C[0] = ACTIVE
    gb.values.B[0] = [0.5, 0.5, 0.0, 0.2]
    gb.mask_E_soft[3] = True
    gb.values.E[3] = 1
    pC = np.tile([0.5, 0.5], (64, 1))
    pE = np.tile([1.0, 0.0], (gb.values.E.size, 1))
    B = gb.values.B.copy()
    assert loss_boundary(B, pC, pE, gb) == pytest.approx(np.log(2))


def test_priors_and_terminal():
    g = PoreGraph(64, (16, 16, 16))
    g.C[:16] = ACTIVE
    pc, pe = estimate_priors([g])
    np.testing.assert_allclose(pc, [49 / 66, 17 / 66])
    with pytest.raises(EmptyInput):
        estimate_priors([])
    s = NoiseSchedule.linear(10, pi_c=pc, pi_e=pe)
    term = sample_terminal(64, (16, 16, 16), s, np.random.default_rng(0))
    assert term.B.shape == (64, 4) and set(np.unique(term.C)) <= {0, 1}
