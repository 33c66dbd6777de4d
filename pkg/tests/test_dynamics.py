"""Tests for the step engine, social mixing policies, and trajectories."""

import logging

import numpy as np
import pytest

from gmop import (
    AgentState,
    GaussianMixtureBelief,
    InvalidParameterError,
    ObservationModel,
    PolicyConfig,
    SocialGraph,
    TrajectoryRecord,
    bayes_update,
    build_system_matrices,
    draw_observation,
    sigma_fixed_point,
    simulate,
    social_step_means,
    social_step_variances,
    social_step_weights,
    step,
)
from gmop.dynamics import VARIANCE_FLOOR


def rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


def two_node_graph(w: float = 1.0) -> SocialGraph:
    return SocialGraph.from_edges(2, [(1, 2, w), (2, 1, w)])


def empty_graph(n: int) -> SocialGraph:
    return SocialGraph(n=n, weights=np.zeros((n, n)))


def plain_policy(**overrides) -> PolicyConfig:
    base = dict(delta_mu=0.6, delta_sigma=0.1, nu=0.1, weight_policy="identity")
    base.update(overrides)
    return PolicyConfig(**base)


def uniform_states(means_rows, variance=1.0) -> list[AgentState]:
    states = []
    for row in means_rows:
        row = np.atleast_1d(np.asarray(row, dtype=float))
        m = row.size
        belief = GaussianMixtureBelief.from_arrays(
            row, np.full(m, variance), np.full(m, 1.0 / m)
        )
        states.append(AgentState(belief=belief, stubborn=False, stubborn_value=0.0))
    return states


# ---------------------------------------------------------------------------
# observation draws


def test_draw_observation_degenerate_noise_hugs_theta():
    obs = ObservationModel(theta=2.0, sigma_y=1e-12)
    r = rng(1003)
    draws = np.array([draw_observation(obs, r) for _ in range(1000)])
    assert np.max(np.abs(draws - 2.0)) < 1e-5


def test_draw_observation_sample_mean():
    obs = ObservationModel(theta=1.0, sigma_y=0.1)
    r = rng(1001)
    draws = np.array([draw_observation(obs, r) for _ in range(100_000)])
    assert draws.mean() == pytest.approx(1.0, abs=0.004)


def test_draw_observation_sample_variance():
    obs = ObservationModel(theta=0.0, sigma_y=1.0)
    r = rng(1002)
    draws = np.array([draw_observation(obs, r) for _ in range(100_000)])
    assert draws.var(ddof=1) == pytest.approx(1.0, abs=0.015)


# ---------------------------------------------------------------------------
# social mixing: means


def test_social_means_consensus_is_fixed_point():
    g = two_node_graph(0.7)
    out = social_step_means(np.array([1.3, 1.3]), g, delta_mu=0.6)
    np.testing.assert_allclose(out, [1.3, 1.3], atol=1e-15)


def test_social_means_hand_example():
    out = social_step_means(np.array([0.0, 1.0]), two_node_graph(1.0), delta_mu=0.6)
    np.testing.assert_allclose(out, [0.6, 0.4], atol=1e-15)


def test_social_means_modes_mix_independently():
    g = two_node_graph(1.0)
    stacked = np.array([[0.0, 5.0], [1.0, 7.0]])
    out = social_step_means(stacked, g, delta_mu=0.6)
    col0 = social_step_means(stacked[:, 0], g, delta_mu=0.6)
    col1 = social_step_means(stacked[:, 1], g, delta_mu=0.6)
    np.testing.assert_allclose(out[:, 0], col0, atol=0.0)
    np.testing.assert_allclose(out[:, 1], col1, atol=0.0)


def test_social_means_only_in_neighbors_count():
    g = SocialGraph.from_edges(2, [(1, 2, 1.0)])  # 1 influences 2, not back
    out = social_step_means(np.array([0.0, 1.0]), g, delta_mu=0.5)
    np.testing.assert_allclose(out, [0.0, 0.5], atol=1e-15)


def test_social_means_rejects_wrong_row_count():
    with pytest.raises(InvalidParameterError):
        social_step_means(np.zeros(3), two_node_graph(), delta_mu=0.5)


# ---------------------------------------------------------------------------
# social mixing: variances


def test_social_variances_consensus_gains_nu():
    g = two_node_graph(0.4)
    out = social_step_variances(np.array([2.0, 2.0]), g, delta_sigma=0.1, nu=0.1)
    np.testing.assert_allclose(out, [2.1, 2.1], atol=1e-15)


def test_social_variances_consensus_zero_nu_unchanged():
    g = two_node_graph(0.4)
    out = social_step_variances(np.array([2.0, 2.0]), g, delta_sigma=0.1, nu=0.0)
    np.testing.assert_allclose(out, [2.0, 2.0], atol=1e-15)


def test_social_variances_hand_example():
    out = social_step_variances(
        np.array([1.0, 2.0]), two_node_graph(1.0), delta_sigma=0.1, nu=0.1
    )
    np.testing.assert_allclose(out, [1.2, 2.0], atol=1e-15)


def test_social_variances_clamp_logged(caplog):
    with caplog.at_level(logging.WARNING, logger="gmop.dynamics"):
        out = social_step_variances(
            np.array([0.001, 10.0]), two_node_graph(1.0), delta_sigma=5.0, nu=0.0
        )
    assert out[1] == VARIANCE_FLOOR
    assert np.all(out > 0.0)
    assert any("clamped" in r.message for r in caplog.records)


# ---------------------------------------------------------------------------
# social mixing: weights


def test_weight_identity_policy_returns_input():
    g = two_node_graph(1.0)
    weights = np.array([[0.3, 0.7], [0.9, 0.1]])
    out = social_step_weights(weights, g, plain_policy())
    np.testing.assert_array_equal(out, weights)
    assert out is not weights  # caller's array must stay untouched


def test_weight_geometric_shared_vector_is_fixed_point():
    g = two_node_graph(0.8)
    weights = np.array([[0.3, 0.7], [0.3, 0.7]])
    out = social_step_weights(weights, g, plain_policy(weight_policy="geometric"))
    np.testing.assert_allclose(out, weights, atol=1e-15)


def test_weight_geometric_hand_example():
    # Single edge 1 -> 2 with weight 1: agent 2 copies agent 1's ratios.
    g = SocialGraph.from_edges(2, [(1, 2, 1.0)])
    weights = np.array([[0.5, 0.5], [0.9, 0.1]])
    out = social_step_weights(weights, g, plain_policy(weight_policy="geometric"))
    np.testing.assert_allclose(out[1], [0.5, 0.5], atol=1e-12)
    np.testing.assert_allclose(out[0], [0.5, 0.5], atol=1e-15)


def test_weight_geometric_survives_exact_zero():
    g = two_node_graph(1.0)
    weights = np.array([[1.0, 0.0], [0.5, 0.5]])
    out = social_step_weights(weights, g, plain_policy(weight_policy="geometric"))
    sums = out.sum(axis=1)
    np.testing.assert_allclose(sums, [1.0, 1.0], atol=1e-12)
    assert np.all(out >= 0.0)


def test_policy_config_validation():
    with pytest.raises(InvalidParameterError):
        plain_policy(delta_mu=0.0)
    with pytest.raises(InvalidParameterError):
        plain_policy(nu=-0.1)
    with pytest.raises(InvalidParameterError):
        plain_policy(delta_sigma=-0.1)
    with pytest.raises(InvalidParameterError):
        plain_policy(weight_policy="other")


# ---------------------------------------------------------------------------
# single step


def test_step_empty_graph_reduces_to_per_agent_filtering():
    g = empty_graph(3)
    states = uniform_states([[0.0, 2.0], [1.0, -1.0], [0.5, 0.5]])
    policy = plain_policy(nu=0.0, delta_sigma=0.0)
    obs = ObservationModel(theta=1.0, sigma_y=0.5)
    new_states, y = step(states, g, policy, obs, rng(42))
    for before, after in zip(states, new_states):
        expected, _ = bayes_update(before.belief, y, 0.5)
        np.testing.assert_allclose(after.belief.means, expected.means, atol=1e-15)
        np.testing.assert_allclose(
            after.belief.variances, expected.variances, atol=1e-15
        )
        np.testing.assert_allclose(
            after.belief.weights, expected.weights, atol=1e-15
        )


def test_step_stubborn_means_pinned():
    g = two_node_graph(1.0)
    states = uniform_states([[0.4, -0.6], [1.0, 0.0]])
    states[0] = AgentState(
        belief=states[0].belief, stubborn=True, stubborn_value=-1.0
    )
    new_states, _ = step(
        states, g, plain_policy(), ObservationModel(theta=1.0, sigma_y=0.1), rng(5)
    )
    assert new_states[0].belief.means == (-1.0, -1.0)
    assert new_states[0].stubborn
    # Stubbornness pins means only; variances still move.
    assert new_states[0].belief.variances != states[0].belief.variances


def test_step_matches_linear_system_in_steady_mode():
    g = two_node_graph(0.5)
    theta, sigma_y, nu, delta_mu = 1.0, 0.1, 0.1, 0.6
    si = sigma_fixed_point(nu, sigma_y)
    mu0 = np.array([0.3, -0.8])
    states = uniform_states([[m] for m in mu0], variance=si)
    new_states, y = step(
        states,
        g,
        plain_policy(delta_mu=delta_mu, nu=nu),
        ObservationModel(theta=theta, sigma_y=sigma_y),
        rng(0),
        gain_mode="steady",
        sigma_inf=si,
        noise_free=True,
    )
    assert y == theta
    mats = build_system_matrices(g, delta_mu, si, sigma_y)
    expected = mats.A @ mu0 + mats.B @ np.full(2, theta)
    got = np.array([s.belief.means[0] for s in new_states])
    np.testing.assert_allclose(got, expected, atol=1e-12)


def test_step_rejects_state_count_mismatch():
    with pytest.raises(InvalidParameterError):
        step(
            uniform_states([[0.0]]),
            two_node_graph(),
            plain_policy(),
            ObservationModel(theta=1.0, sigma_y=0.1),
            rng(0),
        )


# ---------------------------------------------------------------------------
# full runs


def test_simulate_single_step_shapes():
    g = two_node_graph(0.5)
    rec = simulate(
        uniform_states([[0.0, 1.0], [1.0, 0.0]]),
        g,
        plain_policy(),
        ObservationModel(theta=1.0, sigma_y=0.1),
        horizon=1,
        rng=rng(1),
    )
    assert rec.n_steps == 1
    assert rec.n_agents == 2
    assert rec.n_modes == 2
    assert rec.observations.shape == (1,)
    assert rec.observation_for(1, 1) == rec.observation_for(1, 2)


def test_simulate_rejects_zero_horizon():
    with pytest.raises(InvalidParameterError):
        simulate(
            uniform_states([[0.0], [1.0]]),
            two_node_graph(),
            plain_policy(),
            ObservationModel(theta=1.0, sigma_y=0.1),
            horizon=0,
            rng=rng(1),
        )


def test_simulate_identical_seeds_identical_records():
    g = two_node_graph(0.5)

    def run():
        return simulate(
            uniform_states([[0.0, 1.0], [1.0, 0.0]]),
            g,
            plain_policy(),
            ObservationModel(theta=1.0, sigma_y=0.1),
            horizon=50,
            rng=rng(77),
        )

    a, b = run(), run()
    np.testing.assert_array_equal(a.means, b.means)
    np.testing.assert_array_equal(a.variances, b.variances)
    np.testing.assert_array_equal(a.weights, b.weights)
    np.testing.assert_array_equal(a.observations, b.observations)


def test_simulate_mode_permutation_equivariance():
    g = two_node_graph(0.5)
    obs = ObservationModel(theta=1.0, sigma_y=0.1)
    rows = [[0.2, -0.7], [0.9, 0.1]]
    direct = simulate(
        uniform_states(rows), g, plain_policy(), obs, horizon=30, rng=rng(3)
    )
    swapped = simulate(
        uniform_states([r[::-1] for r in rows]),
        g,
        plain_policy(),
        obs,
        horizon=30,
        rng=rng(3),
    )
    np.testing.assert_allclose(swapped.means, direct.means[:, :, ::-1], atol=0.0)
    np.testing.assert_allclose(
        swapped.variances, direct.variances[:, :, ::-1], atol=0.0
    )


def test_simulate_simplex_holds_under_both_policies():
    g = two_node_graph(0.5)
    obs = ObservationModel(theta=1.0, sigma_y=0.1)
    for policy_name in ("identity", "geometric"):
        rec = simulate(
            uniform_states([[0.2, -0.7], [0.9, 0.1]]),
            g,
            plain_policy(weight_policy=policy_name),
            obs,
            horizon=200,
            rng=rng(4),
        )
        sums = rec.weights.sum(axis=2)
        assert np.max(np.abs(sums - 1.0)) <= 1e-10
        rec.validate()


def test_simulate_stubborn_means_pinned_every_step():
    g = two_node_graph(0.5)
    states = uniform_states([[0.4, -0.6], [1.0, 0.0]])
    states[0] = AgentState(
        belief=states[0].belief, stubborn=True, stubborn_value=-1.0
    )
    rec = simulate(
        states,
        g,
        plain_policy(),
        ObservationModel(theta=1.0, sigma_y=0.1),
        horizon=100,
        rng=rng(6),
    )
    np.testing.assert_array_equal(rec.means[:, 0, :], -1.0)


def test_simulate_counts_variance_clamps():
    g = two_node_graph(1.0)
    # Hugely unequal spreads plus an aggressive mixing rate drive the wide
    # agent's variance negative before the clamp.
    states = [
        AgentState(
            belief=GaussianMixtureBelief.from_arrays([0.0], [1e-4], [1.0]),
            stubborn=False,
            stubborn_value=0.0,
        ),
        AgentState(
            belief=GaussianMixtureBelief.from_arrays([1.0], [10.0], [1.0]),
            stubborn=False,
            stubborn_value=0.0,
        ),
    ]
    rec = simulate(
        states,
        g,
        plain_policy(delta_sigma=5.0, nu=0.0),
        ObservationModel(theta=1.0, sigma_y=10.0),
        horizon=5,
        rng=rng(8),
    )
    assert rec.stats.variance_clamps > 0


def test_simulate_independent_observations_shape():
    g = two_node_graph(0.5)
    rec = simulate(
        uniform_states([[0.0], [1.0]]),
        g,
        plain_policy(),
        ObservationModel(theta=1.0, sigma_y=0.1),
        horizon=7,
        rng=rng(9),
        observation="independent",
    )
    assert rec.observations.shape == (7, 2)
    assert rec.observation_for(1, 1) != rec.observation_for(1, 2)


def test_simulate_retains_post_bayes_intermediates_on_request():
    g = two_node_graph(0.5)
    rec = simulate(
        uniform_states([[0.0], [1.0]]),
        g,
        plain_policy(),
        ObservationModel(theta=1.0, sigma_y=0.1),
        horizon=3,
        rng=rng(10),
        retain_intermediate=True,
    )
    assert rec.post_means is not None
    assert rec.post_means.shape == rec.means.shape
    # The social mean step applied to the retained intermediates reproduces
    # the recorded post-social means.
    for k in range(rec.n_steps):
        mixed = social_step_means(rec.post_means[k], g, delta_mu=0.6)
        np.testing.assert_allclose(rec.means[k], mixed, atol=1e-12)


# ---------------------------------------------------------------------------
# trailing statistics and serialization


def test_trailing_means_window_math():
    means = np.arange(12, dtype=float).reshape(3, 2, 2)
    rec = TrajectoryRecord(
        means=means,
        variances=np.ones_like(means),
        weights=np.full_like(means, 0.5),
        observations=np.zeros(3),
    )
    np.testing.assert_allclose(rec.trailing_means(2), means[-2:].mean(axis=0))
    np.testing.assert_allclose(rec.trailing_means(1), means[-1])
    mixture = rec.trailing_mixture_means(2)
    expected = (0.5 * means[-2:]).sum(axis=2).mean(axis=0)
    np.testing.assert_allclose(mixture, expected)
    with pytest.raises(InvalidParameterError):
        rec.trailing_means(4)
    with pytest.raises(InvalidParameterError):
        rec.trailing_means(0)


def test_validate_rejects_broken_simplex():
    means = np.zeros((2, 2, 2))
    rec = TrajectoryRecord(
        means=means,
        variances=np.ones_like(means),
        weights=np.full_like(means, 0.5),
        observations=np.zeros(2),
    )
    rec.validate()
    rec.weights[0, 0, 0] = 0.9
    with pytest.raises(InvalidParameterError):
        rec.validate()


def test_trajectory_csv_round_trip(tmp_path):
    g = two_node_graph(0.5)
    rec = simulate(
        uniform_states([[0.2, -0.7], [0.9, 0.1]]),
        g,
        plain_policy(),
        ObservationModel(theta=1.0, sigma_y=0.1),
        horizon=20,
        rng=rng(12),
    )
    path = tmp_path / "trajectory.csv"
    rec.to_csv(path)
    loaded = TrajectoryRecord.from_csv(path)
    np.testing.assert_array_equal(loaded.means, rec.means)
    np.testing.assert_array_equal(loaded.variances, rec.variances)
    np.testing.assert_array_equal(loaded.weights, rec.weights)
    np.testing.assert_array_equal(loaded.observations, rec.observations)


def test_trajectory_csv_round_trip_independent_observations(tmp_path):
    g = two_node_graph(0.5)
    rec = simulate(
        uniform_states([[0.2], [0.9]]),
        g,
        plain_policy(),
        ObservationModel(theta=1.0, sigma_y=0.1),
        horizon=5,
        rng=rng(13),
        observation="independent",
    )
    path = tmp_path / "trajectory.csv"
    rec.to_csv(path)
    loaded = TrajectoryRecord.from_csv(path)
    assert loaded.observations.shape == (5, 2)
    np.testing.assert_array_equal(loaded.observations, rec.observations)


def test_trajectory_csv_rejects_malformed_files(tmp_path):
    bad_header = tmp_path / "bad_header.csv"
    bad_header.write_text("a,b,c\n")
    with pytest.raises(InvalidParameterError):
        TrajectoryRecord.from_csv(bad_header)

    empty = tmp_path / "empty.csv"
    empty.write_text("k,agent,mode,mu,sigma,alpha,y\n")
    with pytest.raises(InvalidParameterError):
        TrajectoryRecord.from_csv(empty)

    gappy = tmp_path / "gappy.csv"
    gappy.write_text(
        "k,agent,mode,mu,sigma,alpha,y\n"
        "1,1,1,0.0,1.0,1.0,0.5\n"
        "1,2,2,0.0,1.0,1.0,0.5\n"  # (1,1,2) and (1,2,1) cells missing
    )
    with pytest.raises(InvalidParameterError):
        TrajectoryRecord.from_csv(gappy)
