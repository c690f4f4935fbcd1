"""Unit tests for beliefs, likelihoods, the Bayesian/MAP/OLS estimators and
the update schedules.  Numeric oracles are hand-computed closed forms."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from beliefplay import games
from beliefplay.param_belief import (
    NEG_INF,
    Belief,
    ContractViolation,
    ImpossibleObservation,
    ObservationBatch,
    OlsState,
    ParameterSpace,
    Unidentifiable,
    UpdateSchedule,
    batch_log_likelihoods,
    bayes_update,
    log_likelihood,
    map_update,
    next_update_stage,
    ols_ingest,
    ols_solve,
)


# ---------------------------------------------------------------------------
# ParameterSpace / Belief basics


def test_parameter_space_validation():
    with pytest.raises(ContractViolation):
        ParameterSpace(params=(), true_index=0)
    with pytest.raises(ContractViolation):
        ParameterSpace(params=((1.0,), (1.0, 2.0)), true_index=0)
    with pytest.raises(ContractViolation):
        ParameterSpace(params=((1.0,), (2.0,)), true_index=5)
    with pytest.raises(ContractViolation):
        ParameterSpace(params=((1.0,), (1.0,)), true_index=0)
    sp = ParameterSpace(params=((1.0, 2.0), (3.0, 4.0)), true_index=1)
    assert len(sp) == 2 and sp.dim == 2
    assert np.array_equal(sp.as_array(), [[1.0, 2.0], [3.0, 4.0]])


def test_belief_normalization_and_support():
    b = Belief.from_probs([2.0, 2.0])
    assert np.allclose(b.probs, [0.5, 0.5])
    b = Belief.from_probs([0.0, 1.0, 3.0])
    assert b.log_probs[0] == NEG_INF
    assert b.support == (1, 2)
    assert not b.full_support()
    assert Belief.uniform(4).full_support()
    pm = Belief.point_mass(3, 1)
    assert np.array_equal(pm.probs, [0.0, 1.0, 0.0])


def test_belief_rejects_bad_input():
    with pytest.raises(ContractViolation):
        Belief.from_probs([-0.1, 1.1])
    with pytest.raises(ContractViolation):
        Belief.from_probs([0.0, 0.0])
    with pytest.raises(ContractViolation):
        Belief((0.0, float("nan")))
    with pytest.raises(ContractViolation):
        Belief((0.0, float("inf")))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(min_value=1e-6, max_value=1e6), min_size=1,
                max_size=6))
def test_belief_probs_sum_to_one(weights):
    b = Belief.from_probs(weights)
    assert math.isclose(float(b.probs.sum()), 1.0, abs_tol=1e-12)


# ---------------------------------------------------------------------------
# Likelihood oracles


def test_gaussian_loglik_at_the_mean(cournot_game):
    # sigma^2 = 0.5, peak density log value is -0.5*log(2*pi*0.5) = -0.5*log(pi)
    q = np.asarray([2.0 / 3.0, 2.0 / 3.0])
    mu = cournot_game.channel_means(0, q)[0]
    val = log_likelihood(cournot_game.space, 0, cournot_game, q, np.asarray([mu]))
    assert math.isclose(val, -0.5 * math.log(math.pi), rel_tol=0, abs_tol=1e-14)


def test_gaussian_loglik_quadratic_falloff(investment_game):
    q = np.asarray([0.5, 0.5])
    mu = investment_game.channel_means(1, q)[0]
    sig = investment_game.channel_sigmas(1)[0]
    at_mu = log_likelihood(investment_game.space, 1, investment_game, q,
                           np.asarray([mu]))
    off = log_likelihood(investment_game.space, 1, investment_game, q,
                         np.asarray([mu + 2.0]))
    assert math.isclose(at_mu - off, 0.5 * (2.0 / sig) ** 2, abs_tol=1e-13)


def test_loglik_dimension_checks(cournot_game):
    with pytest.raises(ContractViolation):
        log_likelihood(cournot_game.space, 0, cournot_game, np.ones(2),
                       np.ones(2))
    with pytest.raises(ContractViolation):
        log_likelihood(cournot_game.space, 9, cournot_game, np.ones(2),
                       np.ones(1))


def test_degenerate_channel_atom():
    game = games.two_route_congestion(sigma=0.0)
    q = np.asarray([1.0, 0.0, 0.0, 1.0])
    mu = game.channel_means(0, q)
    exact = log_likelihood(game.space, 0, game, q, mu)
    assert exact == 0.0
    off = np.array(mu, copy=True)
    off[0] += 1e-9
    assert log_likelihood(game.space, 0, game, q, off) == NEG_INF


def test_bayes_hand_posterior(cournot_game):
    # prior (1/2, 1/2), q = (2/3, 2/3), observed price c = 2/3 (the mean under
    # s1).  Log-likelihood gap is 4/9, so theta'(s1) = 1 / (1 + e^{-4/9}).
    batch = ObservationBatch()
    batch.append([2.0 / 3.0, 2.0 / 3.0], [2.0 / 3.0])
    post = bayes_update(Belief.uniform(2), batch, cournot_game)
    expected = 1.0 / (1.0 + math.exp(-4.0 / 9.0))
    assert math.isclose(post.probs[0], expected, abs_tol=1e-13)


def test_bayes_batch_equals_sequential(investment_game, rng):
    q = np.asarray([0.4, 0.7])
    prior = Belief.from_probs([0.2, 0.5, 0.3])
    obs = [games.sample_payoffs(investment_game, 1, q, rng) for _ in range(5)]
    batch = ObservationBatch()
    for c in obs:
        batch.append(q, c)
    joint = bayes_update(prior, batch, investment_game)
    b = prior
    for c in obs:
        one = ObservationBatch()
        one.append(q, c)
        b = bayes_update(b, one, investment_game)
    assert np.allclose(joint.probs, b.probs, atol=1e-12)


def test_bayes_zero_forcing_is_permanent(investment_game, rng):
    prior = Belief.from_probs([0.0, 0.7, 0.3])
    q = np.asarray([0.4, 0.7])
    batch = ObservationBatch()
    batch.append(q, games.sample_payoffs(investment_game, 1, q, rng))
    post = bayes_update(prior, batch, investment_game)
    assert post.log_probs[0] == NEG_INF
    assert post.probs[0] == 0.0


def test_bayes_impossible_observation():
    game = games.two_route_congestion(sigma=0.0)
    q = np.asarray([1.0, 0.0, 0.0, 1.0])
    batch = ObservationBatch()
    batch.append(q, game.channel_means(0, q) + 0.5)  # matches no parameter
    with pytest.raises(ImpossibleObservation):
        bayes_update(Belief.uniform(2), batch, game)


def test_bayes_empty_batch_rejected(cournot_game):
    with pytest.raises(ContractViolation):
        bayes_update(Belief.uniform(2), ObservationBatch(), cournot_game)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(min_value=1e-4, max_value=1.0), min_size=3,
                max_size=3),
       st.floats(min_value=-3.0, max_value=3.0))
def test_bayes_preserves_simplex(weights, noise):
    game = games.investment()
    prior = Belief.from_probs(weights)
    q = np.asarray([0.3, 0.6])
    c = game.channel_means(1, q) + noise
    batch = ObservationBatch()
    batch.append(q, c)
    post = bayes_update(prior, batch, game)
    assert math.isclose(float(post.probs.sum()), 1.0, abs_tol=1e-12)
    assert np.all(post.probs >= 0.0)


# ---------------------------------------------------------------------------
# MAP


def test_map_picks_likelihood_winner(investment_game):
    # at q = (0,0) the channel means are (0, 1, 2) with noise scales
    # (sqrt3, sqrt5, sqrt10); per-record scores at c = 4 are
    # -16/6 - log(sqrt3) < -9/10 - log(sqrt5) < -4/20 - log(sqrt10)
    q = np.asarray([0.0, 0.0])
    batch = ObservationBatch()
    for _ in range(10):
        batch.append(q, np.asarray([4.0]))
    assert map_update(investment_game.space, Belief.uniform(3), batch,
                      investment_game) == 2


def test_map_tie_breaks_to_lowest_index():
    # zero-sum game at d <= 1: every parameter has the same mean, so the
    # posterior scores tie under a uniform prior
    game = games.zerosum_example()
    batch = ObservationBatch()
    batch.append([0.0, 1.0], [0.3, -0.3])
    assert map_update(game.space, Belief.uniform(3), batch, game) == 0


def test_map_respects_prior_on_ties():
    game = games.zerosum_example()
    batch = ObservationBatch()
    batch.append([0.0, 1.0], [0.3, -0.3])
    prior = Belief.from_probs([0.2, 0.5, 0.3])
    assert map_update(game.space, prior, batch, game) == 1


# ---------------------------------------------------------------------------
# OLS


def test_ols_gram_matrix_oracle():
    # rows (1,0,1) and (0,1,1) give X'X = [[1,0,1],[0,1,1],[1,1,2]]
    state = OlsState(q_dim=2, n_players=2)
    state = ols_ingest(state, [1.0, 0.0], [0.5, -0.5])
    state = ols_ingest(state, [0.0, 1.0], [1.0, 2.0])
    assert np.array_equal(state.normal_matrix,
                          [[1, 0, 1], [0, 1, 1], [1, 1, 2]])
    assert np.array_equal(state.cross_vector,
                          [[0.5, 1.0, 1.5], [-0.5, 2.0, 1.5]])


def test_ols_noiseless_interpolation():
    alpha = np.asarray([[-2.0, 1.0], [1.0, -2.0]])
    beta = np.asarray([1.0, 1.0])
    game = games.affine_game(alpha, beta, sigma=0.0)
    state = OlsState(game.q_dim, game.n_players)
    rng = np.random.default_rng(7)
    for _ in range(6):
        q = rng.random(2)
        state = ols_ingest(state, q, game.channel_means(0, q))
    est = ols_solve(state)
    truth = np.hstack([alpha, beta[:, None]])
    assert np.max(np.abs(est - truth)) < 1e-10


def test_ols_unidentifiable_reports_null_directions():
    state = OlsState(q_dim=2, n_players=1)
    for _ in range(4):
        state = ols_ingest(state, [1.0, 1.0], [0.0])
    with pytest.raises(Unidentifiable) as err:
        ols_solve(state)
    null = err.value.null_directions
    # every null direction must annihilate the repeated design row (1,1,1)
    assert null.shape[0] >= 1
    assert np.max(np.abs(null @ np.asarray([1.0, 1.0, 1.0]))) < 1e-9


def test_ols_empty_state_unidentifiable():
    with pytest.raises(Unidentifiable):
        ols_solve(OlsState(q_dim=1, n_players=1))


def test_ols_persistent_states_are_independent():
    s0 = OlsState(q_dim=1, n_players=1)
    s1 = ols_ingest(s0, [1.0], [2.0])
    s2a = ols_ingest(s1, [2.0], [3.0])
    s2b = ols_ingest(s1, [5.0], [9.0])  # fork from s1
    assert s0.n_records == 0 and s1.n_records == 1
    assert np.array_equal(s2a.design_rows[-1], [2.0, 1.0])
    assert np.array_equal(s2b.design_rows[-1], [5.0, 1.0])
    assert np.array_equal(s1.design_rows, [[1.0, 1.0]])


def test_ols_dimension_mismatch():
    state = OlsState(q_dim=2, n_players=2)
    with pytest.raises(ContractViolation):
        ols_ingest(state, [1.0], [0.0, 0.0])


# ---------------------------------------------------------------------------
# Schedules


def test_schedule_every_stage():
    sched = UpdateSchedule.every_stage()
    assert [next_update_stage(sched) for _ in range(5)] == [2, 3, 4, 5, 6]


def test_schedule_fixed_batch():
    sched = UpdateSchedule.fixed_batch(10)
    assert [next_update_stage(sched) for _ in range(3)] == [11, 21, 31]


def test_schedule_geometric_gaps_positive(rng):
    sched = UpdateSchedule.geometric(0.3)
    stages = [next_update_stage(sched, rng) for _ in range(200)]
    gaps = np.diff([1] + stages)
    assert np.all(gaps >= 1)
    with pytest.raises(ContractViolation):
        next_update_stage(UpdateSchedule.geometric(0.5))  # needs an RNG


def test_schedule_two_timescale_growing_gaps():
    sched = UpdateSchedule.two_timescale(lambda t: 10 * t)
    assert [next_update_stage(sched) for _ in range(4)] == [11, 31, 61, 101]


def test_schedule_clone_resets_counter(rng):
    sched = UpdateSchedule.fixed_batch(5)
    next_update_stage(sched)
    next_update_stage(sched)
    fresh = sched.clone()
    assert fresh.last_k == 1 and fresh.t_index == 0
    assert next_update_stage(fresh) == 6


def test_schedule_validation():
    with pytest.raises(ContractViolation):
        UpdateSchedule("bogus")
    with pytest.raises(ContractViolation):
        UpdateSchedule.fixed_batch(0)
    with pytest.raises(ContractViolation):
        UpdateSchedule.geometric(0.0)
    with pytest.raises(ContractViolation):
        UpdateSchedule("two_timescale")
    with pytest.raises(ContractViolation):
        next_update_stage(UpdateSchedule.two_timescale(lambda t: 0))


# ---------------------------------------------------------------------------
# batch_log_likelihoods consistency


def test_batch_loglik_matches_sum(investment_game, rng):
    q = np.asarray([0.3, 0.8])
    batch = ObservationBatch()
    for _ in range(4):
        batch.append(q, games.sample_payoffs(investment_game, 1, q, rng))
    acc = batch_log_likelihoods(None, batch, investment_game)
    for s in range(3):
        manual = sum(
            log_likelihood(investment_game.space, s, investment_game, q, c)
            for q, c in batch
        )
        assert math.isclose(acc[s], manual, abs_tol=1e-12)
