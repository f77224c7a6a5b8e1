import math

import numpy as np
import pytest

from core.discrete_dynamics import (
    BeliefState,
    ExplorationConfig,
    StepSizeSchedule,
    aggfp_belief_update,
    belief_gap,
    closed_form_weights,
    empirical_update,
    explore,
    fp_belief_update,
    reward_gap,
    run_repeated_play,
)
from core.experiment import RPS_MATRIX, first_mismatch
from core.game import AnonymousPolymatrixGame, GameDims, SuccinctGame, opponent_ranks
from core.rng import make_generator


def _random_game(seed, dims):
    return AnonymousPolymatrixGame.random(dims, make_generator(seed, "instances"))


def test_step_size_schedule():
    schedule = StepSizeSchedule(0.7)
    assert schedule(0) == 1.0
    assert schedule(9) == pytest.approx(10 ** -0.7)
    assert schedule.robbins_monro
    assert not StepSizeSchedule(0.5).robbins_monro
    with pytest.raises(ValueError):
        StepSizeSchedule(1.5)
    with pytest.raises(ValueError):
        StepSizeSchedule(0.7, scale=2.0)


def test_single_belief_updates():
    np.testing.assert_allclose(fp_belief_update([1.0, 0.0], 1, 0.5), [0.5, 0.5])
    np.testing.assert_allclose(aggfp_belief_update([0.0, 1.0, 0.0], 0, 0.25), [0.25, 0.75, 0.0])
    np.testing.assert_allclose(empirical_update([0.5, 0.5], 0, 1.0), [1.0, 0.0])
    with pytest.raises(ValueError):
        fp_belief_update([1.0, 0.0], 2, 0.5)
    with pytest.raises(ValueError):
        fp_belief_update([0.7, 0.7], 0, 0.5)
    with pytest.raises(ValueError):
        aggfp_belief_update([1.0, 0.0], 0, 0.0)


def test_closed_form_weights_harmonic_schedule():
    # α_k = 1/(k+1) 时信念就是历史平均
    np.testing.assert_allclose(closed_form_weights(StepSizeSchedule(1.0), 9), np.full(10, 0.1))


def test_closed_form_weights_sum_to_one():
    weights = closed_form_weights(StepSizeSchedule(0.7), 50)
    assert weights.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(weights > 0)


def test_belief_state_matches_closed_form():
    dims = GameDims(3, 3)
    schedule = StepSizeSchedule(0.7)
    rng = make_generator(4, "initial")
    history = rng.integers(3, size=(30, 3))
    state = BeliefState(dims, schedule)
    for k, profile in enumerate(history):
        state.observe(profile, k)
    weights = closed_form_weights(schedule, len(history) - 1)
    expected = np.einsum("k,kja->ja", weights, np.eye(3)[history])
    np.testing.assert_allclose(state.individual, expected, atol=1e-12)
    np.testing.assert_allclose(state.empirical, expected, atol=1e-12)
    ranks = np.array([opponent_ranks(p, dims) for p in history])
    expected_mu = np.einsum("k,kix->ix", weights, np.eye(dims.num_counts)[ranks])
    np.testing.assert_allclose(state.aggregate, expected_mu, atol=1e-12)


def test_belief_state_requires_consecutive_steps():
    state = BeliefState(GameDims(2, 2), StepSizeSchedule())
    state.observe(np.array([0, 1]), 0)
    with pytest.raises(ValueError):
        state.observe(np.array([0, 1]), 2)


def test_simplex_preserved_over_many_updates():
    dims = GameDims(3, 3)
    state = BeliefState(dims, StepSizeSchedule(0.6))
    rng = make_generator(1, "exploration")
    history = rng.integers(3, size=(100000, 3))
    for k, profile in enumerate(history):
        state.observe(profile, k)
    assert np.abs(state.individual.sum(axis=1) - 1).max() <= 1e-9
    assert np.abs(state.aggregate.sum(axis=1) - 1).max() <= 1e-9
    assert state.aggregate.min() >= 0.0


@pytest.mark.slow
def test_simplex_preserved_over_million_updates():
    belief = np.array([1.0, 0.0, 0.0])
    schedule = StepSizeSchedule(0.6)
    actions = make_generator(2, "exploration").integers(3, size=10 ** 6)
    eye = np.eye(3)
    for k, a in enumerate(actions[1:], start=1):
        belief = belief + schedule(k) * (eye[a] - belief)
    assert abs(belief.sum() - 1.0) <= 1e-9
    assert belief.min() >= 0.0


def test_belief_gap_witness():
    # 聚合信念不是个体信念的乘积分布
    gap = belief_gap([(0, 0, 0), (1, 1, 1)], GameDims(3, 2), StepSizeSchedule(1.0), 0)
    assert gap == pytest.approx(0.5)


def test_belief_gap_single_observation_is_zero():
    assert belief_gap([(0, 1, 1)], GameDims(3, 2), StepSizeSchedule(), 0) == 0.0
    with pytest.raises(ValueError):
        belief_gap([], GameDims(3, 2), StepSizeSchedule(), 0)


def test_explore_without_delta_consumes_no_randomness():
    rng = make_generator(0, "exploration")
    untouched = make_generator(0, "exploration")
    assert explore(rng, GameDims(3, 3), ExplorationConfig(0.0)) is None
    np.testing.assert_equal(rng.bit_generator.state, untouched.bit_generator.state)
    assert rng.random() == untouched.random()


def test_shared_coin_explores_all_agents_together():
    dims = GameDims(4, 3)
    rng = make_generator(0, "exploration")
    outcomes = [explore(rng, dims, ExplorationConfig(0.5)) for _ in range(200)]
    explored = [o for o in outcomes if o is not None]
    assert 0 < len(explored) < 200
    assert all(o.shape == (4,) and o.min() >= 0 for o in explored)


def test_independent_coins_explore_per_agent():
    dims = GameDims(4, 3)
    rng = make_generator(0, "exploration")
    outcomes = [explore(rng, dims, ExplorationConfig(0.5, shared_coin=False)) for _ in range(200)]
    mixed = [o for o in outcomes if (o < 0).any() and (o >= 0).any()]
    assert mixed


def test_exploration_config_validation():
    with pytest.raises(ValueError):
        ExplorationConfig(1.0)
    with pytest.raises(ValueError):
        ExplorationConfig(-0.1)


def test_run_repeated_play_shapes_and_determinism():
    game = _random_game(0, GameDims(4, 3))
    a = run_repeated_play("aggfp", game, 250, 3, exploration=ExplorationConfig(0.1), snapshot_stride=100)
    b = run_repeated_play("aggfp", game, 250, 3, exploration=ExplorationConfig(0.1), snapshot_stride=100)
    assert a.actions.shape == (250, 4)
    assert a.empirical.shape == (math.ceil(250 / 100), 4, 3)
    np.testing.assert_array_equal(a.snapshot_steps, [0, 100, 200])
    np.testing.assert_array_equal(a.actions, b.actions)
    np.testing.assert_array_equal(a.empirical, b.empirical)


def test_initial_actions_respected():
    game = _random_game(0, GameDims(3, 2))
    record = run_repeated_play("fp", game, 5, 0, initial_actions=(1, 0, 1))
    np.testing.assert_array_equal(record.actions[0], [1, 0, 1])
    with pytest.raises(ValueError):
        run_repeated_play("fp", game, 5, 0, initial_actions=(1, 0))


def test_run_repeated_play_argument_errors():
    game = _random_game(0, GameDims(3, 2))
    with pytest.raises(ValueError):
        run_repeated_play("sfp", game, 10, 0)
    with pytest.raises(ValueError):
        run_repeated_play("fp", game, 0, 0)
    with pytest.raises(ValueError):
        run_repeated_play("fp", game, 10, 0, snapshot_stride=0)


@pytest.mark.parametrize("delta, shared", [(0.0, True), (0.1, True), (0.1, False)])
def test_fp_and_aggfp_trajectories_coincide(delta, shared):
    exploration = ExplorationConfig(delta, shared)
    for seed in range(5):
        dims = GameDims(2 + seed % 4, 2 + seed % 2)
        game = _random_game(seed, dims)
        fp = run_repeated_play("fp", game, 400, seed, exploration=exploration)
        agg = run_repeated_play("aggfp", game, 400, seed, exploration=exploration)
        assert first_mismatch(fp.actions, agg.actions) is None
        np.testing.assert_allclose(fp.empirical, agg.empirical, atol=1e-12)


def test_pathwise_reward_gap_vanishes_for_polymatrix():
    game = _random_game(9, GameDims(5, 3))
    succinct = [game.succinct(i) for i in range(5)]
    gaps = []
    run_repeated_play("fp", game, 300, 1, exploration=ExplorationConfig(0.1),
                      observer=lambda k, state: gaps.append(reward_gap(game, state, succinct)))
    assert len(gaps) == 300
    assert max(gaps) <= 1e-9


def test_reward_gap_appears_without_polymatrix_structure():
    dims = GameDims(3, 2)
    tables = np.zeros((3, 2, 3))
    tables[:, 1, :] = [1.0, 6.0, 1.0]
    game = SuccinctGame(dims, tables)
    gaps = []
    run_repeated_play("fp", game, 20, 0, initial_actions=(0, 0, 0),
                      observer=lambda k, state: gaps.append(reward_gap(game, state)))
    assert gaps[0] == 0.0
    assert max(gaps) >= 2.5 - 1e-12


def test_rps_fp_empirical_frequencies_stay_on_simplex():
    game = AnonymousPolymatrixGame.uniform(GameDims(4, 3), RPS_MATRIX)
    record = run_repeated_play("fp", game, 500, 0, schedule=StepSizeSchedule(0.7),
                               exploration=ExplorationConfig(0.1), snapshot_stride=50)
    np.testing.assert_allclose(record.empirical.sum(axis=2), 1.0, atol=1e-9)
    assert record.empirical.min() >= 0.0


@pytest.mark.parametrize("algorithm", ["fp", "aggfp"])
def test_matching_pennies_fp_approaches_mixed_equilibrium(algorithm):
    pennies = np.array([[1.0, -1.0], [-1.0, 1.0]])
    game = AnonymousPolymatrixGame(GameDims(2, 2), np.stack([pennies, -pennies]))
    record = run_repeated_play(algorithm, game, 10 ** 4, 0, schedule=StepSizeSchedule(1.0),
                               exploration=ExplorationConfig(0.0), snapshot_stride=1)
    np.testing.assert_allclose(record.empirical[-1], 0.5, atol=0.05)
