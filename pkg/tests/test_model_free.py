import numpy as np
import pytest

from core.discrete_dynamics import ExplorationConfig, StepSizeSchedule, run_repeated_play
from core.experiment import RPS_MATRIX, build_rps4
from core.game import AnonymousPolymatrixGame, GameDims, MixedProfile, rank_count
from core.model_free import (
    CapacityError,
    PayoffPerturbation,
    QTable,
    RandomPayoffGame,
    TwoTimescaleSchedule,
    boltzmann,
    draw_perturbations,
    ne_distance,
    q_error,
    q_update,
    run_individual_q,
    run_model_free,
    run_two_timescale_aggfp,
    run_two_timescale_fp,
    sample_reward,
)
from core.rng import make_generator


def _zero_noise(game: AnonymousPolymatrixGame) -> RandomPayoffGame:
    return RandomPayoffGame(game, (PayoffPerturbation.zero(),) * game.dims.num_agents)


def test_perturbation_validation():
    with pytest.raises(ValueError):
        PayoffPerturbation(np.array([0.0, 1.0]), np.array([0.5, 0.6]))
    with pytest.raises(ValueError):
        PayoffPerturbation(np.array([0.0, 1.0, 2.0]), np.array([0.5, 0.5]))
    with pytest.raises(ValueError):
        PayoffPerturbation(np.array([0.0, np.inf]), np.array([0.5, 0.5]))


def test_rps4_perturbation_mean():
    game = build_rps4()
    assert game.perturbations[0].mean == pytest.approx(0.0, abs=1e-15)
    samples = game.perturbations[0].sample(make_generator(0, "perturbation"), size=10 ** 6)
    assert abs(samples.mean()) < 0.02
    assert set(np.unique(samples)) <= {-4.0, -2.0, 0.0, 2.0, 4.0}


def test_sample_reward_zero_noise_is_deterministic():
    game = _zero_noise(AnonymousPolymatrixGame.uniform(GameDims(4, 3), RPS_MATRIX))
    rng = make_generator(0, "perturbation")
    assert sample_reward(game, [0, 2, 2, 1], 0, rng) == 1.0
    assert sample_reward(game, [0, 2, 2, 1], 0, rng) == 1.0


def test_sample_reward_mean_converges_to_base():
    game = build_rps4()
    rng = make_generator(1, "perturbation")
    profile = [1, 0, 0, 2]
    m = 10 ** 5
    samples = np.array([sample_reward(game, profile, 0, rng) for _ in range(m)])
    sigma = np.sqrt(game.perturbations[0].probs @ game.perturbations[0].support ** 2)
    assert abs(samples.mean() - game.base.reward(0, profile)) <= 3 * sigma / np.sqrt(m)


def test_expected_tables_equal_base_for_zero_mean_noise():
    game = build_rps4()
    for i in range(4):
        np.testing.assert_allclose(game.expected_succinct()[i], game.base.succinct(i).table)
    assert game.expected_full().shape == (4, 3, 27)
    assert game.reward_bound() == 7.0


def test_draw_perturbations_shape():
    game = build_rps4()
    theta = draw_perturbations(game, 100, make_generator(0, "perturbation"))
    assert theta.shape == (100, 4)


def test_q_update_first_visit():
    qtable = QTable(1, 3, 10)
    value = q_update(qtable, 0, 1, 4, 3.0, TwoTimescaleSchedule())
    assert value == pytest.approx(2 ** -0.6 * 3)
    assert qtable.visits[0, 1, 4] == 1
    # 只修改被访问的格子
    mask = np.ones_like(qtable.values, dtype=bool)
    mask[0, 1, 4] = False
    assert np.all(qtable.values[mask] == 0.0)
    assert np.all(qtable.visits[mask] == 0)


def test_q_update_converges_monotonically():
    qtable = QTable(1, 2, 1)
    schedule = TwoTimescaleSchedule()
    values = [q_update(qtable, 0, 0, 0, 2.0, schedule) for _ in range(200)]
    assert np.all(np.diff(values) > 0)
    assert values[-1] < 2.0
    assert values[-1] > 1.9


def test_qtable_shape_check():
    with pytest.raises(ValueError):
        QTable(2, 3, 4, values=np.zeros((2, 3, 5)))


def test_two_timescale_schedule_check():
    ok, msg = TwoTimescaleSchedule().check()
    assert ok, msg
    ok, msg = TwoTimescaleSchedule.from_exponents(0.6, 0.7).check(1000)
    assert not ok
    ok, _ = TwoTimescaleSchedule(StepSizeSchedule(0.4), StepSizeSchedule(0.3)).check(1000)
    assert not ok
    schedule = TwoTimescaleSchedule()
    assert schedule.alpha(2048) / schedule.beta(2048) < 0.5


def test_q_error_values():
    game = build_rps4()
    dims = game.dims
    zero = QTable(4, 3, dims.num_counts)
    expected = sum(np.abs(game.base.succinct(i).table).sum() for i in range(4))
    assert q_error(zero, game) == pytest.approx(expected)
    exact = QTable(4, 3, dims.num_counts, game.expected_succinct())
    assert q_error(exact, game) == 0.0
    full = QTable(4, 3, 27, game.expected_full())
    assert q_error(full, game, "full") == 0.0
    with pytest.raises(ValueError):
        q_error(zero, game, "full")
    with pytest.raises(ValueError):
        q_error(zero, game, "other")


def test_ne_distance():
    dims = GameDims(4, 3)
    target = MixedProfile.uniform(dims)
    assert ne_distance(target.probs, target) == 0.0
    one = MixedProfile.uniform(GameDims(2, 3))
    gamma = np.array([[1.0, 0.0, 0.0], [1 / 3, 1 / 3, 1 / 3]])
    assert ne_distance(gamma, one) == pytest.approx(4 / 3)
    assert ne_distance(np.eye(3)[[0, 1, 2, 0]], target) == pytest.approx(16 / 3)
    with pytest.raises(ValueError):
        ne_distance(np.ones((3, 3)) / 3, target)


def test_boltzmann():
    np.testing.assert_allclose(boltzmann(np.array([1.0, 1.0, 1.0]), 0.1), [1 / 3] * 3)
    np.testing.assert_allclose(boltzmann(np.array([0.0, 1.0, 2.0]), 1e9), [1 / 3] * 3, atol=1e-8)
    assert boltzmann(np.array([0.0, 5.0]), 0.01)[1] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        boltzmann(np.zeros(2), 0.0)


def test_runs_are_deterministic():
    game = build_rps4()
    for algorithm in ("aggfp2t", "fp2t", "indq"):
        a = run_model_free(algorithm, game, 300, 5)
        b = run_model_free(algorithm, game, 300, 5)
        np.testing.assert_array_equal(a.actions, b.actions)
        np.testing.assert_array_equal(a.ne_distance, b.ne_distance)
    with pytest.raises(ValueError):
        run_model_free("sarsa", game, 10, 0)


def test_algorithms_share_initial_actions_and_noise():
    game = build_rps4()
    records = [run_model_free(algo, game, 50, 2) for algo in ("aggfp2t", "fp2t", "indq")]
    for record in records[1:]:
        np.testing.assert_array_equal(record.actions[0], records[0].actions[0])


def test_record_series_lengths():
    record = run_two_timescale_aggfp(build_rps4(), 250, 0, snapshot_stride=100)
    assert record.snapshot_steps.tolist() == [0, 100, 200]
    assert record.q_error.shape == (3,)
    assert record.ne_distance.shape == (3,)
    assert record.empirical.shape == (3, 4, 3)
    assert record.final_q_error == float(record.q_error[-1])


def test_q_values_bounded_on_rps4():
    record = run_two_timescale_aggfp(build_rps4(), 5000, 1)
    assert np.abs(record.qtable.values).max() <= 13.0
    record = run_individual_q(build_rps4(), 2000, 1)
    assert np.abs(record.qtable.values).max() <= 13.0


@pytest.mark.parametrize("beta", [StepSizeSchedule(0.6, scale=0.0), StepSizeSchedule(0.0, scale=1.0)])
def test_prefilled_exact_q_reduces_to_known_game_aggfp(beta):
    game = _zero_noise(AnonymousPolymatrixGame.random(GameDims(4, 3), make_generator(2, "instances")))
    schedules = TwoTimescaleSchedule(StepSizeSchedule(0.7), beta)
    for delta in (0.0, 0.1):
        model_free = run_two_timescale_aggfp(game, 500, 4, schedules, delta=delta, q_init=game.expected_succinct())
        known = run_repeated_play("aggfp", game.base, 500, 4, schedule=StepSizeSchedule(0.7),
                                  exploration=ExplorationConfig(delta))
        np.testing.assert_array_equal(model_free.actions, known.actions)


def test_two_agents_fp_baseline_coincides_with_aggfp():
    game = RandomPayoffGame(
        AnonymousPolymatrixGame.random(GameDims(2, 3), make_generator(6, "instances")),
        build_rps4().perturbations[:2],
    )
    agg = run_two_timescale_aggfp(game, 1000, 3)
    fp = run_two_timescale_fp(game, 1000, 3)
    np.testing.assert_array_equal(agg.actions, fp.actions)
    np.testing.assert_allclose(agg.q_error, fp.q_error, atol=1e-9)


def test_fp_baseline_capacity_guard():
    game = _zero_noise(AnonymousPolymatrixGame.uniform(GameDims(7, 2), np.eye(2)))
    with pytest.raises(CapacityError):
        run_two_timescale_fp(game, 10, 0)


def test_individual_q_requires_positive_temperature():
    with pytest.raises(ValueError):
        run_individual_q(build_rps4(), 10, 0, temperature=0.0)


def test_individual_q_uses_delta_as_default_temperature():
    game = build_rps4()
    a = run_model_free("indq", game, 200, 0, delta=0.1)
    b = run_individual_q(game, 200, 0, temperature=0.1)
    np.testing.assert_array_equal(a.actions, b.actions)
    assert a.q_error is None


def test_model_free_rejects_known_game():
    with pytest.raises(ValueError):
        run_two_timescale_aggfp(AnonymousPolymatrixGame.uniform(GameDims(2, 3), RPS_MATRIX), 10, 0)


def test_agent_coins_match_shared_coin_without_exploration():
    game = build_rps4()
    shared = run_two_timescale_aggfp(game, 500, 2, delta=0.0)
    agentwise = run_two_timescale_aggfp(game, 500, 2, delta=0.0, shared_coin=False)
    np.testing.assert_array_equal(shared.actions, agentwise.actions)
    a = run_model_free("fp2t", game, 500, 2, delta=0.1, shared_coin=False)
    b = run_model_free("fp2t", game, 500, 2, delta=0.1, shared_coin=False)
    np.testing.assert_array_equal(a.actions, b.actions)
    assert not np.array_equal(a.actions, run_model_free("fp2t", game, 500, 2, delta=0.1).actions)


def test_agent_coins_fill_lone_deviation_cells():
    # 其余三人同出 b、自己出 a≠b 的格子
    dims = GameDims(4, 3)
    cells = [(a, rank_count(tuple(3 if c == b else 0 for c in range(3)), dims))
             for a in range(3) for b in range(3) if a != b]

    def lone_visits(shared_coin):
        record = run_two_timescale_aggfp(build_rps4(), 30000, 0, snapshot_stride=1000, shared_coin=shared_coin)
        return sum(int(record.qtable.visits[:, a, x].sum()) for a, x in cells)

    assert lone_visits(False) > lone_visits(True)


# ---------------- rps4 实验复现（长时间运行） ----------------
STEPS = 200000
SEEDS = range(10)


@pytest.fixture(scope="module")
def rps4_records():
    game = build_rps4()
    return {
        algo: [run_model_free(algo, game, STEPS, seed, delta=0.1, snapshot_stride=1000, shared_coin=False)
               for seed in SEEDS]
        for algo in ("aggfp2t", "fp2t", "indq")
    }


@pytest.mark.slow
def test_aggfp2t_empirical_frequencies_approach_uniform(rps4_records):
    close = [np.abs(r.empirical[-1] - 1 / 3).max() <= 0.05 for r in rps4_records["aggfp2t"]]
    assert sum(close) >= 8


@pytest.mark.slow
def test_aggfp2t_q_error_below_fp_baseline(rps4_records):
    wins = [a.final_q_error < f.final_q_error for a, f in zip(rps4_records["aggfp2t"], rps4_records["fp2t"])]
    assert sum(wins) >= 8


@pytest.mark.slow
def test_aggfp2t_ne_distance_not_worse_than_baselines(rps4_records):
    wins = [
        a.final_ne_distance <= min(f.final_ne_distance, q.final_ne_distance)
        for a, f, q in zip(rps4_records["aggfp2t"], rps4_records["fp2t"], rps4_records["indq"])
    ]
    assert sum(wins) >= 8
