import itertools

import numpy as np
import pytest

from dave.envs import (
    EnvError,
    EnvSpec,
    Episode,
    MatrixGameI,
    MatrixGameII,
    MultiStepMatrixGame,
    make_env,
    matrix_game_1_payoff,
    matrix_game_2_payoff,
)


def test_env_info():
    for cls in (MatrixGameI, MatrixGameII):
        spec = cls().get_env_info()
        assert spec.n_agents == 2 and spec.actions_per_agent == (3, 3)
        assert spec.episode_limit == 1
    spec = MultiStepMatrixGame().get_env_info()
    assert spec.n_agents == 2 and spec.actions_per_agent == (2, 2)
    assert spec.episode_limit == 9


def test_envspec_validation():
    with pytest.raises(ValueError):
        EnvSpec(0, (), 1, 1, 1)
    with pytest.raises(ValueError):
        EnvSpec(2, (3,), 1, 1, 1)
    with pytest.raises(ValueError):
        EnvSpec(1, (3,), 0, 1, 1)


def test_matrix_reset_is_single_fixed_state():
    env = MatrixGameI(0)
    s, o = env.reset(seed=1)
    np.testing.assert_array_equal(s, [1.0])
    np.testing.assert_array_equal(o, [[1.0], [1.0]])
    s2, o2 = env.reset(seed=1)
    np.testing.assert_array_equal(s, s2)
    np.testing.assert_array_equal(o, o2)


@pytest.mark.parametrize("cls,k", [(MatrixGameI, 0.0), (MatrixGameI, 7.5), (MatrixGameII, 0.0), (MatrixGameII, 2.0)])
def test_matrix_one_step_returns_payoff(cls, k):
    env = cls(k)
    for joint in itertools.product(range(3), range(3)):
        env.reset()
        res = env.step(joint)
        assert res.terminated
        assert res.reward == env.payoff[joint]
        with pytest.raises(EnvError):
            env.step(joint)


def test_matrix_game_1_structure():
    for k in (0.0, 3.0, 7.5):
        p = matrix_game_1_payoff(k)
        assert p[0, 0] == 8 and p[1, 1] == p[2, 2] == k
        assert np.unravel_index(np.argmax(p), p.shape) == (0, 0)
        assert MatrixGameI(k).optimal_return == 8
    with pytest.raises(ValueError):
        matrix_game_1_payoff(8.0)
    with pytest.raises(ValueError):
        matrix_game_1_payoff(-1.0)


def test_matrix_game_2_structure():
    for k in (0.0, 2.0):
        p = matrix_game_2_payoff(k)
        assert p[0, 2] == 12 and p[2, 0] == 11 and p[1, 1] == 10
        assert np.unravel_index(np.argmax(p), p.shape) == (0, 2)
    # with k = 2 action B has the best expected payoff against a uniform partner
    p = matrix_game_2_payoff(2.0)
    assert np.argmax(p.mean(axis=1)) == 1 and np.argmax(p.mean(axis=0)) == 1
    with pytest.raises(ValueError):
        matrix_game_2_payoff(-0.5)


def test_invalid_action_index():
    env = MatrixGameI()
    env.reset()
    with pytest.raises(EnvError):
        env.step((0, 3))
    with pytest.raises(EnvError):
        env.step((0,))


def test_step_before_reset_is_an_error():
    with pytest.raises(EnvError):
        MultiStepMatrixGame().step((0, 0))


def _play(env, actions):
    env.reset()
    total, res = 0.0, None
    for joint in actions:
        res = env.step(joint)
        total += res.reward
        if res.terminated:
            break
    return total, res


def test_multistep_reset_encodes_step_zero_and_no_last_action():
    env = MultiStepMatrixGame()
    s, o = env.reset()
    assert env.decode(s) == (0, None)
    assert o.shape == (2, s.size)
    np.testing.assert_array_equal(o[0], s)
    np.testing.assert_array_equal(o[1], s)


def test_multistep_optimal_and_safe_paths():
    env = MultiStepMatrixGame()
    total, res = _play(env, [(0, 0)] * 8 + [(1, 1)])
    assert total == 13 == env.optimal_return
    assert res.terminated
    total, _ = _play(env, [(1, 1)] * 8 + [(0, 1)])
    assert total == 10


def test_multistep_off_diagonal_first_step_terminates_with_zero():
    env = MultiStepMatrixGame()
    for joint in [(0, 1), (1, 0)]:
        total, res = _play(env, [joint])
        assert total == 0 and res.terminated


def test_multistep_breaking_the_chain_terminates_with_zero():
    env = MultiStepMatrixGame()
    env.reset()
    for _ in range(3):
        assert env.step((0, 0)).reward == 1
    res = env.step((1, 1))
    assert res.reward == 0 and res.terminated


def test_multistep_exactly_two_terminal_decision_states():
    env = MultiStepMatrixGame()
    terminal_states = set()
    for first in itertools.product(range(2), range(2)):
        env.reset()
        res = env.step(first)
        for _ in range(7):
            if res.terminated:
                break
            res = env.step(first)
        if not res.terminated:
            terminal_states.add(tuple(res.next_state))
            assert env.decode(res.next_state)[0] == 8
    assert len(terminal_states) == 2


def test_multistep_observation_encodes_step_and_last_action():
    env = MultiStepMatrixGame()
    env.reset()
    for t in range(1, 5):
        res = env.step((1, 1))
        assert env.decode(res.next_state) == (t, (1, 1))
        assert res.next_state.sum() == 2


def test_multistep_is_deterministic():
    rng = np.random.default_rng(0)
    seqs = [tuple(map(tuple, rng.integers(0, 2, size=(9, 2)))) for _ in range(20)]
    a, b = MultiStepMatrixGame(), MultiStepMatrixGame()
    for seq in seqs:
        assert _play(a, seq)[0] == _play(b, seq)[0]


def test_make_env_names():
    assert isinstance(make_env("matrix2", 2), MatrixGameII)
    with pytest.raises(ValueError, match="matrix1.*matrix2.*multistep"):
        make_env("smac")


def test_episode_validation():
    ep = Episode(
        states=np.zeros((3, 1)), obs=np.zeros((3, 2, 1)), actions=np.zeros((2, 2), dtype=int),
        rewards=np.zeros(2), terminated=np.array([0.0, 1.0]), mask=np.array([1.0, 0.0]),
    )
    ep.validate(EnvSpec(2, (3, 3), 1, 1, 2))
    bad = Episode(ep.states, ep.obs, ep.actions, ep.rewards, ep.terminated, np.array([0.0, 1.0]))
    with pytest.raises(ValueError, match="prefix"):
        bad.validate()
    with pytest.raises(ValueError, match="limit"):
        ep.validate(MatrixGameI().get_env_info())
    out_of_range = Episode(ep.states, ep.obs, np.full((2, 2), 3), ep.rewards, ep.terminated, ep.mask)
    with pytest.raises(ValueError, match="range"):
        out_of_range.validate(EnvSpec(2, (3, 3), 1, 1, 2))
