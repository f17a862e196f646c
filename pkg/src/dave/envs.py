"""Dec-POMDP interface and the didactic cooperative games.

Every environment is a deterministic state machine with one shared reward.
Joint actions are sequences with one action index per agent.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class EnvError(RuntimeError):
    pass


@dataclass(frozen=True)
class EnvSpec:
    n_agents: int
    actions_per_agent: tuple
    state_dim: int
    obs_dim: int
    episode_limit: int

    def __post_init__(self):
        if self.n_agents < 1 or min(self.actions_per_agent) < 1:
            raise ValueError("agent and action counts must be >= 1")
        if len(self.actions_per_agent) != self.n_agents:
            raise ValueError("actions_per_agent needs one entry per agent")
        if self.state_dim < 1 or self.obs_dim < 1 or self.episode_limit < 1:
            raise ValueError("dimensions and episode_limit must be >= 1")

    @property
    def n_actions(self):
        return max(self.actions_per_agent)

    @property
    def n_joint_actions(self):
        return int(np.prod(self.actions_per_agent))


@dataclass
class StepResult:
    reward: float
    next_state: np.ndarray
    next_obs: np.ndarray
    terminated: bool


@dataclass
class Episode:
    """One rollout.

    ``states``/``obs`` hold ``T + 1`` entries (the final ones included);
    ``actions``, ``rewards``, ``terminated`` and ``mask`` hold ``T``.
    """

    states: np.ndarray
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    terminated: np.ndarray
    mask: np.ndarray

    def __len__(self):
        return len(self.actions)

    @property
    def episode_return(self):
        return float((self.rewards * self.mask).sum())

    def validate(self, spec: EnvSpec | None = None):
        T = len(self.actions)
        if T < 1:
            raise ValueError("episode has no steps")
        if len(self.states) != T + 1 or len(self.obs) != T + 1:
            raise ValueError("states/obs must hold T + 1 entries")
        if len(self.rewards) != T or len(self.terminated) != T or len(self.mask) != T:
            raise ValueError("rewards/terminated/mask must hold T entries")
        m = np.asarray(self.mask)
        if not np.all(np.isin(m, (0.0, 1.0))):
            raise ValueError("mask must be 0/1")
        valid = int(m.sum())
        if valid < 1 or not np.all(m[:valid] == 1) or np.any(m[valid:] != 0):
            raise ValueError("mask must be a prefix of ones followed by zeros")
        if spec is not None:
            if T > spec.episode_limit:
                raise ValueError(f"episode length {T} exceeds limit {spec.episode_limit}")
            acts = np.asarray(self.actions)
            limits = np.asarray(spec.actions_per_agent)
            if acts.shape[1] != spec.n_agents or np.any(acts < 0) or np.any(acts >= limits):
                raise ValueError("joint action outside the per-agent action ranges")


class MultiAgentEnv:
    name = "base"

    def reset(self, seed=None):
        raise NotImplementedError

    def step(self, joint_action) -> StepResult:
        raise NotImplementedError

    def get_env_info(self) -> EnvSpec:
        raise NotImplementedError

    @property
    def optimal_return(self) -> float:
        raise NotImplementedError

    def _check_action(self, joint_action):
        spec = self.get_env_info()
        joint = tuple(int(a) for a in joint_action)
        if len(joint) != spec.n_agents:
            raise EnvError(f"expected {spec.n_agents} actions, got {len(joint)}")
        for a, (u, n) in enumerate(zip(joint, spec.actions_per_agent)):
            if not 0 <= u < n:
                raise EnvError(f"agent {a}: action {u} outside [0, {n})")
        return joint


class MatrixGame(MultiAgentEnv):
    """Single-state, one-shot cooperative game over a payoff table."""

    ACTION_NAMES = "ABC"

    def __init__(self, payoff):
        self.payoff = np.asarray(payoff, dtype=np.float64)
        self._done = True
        self.seed = None

    @property
    def optimal_return(self):
        return float(self.payoff.max())

    def get_env_info(self):
        return EnvSpec(
            n_agents=self.payoff.ndim,
            actions_per_agent=tuple(self.payoff.shape),
            state_dim=1,
            obs_dim=1,
            episode_limit=1,
        )

    def _state(self):
        return np.ones(1)

    def _obs(self):
        return np.ones((self.payoff.ndim, 1))

    def reset(self, seed=None):
        self.seed = seed
        self._done = False
        return self._state(), self._obs()

    def step(self, joint_action):
        if self._done:
            raise EnvError("step() called on a terminated episode; call reset()")
        joint = self._check_action(joint_action)
        self._done = True
        return StepResult(float(self.payoff[joint]), self._state(), self._obs(), True)


def matrix_game_1_payoff(k):
    if not 0 <= k < 8:
        raise ValueError(f"matrix game I needs k in [0, 8), got {k}")
    return np.array([[8.0, -12.0, -12.0], [-12.0, k, 0.0], [-12.0, 0.0, k]])


def matrix_game_2_payoff(k):
    if k < 0:
        raise ValueError(f"matrix game II needs k >= 0, got {k}")
    return np.array([[-2 * k, 0.0, 12.0], [0.0, 10.0, 0.0], [11.0, 0.0, -2 * k]])


class MatrixGameI(MatrixGame):
    name = "matrix1"

    def __init__(self, k=0.0):
        self.k = float(k)
        super().__init__(matrix_game_1_payoff(self.k))


class MatrixGameII(MatrixGame):
    name = "matrix2"

    def __init__(self, k=0.0):
        self.k = float(k)
        super().__init__(matrix_game_2_payoff(self.k))


class MultiStepMatrixGame(MultiAgentEnv):
    """Two agents, two actions each, nine decisions at most.

    The first joint action chooses a chain: upper-left ``(0, 0)`` or
    lower-right ``(1, 1)``; off-diagonal pays 0 and ends the episode.
    Inside a chain every repeat of the entry action pays 1 and any deviation
    pays 0 and ends it. After eight chain actions the agents reach a terminal
    decision state: after the upper-left chain only ``(1, 1)`` pays 5 (else 0),
    after the lower-right chain every joint action pays 2. Best return 13,
    the safe return 10.
    """

    name = "multistep"
    CHAIN_LENGTH = 8
    UL, LR = (0, 0), (1, 1)
    CHAIN_REWARD = 1.0
    T1_PAYOFF = np.array([[0.0, 0.0], [0.0, 5.0]])
    T2_PAYOFF = np.array([[2.0, 2.0], [2.0, 2.0]])

    def __init__(self, k=0.0):
        self.episode_limit = self.CHAIN_LENGTH + 1
        self.n_agents = 2
        self._done = True
        self.seed = None
        self.t = 0
        self.chain = None
        self.last = None

    @property
    def optimal_return(self):
        return self.CHAIN_LENGTH * self.CHAIN_REWARD + float(self.T1_PAYOFF.max())

    @property
    def n_steps_dim(self):
        return self.episode_limit + 1

    def get_env_info(self):
        d = self.n_steps_dim + 5
        return EnvSpec(2, (2, 2), d, d, self.episode_limit)

    def _encode(self):
        v = np.zeros(self.n_steps_dim + 5)
        v[self.t] = 1.0
        slot = 4 if self.last is None else 2 * self.last[0] + self.last[1]
        v[self.n_steps_dim + slot] = 1.0
        return v

    def decode(self, state):
        """Inverse of the encoding: ``(step count, last joint action or None)``."""
        state = np.asarray(state)
        t = int(np.argmax(state[: self.n_steps_dim]))
        slot = int(np.argmax(state[self.n_steps_dim :]))
        return t, (None if slot == 4 else (slot // 2, slot % 2))

    def _observe(self):
        s = self._encode()
        return s, np.tile(s, (self.n_agents, 1))

    def reset(self, seed=None):
        self.seed = seed
        self._done = False
        self.t = 0
        self.chain = None
        self.last = None
        return self._observe()

    def step(self, joint_action):
        if self._done:
            raise EnvError("step() called on a terminated episode; call reset()")
        joint = self._check_action(joint_action)
        if self.t == 0:
            if joint == self.UL:
                self.chain, reward, done = 1, self.CHAIN_REWARD, False
            elif joint == self.LR:
                self.chain, reward, done = 2, self.CHAIN_REWARD, False
            else:
                reward, done = 0.0, True
        elif self.t < self.CHAIN_LENGTH:
            entry = self.UL if self.chain == 1 else self.LR
            if joint == entry:
                reward, done = self.CHAIN_REWARD, False
            else:
                reward, done = 0.0, True
        else:
            table = self.T1_PAYOFF if self.chain == 1 else self.T2_PAYOFF
            reward, done = float(table[joint]), True
        self.t += 1
        self.last = joint
        self._done = done
        s, o = self._observe()
        return StepResult(reward, s, o, done)


ENVIRONMENTS = {
    "matrix1": MatrixGameI,
    "matrix2": MatrixGameII,
    "multistep": MultiStepMatrixGame,
}


def make_env(name, k=0.0):
    try:
        cls = ENVIRONMENTS[name]
    except KeyError:
        raise ValueError(
            f"unknown environment {name!r}; choose one of {sorted(ENVIRONMENTS)}"
        ) from None
    return cls(k=k)
