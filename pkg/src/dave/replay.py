"""Episode-level FIFO replay buffer."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .envs import Episode


class WarmupIncomplete(RuntimeError):
    """Raised when a batch is requested before enough episodes are stored."""


@dataclass
class EpisodeBatch:
    """Episodes padded to a common length ``T``.

    Shapes: ``states (B, T+1, S)``, ``obs (B, T+1, n, O)``, ``actions (B, T, n)``,
    ``rewards/terminated/mask (B, T)``. Padding steps have mask 0, reward 0,
    terminated 1 and repeat the last real state/observation.
    """

    states: np.ndarray
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    terminated: np.ndarray
    mask: np.ndarray

    @property
    def batch_size(self):
        return self.actions.shape[0]

    @property
    def max_t(self):
        return self.actions.shape[1]


def pad_episodes(episodes, max_t=None):
    max_t = max_t or max(len(e) for e in episodes)
    B = len(episodes)
    n = episodes[0].actions.shape[1]
    states = np.zeros((B, max_t + 1) + episodes[0].states.shape[1:])
    obs = np.zeros((B, max_t + 1) + episodes[0].obs.shape[1:])
    actions = np.zeros((B, max_t, n), dtype=np.int64)
    rewards = np.zeros((B, max_t))
    terminated = np.ones((B, max_t))
    mask = np.zeros((B, max_t))
    for i, ep in enumerate(episodes):
        T = len(ep)
        states[i, : T + 1] = ep.states
        states[i, T + 1 :] = ep.states[-1]
        obs[i, : T + 1] = ep.obs
        obs[i, T + 1 :] = ep.obs[-1]
        actions[i, :T] = ep.actions
        rewards[i, :T] = ep.rewards
        terminated[i, :T] = ep.terminated
        mask[i, :T] = ep.mask
    return EpisodeBatch(states, obs, actions, rewards, terminated, mask)


class ReplayBuffer:
    def __init__(self, capacity=5000):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.episodes = deque(maxlen=capacity)
        self.n_inserted = 0

    def __len__(self):
        return len(self.episodes)

    def push(self, episode: Episode):
        episode.validate()
        self.episodes.append(episode)
        self.n_inserted += 1

    def sample(self, batch_size, rng) -> EpisodeBatch:
        """Uniform draw without replacement, padded to the longest episode."""
        if len(self.episodes) < batch_size:
            raise WarmupIncomplete(
                f"buffer holds {len(self.episodes)} episodes, batch needs {batch_size}"
            )
        idx = rng.choice(len(self.episodes), size=batch_size, replace=False)
        return pad_episodes([self.episodes[i] for i in idx])
