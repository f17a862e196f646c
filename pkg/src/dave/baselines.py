"""IGM-based reference learners: QMIX, VDN and naive IGM-free QMIX.

All share the agent trunk, replay and harness with DAVE and differ only in
the mixer. Targets use the per-agent greedy max of the target utilities,
mixed at the next state.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import RMSProp, clip_global_norm, no_grad
from .config import TrainerConfig
from .envs import EnvSpec
from .networks import (
    AdditiveMixer,
    AgentNet,
    QMixer,
    build_agent_inputs,
    load_bundle,
    one_hot,
    save_bundle,
)
from .replay import EpisodeBatch
from .trainer import _prev_onehot, alter_loss

MIXER_KINDS = ("monotonic", "additive", "igmfree-naive")
ALGORITHM_MIXERS = {"qmix": "monotonic", "vdn": "additive", "igmfree-qmix": "igmfree-naive"}


@dataclass(frozen=True)
class EpsilonSchedule:
    start: float = 1.0
    end: float = 0.05
    period: int = 50000

    def __call__(self, step):
        frac = min(max(step, 0) / self.period, 1.0)
        return self.start + (self.end - self.start) * frac


def baseline_act(q_values, epsilon, rng):
    """Independent epsilon-greedy per agent; greedy ties go to the lowest index.

    ``q_values`` is ``(A,)`` or ``(n, A)``.
    """
    q = np.atleast_2d(np.asarray(q_values, dtype=np.float64))
    greedy = np.argmax(q, axis=-1)
    explore = rng.random(len(q)) < epsilon
    random_actions = rng.integers(0, q.shape[-1], size=len(q))
    out = np.where(explore, random_actions, greedy)
    return out if np.ndim(q_values) == 2 else int(out[0])


def make_mixer(kind, n_agents, state_dim, rng, embed_dim=32):
    if kind == "monotonic":
        return QMixer(n_agents, state_dim, rng, embed_dim, monotonic=True)
    if kind == "igmfree-naive":
        return QMixer(n_agents, state_dim, rng, embed_dim, monotonic=False)
    if kind == "additive":
        return AdditiveMixer()
    raise ValueError(f"unknown mixer kind {kind!r}; choose one of {MIXER_KINDS}")


def greedy_target(next_q, next_states, target_mixer):
    """IGM shortcut: mix the per-agent maxima of ``next_q`` ``(N, n, A)``."""
    with no_grad():
        return target_mixer(next_q.max(axis=-1), next_states).data


class BaselineLearner:
    def __init__(self, spec: EnvSpec, config: TrainerConfig, rng, mixer_kind="monotonic"):
        self.spec = spec
        self.config = config
        self.rng = rng
        self.mixer_kind = mixer_kind
        n, A = spec.n_agents, spec.n_actions
        self.n_agents, self.n_actions = n, A
        c = config
        self.agent = AgentNet(spec.obs_dim + n + A, A, rng, c.agent_embed_dim, c.agent_hidden_dim)
        self.mixer = make_mixer(mixer_kind, n, spec.state_dim, rng, c.mixer_embed_dim)
        self.target_agent = self.agent.clone()
        self.target_mixer = self.mixer.clone()
        self.opt = RMSProp(
            self.agent.parameters() + self.mixer.parameters(),
            c.learning_rate, c.rmsprop_alpha, c.rmsprop_eps,
        )
        self.epsilon_schedule = EpsilonSchedule(c.epsilon_start, c.epsilon_end, c.epsilon_anneal_steps)
        self.train_steps = 0
        self.last_target_sync = 0

    def init_hidden(self):
        return self.agent.init_hidden(self.n_agents)

    def act_step(self, obs, prev_actions, hidden, greedy=False, env_steps=0):
        x = np.concatenate(
            [np.asarray(obs), np.eye(self.n_agents), _prev_onehot(prev_actions, self.n_actions)],
            axis=-1,
        )
        with no_grad():
            q, hidden = self.agent.step(x, hidden)
        eps = 0.0 if greedy else self.epsilon_schedule(env_steps)
        return baseline_act(q.data, eps, self.rng), hidden

    def modules(self):
        return {
            "agent": self.agent,
            "mixer": self.mixer,
            "target_agent": self.target_agent,
            "target_mixer": self.target_mixer,
        }

    def save(self, path):
        save_bundle(path, self.modules())

    def load(self, path):
        load_bundle(path, self.modules())

    def sync_targets(self):
        self.target_agent.load_state_dict(self.agent.state_dict())
        self.target_mixer.load_state_dict(self.mixer.state_dict())

    def train_step(self, batch: EpisodeBatch, env_steps, episodes):
        c = self.config
        A = self.n_actions
        inputs = build_agent_inputs(batch.obs, batch.actions, A)
        bi, ti = np.nonzero(batch.mask > 0)
        states = batch.states[bi, ti]
        actions = batch.actions[bi, ti]
        rewards = batch.rewards[bi, ti]
        term = batch.terminated[bi, ti]

        y = rewards.copy()
        live = term == 0
        if live.any():
            with no_grad():
                target_q = self.target_agent.forward_batch(inputs).data
            bn, tn = bi[live], ti[live] + 1
            boot = greedy_target(target_q[bn, tn], batch.states[bn, tn], self.target_mixer)
            y[live] = rewards[live] + c.gamma * boot

        q = self.agent.forward_batch(inputs)
        q_taken = (q[bi, ti] * one_hot(actions, A)).sum(axis=-1)
        loss = alter_loss(self.mixer(q_taken, states), y)
        self.opt.zero_grad()
        loss.backward()
        clip_global_norm(self.opt.params, c.grad_norm_clip)
        self.opt.step()

        self.train_steps += 1
        if episodes - self.last_target_sync >= c.target_update_episodes:
            self.sync_targets()
            self.last_target_sync = episodes
        return {
            "step": env_steps,
            "loss_td": loss.item(),
            "epsilon": self.epsilon_schedule(env_steps),
        }
