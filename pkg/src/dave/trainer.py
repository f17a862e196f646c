"""DAVE: ego policy + alter-ego value decomposition without IGM.

Per train step, in order: sample a batch of episodes, draw ``M`` ego joint
actions per state, regress ``Q_tot`` onto a sampled expected-value target,
pick the best sampled joint action ``u*`` and the most novel anti-ego joint
action, fit the ego policy to both, fit the auto-encoder on visited pairs,
and sync target networks on schedule.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import RMSProp, clip_global_norm, no_grad
from .config import TrainerConfig
from .envs import EnvSpec
from .networks import (
    AgentNet,
    AutoEncoder,
    IGMFreeMixer,
    build_agent_inputs,
    joint_one_hot,
    load_bundle,
    one_hot,
    save_bundle,
)
from .replay import EpisodeBatch


@dataclass
class JointActionSet:
    """``M`` i.i.d. joint actions per state: ``actions`` is ``(..., M, n_agents)``."""

    actions: np.ndarray
    anti: bool = False

    def __len__(self):
        return self.actions.shape[-2]


@dataclass(frozen=True)
class LambdaSchedule:
    init: float = 0.5
    end: float = 0.0
    period: int = 25000

    def __call__(self, step):
        return lambda_at(step, self)


def lambda_at(step, schedule: LambdaSchedule):
    if step < 0:
        raise ValueError("step must be >= 0")
    frac = min(step / schedule.period, 1.0)
    return schedule.init + (schedule.end - schedule.init) * frac


def _probs(logits, anti):
    x = -logits if anti else logits
    x = x - x.max(axis=-1, keepdims=True)
    e = np.exp(x)
    return e / e.sum(axis=-1, keepdims=True)


def sample_categorical(probs, rng, size=()):
    """Inverse-CDF draws from per-agent distributions ``probs`` ``(..., n, A)``.

    Result shape: ``probs.shape[:-2] + size + (n,)``.
    """
    cdf = np.cumsum(probs, axis=-1)
    lead = probs.shape[:-2]
    n = probs.shape[-2]
    u = rng.random(lead + tuple(size) + (n,))
    cdf = cdf.reshape(lead + (1,) * len(size) + cdf.shape[-2:])
    idx = (u[..., None] >= cdf).sum(axis=-1)
    return np.minimum(idx, probs.shape[-1] - 1)


def sample_joint_actions(ego_logits, M, rng, anti=False) -> JointActionSet:
    """Draw ``M`` joint actions from the factorised ego (or anti-ego) policy.

    ``ego_logits`` is ``(..., n_agents, n_actions)``; each agent's action is
    drawn independently from softmax (softmin if ``anti``) of its logits.
    """
    if M < 1:
        raise ValueError(f"sample size M must be >= 1, got {M}")
    logits = np.asarray(ego_logits, dtype=np.float64)
    return JointActionSet(sample_categorical(_probs(logits, anti), rng, (M,)), anti)


def p_optimal(joint_prob, M):
    """Probability that ``M`` i.i.d. draws contain a joint action of probability ``joint_prob``."""
    if not 0.0 < joint_prob < 1.0:
        raise ValueError(f"joint_prob must lie in (0, 1), got {joint_prob}")
    if M < 1:
        raise ValueError("M must be >= 1")
    return 1.0 - (1.0 - joint_prob) ** M


def evaluate_joint_set(q_values, states, samples, mixer, n_actions):
    """``Q_tot`` of every sampled joint action, without building a graph.

    ``q_values`` ``(N, n, A)``, ``states`` ``(N, S)``, ``samples`` ``(N, M, n)``
    -> ``(N, M)``.
    """
    def evaluate(acts):
        N, K, n = acts.shape
        q_sel = np.take_along_axis(
            np.broadcast_to(q_values[:, None], (N, K) + q_values.shape[1:]), acts[..., None], axis=-1
        )[..., 0]
        st = np.repeat(states, K, axis=0)
        with no_grad():
            q_tot = mixer(q_sel.reshape(N * K, n), st, joint_one_hot(acts.reshape(N * K, n), n_actions))
        return q_tot.data.reshape(N, K)

    return _per_joint_action(evaluate, samples, n_actions)


def _per_joint_action(evaluate, samples, n_actions):
    """``evaluate(samples)``, computed once per distinct joint action when that is cheaper.

    Row-wise networks give the same value for repeated joint actions, so when
    the joint space is smaller than ``M`` every joint action is scored once
    and the results are gathered.
    """
    N, M, n = samples.shape
    n_joint = n_actions**n
    if n_joint >= M:
        return evaluate(samples)
    space = np.array(list(itertools.product(range(n_actions), repeat=n)), dtype=samples.dtype)
    table = evaluate(np.broadcast_to(space, (N,) + space.shape))
    codes = np.ravel_multi_index(tuple(np.moveaxis(samples, -1, 0)), (n_actions,) * n)
    return np.take_along_axis(table, codes, axis=1)


def select_best_joint_action(joint_set: JointActionSet, q_values, mixer, state, n_actions):
    """``u*``: the sampled joint action with the highest ``Q_tot``; ties -> lowest index.

    Unbatched: ``joint_set.actions`` ``(M, n)``, ``q_values`` ``(n, A)``, ``state`` ``(S,)``.
    Batched inputs carry a leading ``N`` axis. Returns ``(u*, values)``.
    """
    acts = np.asarray(joint_set.actions)
    single = acts.ndim == 2
    q = np.asarray(q_values, dtype=np.float64)
    s = np.asarray(state, dtype=np.float64)
    if single:
        acts, q, s = acts[None], q[None], s[None]
    values = evaluate_joint_set(q, s, acts, mixer, n_actions)
    best = np.argmax(values, axis=1)
    u_star = acts[np.arange(len(acts)), best]
    return (u_star[0], values[0]) if single else (u_star, values)


def select_novel_action(state, anti_set: JointActionSet, autoencoder):
    """``u_hat*``: the anti-ego sample with the largest reconstruction loss; ties -> lowest index.

    Unbatched or batched like :func:`select_best_joint_action`. Returns ``(u_hat*, losses)``.
    """
    acts = np.asarray(anti_set.actions)
    s = np.asarray(state, dtype=np.float64)
    single = acts.ndim == 2
    if single:
        acts, s = acts[None], s[None]
    def evaluate(a):
        N, K, n = a.shape
        with no_grad():
            return autoencoder.recon_loss(np.repeat(s, K, axis=0), a.reshape(N * K, n)).data.reshape(N, K)

    losses = _per_joint_action(evaluate, acts, autoencoder.n_actions)
    N = len(acts)
    best = np.argmax(losses, axis=1)
    u_hat = acts[np.arange(N), best]
    return (u_hat[0], losses[0]) if single else (u_hat, losses)


def ego_loss(ego_logits, u_star, u_hat, lam):
    """``-(log pi(u*) + lam * log pi(u_hat*))`` with a factorised joint policy.

    ``ego_logits`` is a Tensor ``(n, A)`` or ``(N, n, A)``; batched losses are
    averaged over the ``N`` states.
    """
    logits = ad.as_tensor(ego_logits)
    A = logits.shape[-1]
    logp = ad.log_softmax(logits)
    nll_star = -(logp * one_hot(u_star, A)).sum(axis=-1).sum(axis=-1)
    loss = nll_star
    if lam != 0.0:
        nll_hat = -(logp * one_hot(u_hat, A)).sum(axis=-1).sum(axis=-1)
        loss = loss + lam * nll_hat
    return loss.mean() if loss.ndim else loss


def alter_target(rewards, terminated, gamma, next_values=None):
    """``y = r + gamma * (1 - done) * mean_i Q_tot^-(s', u_i)``.

    ``next_values`` ``(N, M)`` holds target-network ``Q_tot`` of the ego
    samples at the next state (unused where ``terminated``).
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    done = np.asarray(terminated, dtype=np.float64)
    if next_values is None:
        boot = np.zeros_like(rewards)
    else:
        boot = np.asarray(next_values, dtype=np.float64).mean(axis=-1)
    return rewards + gamma * (1.0 - done) * boot


def alter_loss(q_tot, y, mask=None):
    """Masked mean of squared TD errors; ``y`` is a constant."""
    q_tot = ad.as_tensor(q_tot)
    y = np.asarray(y, dtype=np.float64)
    mask = np.ones_like(y) if mask is None else np.asarray(mask, dtype=np.float64)
    err = (q_tot - y) * mask
    return (err * err).sum() * (1.0 / max(mask.sum(), 1.0))


def act(ego_logits, rng, greedy=False):
    """One action per agent from ``(n, A)`` logits: a categorical draw, or argmax."""
    logits = np.asarray(ego_logits, dtype=np.float64)
    if greedy:
        return np.argmax(logits, axis=-1)
    return sample_categorical(_probs(logits, False), rng)


def _valid_rows(batch: EpisodeBatch):
    b, t = np.nonzero(batch.mask > 0)
    return b, t


class DAVELearner:
    """Owns the networks, optimisers and counters of one DAVE run."""

    def __init__(self, spec: EnvSpec, config: TrainerConfig, rng):
        self.spec = spec
        self.config = config
        self.rng = rng
        n, A = spec.n_agents, spec.n_actions
        self.n_agents, self.n_actions = n, A
        in_dim = spec.obs_dim + n + A
        c = config
        self.alter = AgentNet(in_dim, A, rng, c.agent_embed_dim, c.agent_hidden_dim)
        self.ego = AgentNet(in_dim, A, rng, c.agent_embed_dim, c.agent_hidden_dim)
        self.mixer = IGMFreeMixer(n, spec.state_dim, n * A, rng, c.mixer_embed_dim)
        self.autoencoder = AutoEncoder(spec.state_dim, n, A, rng, c.ae_hidden_dim, c.ae_code_dim)
        self.target_alter = self.alter.clone()
        self.target_mixer = self.mixer.clone()

        def opt(params):
            return RMSProp(params, c.learning_rate, c.rmsprop_alpha, c.rmsprop_eps)

        self.alter_opt = opt(self.alter.parameters() + self.mixer.parameters())
        self.ego_opt = opt(self.ego.parameters())
        self.ae_opt = opt(self.autoencoder.parameters())
        self.lambda_schedule = LambdaSchedule(c.lambda_init, c.lambda_end, c.lambda_anneal_steps)
        self.train_steps = 0
        self.last_target_sync = 0

    # acting
    def init_hidden(self):
        return self.ego.init_hidden(self.n_agents)

    def act_step(self, obs, prev_actions, hidden, greedy=False, **_):
        """One decentralised decision for all agents from the ego policy."""
        x = np.concatenate(
            [np.asarray(obs), np.eye(self.n_agents), _prev_onehot(prev_actions, self.n_actions)],
            axis=-1,
        )
        with no_grad():
            logits, hidden = self.ego.step(x, hidden)
        return act(logits.data, self.rng, greedy=greedy), hidden

    # training
    def modules(self):
        return {
            "alter": self.alter,
            "ego": self.ego,
            "mixer": self.mixer,
            "autoencoder": self.autoencoder,
            "target_alter": self.target_alter,
            "target_mixer": self.target_mixer,
        }

    def save(self, path):
        save_bundle(path, self.modules())

    def load(self, path):
        load_bundle(path, self.modules())

    def sync_targets(self):
        self.target_alter.load_state_dict(self.alter.state_dict())
        self.target_mixer.load_state_dict(self.mixer.state_dict())

    def _update(self, loss, opt):
        opt.zero_grad()
        loss.backward()
        clip_global_norm(opt.params, self.config.grad_norm_clip)
        opt.step()

    def train_step(self, batch: EpisodeBatch, env_steps, episodes):
        c = self.config
        n, A, M = self.n_agents, self.n_actions, c.sample_size
        inputs = build_agent_inputs(batch.obs, batch.actions, A)
        bi, ti = _valid_rows(batch)
        states = batch.states[bi, ti]
        actions = batch.actions[bi, ti]
        rewards = batch.rewards[bi, ti]
        term = batch.terminated[bi, ti]
        lam = lambda_at(env_steps, self.lambda_schedule)

        with no_grad():
            ego_logits = self.ego.forward_batch(inputs).data
            target_q = self.target_alter.forward_batch(inputs).data
        # U^ego at s_t (for u*) and s_{t+1} (for the target)
        u_now = sample_joint_actions(ego_logits[bi, ti], M, self.rng).actions
        live = term == 0
        y = rewards.copy()
        if live.any():
            bn, tn = bi[live], ti[live] + 1
            u_next = sample_joint_actions(ego_logits[bn, tn], M, self.rng).actions
            next_vals = evaluate_joint_set(
                target_q[bn, tn], batch.states[bn, tn], u_next, self.target_mixer, A
            )
            y[live] = alter_target(rewards[live], term[live], c.gamma, next_vals)

        q = self.alter.forward_batch(inputs)
        q_taken = (q[bi, ti] * one_hot(actions, A)).sum(axis=-1)
        q_tot = self.mixer(q_taken, states, joint_one_hot(actions, A))
        l_alter = alter_loss(q_tot, y)
        self._update(l_alter, self.alter_opt)

        with no_grad():
            q_new = self.alter.forward_batch(inputs).data[bi, ti]
        u_star, _ = select_best_joint_action(JointActionSet(u_now), q_new, self.mixer, states, A)

        if lam > 0.0:
            anti = sample_joint_actions(ego_logits[bi, ti], M, self.rng, anti=True)
            u_hat, _ = select_novel_action(states, anti, self.autoencoder)
        else:
            u_hat = u_star
        logits = self.ego.forward_batch(inputs)[bi, ti]
        l_ego = ego_loss(logits, u_star, u_hat, lam)
        self._update(l_ego, self.ego_opt)

        l_recon = self.autoencoder.recon_loss(states, actions).mean()
        self._update(l_recon, self.ae_opt)

        self.train_steps += 1
        if episodes - self.last_target_sync >= c.target_update_episodes:
            self.sync_targets()
            self.last_target_sync = episodes
        return {
            "step": env_steps,
            "loss_alter": l_alter.item(),
            "loss_ego": l_ego.item(),
            "loss_recon": l_recon.item(),
            "lambda": lam,
        }


def _prev_onehot(prev_actions, n_actions):
    out = np.zeros((len(prev_actions), n_actions))
    for a, u in enumerate(prev_actions):
        if u is not None and u >= 0:
            out[a, u] = 1.0
    return out
