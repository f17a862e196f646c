"""Agent trunks, mixing networks and the novelty auto-encoder."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .nn import GRUCell, Linear, Module, load_tensors, save_tensors


def one_hot(indices, n):
    indices = np.asarray(indices, dtype=np.int64)
    return np.eye(n)[indices]


def joint_one_hot(joint_actions, n_actions):
    """``(..., n_agents)`` int actions -> ``(..., n_agents * n_actions)`` indicators."""
    oh = one_hot(joint_actions, n_actions)
    return oh.reshape(*oh.shape[:-2], -1)


def build_agent_inputs(obs, actions, n_actions):
    """Agent-net inputs for every timestep of a batch.

    ``obs`` is ``(B, T + 1, n, obs_dim)``, ``actions`` is ``(B, T, n)``.
    Each input is ``[obs, one-hot agent id, one-hot previous own action]``;
    the previous action is all zeros at ``t = 0``.
    """
    B, T1, n, _ = obs.shape
    ids = np.broadcast_to(np.eye(n), (B, T1, n, n))
    prev = np.zeros((B, T1, n, n_actions))
    if T1 > 1:
        prev[:, 1:] = one_hot(actions[:, : T1 - 1], n_actions)
    return np.concatenate([obs, ids, prev], axis=-1)


class AgentNet(Module):
    """Shared recurrent trunk: linear + ReLU, GRU cell, linear head.

    Used both for the alter-ego utilities (head = Q-values) and for the ego
    policy (head = logits); the two always hold separate parameters.
    """

    def __init__(self, input_dim, n_actions, rng, embed_dim=64, hidden_dim=64):
        self.input_dim = input_dim
        self.n_actions = n_actions
        self.hidden_dim = hidden_dim
        self.fc1 = Linear(input_dim, embed_dim, rng)
        self.rnn = GRUCell(embed_dim, hidden_dim, rng)
        self.fc2 = Linear(hidden_dim, n_actions, rng)

    def init_hidden(self, batch):
        return Tensor(np.zeros((batch, self.hidden_dim)))

    def step(self, x, h):
        x = ad.as_tensor(x)
        if x.shape[-1] != self.input_dim:
            raise ShapeError(f"agent net expects inputs of width {self.input_dim}, got {x.shape}")
        h = self.rnn(ad.relu(self.fc1(x)), h)
        return self.fc2(h), h

    def forward(self, inputs):
        """``inputs`` ``(T, N, input_dim)`` -> Tensor ``(T, N, n_actions)``.

        The hidden state starts at zero for every sequence.
        """
        inputs = np.asarray(inputs, dtype=np.float64)
        if inputs.ndim != 3 or inputs.shape[0] < 1:
            raise ShapeError(f"agent net expects a non-empty (T, N, D) sequence, got {inputs.shape}")
        h = self.init_hidden(inputs.shape[1])
        outs = []
        for t in range(inputs.shape[0]):
            out, h = self.step(inputs[t], h)
            outs.append(out)
        return ad.stack(outs, axis=0)

    def forward_batch(self, agent_inputs):
        """``(B, T + 1, n, D)`` inputs -> Tensor ``(B, T + 1, n, n_actions)``."""
        B, T1, n, D = agent_inputs.shape
        seq = np.swapaxes(agent_inputs, 0, 1).reshape(T1, B * n, D)
        out = self.forward(seq).reshape(T1, B, n, self.n_actions)
        return _swap01(out)


def _swap01(t):
    """Swap the first two axes of a Tensor."""
    data = np.swapaxes(t.data, 0, 1)

    def backward(g):
        return (np.swapaxes(g, 0, 1),)

    return ad._make(np.ascontiguousarray(data), (t,), backward)


def agent_sequence(net, obs_seq, agent_id, prev_actions, n_agents):
    """Run one agent's trajectory through ``net``.

    ``obs_seq`` is ``(T, obs_dim)``; ``prev_actions`` holds the agent's own
    previous action per step (``-1`` for none). Returns Tensor ``(T, n_actions)``.
    """
    obs_seq = np.asarray(obs_seq, dtype=np.float64)
    if obs_seq.ndim != 2 or len(obs_seq) == 0:
        raise ShapeError(f"expected a non-empty (T, obs_dim) sequence, got {obs_seq.shape}")
    T = len(obs_seq)
    ids = np.tile(one_hot(agent_id, n_agents), (T, 1))
    prev = np.zeros((T, net.n_actions))
    for t, a in enumerate(prev_actions):
        if a >= 0:
            prev[t, a] = 1.0
    x = np.concatenate([obs_seq, ids, prev], axis=-1)[:, None, :]
    return net.forward(x).reshape(T, net.n_actions)


def _batched(q, state, extra=None):
    q, state = ad.as_tensor(q), np.asarray(state, dtype=np.float64)
    single = q.ndim == 1
    if single:
        q = q.reshape(1, -1)
        state = state.reshape(1, -1)
        if extra is not None:
            extra = np.asarray(extra, dtype=np.float64).reshape(1, -1)
    if len(state) != q.shape[0]:
        raise ShapeError(f"mixer: {q.shape[0]} utility rows vs {len(state)} states")
    return q, state, extra, single


class IGMFreeMixer(Module):
    """Two-layer mixer whose weights come from hypernetworks on (state, joint action).

    No sign constraint is applied to any generated weight.
    """

    conditions_on_action = True

    def __init__(self, n_agents, state_dim, joint_dim, rng, embed_dim=32):
        self.n_agents = n_agents
        self.embed_dim = embed_dim
        self.state_dim = state_dim
        self.joint_dim = joint_dim
        d = state_dim + joint_dim
        self.hyper_w1 = Linear(d, n_agents * embed_dim, rng)
        self.hyper_b1 = Linear(d, embed_dim, rng)
        self.hyper_w2 = Linear(d, embed_dim, rng)
        self.hyper_v1 = Linear(d, embed_dim, rng)
        self.hyper_v2 = Linear(embed_dim, 1, rng)

    def hyper_input(self, state, joint_onehot):
        return np.concatenate([state, joint_onehot], axis=-1)

    def weights(self, x):
        w1 = self.hyper_w1(x).reshape(-1, self.n_agents, self.embed_dim)
        b1 = self.hyper_b1(x)
        w2 = self.hyper_w2(x)
        v = self.hyper_v2(ad.relu(self.hyper_v1(x))).reshape(-1)
        return w1, b1, w2, v

    def forward(self, q, state, joint_onehot):
        q, state, joint_onehot, single = _batched(q, state, joint_onehot)
        if q.shape[1] != self.n_agents or joint_onehot.shape[-1] != self.joint_dim:
            raise ShapeError(
                f"mixer: utilities {q.shape} / joint one-hot {joint_onehot.shape} "
                f"do not match {self.n_agents} agents, joint width {self.joint_dim}"
            )
        w1, b1, w2, v = self.weights(self.hyper_input(state, joint_onehot))
        N = q.shape[0]
        hidden = ad.elu((q.reshape(N, 1, self.n_agents) @ w1).reshape(N, self.embed_dim) + b1)
        out = (hidden * w2).sum(axis=-1) + v
        return out.reshape(()) if single else out


class QMixer(Module):
    """State-conditioned QMIX mixer.

    ``monotonic=True`` takes absolute values of the generated weights (QMIX);
    ``monotonic=False`` keeps their sign (the naive IGM-free variant).
    """

    conditions_on_action = False

    def __init__(self, n_agents, state_dim, rng, embed_dim=32, monotonic=True):
        self.n_agents = n_agents
        self.embed_dim = embed_dim
        self.state_dim = state_dim
        self.monotonic = monotonic
        self.hyper_w1 = Linear(state_dim, n_agents * embed_dim, rng)
        self.hyper_b1 = Linear(state_dim, embed_dim, rng)
        self.hyper_w2 = Linear(state_dim, embed_dim, rng)
        self.hyper_v1 = Linear(state_dim, embed_dim, rng)
        self.hyper_v2 = Linear(embed_dim, 1, rng)

    def forward(self, q, state, joint_onehot=None):
        q, state, _, single = _batched(q, state)
        if q.shape[1] != self.n_agents:
            raise ShapeError(f"mixer: utilities {q.shape} do not match {self.n_agents} agents")
        N = q.shape[0]
        w1 = self.hyper_w1(state).reshape(N, self.n_agents, self.embed_dim)
        w2 = self.hyper_w2(state)
        if self.monotonic:
            w1, w2 = ad.tabs(w1), ad.tabs(w2)
        b1 = self.hyper_b1(state)
        v = self.hyper_v2(ad.relu(self.hyper_v1(state))).reshape(-1)
        hidden = ad.elu((q.reshape(N, 1, self.n_agents) @ w1).reshape(N, self.embed_dim) + b1)
        out = (hidden * w2).sum(axis=-1) + v
        return out.reshape(()) if single else out


class AdditiveMixer(Module):
    """VDN: ``Q_tot`` is the plain sum of utilities."""

    conditions_on_action = False

    def forward(self, q, state=None, joint_onehot=None):
        q = ad.as_tensor(q)
        return q.sum(axis=-1)


def mix_igmfree(mixer, q_values, state, joint_action, n_actions):
    return mixer(q_values, state, joint_one_hot(joint_action, n_actions))


def mix_monotonic(mixer, q_values, state):
    return mixer(q_values, state)


class AutoEncoder(Module):
    """Reconstructs ``(state, joint action)`` through a narrow code.

    The per-sample loss is ``mean((s - s')^2) + sum_a CE(u^a, logits_a)``.
    """

    def __init__(self, state_dim, n_agents, n_actions, rng, hidden_dim=32, code_dim=8):
        self.state_dim = state_dim
        self.n_agents = n_agents
        self.n_actions = n_actions
        in_dim = state_dim + n_agents * n_actions
        self.code_dim = min(code_dim, in_dim - 1)
        self.enc1 = Linear(in_dim, hidden_dim, rng)
        self.enc2 = Linear(hidden_dim, self.code_dim, rng)
        self.dec1 = Linear(self.code_dim, hidden_dim, rng)
        self.dec_state = Linear(hidden_dim, state_dim, rng)
        self.dec_actions = Linear(hidden_dim, n_agents * n_actions, rng)

    def forward(self, state, joint_actions):
        """Batched: ``state`` ``(N, state_dim)``, ``joint_actions`` ``(N, n)`` ints.

        Returns ``(recon_state, action_logits (N, n, A), loss (N,))``.
        """
        state = np.asarray(state, dtype=np.float64)
        joint_actions = np.asarray(joint_actions, dtype=np.int64)
        x = np.concatenate([state, joint_one_hot(joint_actions, self.n_actions)], axis=-1)
        code = self.enc2(ad.relu(self.enc1(x)))
        h = ad.relu(self.dec1(code))
        recon = self.dec_state(h)
        logits = self.dec_actions(h).reshape(-1, self.n_agents, self.n_actions)
        diff = recon - state
        state_err = (diff * diff).mean(axis=-1)
        ce = ad.cross_entropy(logits, joint_actions, reduction="none").sum(axis=-1)
        return recon, logits, state_err + ce

    def recon_loss(self, state, joint_actions):
        return self.forward(state, joint_actions)[2]


def autoencode(ae, state, joint_action):
    """Single pair: ``(recon_state, per-agent logits, scalar L_recon)``."""
    recon, logits, loss = ae(np.asarray(state)[None], np.asarray(joint_action)[None])
    return recon.reshape(-1), logits.reshape(ae.n_agents, ae.n_actions), loss.reshape(())


def save_bundle(path, modules):
    """Save ``{prefix: Module}`` as one flat named-tensor file."""
    named = {}
    for prefix, mod in modules.items():
        for name, arr in mod.state_dict().items():
            named[f"{prefix}.{name}"] = arr
    save_tensors(path, named)


def load_bundle(path, modules):
    named = load_tensors(path)
    for prefix, mod in modules.items():
        pre = prefix + "."
        mod.load_state_dict({k[len(pre) :]: v for k, v in named.items() if k.startswith(pre)})
