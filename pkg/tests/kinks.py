"""Distance of every ReLU / abs input from its kink, per network type.

Central differences are only valid where the function is smooth along the
probe, so gradient checks skip points closer than a small margin.
"""
import numpy as np

from dave.networks import AgentNet, AutoEncoder, IGMFreeMixer, QMixer, joint_one_hot


def agent_margin(net: AgentNet, inputs):
    return float(np.abs(np.asarray(inputs) @ net.fc1.weight.data + net.fc1.bias.data).min())


def _lin(layer, x):
    return x @ layer.weight.data + layer.bias.data


def mixer_margin(mixer, state, joint_onehot=None):
    if isinstance(mixer, IGMFreeMixer):
        x = mixer.hyper_input(state, joint_onehot)
        return float(np.abs(_lin(mixer.hyper_v1, x)).min())
    if isinstance(mixer, QMixer):
        pre = [_lin(mixer.hyper_v1, state)]
        if mixer.monotonic:
            pre += [_lin(mixer.hyper_w1, state), _lin(mixer.hyper_w2, state)]
        return float(min(np.abs(p).min() for p in pre))
    return np.inf


def autoencoder_margin(ae: AutoEncoder, state, joint_actions):
    x = np.concatenate([state, joint_one_hot(joint_actions, ae.n_actions)], axis=-1)
    pre1 = _lin(ae.enc1, x)
    pre2 = _lin(ae.dec1, _lin(ae.enc2, np.maximum(pre1, 0)))
    return float(min(np.abs(pre1).min(), np.abs(pre2).min()))
