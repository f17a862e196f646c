"""Experiment runner: data collection, train/eval loop, metrics and plots."""
from __future__ import annotations

import csv
import itertools
import logging
import os
from dataclasses import dataclass, fields

import numpy as np

from .baselines import ALGORITHM_MIXERS, BaselineLearner
from .config import TrainerConfig, dump_config, load_config
from .envs import Episode, MatrixGame, make_env
from .replay import ReplayBuffer
from .trainer import DAVELearner

logger = logging.getLogger(__name__)


@dataclass
class MetricsRow:
    step: int
    episodes: int
    loss_alter: float | None = None
    loss_ego: float | None = None
    loss_recon: float | None = None
    loss_td: float | None = None
    lambda_: float | None = None
    epsilon: float | None = None
    eval_return: float | None = None
    eval_optimal: int | None = None


METRICS_HEADER = [f.name.rstrip("_") for f in fields(MetricsRow)]


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def make_learner(spec, config: TrainerConfig, rng):
    if config.algorithm == "dave":
        return DAVELearner(spec, config, rng)
    return BaselineLearner(spec, config, rng, ALGORITHM_MIXERS[config.algorithm])


def collect_uniform(env, budget, rng):
    """``budget`` one-step episodes whose joint actions cover the joint space evenly.

    Joint actions are enumerated round-robin and then shuffled, so visit
    counts differ by at most one.
    """
    if not isinstance(env, MatrixGame):
        raise TypeError("uniform visitation needs a single-state matrix game")
    spec = env.get_env_info()
    joint_space = list(itertools.product(*(range(n) for n in spec.actions_per_agent)))
    order = [joint_space[i % len(joint_space)] for i in range(budget)]
    perm = rng.permutation(budget)
    episodes = []
    for i in perm:
        joint = order[i]
        s0, o0 = env.reset()
        res = env.step(joint)
        episodes.append(
            Episode(
                states=np.stack([s0, res.next_state]),
                obs=np.stack([o0, res.next_obs]),
                actions=np.array([joint], dtype=np.int64),
                rewards=np.array([res.reward]),
                terminated=np.array([float(res.terminated)]),
                mask=np.ones(1),
            )
        )
    return episodes


def rollout(env, learner, greedy=False, env_steps=0, seed=None):
    """Play one episode with the learner's decentralised policy."""
    spec = env.get_env_info()
    state, obs = env.reset(seed)
    states, observations, actions, rewards, terms = [state], [obs], [], [], []
    hidden = learner.init_hidden()
    prev = [None] * spec.n_agents
    for _ in range(spec.episode_limit):
        joint, hidden = learner.act_step(obs, prev, hidden, greedy=greedy, env_steps=env_steps)
        res = env.step(joint)
        actions.append(np.asarray(joint, dtype=np.int64))
        rewards.append(res.reward)
        terms.append(float(res.terminated))
        states.append(res.next_state)
        observations.append(res.next_obs)
        state, obs = res.next_state, res.next_obs
        prev = [int(a) for a in joint]
        if res.terminated:
            break
    T = len(actions)
    return Episode(
        states=np.stack(states),
        obs=np.stack(observations),
        actions=np.stack(actions),
        rewards=np.array(rewards),
        terminated=np.array(terms),
        mask=np.ones(T),
    )


def evaluate(learner, env, episodes=32):
    """Greedy rollouts; returns ``(mean return, 1 if optimal else 0)``.

    Uses a private RNG so the learner's random stream is left untouched.
    """
    saved_rng = learner.rng
    learner.rng = np.random.default_rng(0)
    try:
        returns = [rollout(env, learner, greedy=True).episode_return for _ in range(episodes)]
    finally:
        learner.rng = saved_rng
    mean_return = float(np.mean(returns))
    return mean_return, int(mean_return >= env.optimal_return - 1e-9)


def run(config: TrainerConfig, out_dir=None, progress=False):
    """Train and evaluate one seed; returns the output directory.

    Writes ``config_seed<N>.txt``, ``seed<N>.csv`` and ``checkpoint_seed<N>.bin``.
    """
    out_dir = out_dir or config.out_dir
    os.makedirs(out_dir, exist_ok=True)
    seed = config.seed
    learn_seq, data_seq = np.random.SeedSequence(seed).spawn(2)
    rng = np.random.default_rng(learn_seq)
    env = make_env(config.env, config.k)
    eval_env = make_env(config.env, config.k)
    spec = env.get_env_info()
    learner = make_learner(spec, config, rng)
    buffer = ReplayBuffer(config.buffer_size)

    with open(os.path.join(out_dir, f"config_seed{seed}.txt"), "w") as fh:
        fh.write(dump_config(config))

    rows = []
    report = {}
    env_steps = episodes = 0
    next_eval = config.eval_interval

    def record():
        ret, optimal = evaluate(learner, eval_env, config.eval_episodes)
        rows.append(
            MetricsRow(
                step=env_steps,
                episodes=episodes,
                loss_alter=report.get("loss_alter"),
                loss_ego=report.get("loss_ego"),
                loss_recon=report.get("loss_recon"),
                loss_td=report.get("loss_td"),
                lambda_=report.get("lambda"),
                epsilon=report.get("epsilon"),
                eval_return=ret,
                eval_optimal=optimal,
            )
        )
        if progress:
            logger.info("step %d episodes %d return %.3f", env_steps, episodes, ret)

    record()
    uniform = None
    if isinstance(env, MatrixGame):
        uniform = iter(collect_uniform(env, config.t_max, np.random.default_rng(data_seq)))
    while env_steps < config.t_max:
        if uniform is not None:
            episode = next(uniform)
        else:
            episode = rollout(env, learner, env_steps=env_steps)
        buffer.push(episode)
        env_steps += len(episode)
        episodes += 1
        if len(buffer) >= config.batch_size:
            for _ in range(config.updates_per_episode):
                batch = buffer.sample(config.batch_size, rng)
                report = learner.train_step(batch, env_steps, episodes)
        if env_steps >= next_eval:
            record()
            while next_eval <= env_steps:
                next_eval += config.eval_interval
    if rows[-1].step != env_steps:
        record()

    write_metrics(os.path.join(out_dir, f"seed{seed}.csv"), rows)
    learner.save(os.path.join(out_dir, f"checkpoint_seed{seed}.bin"))
    return out_dir


def write_metrics(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for r in rows:
            w.writerow([_fmt(getattr(r, f.name)) for f in fields(MetricsRow)])


def read_metrics(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != METRICS_HEADER:
            raise ValueError(f"{path}: malformed metrics header {header}")
        cols = {h: [] for h in header}
        for lineno, row in enumerate(reader, 2):
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            for h, v in zip(header, row):
                try:
                    cols[h].append(float(v) if v != "" else np.nan)
                except ValueError:
                    raise ValueError(f"{path}:{lineno}: bad value {v!r} for {h}") from None
    return {h: np.array(v) for h, v in cols.items()}


def final_return(path):
    return float(read_metrics(path)["eval_return"][-1])


def load_learner(checkpoint, config_path, env_name=None, k=None):
    cfg = load_config(config_path)
    changes = {}
    if env_name is not None:
        changes["env"] = env_name
    if k is not None:
        changes["k"] = k
    cfg = cfg.replace(**changes)
    env = make_env(cfg.env, cfg.k)
    learner = make_learner(env.get_env_info(), cfg, np.random.default_rng(cfg.seed))
    learner.load(checkpoint)
    return learner, env, cfg


def _run_label(path):
    d = os.path.dirname(os.path.abspath(path))
    for name in sorted(os.listdir(d)):
        if name.startswith("config_seed") and name.endswith(".txt"):
            cfg = load_config(os.path.join(d, name))
            return cfg.env if cfg.env == "multistep" else f"{cfg.env} (k={cfg.k:g})", cfg.algorithm
    return "run", os.path.basename(d)


def emit_plots(metric_files, out_path):
    """Learning curves: one panel per environment, median over seeds with 25-75% band."""
    if not metric_files:
        raise ValueError("emit_plots needs at least one metrics file")
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    groups = {}
    for path in metric_files:
        env_label, algo = _run_label(path)
        groups.setdefault(env_label, {}).setdefault(algo, []).append(read_metrics(path))

    fig, axes = plt.subplots(1, len(groups), figsize=(5 * len(groups), 3.6), squeeze=False)
    for ax, (env_label, algos) in zip(axes[0], sorted(groups.items())):
        for algo, runs in sorted(algos.items()):
            steps = runs[0]["step"]
            n = min(len(r["step"]) for r in runs)
            curves = np.stack([r["eval_return"][:n] for r in runs])
            steps = steps[:n]
            med = np.median(curves, axis=0)
            (line,) = ax.plot(steps, med, label=f"{algo} ({len(runs)} seeds)")
            if len(runs) > 1:
                lo, hi = np.percentile(curves, [25, 75], axis=0)
                ax.fill_between(steps, lo, hi, color=line.get_color(), alpha=0.25)
        ax.set_title(env_label)
        ax.set_xlabel("environment steps")
        ax.set_ylabel("greedy evaluation return")
        ax.legend(fontsize=8)
    fig.tight_layout()
    kwargs = {}
    if out_path.endswith(".svg"):
        kwargs["metadata"] = {"Date": None}
        matplotlib.rcParams["svg.hashsalt"] = "dave"
    elif out_path.endswith(".png"):
        kwargs["metadata"] = {"Software": None}
    fig.savefig(out_path, **kwargs)
    plt.close(fig)
    return out_path
