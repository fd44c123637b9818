"""PPO actor-critic for a one-dimensional Gaussian speed command.

Networks are :class:`~mixedav.nn.MLP` instances trained with exact
backpropagation and Adam. Rollouts are whole episodes; each episode draws its
own random stream from ``(seed, iteration, episode)``, so collection order and
threading never change the result.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .errors import CheckpointError, DomainError, IntegrityError
from .nn import MLP, Adam

LOG_2PI = math.log(2.0 * math.pi)
LOG_STD_MIN, LOG_STD_MAX = -5.0, 1.0
CHECKPOINT_VERSION = 1


@dataclass
class Hyperparams:
    gamma: float = 0.99
    lam: float = 0.95
    clip: float = 0.2
    lr_actor: float = 3e-4
    lr_critic: float = 1e-3
    epochs: int = 10
    minibatch: int = 64
    horizon: int = 4          # episodes per iteration
    iterations: int = 150
    entropy_coef: float = 1e-3
    hidden: int = 64
    init_log_std: float = math.log(0.5)
    critic_target: str = "gae"  # or "monte_carlo"
    workers: int = 1

    def __post_init__(self):
        problems = []
        if not (0 < self.gamma <= 1):
            problems.append(f"gamma must lie in (0, 1], got {self.gamma}")
        if not (0 < self.lam <= 1):
            problems.append(f"lam must lie in (0, 1], got {self.lam}")
        if not (0 < self.clip <= 0.5):
            problems.append(f"clip must lie in (0, 0.5], got {self.clip}")
        if not (self.lr_actor > 0 and self.lr_critic > 0):
            problems.append("learning rates must be > 0")
        for name in ("epochs", "minibatch", "horizon", "hidden", "workers"):
            if int(getattr(self, name)) < 1:
                problems.append(f"{name} must be >= 1")
        if self.iterations < 0:
            problems.append("iterations must be >= 0")
        if self.critic_target not in ("gae", "monte_carlo"):
            problems.append(f"critic_target must be 'gae' or 'monte_carlo', got {self.critic_target!r}")
        if problems:
            raise DomainError("; ".join(problems))

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparams":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise DomainError(f"unknown hyperparameters: {sorted(unknown)}")
        return cls(**d)


class GaussianPolicy:
    """Mean from an MLP, state-independent log standard deviation."""

    def __init__(self, obs_dim: int, hidden: int = 64, rng=None, init_log_std=math.log(0.5)):
        self.net = MLP([obs_dim, hidden, hidden, 1], rng)
        self.log_std = np.array([init_log_std], dtype=float)

    @property
    def params(self):
        return self.net.params + [self.log_std]

    @property
    def obs_dim(self):
        return self.net.sizes[0]

    def clamp(self):
        np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX, out=self.log_std)

    def copy(self) -> "GaussianPolicy":
        new = GaussianPolicy.__new__(GaussianPolicy)
        new.net = MLP.__new__(MLP)
        new.net.sizes = list(self.net.sizes)
        new.net.params = [p.copy() for p in self.net.params]
        new.log_std = self.log_std.copy()
        return new


class ValueFunction:
    def __init__(self, obs_dim: int, hidden: int = 64, rng=None):
        self.net = MLP([obs_dim, hidden, hidden, 1], rng)

    @property
    def params(self):
        return self.net.params

    def __call__(self, obs):
        return self.net(np.atleast_2d(obs))[:, 0]


def policy_forward(policy: GaussianPolicy, obs):
    """Mean and standard deviation of the action distribution.

    ``obs`` may be one observation or a batch; the mean has the matching shape.
    """
    obs = np.asarray(obs, dtype=float)
    single = obs.ndim == 1
    out = policy.net(np.atleast_2d(obs))[:, 0]
    std = float(np.exp(policy.log_std[0]))
    return (float(out[0]) if single else out), std


def gaussian_log_prob(action, mean, log_std):
    z = (np.asarray(action) - mean) * np.exp(-log_std)
    return -0.5 * z * z - log_std - 0.5 * LOG_2PI


def sample_action(policy: GaussianPolicy, obs, rng) -> tuple[float, float]:
    """Draw an unclamped action and its log-density under the policy."""
    mean, std = policy_forward(policy, obs)
    action = mean + std * rng.standard_normal()
    return float(action), float(gaussian_log_prob(action, mean, policy.log_std[0]))


def deterministic_action(policy: GaussianPolicy, obs) -> float:
    return policy_forward(policy, obs)[0]


# -- trajectories and advantages ---------------------------------------------------

@dataclass
class Trajectory:
    observations: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    log_probs: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    values: list = field(default_factory=list)
    bootstrap: float = 0.0
    infos: list = field(default_factory=list)

    def __len__(self):
        return len(self.rewards)

    def add(self, obs, action, log_prob, reward, value, info=None):
        self.observations.append(obs)
        self.actions.append(action)
        self.log_probs.append(log_prob)
        self.rewards.append(reward)
        self.values.append(value)
        if info is not None:
            self.infos.append(info)

    @property
    def episode_return(self) -> float:
        return float(np.sum(self.rewards))


def compute_gae(traj: Trajectory, gamma: float, lam: float):
    """Raw (unnormalized) GAE advantages and the matching value targets."""
    if len(traj) == 0:
        raise DomainError("empty trajectory")
    r = np.asarray(traj.rewards, dtype=float)
    v = np.append(np.asarray(traj.values, dtype=float), traj.bootstrap)
    deltas = r + gamma * v[1:] - v[:-1]
    adv = np.empty_like(r)
    acc = 0.0
    for t in reversed(range(len(r))):
        acc = deltas[t] + gamma * lam * acc
        adv[t] = acc
    return adv, adv + v[:-1]


def discounted_returns(traj: Trajectory, gamma: float) -> np.ndarray:
    out = np.empty(len(traj))
    acc = traj.bootstrap
    for t in reversed(range(len(traj))):
        acc = traj.rewards[t] + gamma * acc
        out[t] = acc
    return out


def normalize(adv: np.ndarray) -> np.ndarray:
    std = adv.std()
    return (adv - adv.mean()) / (std if std > 1e-12 else 1.0)


@dataclass
class Batch:
    obs: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray

    def __len__(self):
        return len(self.actions)


def make_batch(trajs, hyper: Hyperparams) -> Batch:
    advs, rets = [], []
    for tr in trajs:
        a, g = compute_gae(tr, hyper.gamma, hyper.lam)
        advs.append(a)
        rets.append(g if hyper.critic_target == "gae" else discounted_returns(tr, hyper.gamma))
    return Batch(
        obs=np.array([o for tr in trajs for o in tr.observations], dtype=float),
        actions=np.array([a for tr in trajs for a in tr.actions], dtype=float),
        log_probs=np.array([lp for tr in trajs for lp in tr.log_probs], dtype=float),
        advantages=normalize(np.concatenate(advs)),
        returns=np.concatenate(rets),
    )


# -- losses with exact gradients -------------------------------------------------------

def policy_loss(policy: GaussianPolicy, obs, actions, old_log_probs, advantages,
                clip: float, entropy_coef: float = 0.0):
    """Negated clipped surrogate minus entropy bonus, with gradients for ``policy.params``."""
    out, acts = policy.net.forward(obs)
    mean = out[:, 0]
    log_std = policy.log_std[0]
    z = (actions - mean) * math.exp(-log_std)
    logp = -0.5 * z * z - log_std - 0.5 * LOG_2PI
    ratio = np.exp(logp - old_log_probs)
    clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip)
    unclipped_obj = ratio * advantages
    clipped_obj = clipped * advantages
    use_unclipped = unclipped_obj <= clipped_obj
    surrogate = np.where(use_unclipped, unclipped_obj, clipped_obj)
    entropy = log_std + 0.5 * (1.0 + LOG_2PI)
    n = len(actions)
    loss = -surrogate.mean() - entropy_coef * entropy

    # d(loss)/d(logp) per sample; zero wherever the clipped branch is selected
    g_logp = -np.where(use_unclipped, unclipped_obj, 0.0) / n
    d_mean = g_logp * z * math.exp(-log_std)
    d_log_std = np.sum(g_logp * (z * z - 1.0)) - entropy_coef
    grads = policy.net.backward(acts, d_mean[:, None]) + [np.array([d_log_std])]
    stats = {
        "ratio_mean": float(ratio.mean()),
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > clip)),
        "approx_kl": float(np.mean(old_log_probs - logp)),
        "entropy": float(entropy),
    }
    return float(loss), grads, stats


def value_loss(value: ValueFunction, obs, returns):
    out, acts = value.net.forward(obs)
    err = out[:, 0] - returns
    loss = float(np.mean(err * err))
    grads = value.net.backward(acts, (2.0 * err / len(err))[:, None])
    return loss, grads


def _check_finite(grads, what):
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise IntegrityError(f"non-finite {what} loss or gradient")


class PPO:
    """Owns the two networks and their Adam states."""

    def __init__(self, obs_dim: int, hyper: Hyperparams = None, seed: int = 0):
        self.hyper = hyper or Hyperparams()
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xA11CE]))
        self.policy = GaussianPolicy(obs_dim, self.hyper.hidden, rng, self.hyper.init_log_std)
        self.value = ValueFunction(obs_dim, self.hyper.hidden, rng)
        self.actor_opt = Adam(self.policy.params, self.hyper.lr_actor)
        self.critic_opt = Adam(self.value.params, self.hyper.lr_critic)
        self.rng = np.random.default_rng(np.random.SeedSequence([seed, 0xB0B]))

    def update(self, batch: Batch) -> dict:
        """Clipped-surrogate epochs over shuffled minibatches."""
        h = self.hyper
        n = len(batch)
        totals = {"policy_loss": 0.0, "value_loss": 0.0, "ratio_mean": 0.0,
                  "clip_fraction": 0.0, "approx_kl": 0.0}
        count = 0
        for _ in range(h.epochs):
            order = self.rng.permutation(n)
            for start in range(0, n, h.minibatch):
                idx = order[start:start + h.minibatch]
                pl, pg, st = policy_loss(self.policy, batch.obs[idx], batch.actions[idx],
                                         batch.log_probs[idx], batch.advantages[idx],
                                         h.clip, h.entropy_coef)
                vl, vg = value_loss(self.value, batch.obs[idx], batch.returns[idx])
                _check_finite(pg + [pl], "policy")
                _check_finite(vg + [vl], "value")
                self.actor_opt.step(self.policy.params, pg)
                self.policy.clamp()
                self.critic_opt.step(self.value.params, vg)
                totals["policy_loss"] += pl
                totals["value_loss"] += vl
                for k in ("ratio_mean", "clip_fraction", "approx_kl"):
                    totals[k] += st[k]
                count += 1
        return {k: v / count for k, v in totals.items()}


def ppo_update(agent: PPO, batch: Batch) -> dict:
    return agent.update(batch)


# -- rollouts and training -----------------------------------------------------------

def episode_rng(seed: int, iteration: int, episode: int):
    return np.random.default_rng(np.random.SeedSequence([seed, iteration, episode]))


def rollout(env, policy: GaussianPolicy, value: Optional[ValueFunction], rng=None,
            deterministic: bool = False) -> Trajectory:
    """Play one full episode."""
    traj = Trajectory()
    obs = env.reset()
    while True:
        if deterministic:
            action, logp = deterministic_action(policy, obs), 0.0
        else:
            action, logp = sample_action(policy, obs, rng)
        v = float(value(obs)[0]) if value is not None else 0.0
        out = env.step(action)
        traj.add(obs, action, logp, out.reward, v, out.info)
        obs = out.observation
        if out.done:
            break
    traj.bootstrap = 0.0
    return traj


def collect(env_factory: Callable, agent: PPO, n_episodes: int, seed: int, iteration: int,
            workers: int = 1, envs=None):
    """``n_episodes`` trajectories, identical whatever the worker count."""
    if workers <= 1:
        env = envs[0] if envs else env_factory()
        return [rollout(env, agent.policy, agent.value, episode_rng(seed, iteration, e))
                for e in range(n_episodes)]
    pool_envs = envs if envs and len(envs) >= n_episodes else [env_factory() for _ in range(n_episodes)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(rollout, pool_envs[e], agent.policy, agent.value,
                               episode_rng(seed, iteration, e)) for e in range(n_episodes)]
        return [f.result() for f in futures]


@dataclass
class TrainResult:
    agent: PPO
    curve: list
    stats: list

    @property
    def policy(self):
        return self.agent.policy

    @property
    def value(self):
        return self.agent.value


def train(env_factory: Callable, hyper: Hyperparams = None, seed: int = 0,
          callback: Optional[Callable] = None, agent: Optional[PPO] = None) -> TrainResult:
    """Alternate rollout collection and PPO updates for ``hyper.iterations`` rounds.

    The learning curve holds the mean undiscounted episode return per iteration.
    ``callback(iteration, agent, mean_return, stats)`` runs after each update.
    """
    hyper = hyper or Hyperparams()
    env = env_factory()
    agent = agent or PPO(env.obs_dim, hyper, seed)
    curve, all_stats = [], []
    envs = [env]
    for it in range(hyper.iterations):
        trajs = collect(env_factory, agent, hyper.horizon, seed, it, hyper.workers, envs)
        mean_return = float(np.mean([t.episode_return for t in trajs]))
        stats = agent.update(make_batch(trajs, hyper))
        stats["mean_return"] = mean_return
        curve.append(mean_return)
        all_stats.append(stats)
        if callback is not None:
            callback(it, agent, mean_return, stats)
    return TrainResult(agent, curve, all_stats)


# -- checkpoints ---------------------------------------------------------------------

def save_checkpoint(path, agent: PPO, extra: Optional[dict] = None) -> None:
    """Write all parameters, optimizer moments, hyperparameters and rng state."""
    path = Path(path)
    arrays = {}
    for i, p in enumerate(agent.policy.params):
        arrays[f"policy_{i}"] = p
    for i, p in enumerate(agent.value.params):
        arrays[f"value_{i}"] = p
    for tag, opt in (("actor", agent.actor_opt), ("critic", agent.critic_opt)):
        for i, (m, v) in enumerate(zip(opt.m, opt.v)):
            arrays[f"{tag}_m_{i}"] = m
            arrays[f"{tag}_v_{i}"] = v
    meta = {
        "version": CHECKPOINT_VERSION,
        "obs_dim": agent.policy.obs_dim,
        "hyper": asdict(agent.hyper),
        "rng_state": agent.rng.bit_generator.state,
        "adam_t": {"actor": agent.actor_opt.t, "critic": agent.critic_opt.t},
        "extra": extra or {},
    }
    arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    try:
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot write checkpoint ({exc.strerror})") from exc


def load_checkpoint(path) -> tuple[PPO, dict]:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"{path}: checkpoint not found")
    try:
        with np.load(path) as data:
            arrays = {k: data[k] for k in data.files}
        meta = json.loads(arrays.pop("meta").tobytes().decode())
    except Exception as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from exc
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {meta.get('version')}")
    try:
        agent = PPO(meta["obs_dim"], Hyperparams(**meta["hyper"]))
        for i, p in enumerate(agent.policy.params):
            p[...] = arrays[f"policy_{i}"]
        for i, p in enumerate(agent.value.params):
            p[...] = arrays[f"value_{i}"]
        for tag, opt in (("actor", agent.actor_opt), ("critic", agent.critic_opt)):
            n = len(opt.m)
            opt.load_state(meta["adam_t"][tag],
                           [arrays[f"{tag}_m_{i}"] for i in range(n)],
                           [arrays[f"{tag}_v_{i}"] for i in range(n)])
        agent.rng.bit_generator.state = meta["rng_state"]
    except (KeyError, ValueError, TypeError) as exc:
        raise CheckpointError(f"{path}: inconsistent checkpoint ({exc})") from exc
    return agent, meta.get("extra", {})
