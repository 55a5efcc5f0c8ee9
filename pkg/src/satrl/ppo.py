"""Clipped-surrogate policy optimisation with a KL gate.

One training epoch = collect ``steps_per_epoch`` transitions, estimate
advantages with GAE, then run the windowed minibatch update.
"""

import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .dynamics import NumericalFailure, SatelliteParams
from .env import ACT_DIM, OBS_DIM, AttitudeEnv, EpisodeConfig, observation_scale
from .nn import (
    LOG_2PI, AdamState, MlpActorCritic, adam_update, backward, checkpoint_save, forward,
    policy_forward,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Hyperparams:
    """PPO settings.

    ``batch_size`` is the update window. The default equals one full epoch, so
    the whole buffer is swept in shuffled minibatches; set it to 150 for the
    windowed schedule (each 150-transition slice optimised in turn).
    ``value_scale`` divides return targets before they reach the critic.
    """

    gamma: float = 0.99
    kl_target: float = 0.035
    epochs: int = 40
    lr: float = 3e-4
    batch_size: int = 15000
    minibatch_size: int = 32
    clip_epsilon: float = 0.2
    gae_lambda: float = 0.95
    update_passes: int = 10
    steps_per_epoch: int = 15000
    value_coef: float = 0.5
    entropy_coef: float = 0.0
    max_grad_norm: float = 0.0
    value_scale: float = 100.0

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if not self.clip_epsilon > 0.0:
            raise ValueError("clip_epsilon must be positive")
        if not 0 < self.minibatch_size <= self.batch_size:
            raise ValueError("minibatch_size must be positive and <= batch_size")
        if self.epochs < 1 or self.steps_per_epoch < 1 or self.update_passes < 1:
            raise ValueError("epochs, steps_per_epoch and update_passes must be >= 1")


@dataclass
class RolloutBuffer:
    obs: np.ndarray
    actions: np.ndarray
    logp: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    last_value: float = 0.0
    bootstrap: np.ndarray = None
    advantages: np.ndarray = None
    returns: np.ndarray = None
    episode_returns: list = field(default_factory=list)
    episode_lengths: list = field(default_factory=list)
    partial_return: float = 0.0
    discarded_episodes: int = 0

    def __len__(self):
        return len(self.rewards)


@dataclass
class EpochStats:
    epoch: int
    cumulative_reward: float
    episodes: int
    mean_episode_length: float
    mean_kl: float
    kl_gate_fired: bool
    passes: int
    policy_loss: float
    value_loss: float
    wall_clock: float = 0.0

    CSV_FIELDS = ("epoch", "cumulative_reward", "episodes", "mean_episode_length", "mean_kl",
                  "kl_gate_fired", "passes", "policy_loss", "value_loss")


def _sample(rng, mean, std):
    return mean + std * rng.standard_normal(mean.shape)


def collect_rollouts(env, net, n_steps, progress, rng, value_scale=1.0, gamma=0.0):
    """Run the stochastic policy for exactly ``n_steps`` transitions.

    The stored log-probability belongs to the unclamped Gaussian sample; the
    environment receives the sample clamped to the action box. An episode
    whose integration blows up is dropped from the buffer. Episodes cut by the
    time limit rather than a rate violation keep ``gamma * V(s')`` in
    ``bootstrap`` so the critic does not learn a fake terminal.
    """
    obs_buf = np.empty((n_steps, OBS_DIM))
    act_buf = np.empty((n_steps, ACT_DIM))
    logp_buf = np.empty(n_steps)
    rew_buf = np.empty(n_steps)
    val_buf = np.empty(n_steps)
    done_buf = np.zeros(n_steps)
    boot_buf = np.zeros(n_steps)
    buf = RolloutBuffer(obs_buf, act_buf, logp_buf, rew_buf, val_buf, done_buf,
                        bootstrap=boot_buf)

    log_std = net["actor.log_std"]
    std = np.exp(log_std)
    logp_const = -np.sum(log_std) - 0.5 * ACT_DIM * LOG_2PI
    obs = env.reset(progress)
    ep_start, ep_ret = 0, 0.0
    t = 0
    while t < n_steps:
        tape = forward(net, obs)
        mean, value = tape.mean[0], tape.value[0] * value_scale
        a = _sample(rng, mean, std)
        z = (a - mean) / std
        try:
            next_obs, r, done, info = env.step(a)
        except NumericalFailure:
            log.warning("numerical failure during rollout; discarding episode")
            buf.discarded_episodes += 1
            t = ep_start
            ep_ret = 0.0
            obs = env.reset(progress)
            continue
        obs_buf[t] = obs
        act_buf[t] = a
        logp_buf[t] = logp_const - 0.5 * (z @ z)
        rew_buf[t] = r
        val_buf[t] = value
        done_buf[t] = float(done)
        if done and gamma and not info["rate_violation"]:
            boot_buf[t] = gamma * float(forward(net, next_obs).value[0]) * value_scale
        ep_ret += r
        t += 1
        obs = next_obs
        if done:
            buf.episode_returns.append(ep_ret)
            buf.episode_lengths.append(t - ep_start)
            ep_start, ep_ret = t, 0.0
            obs = env.reset(progress)
    buf.partial_return = ep_ret
    buf.last_value = 0.0 if done_buf[-1] else float(forward(net, obs).value[0]) * value_scale
    return buf


def compute_gae(buf, gamma, lam):
    rewards = buf.rewards if buf.bootstrap is None else buf.rewards + buf.bootstrap
    buf.advantages = kernels.gae(rewards, buf.values, buf.dones, buf.last_value,
                                 float(gamma), float(lam))
    buf.returns = buf.advantages + buf.values
    return buf


def normalize_advantages(adv):
    std = adv.std()
    return (adv - adv.mean()) / (std if std > 0 else 1.0)


def surrogate_terms(ratio, adv, eps):
    """Per-sample clipped surrogate and a mask of samples carrying gradient."""
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv
    return np.minimum(unclipped, clipped), unclipped <= clipped


def minibatch_loss_and_grad(net, obs, actions, logp_old, adv, returns, hp):
    """PPO loss on one minibatch and its exact gradient w.r.t. ``net.params``."""
    n = len(adv)
    tape = forward(net, obs)
    log_std = net["actor.log_std"]
    std = np.exp(log_std)
    z = (actions - tape.mean) / std
    logp = np.sum(-0.5 * z * z - log_std - 0.5 * LOG_2PI, axis=1)
    ratio = np.exp(logp - logp_old)
    surr, active = surrogate_terms(ratio, adv, hp.clip_epsilon)
    policy_loss = -surr.mean()
    v_err = tape.value - returns
    value_loss = np.mean(v_err * v_err)
    entropy = float(np.sum(log_std) + 0.5 * ACT_DIM * (1.0 + LOG_2PI))
    loss = policy_loss + hp.value_coef * value_loss - hp.entropy_coef * entropy

    d_logp = np.where(active, -ratio * adv, 0.0) / n
    d_mean = d_logp[:, None] * z / std
    d_log_std = (d_logp[:, None] * (z * z - 1.0)).sum(axis=0) - hp.entropy_coef
    d_value = 2.0 * hp.value_coef * v_err / n
    grad = backward(net, tape, d_mean, d_log_std, d_value)
    return loss, policy_loss, value_loss, grad


def batch_logp(net, obs, actions):
    out = policy_forward(net, obs)
    z = (actions - out.mean) / out.std
    return np.sum(-0.5 * z * z - np.log(out.std) - 0.5 * LOG_2PI, axis=1)


def ppo_update(buf, net, hp, adam, rng):
    """Windowed minibatch updates gated by the sampled KL to the rollout policy.

    The buffer is split into consecutive windows of ``batch_size`` transitions
    (one window with the defaults); each window gets up to ``update_passes``
    shuffled minibatch sweeps. Before every sweep the mean sampled KL
    ``E[logp_old - logp]`` on the window is measured, and the whole update
    stops once it exceeds ``kl_target``.
    """
    adv_all = normalize_advantages(buf.advantages)
    backup = net.params.copy()
    adam_backup = (adam.m.copy(), adam.v.copy(), adam.t)
    n = len(buf)
    passes = 0
    gate = False
    kl = 0.0
    p_losses, v_losses = [], []
    for start in range(0, n, hp.batch_size):
        idx = np.arange(start, min(start + hp.batch_size, n))
        for _ in range(hp.update_passes):
            kl = float(np.mean(buf.logp[idx] - batch_logp(net, buf.obs[idx], buf.actions[idx])))
            if kl > hp.kl_target:
                gate = True
                break
            perm = rng.permutation(idx)
            for mb_start in range(0, len(perm), hp.minibatch_size):
                mb = perm[mb_start:mb_start + hp.minibatch_size]
                loss, pl, vl, grad = minibatch_loss_and_grad(
                    net, buf.obs[mb], buf.actions[mb], buf.logp[mb], adv_all[mb],
                    buf.returns[mb] / hp.value_scale, hp)
                if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
                    log.error("non-finite loss; restoring pre-update parameters")
                    net.set_params(backup)
                    adam.m, adam.v, adam.t = adam_backup
                    return {"mean_kl": float("nan"), "kl_gate_fired": False, "passes": passes,
                            "policy_loss": float("nan"), "value_loss": float("nan"),
                            "aborted": True}
                if hp.max_grad_norm > 0:
                    gn = np.sqrt(grad @ grad)
                    if gn > hp.max_grad_norm:
                        grad *= hp.max_grad_norm / gn
                adam_update(net.params, grad, adam, hp.lr)
                net.touch()
                p_losses.append(pl)
                v_losses.append(vl)
            passes += 1
        if gate:
            break
    kl = float(np.mean(buf.logp - batch_logp(net, buf.obs, buf.actions)))
    return {"mean_kl": kl, "kl_gate_fired": gate, "passes": passes,
            "policy_loss": float(np.mean(p_losses)) if p_losses else 0.0,
            "value_loss": float(np.mean(v_losses)) if v_losses else 0.0,
            "aborted": False}


@dataclass
class TrainResult:
    seed: int
    best_net: MlpActorCritic
    best_epoch: int
    best_reward: float
    stats: list


def train_controller(task, hp=Hyperparams(), seed=0, params=None, episode=None, reward_cfg=None,
                     out_dir=None, meta=None, obs_scale=None):
    """Train one controller; returns the epoch with the highest cumulative reward."""
    params = params or SatelliteParams()
    if episode is None:
        episode = EpisodeConfig(horizon=800 if task.underactuated else 500)
    env_seed, pol_seed, upd_seed, init_seed = np.random.SeedSequence(seed).spawn(4)
    env = AttitudeEnv(task, params, episode, reward_cfg,
                      seed=int(env_seed.generate_state(1)[0]))
    pol_rng = np.random.default_rng(pol_seed)
    upd_rng = np.random.default_rng(upd_seed)
    net = MlpActorCritic(obs_scale=observation_scale(params) if obs_scale is None else obs_scale,
                         seed=int(init_seed.generate_state(1)[0]))
    adam = AdamState(net.n_params)
    stats, best = [], None
    for epoch in range(hp.epochs):
        t0 = time.perf_counter()
        progress = epoch / hp.epochs
        buf = collect_rollouts(env, net, hp.steps_per_epoch, progress, pol_rng, hp.value_scale,
                               hp.gamma)
        compute_gae(buf, hp.gamma, hp.gae_lambda)
        returns = buf.episode_returns or [buf.partial_return]
        lengths = buf.episode_lengths or [len(buf)]
        cum = float(np.mean(returns))
        # the reward was earned by the policy that collected this epoch
        collector = net.copy()
        upd = ppo_update(buf, net, hp, adam, upd_rng)
        rec = EpochStats(epoch + 1, cum, len(buf.episode_returns), float(np.mean(lengths)),
                         upd["mean_kl"], upd["kl_gate_fired"], upd["passes"],
                         upd["policy_loss"], upd["value_loss"], time.perf_counter() - t0)
        stats.append(rec)
        log.info("seed %d epoch %d reward %.2f kl %.4f passes %d (%.1fs)", seed, epoch + 1, cum,
                 rec.mean_kl, rec.passes, rec.wall_clock)
        if best is None or cum > best[1]:
            best = (epoch + 1, cum, collector)
        if out_dir is not None:
            collector.meta = {**(meta or {}), "seed": seed, "epoch": epoch + 1, "task": task.key}
            checkpoint_save(collector, os.path.join(out_dir, f"seed{seed}_epoch{epoch + 1:03d}.ckpt"),
                            meta=collector.meta)
    best_net = best[2]
    best_net.meta = {**(meta or {}), "seed": seed, "epoch": best[0], "task": task.key}
    return TrainResult(seed, best_net, best[0], best[1], stats)


def _train_job(args):
    task, hp, seed, params, episode, reward_cfg, out_dir, meta = args
    try:
        return train_controller(task, hp, seed, params, episode, reward_cfg, out_dir, meta)
    except NumericalFailure as exc:
        return exc


def multi_seed_select(task, hp=Hyperparams(), seeds=range(10), params=None, episode=None,
                      reward_cfg=None, out_dir=None, meta=None, workers=1):
    """Train one controller per seed and keep the one with the best epoch reward.

    Returns ``(best_result, summary)``. Seeds that crash are excluded from the
    selection and listed under ``summary["failed_seeds"]``.
    """
    seeds = list(seeds)
    if not seeds:
        raise ValueError("need at least one seed")
    jobs = [(task, hp, s, params, episode, reward_cfg, out_dir, meta) for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_train_job, jobs))
    else:
        outcomes = [_train_job(j) for j in jobs]
    results = [o for o in outcomes if isinstance(o, TrainResult)]
    failed = [s for s, o in zip(seeds, outcomes) if not isinstance(o, TrainResult)]
    if not results:
        raise NumericalFailure(f"every seed failed: {failed}")
    best = select_best(results)
    bests = np.array([r.best_reward for r in results])
    summary = {
        "task": task.key,
        "best_seed": best.seed,
        "best_epoch": best.best_epoch,
        "best_reward": best.best_reward,
        "per_seed_best": {str(r.seed): r.best_reward for r in results},
        "mean_best_reward": float(bests.mean()),
        "variance_best_reward": float(bests.var()),
        "failed_seeds": failed,
        "per_seed_wall_clock_s": {str(r.seed): float(sum(s.wall_clock for s in r.stats))
                                  for r in results},
        "per_seed_stats": {str(r.seed): stats_rows(r.stats) for r in results},
    }
    return best, summary


def select_best(results):
    """Highest best-epoch reward; ties go to the lowest seed so order never matters."""
    return max(results, key=lambda r: (r.best_reward, -r.seed))


def stats_rows(stats):
    return [{k: getattr(s, k) for k in EpochStats.CSV_FIELDS} for s in stats]


def hyperparams_dict(hp):
    return asdict(hp)
