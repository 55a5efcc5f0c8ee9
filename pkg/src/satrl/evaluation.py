"""Monte-Carlo evaluation: per-step envelopes and convergence statistics."""

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dynamics import SatelliteParams, rad_s_to_rpm
from .env import ACT_DIM, OBS_DIM, AttitudeEnv, EpisodeConfig, pointing_error
from .nn import policy_forward

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass
class EpisodeTrace:
    """Per-step record of one episode; row 0 is the initial state."""

    time: np.ndarray
    theta: np.ndarray
    attitude: np.ndarray
    omega: np.ndarray
    rw_speed: np.ndarray
    torque_cmd: np.ndarray
    torque_applied: np.ndarray
    reward: np.ndarray
    outcome: str = "horizon"
    task: str = ""

    def __len__(self):
        return len(self.time)


class TraceRecorder:
    def __init__(self, task_key=""):
        self.task = task_key
        self.rows = []

    def record(self, t, theta, state, cmd, applied, reward):
        self.rows.append((t, theta, state.attitude.copy(), state.omega.copy(),
                          state.rw_speed.copy(), np.array(cmd, dtype=float),
                          np.array(applied, dtype=float), reward))

    def finish(self, outcome):
        cols = list(zip(*self.rows))
        return EpisodeTrace(np.array(cols[0]), np.array(cols[1]), np.array(cols[2]),
                            np.array(cols[3]), np.array(cols[4]), np.array(cols[5]),
                            np.array(cols[6]), np.array(cols[7]), outcome, self.task)


def check_compatible(net):
    if net.obs_dim != OBS_DIM or net.act_dim != ACT_DIM:
        raise ConfigError(f"checkpoint expects obs_dim={net.obs_dim}, act_dim={net.act_dim}; "
                          f"environment provides {OBS_DIM}/{ACT_DIM}")


def run_episode(net, env, rng=None, deterministic=True, state=None):
    """Roll the actor through one episode of ``env`` and return its trace."""
    obs = env.reset(state=state) if state is not None else env.reset(1.0)
    rec = TraceRecorder(env.task.key)
    rec.record(0.0, pointing_error(env.state, env.task), env.state, np.zeros(3), np.zeros(3), 0.0)
    done = False
    info = {}
    while not done:
        out = policy_forward(net, obs)
        action = out.mean if deterministic else out.mean + out.std * rng.standard_normal(ACT_DIM)
        obs, reward, done, info = env.step(action)
        rec.record(info["time"], info["theta"], env.state, env.last_torque,
                   info["applied_torque"], reward)
    return rec.finish("rate_violation" if info.get("rate_violation") else "horizon")


def _episode_job(args):
    net, task, params, episode, seq, deterministic = args
    env_seed, act_seed = seq.spawn(2)
    env = AttitudeEnv(task, params, episode, seed=int(env_seed.generate_state(1)[0]))
    return run_episode(net, env, np.random.default_rng(act_seed), deterministic)


def run_eval_episodes(net, task, n_episodes, start_angle_range=(144.0, 180.0), episode_steps=1600,
                      deterministic=True, delays=False, seed=0, params=None, workers=1,
                      control_dt=0.5):
    """Evaluate ``net`` on ``n_episodes`` fresh starts.

    Episode ``i`` draws from its own seed stream, so results do not depend on
    ``workers``.
    """
    check_compatible(net)
    params = params or SatelliteParams()
    episode = EpisodeConfig(horizon=episode_steps, control_dt=control_dt, delays=delays,
                            delay_range=(max(0.5, control_dt), max(1.0, control_dt)),
                            initial_angle_range=tuple(start_angle_range), curriculum=False)
    seqs = np.random.SeedSequence(seed).spawn(n_episodes)
    jobs = [(net, task, params, episode, s, deterministic) for s in seqs]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_episode_job, jobs, chunksize=max(1, n_episodes // (4 * workers))))
    return [_episode_job(j) for j in jobs]


def error_matrix(traces, n_rows=None):
    """Stack pointing errors as (episodes, rows).

    Episodes cut short by a rate violation are extended with their last
    recorded error so that all rows align on step index.
    """
    if not traces:
        raise ValueError("no traces to aggregate")
    n_rows = n_rows or max(len(t) for t in traces)
    out = np.empty((len(traces), n_rows))
    for i, t in enumerate(traces):
        k = min(len(t), n_rows)
        out[i, :k] = t.theta[:k]
        out[i, k:] = t.theta[k - 1]
    return out


@dataclass
class EnvelopeStats:
    mean: np.ndarray
    std: np.ndarray
    max: np.ndarray
    n_episodes: int
    time: np.ndarray = None

    def __eq__(self, other):
        return (self.n_episodes == other.n_episodes
                and all(np.array_equal(getattr(self, k), getattr(other, k))
                        for k in ("mean", "std", "max", "time")))


def aggregate_envelope(traces, dt=0.5):
    """Per-step mean, population std and worst case of the pointing error.

    Accepts traces or an already-stacked (episodes, steps) error matrix.
    """
    if isinstance(traces, np.ndarray):
        errors = traces
    else:
        errors = error_matrix(list(traces))
    if errors.size == 0:
        raise ValueError("no traces to aggregate")
    n_rows = errors.shape[1]
    return EnvelopeStats(errors.mean(axis=0), errors.std(axis=0), errors.max(axis=0),
                         errors.shape[0], np.arange(n_rows) * dt)


def settled_index(theta, accuracy):
    """First index from which the error stays below ``accuracy``; ``None`` if never."""
    above = np.nonzero(np.asarray(theta) >= accuracy)[0]
    if len(above) == 0:
        return 0
    k = above[-1] + 1
    return k if k < len(theta) else None


def first_crossing_index(theta, accuracy):
    below = np.nonzero(np.asarray(theta) < accuracy)[0]
    return int(below[0]) if len(below) else None


@dataclass
class ConvergenceReport:
    task: str
    accuracy: float
    mean_convergence_time: float
    horizon: float
    converged_fraction: float
    mean_first_crossing_time: float
    crossed_fraction: float
    n_episodes: int
    settled_times: list = field(default_factory=list, repr=False)

    def to_dict(self):
        d = {k: getattr(self, k) for k in (
            "task", "accuracy", "mean_convergence_time", "horizon", "converged_fraction",
            "mean_first_crossing_time", "crossed_fraction", "n_episodes")}
        return {k: (None if isinstance(v, float) and np.isnan(v) else v) for k, v in d.items()}


def convergence_time(traces, accuracy, task=""):
    """Settled and first-crossing convergence statistics over ``traces``."""
    if not accuracy > 0:
        raise ValueError("accuracy must be positive")
    settled, crossed = [], []
    horizon = 0.0
    for t in traces:
        horizon = max(horizon, float(t.time[-1]))
        k = settled_index(t.theta, accuracy)
        if k is not None and t.outcome != "rate_violation":
            settled.append(float(t.time[k]))
        j = first_crossing_index(t.theta, accuracy)
        if j is not None:
            crossed.append(float(t.time[j]))
    n = len(traces)
    return ConvergenceReport(
        task or (traces[0].task if traces else ""), float(accuracy),
        float(np.mean(settled)) if settled else float("nan"), horizon,
        len(settled) / n if n else 0.0,
        float(np.mean(crossed)) if crossed else float("nan"),
        len(crossed) / n if n else 0.0, n, settled)


# -- export ------------------------------------------------------------------

ENVELOPE_COLUMNS = ("step", "time_s", "mean", "std", "max")
TRACE_COLUMNS = (
    "step", "time_s", "pointing_error_rad", "q_s", "q_x", "q_y", "q_z",
    "omega_x", "omega_y", "omega_z", "rw_x", "rw_y", "rw_z",
    "rw_x_rpm", "rw_y_rpm", "rw_z_rpm", "torque_cmd_x", "torque_cmd_y", "torque_cmd_z",
    "torque_applied_x", "torque_applied_y", "torque_applied_z", "reward",
)


def _open_for_write(path):
    try:
        d = os.path.dirname(str(path))
        if d:
            os.makedirs(d, exist_ok=True)
        return open(path, "w", newline="")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def write_envelope_csv(stats, path, task=""):
    with _open_for_write(path) as fh:
        fh.write(f"# schema=satrl-envelope/{SCHEMA_VERSION} task={task or '-'} "
                 f"episodes={stats.n_episodes}\n")
        w = csv.writer(fh)
        w.writerow(ENVELOPE_COLUMNS)
        for i in range(len(stats.mean)):
            w.writerow([i, repr(float(stats.time[i])), repr(float(stats.mean[i])),
                        repr(float(stats.std[i])), repr(float(stats.max[i]))])


def read_envelope_csv(path):
    with open(path, newline="") as fh:
        header = fh.readline()
        meta = dict(tok.split("=", 1) for tok in header[1:].split() if "=" in tok)
        rows = list(csv.DictReader(fh))
    col = {k: np.array([float(r[k]) for r in rows]) for k in ("time_s", "mean", "std", "max")}
    return EnvelopeStats(col["mean"], col["std"], col["max"], int(meta["episodes"]), col["time_s"])


def write_trace_csv(trace, path):
    with _open_for_write(path) as fh:
        fh.write(f"# schema=satrl-trace/{SCHEMA_VERSION} task={trace.task or '-'} "
                 f"outcome={trace.outcome}\n")
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        rpm = rad_s_to_rpm(trace.rw_speed)
        for i in range(len(trace)):
            vals = [trace.time[i], trace.theta[i], *trace.attitude[i], *trace.omega[i],
                    *trace.rw_speed[i], *rpm[i], *trace.torque_cmd[i], *trace.torque_applied[i],
                    trace.reward[i]]
            w.writerow([i] + [repr(float(v)) for v in vals])


def read_trace_csv(path):
    with open(path, newline="") as fh:
        header = fh.readline()
        meta = dict(tok.split("=", 1) for tok in header[1:].split() if "=" in tok)
        rows = list(csv.DictReader(fh))

    def cols(*names):
        return np.array([[float(r[n]) for n in names] for r in rows])

    return EpisodeTrace(
        cols("time_s")[:, 0], cols("pointing_error_rad")[:, 0], cols("q_s", "q_x", "q_y", "q_z"),
        cols("omega_x", "omega_y", "omega_z"), cols("rw_x", "rw_y", "rw_z"),
        cols("torque_cmd_x", "torque_cmd_y", "torque_cmd_z"),
        cols("torque_applied_x", "torque_applied_y", "torque_applied_z"),
        cols("reward")[:, 0], meta.get("outcome", "horizon"),
        "" if meta.get("task") == "-" else meta.get("task", ""))


def write_summary_json(reports, path, extra=None):
    """JSON summary keyed by task id (``nominal`` or ``<failed>/<aligned>``)."""
    doc = {"schema": f"satrl-summary/{SCHEMA_VERSION}",
           "tasks": {r.task: r.to_dict() for r in reports}}
    if extra:
        doc.update(extra)
    with _open_for_write(path) as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
    return doc


def export_results(stats, reports, traces, out_dir, task=""):
    """Write envelope CSV, per-trace CSVs and the JSON summary into ``out_dir``."""
    paths = {"envelope": os.path.join(out_dir, "envelope.csv"),
             "summary": os.path.join(out_dir, "summary.json")}
    write_envelope_csv(stats, paths["envelope"], task)
    for i, t in enumerate(traces):
        write_trace_csv(t, os.path.join(out_dir, "traces", f"episode{i:05d}.csv"))
    write_summary_json(reports, paths["summary"], {"episodes": stats.n_episodes})
    return paths
