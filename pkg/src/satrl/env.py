"""Attitude-control MDP: observations, reward, initial conditions, delays."""

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .attitude import (
    IDENTITY, angular_distance, axis_alignment_angle, canonical, quat_from_axis_angle,
)
from .dynamics import (
    TORQUE_LIMIT, FailureMode, SatelliteParams, SatelliteState, apply_failure, step_dynamics,
)

OBS_DIM = 13
ACT_DIM = 3
UNIT_AXES = np.eye(3)


class UsageError(RuntimeError):
    pass


class Align(enum.Enum):
    FULL = "full"
    X = "x"
    Y = "y"
    Z = "z"

    @property
    def axis(self):
        return {"x": 0, "y": 1, "z": 2}.get(self.value)

    @classmethod
    def parse(cls, text):
        key = str(text).strip().lower()
        return cls({"fullattitude": "full", "attitude": "full"}.get(key, key))


@dataclass(frozen=True)
class TaskSpec:
    mode: FailureMode = FailureMode.NOMINAL
    align: Align = Align.FULL
    threshold: float = None

    def __post_init__(self):
        if (self.mode is FailureMode.NOMINAL) != (self.align is Align.FULL):
            raise ValueError("full-attitude tasks require nominal mode and "
                             "axis-alignment tasks require a failed wheel")
        if self.threshold is None:
            same_axis = self.mode is FailureMode.NOMINAL or self.mode.axis == self.align.axis
            object.__setattr__(self, "threshold", 0.01 if same_axis else 0.05)
        if not self.threshold > 0.0:
            raise ValueError("threshold must be positive")

    @property
    def key(self):
        if self.mode is FailureMode.NOMINAL:
            return "nominal"
        return f"{self.mode.value}/{self.align.value}"

    @property
    def underactuated(self):
        return self.mode is not FailureMode.NOMINAL


def suite_tasks():
    """The nominal controller plus one controller per (failed wheel, aligned axis)."""
    tasks = [TaskSpec()]
    for mode in (FailureMode.FAILED_X, FailureMode.FAILED_Y, FailureMode.FAILED_Z):
        for align in (Align.X, Align.Y, Align.Z):
            tasks.append(TaskSpec(mode, align))
    return tasks


@dataclass(frozen=True)
class RewardConfig:
    threshold: float = 0.01
    exponent: float = 0.6
    omega_limit: float = 0.1
    torque_penalty_coeff: float = 0.01
    success_reward: float = 1.0
    violation_reward: float = -1.0

    def __post_init__(self):
        if not (self.exponent > 0 and self.omega_limit > 0 and self.torque_penalty_coeff >= 0
                and self.threshold > 0):
            raise ValueError("invalid reward configuration")


@dataclass(frozen=True)
class EpisodeConfig:
    horizon: int = 500
    control_dt: float = 0.5
    delays: bool = True
    delay_range: tuple = (0.5, 1.0)
    initial_angle_range: tuple = (30.0, 180.0)
    curriculum: bool = True
    curriculum_start_deg: float = 60.0
    curriculum_ramp: float = 0.5
    substeps: int = 100

    def __post_init__(self):
        lo, hi = self.delay_range
        a_lo, a_hi = self.initial_angle_range
        if self.horizon <= 0 or self.control_dt <= 0 or self.substeps < 1:
            raise ValueError("horizon, control_dt and substeps must be positive")
        if not (self.control_dt <= lo <= hi):
            raise ValueError("delay range must lie in [control_dt, inf)")
        if not (0.0 < a_lo <= a_hi <= 180.0):
            raise ValueError("initial angle range must lie in (0, 180] degrees")
        object.__setattr__(self, "delay_range", (float(lo), float(hi)))
        object.__setattr__(self, "initial_angle_range", (float(a_lo), float(a_hi)))


def max_start_angle(config, progress):
    """Upper bound (degrees) of the start-angle draw at training ``progress``."""
    lo, hi = config.initial_angle_range
    if not config.curriculum:
        return hi
    start = min(max(config.curriculum_start_deg, lo), hi)
    frac = min(1.0, progress / config.curriculum_ramp) if config.curriculum_ramp > 0 else 1.0
    return start + (hi - start) * frac


def random_unit_vector(rng):
    phi = rng.uniform(0.0, 2.0 * np.pi)
    cos_t = rng.uniform(-1.0, 1.0)
    sin_t = np.sqrt(1.0 - cos_t * cos_t)
    return np.array([sin_t * np.cos(phi), sin_t * np.sin(phi), cos_t])


def sample_initial_state(rng, config, progress=1.0):
    """Random attitude at rest, angle drawn under the curriculum schedule."""
    if not 0.0 <= progress <= 1.0:
        raise ValueError("progress must lie in [0, 1]")
    lo = config.initial_angle_range[0]
    theta = np.deg2rad(rng.uniform(lo, max_start_angle(config, progress)))
    return SatelliteState(quat_from_axis_angle(random_unit_vector(rng), theta))


def pointing_error(state, task):
    if task.align is Align.FULL:
        return angular_distance(state.attitude, IDENTITY)
    e = UNIT_AXES[task.align.axis]
    return axis_alignment_angle(state.attitude, e, e)


def compute_reward(theta, omega, torque, cfg):
    if np.any(np.abs(omega) > cfg.omega_limit):
        return cfg.violation_reward
    if theta < cfg.threshold:
        return cfg.success_reward
    p = cfg.torque_penalty_coeff * float(np.sum(np.abs(torque))) / TORQUE_LIMIT
    return 0.5 * (1.0 - ((theta - cfg.threshold) / np.pi) ** cfg.exponent) - p


def make_observation(state, last_torque):
    obs = np.empty(OBS_DIM)
    obs[0:4] = canonical(state.attitude)
    obs[4:7] = state.omega
    obs[7:10] = state.rw_speed
    obs[10:13] = last_torque
    return obs


def observation_scale(params):
    """Per-component input scaling applied in front of the networks."""
    scale = np.ones(OBS_DIM)
    scale[7:10] = 1.0 / params.rw_saturation_speed
    scale[10:13] = 1.0 / TORQUE_LIMIT
    return scale


def decode_action(action):
    a = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
    if a.shape != (ACT_DIM,):
        raise ValueError(f"action must have shape ({ACT_DIM},)")
    return a * TORQUE_LIMIT


def propagate_cycle(state, torque, cycle, params, mode, control_dt, substeps):
    """Hold ``torque`` for one control interval, then coast for the rest of ``cycle``.

    Returns the new state and the mean torque delivered while actuating.
    """
    state, applied = step_dynamics(state, torque, control_dt, params, mode, substeps,
                                   return_torque=True)
    coast = cycle - control_dt
    if coast > 1e-12:
        n = max(1, int(np.ceil(substeps * coast / control_dt - 1e-9)))
        state = step_dynamics(state, np.zeros(3), coast, params, mode, n)
    return state, applied


@dataclass
class AttitudeEnv:
    """Gym-style single-satellite environment with the target at identity."""

    task: TaskSpec = field(default_factory=TaskSpec)
    params: SatelliteParams = field(default_factory=SatelliteParams)
    episode: EpisodeConfig = field(default_factory=EpisodeConfig)
    reward_cfg: RewardConfig = None
    seed: int = None

    def __post_init__(self):
        if self.reward_cfg is None:
            self.reward_cfg = RewardConfig(threshold=self.task.threshold)
        self.rng = np.random.default_rng(self.seed)
        self.state = None
        self.last_torque = np.zeros(3)
        self.steps = 0
        self.time = 0.0
        self.done = True

    def reset(self, progress=1.0, seed=None, state=None):
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.state = state if state is not None else sample_initial_state(
            self.rng, self.episode, progress)
        self.last_torque = np.zeros(3)
        self.steps = 0
        self.time = 0.0
        self.done = False
        return self.observation()

    def observation(self):
        return make_observation(self.state, self.last_torque)

    def step(self, action):
        if self.done:
            raise UsageError("step() called on a finished episode; call reset()")
        torque = decode_action(action)
        cycle = self.episode.control_dt
        if self.episode.delays:
            cycle = float(self.rng.uniform(*self.episode.delay_range))
        self.state, applied = propagate_cycle(
            self.state, torque, cycle, self.params, self.task.mode,
            self.episode.control_dt, self.episode.substeps)
        self.last_torque = torque
        self.steps += 1
        self.time += cycle
        theta = pointing_error(self.state, self.task)
        commanded = apply_failure(torque, self.task.mode)
        reward = compute_reward(theta, self.state.omega, commanded, self.reward_cfg)
        violation = bool(np.max(np.abs(self.state.omega)) > self.reward_cfg.omega_limit)
        self.done = violation or self.steps >= self.episode.horizon
        info = {
            "theta": theta,
            "time": self.time,
            "rw_speed": self.state.rw_speed.copy(),
            "rate_violation": violation,
            "applied_torque": applied,
            "cycle": cycle,
        }
        return self.observation(), float(reward), self.done, info

    def with_episode(self, **changes):
        return AttitudeEnv(self.task, self.params, replace(self.episode, **changes),
                           self.reward_cfg, self.seed)
