"""Run configuration: one INI file with sections, plus ``section.key=value`` overrides.

Missing sections fall back to the reference satellite and hyperparameter
defaults. A ``[satellite]`` section, when present, must list every physical
parameter so that custom inertia is never silently mixed with default wheels.
"""

import configparser
import hashlib
import io
import json
import os
from dataclasses import asdict, dataclass, field, fields, replace

from .dynamics import FailureMode, SatelliteParams, rad_s_to_rpm, rpm_to_rad_s
from .env import Align, EpisodeConfig, RewardConfig, TaskSpec
from .ppo import Hyperparams

DESK_EPOCHS = 10
DESK_SEEDS = 1
DESK_EVAL_EPISODES = 200


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EvalPreset:
    episodes: int = DESK_EVAL_EPISODES
    steps: int = 1600
    start_min_deg: float = 144.0
    start_max_deg: float = 180.0
    accuracy: float = None
    deterministic: bool = True
    delays: bool = False
    seed: int = 1000


@dataclass
class RunConfig:
    satellite: SatelliteParams = field(default_factory=SatelliteParams)
    task: TaskSpec = field(default_factory=TaskSpec)
    reward: RewardConfig = None
    episode: EpisodeConfig = None
    hp: Hyperparams = field(default_factory=lambda: Hyperparams(epochs=DESK_EPOCHS))
    seeds: tuple = (0,)
    workers: int = 1
    out: str = None
    eval: EvalPreset = field(default_factory=EvalPreset)

    def __post_init__(self):
        if self.reward is None:
            self.reward = RewardConfig(threshold=self.task.threshold)
        if self.episode is None:
            self.episode = EpisodeConfig(horizon=800 if self.task.underactuated else 500)
        if self.out is None:
            self.out = os.environ.get("SATRL_OUT", "runs")

    def to_dict(self):
        sat = asdict(self.satellite)
        sat["inertia_diag"] = list(sat["inertia_diag"])
        return {
            "satellite": sat,
            "task": {"failure": self.task.mode.value, "align": self.task.align.value,
                     "threshold": self.task.threshold},
            "reward": asdict(self.reward),
            "episode": {k: list(v) if isinstance(v, tuple) else v
                        for k, v in asdict(self.episode).items()},
            "ppo": asdict(self.hp),
            "run": {"seeds": list(self.seeds), "workers": self.workers, "out": self.out},
            "eval": asdict(self.eval),
        }

    def hash(self):
        d = self.to_dict()
        d["run"] = {"seeds": d["run"]["seeds"]}
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text):
    return tuple(float(v) for v in text.replace("[", "").replace("]", "").split(",") if v.strip())


def _opt_float(text):
    return None if text.strip().lower() in ("", "none", "auto") else float(text)


# section -> key -> parser
SCHEMA = {
    "satellite": {"inertia": _floats, "rw_inertia": float, "max_rw_torque": float,
                  "saturation_rpm": float, "wheel_gyroscopic": _bool},
    "task": {"failure": str, "align": str, "threshold": _opt_float},
    "reward": {"exponent": float, "omega_limit": float, "torque_penalty_coeff": float},
    "episode": {"horizon": int, "control_dt": float, "delays": _bool, "delay_min": float,
                "delay_max": float, "angle_min_deg": float, "angle_max_deg": float,
                "curriculum": _bool, "curriculum_start_deg": float, "curriculum_ramp": float,
                "substeps": int},
    "ppo": {f.name: (int if f.type in (int, "int") else float) for f in fields(Hyperparams)},
    "run": {"seeds": int, "base_seed": int, "workers": int, "out": str},
    "eval": {"episodes": int, "steps": int, "start_min_deg": float, "start_max_deg": float,
             "accuracy": _opt_float, "deterministic": _bool, "delays": _bool, "seed": int},
}
SATELLITE_REQUIRED = ("inertia", "rw_inertia", "max_rw_torque", "saturation_rpm")


def _parse(raw):
    values = {}
    for section, items in raw.items():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        values[section] = {}
        for key, text in items.items():
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {section}.{key}")
            try:
                values[section][key] = SCHEMA[section][key](text)
            except ValueError as exc:
                raise ConfigError(f"{section}.{key}: {exc}") from None
    return values


def _build(values, paper_scale=False):
    v = {s: values.get(s, {}) for s in SCHEMA}
    try:
        sat = SatelliteParams()
        if "satellite" in values:
            missing = [k for k in SATELLITE_REQUIRED if k not in v["satellite"]]
            if missing:
                raise ConfigError(f"satellite.{missing[0]} is required in [satellite]")
            s = v["satellite"]
            sat = SatelliteParams(s["inertia"], s["rw_inertia"], s["max_rw_torque"],
                                  float(rpm_to_rad_s(s["saturation_rpm"])),
                                  s.get("wheel_gyroscopic", True))
        t = v["task"]
        mode = FailureMode.parse(t.get("failure", "nominal"))
        align = Align.parse(t.get("align", "full" if mode is FailureMode.NOMINAL else mode.value))
        task = TaskSpec(mode, align, t.get("threshold"))
        reward = RewardConfig(threshold=task.threshold, **v["reward"])
        e = v["episode"]
        base = EpisodeConfig(horizon=800 if task.underactuated else 500)
        episode = EpisodeConfig(
            horizon=e.get("horizon", base.horizon),
            control_dt=e.get("control_dt", base.control_dt),
            delays=e.get("delays", base.delays),
            delay_range=(e.get("delay_min", base.delay_range[0]),
                         e.get("delay_max", base.delay_range[1])),
            initial_angle_range=(e.get("angle_min_deg", base.initial_angle_range[0]),
                                 e.get("angle_max_deg", base.initial_angle_range[1])),
            curriculum=e.get("curriculum", base.curriculum),
            curriculum_start_deg=e.get("curriculum_start_deg", base.curriculum_start_deg),
            curriculum_ramp=e.get("curriculum_ramp", base.curriculum_ramp),
            substeps=e.get("substeps", base.substeps))
        ppo = dict(v["ppo"])
        r = v["run"]
        ev = dict(v["eval"])
        if paper_scale:
            ppo.update(epochs=40, steps_per_epoch=15000)
            r = {**r, "seeds": 10}
            ev["episodes"] = 10000
        ppo.setdefault("epochs", DESK_EPOCHS)
        hp = Hyperparams(**ppo)
        n_seeds = r.get("seeds", DESK_SEEDS)
        if n_seeds < 1:
            raise ConfigError("run.seeds must be >= 1")
        base_seed = r.get("base_seed", 0)
        return RunConfig(sat, task, reward, episode, hp,
                         tuple(range(base_seed, base_seed + n_seeds)),
                         r.get("workers", 1), r.get("out"), EvalPreset(**ev))
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None


def read_ini(text):
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    return {s: dict(cp.items(s)) for s in cp.sections()}


def apply_overrides(raw, overrides):
    raw = {s: dict(items) for s, items in raw.items()}
    for item in overrides or ():
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value: {item!r}")
        key, value = item.split("=", 1)
        section, name = key.strip().split(".", 1)
        raw.setdefault(section, {})[name] = value.strip()
    return raw


def load_config(path=None, overrides=(), paper_scale=False, text=None):
    """Parse and validate a complete run configuration."""
    raw = {}
    if text is not None:
        raw = read_ini(text)
    elif path is not None:
        try:
            with open(path) as fh:
                raw = read_ini(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    raw = apply_overrides(raw, overrides)
    return _build(_parse(raw), paper_scale)


def to_ini(cfg):
    """Serialise a resolved config so that :func:`load_config` reproduces it."""
    sat = cfg.satellite
    ep = cfg.episode
    cp = configparser.ConfigParser(interpolation=None)
    cp["satellite"] = {
        "inertia": ", ".join(repr(v) for v in sat.inertia_diag),
        "rw_inertia": repr(sat.rw_inertia), "max_rw_torque": repr(sat.max_rw_torque),
        "saturation_rpm": repr(float(rad_s_to_rpm(sat.rw_saturation_speed))),
        "wheel_gyroscopic": str(sat.wheel_gyroscopic).lower(),
    }
    cp["task"] = {"failure": cfg.task.mode.value, "align": cfg.task.align.value,
                  "threshold": repr(cfg.task.threshold)}
    cp["reward"] = {"exponent": repr(cfg.reward.exponent),
                    "omega_limit": repr(cfg.reward.omega_limit),
                    "torque_penalty_coeff": repr(cfg.reward.torque_penalty_coeff)}
    cp["episode"] = {
        "horizon": str(ep.horizon), "control_dt": repr(ep.control_dt),
        "delays": str(ep.delays).lower(), "delay_min": repr(ep.delay_range[0]),
        "delay_max": repr(ep.delay_range[1]), "angle_min_deg": repr(ep.initial_angle_range[0]),
        "angle_max_deg": repr(ep.initial_angle_range[1]),
        "curriculum": str(ep.curriculum).lower(),
        "curriculum_start_deg": repr(ep.curriculum_start_deg),
        "curriculum_ramp": repr(ep.curriculum_ramp), "substeps": str(ep.substeps),
    }
    cp["ppo"] = {k: repr(v) for k, v in asdict(cfg.hp).items()}
    cp["run"] = {"seeds": str(len(cfg.seeds)), "base_seed": str(cfg.seeds[0]),
                 "workers": str(cfg.workers), "out": cfg.out}
    ev = asdict(cfg.eval)
    cp["eval"] = {k: ("auto" if v is None else str(v).lower() if isinstance(v, bool) else repr(v)
                      if isinstance(v, float) else str(v)) for k, v in ev.items()}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def with_task(cfg, task):
    """Copy of ``cfg`` retargeted at ``task`` with task-dependent defaults refreshed."""
    horizon = 800 if task.underactuated else 500
    default_h = 800 if cfg.task.underactuated else 500
    episode = cfg.episode
    if episode.horizon == default_h:
        episode = replace(episode, horizon=horizon)
    return replace(cfg, task=task, reward=replace(cfg.reward, threshold=task.threshold),
                   episode=episode)
