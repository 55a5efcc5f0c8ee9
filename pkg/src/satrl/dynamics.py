"""Rigid-body rotational dynamics with three principal-axis reaction wheels.

All quantities are SI: rad/s, N*m, kg*m^2. Revolutions per minute only appear
at I/O boundaries through :func:`rpm_to_rad_s` / :func:`rad_s_to_rpm`.
"""

import enum
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .attitude import IDENTITY, normalize

TORQUE_LIMIT = 0.002  # N*m, half of the wheel's maximum torque
SUBSTEPS = 100


def rpm_to_rad_s(rpm):
    return np.asarray(rpm, dtype=np.float64) * (2.0 * np.pi / 60.0)


def rad_s_to_rpm(w):
    return np.asarray(w, dtype=np.float64) * (60.0 / (2.0 * np.pi))


class NumericalFailure(RuntimeError):
    """Raised when integration produces non-finite values."""


class FailureMode(enum.Enum):
    NOMINAL = "nominal"
    FAILED_X = "x"
    FAILED_Y = "y"
    FAILED_Z = "z"

    @property
    def axis(self):
        """Index of the failed wheel, or ``None``."""
        return {"x": 0, "y": 1, "z": 2}.get(self.value)

    @classmethod
    def parse(cls, text):
        key = str(text).strip().lower()
        aliases = {"none": "nominal", "failed_x": "x", "failed_y": "y", "failed_z": "z"}
        return cls(aliases.get(key, key))


@dataclass(frozen=True)
class SatelliteParams:
    inertia_diag: tuple = (0.19, 0.23, 0.17)
    rw_inertia: float = 1.82e-5
    max_rw_torque: float = 0.004
    rw_saturation_speed: float = float(rpm_to_rad_s(7000.0))
    wheel_gyroscopic: bool = True

    def __post_init__(self):
        inertia = tuple(float(v) for v in self.inertia_diag)
        if len(inertia) != 3 or min(inertia) <= 0.0:
            raise ValueError("inertia_diag must be three positive values")
        object.__setattr__(self, "inertia_diag", inertia)
        for name in ("rw_inertia", "max_rw_torque", "rw_saturation_speed"):
            if not float(getattr(self, name)) > 0.0:
                raise ValueError(f"{name} must be positive")

    @property
    def inertia(self):
        return np.array(self.inertia_diag)


@dataclass(frozen=True)
class SatelliteState:
    attitude: np.ndarray = field(default_factory=lambda: IDENTITY.copy())
    omega: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rw_speed: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "attitude", normalize(self.attitude))
        object.__setattr__(self, "omega", np.array(self.omega, dtype=np.float64))
        object.__setattr__(self, "rw_speed", np.array(self.rw_speed, dtype=np.float64))

    def as_vector(self):
        return np.concatenate([self.attitude, self.omega, self.rw_speed])


def euler_dynamics(params, omega, torque, rw_speed=None):
    """Body angular acceleration ``I^-1 (M - omega x H)``.

    ``H`` is ``I omega`` plus, when ``rw_speed`` is given and the wheel
    gyroscopic term is enabled, the stored wheel momentum.
    """
    inertia = params.inertia
    omega = np.asarray(omega, dtype=np.float64)
    h = inertia * omega
    if rw_speed is not None and params.wheel_gyroscopic:
        h = h + params.rw_inertia * np.asarray(rw_speed, dtype=np.float64)
    return (np.asarray(torque, dtype=np.float64) - np.cross(omega, h)) / inertia


def clamp_torque(raw, limit=TORQUE_LIMIT):
    return np.clip(np.asarray(raw, dtype=np.float64), -limit, limit)


def apply_failure(cmd, mode):
    out = np.array(cmd, dtype=np.float64)
    if mode.axis is not None:
        out[mode.axis] = 0.0
    return out


def effective_wheel_torque(cmd, state, params):
    """Zero the torque on any saturated wheel that would be pushed further.

    Body torque ``+tau`` accelerates the wheel at ``-tau / I_rw``; a wheel at
    ``+sat`` can therefore still take positive body torque (desaturating).
    """
    out = np.array(cmd, dtype=np.float64)
    sat = params.rw_saturation_speed
    rw = state.rw_speed
    for i in range(3):
        if abs(rw[i]) >= sat and rw[i] * out[i] < 0.0:
            out[i] = 0.0
    return out


def total_angular_momentum(state, params):
    """Body-frame angular momentum of spacecraft plus wheels."""
    return params.inertia * state.omega + params.rw_inertia * state.rw_speed


def step_dynamics(state, cmd, dt, params, mode=FailureMode.NOMINAL, substeps=SUBSTEPS,
                  return_torque=False):
    """Propagate ``state`` over ``dt`` seconds holding torque command ``cmd``.

    The command passes through the failure mask, then the wheel saturation
    limit is enforced inside every substep. With ``return_torque`` the mean
    torque actually delivered to the body is returned alongside the state.
    """
    if not dt > 0.0 or substeps < 1:
        raise ValueError("dt must be positive and substeps >= 1")
    tau = apply_failure(clamp_torque(cmd), mode)
    q, w, rw, applied, ok = kernels.integrate(
        state.attitude, state.omega, state.rw_speed, tau, float(dt), int(substeps),
        params.inertia, float(params.rw_inertia), float(params.rw_saturation_speed),
        bool(params.wheel_gyroscopic))
    if not ok:
        raise NumericalFailure("non-finite state during integration")
    new = SatelliteState(q, w, rw)
    return (new, applied) if return_torque else new
