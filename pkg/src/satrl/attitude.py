"""Quaternion algebra and kinematic propagation.

Quaternions are plain float64 arrays of shape (4,) in scalar-first order
``[s, x, y, z]``. A quaternion maps body-frame vectors to the inertial frame:
``v_inertial = q * (0, v_body) * conj(q)``. Every function returning a
quaternion returns a freshly normalised array.
"""

import numpy as np

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])
UNIT_TOL = 1e-9


class DomainError(ValueError):
    """Input outside the mathematical domain of an operation."""


def _as_vec(v, n, name):
    arr = np.asarray(v, dtype=np.float64)
    if arr.shape != (n,):
        raise DomainError(f"{name} must have shape ({n},), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} has non-finite components")
    return arr


def normalize(q):
    q = np.asarray(q, dtype=np.float64)
    n = np.sqrt(q @ q)
    if n == 0.0 or not np.isfinite(n):
        raise DomainError("cannot normalise a zero or non-finite quaternion")
    return q / n


def canonical(q):
    """Return the representative of ``q`` with non-negative scalar part."""
    q = np.asarray(q, dtype=np.float64)
    return -q if q[0] < 0.0 else q.copy()


def quat_from_axis_angle(axis, theta):
    axis = _as_vec(axis, 3, "axis")
    if abs(np.linalg.norm(axis) - 1.0) > UNIT_TOL:
        raise DomainError("rotation axis must be unit norm")
    half = 0.5 * float(theta)
    q = np.empty(4)
    q[0] = np.cos(half)
    q[1:] = axis * np.sin(half)
    return normalize(q)


def axis_angle_from_quat(q):
    """Canonical ``(axis, theta)`` with ``theta`` in ``[0, pi]``.

    For the identity rotation the axis is arbitrary and ``(1, 0, 0)`` is
    returned.
    """
    q = canonical(normalize(q))
    vnorm = np.linalg.norm(q[1:])
    theta = 2.0 * np.arctan2(vnorm, q[0])
    if vnorm == 0.0:
        return np.array([1.0, 0.0, 0.0]), 0.0
    return q[1:] / vnorm, float(theta)


def _hamilton(a, b):
    s1, x1, y1, z1 = a
    s2, x2, y2, z2 = b
    return np.array([
        s1 * s2 - x1 * x2 - y1 * y2 - z1 * z2,
        s1 * x2 + x1 * s2 + y1 * z2 - z1 * y2,
        s1 * y2 - x1 * z2 + y1 * s2 + z1 * x2,
        s1 * z2 + x1 * y2 - y1 * x2 + z1 * s2,
    ])


def quat_multiply(a, b):
    """Hamilton product ``a * b``: the rotation ``b`` followed by ``a``."""
    return normalize(_hamilton(_as_vec(a, 4, "a"), _as_vec(b, 4, "b")))


def quat_conjugate(q):
    q = _as_vec(q, 4, "q")
    return normalize(np.array([q[0], -q[1], -q[2], -q[3]]))


def quat_error(q_current, q_target):
    """Rotation taking ``q_current`` onto ``q_target``, scalar part >= 0."""
    return canonical(quat_multiply(q_target, quat_conjugate(q_current)))


def angular_distance(q_a, q_b):
    """Rotation angle between two attitudes, in ``[0, pi]``.

    Invariant under the double cover (``q`` and ``-q`` coincide). Equal to
    ``2 arccos |<q_a, q_b>|`` but evaluated through the half-angle ``atan2``
    form, which stays accurate near 0 where ``arccos`` loses half the digits.
    """
    q_a = np.asarray(q_a, dtype=np.float64)
    q_b = np.asarray(q_b, dtype=np.float64)
    if np.dot(q_a, q_b) < 0.0:
        q_b = -q_b
    return 4.0 * np.arctan2(np.linalg.norm(q_a - q_b), np.linalg.norm(q_a + q_b))


def rotate_vector(q, v):
    q = _as_vec(q, 4, "q")
    v = _as_vec(v, 3, "v")
    s, u = q[0], q[1:]
    # expanded sandwich product q (0, v) q*
    t = 2.0 * np.cross(u, v)
    return v + s * t + np.cross(u, t)


def axis_alignment_angle(q, body_axis, target_dir):
    """Angle between a body axis (carried by attitude ``q``) and an inertial direction."""
    body_axis = _as_vec(body_axis, 3, "body_axis")
    target_dir = _as_vec(target_dir, 3, "target_dir")
    nb = np.linalg.norm(body_axis)
    nt = np.linalg.norm(target_dir)
    if nb == 0.0 or nt == 0.0:
        raise DomainError("axis vectors must be non-zero")
    r = rotate_vector(q, body_axis / nb)
    c = float(np.dot(r, target_dir / nt))
    return float(np.arccos(min(1.0, max(-1.0, c))))


def omega_matrix(omega):
    """4x4 kinematic matrix with ``q_dot = 0.5 * Omega(omega) @ q``.

    Skew-symmetric by construction, so the exact flow preserves the norm.
    """
    wx, wy, wz = _as_vec(omega, 3, "omega")
    return np.array([
        [0.0, -wx, -wy, -wz],
        [wx, 0.0, wz, -wy],
        [wy, -wz, 0.0, wx],
        [wz, wy, -wx, 0.0],
    ])


def propagate_quaternion(q, omega, dt):
    """One explicit Euler step of the quaternion kinematics, then renormalise."""
    if not dt > 0.0:
        raise DomainError("dt must be positive")
    q = _as_vec(q, 4, "q")
    return normalize(q + 0.5 * dt * (omega_matrix(omega) @ q))
