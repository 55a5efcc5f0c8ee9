"""Hot numeric kernels.

The numba backend is used when numba imports cleanly and the environment
variable ``SATRL_NUMBA`` is not set to ``0``. Both backends expose the same
functions with the same signatures:

``integrate(q, w, rw, tau, dt, n_sub, inertia, irw, sat, wheel_gyro)``
    Advance attitude, body rates and wheel speeds over ``dt`` seconds in
    ``n_sub`` equal substeps, holding the commanded body torque ``tau``.
    Returns ``(q, w, rw, mean_applied_torque, ok)``.

``gae(rewards, values, dones, last_value, gamma, lam)``
    Generalised advantage estimates, one per transition.
"""

import os

from . import _numpy

BACKEND = "numpy"
if os.environ.get("SATRL_NUMBA", "1") != "0":
    try:
        from . import _numba as _impl
        BACKEND = "numba"
    except ImportError:  # pragma: no cover
        _impl = _numpy
else:
    _impl = _numpy

integrate = _impl.integrate
gae = _impl.gae

__all__ = ["BACKEND", "integrate", "gae"]
