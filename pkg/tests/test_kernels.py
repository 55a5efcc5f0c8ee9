import os
import subprocess
import sys

import numpy as np
import pytest

from satrl import kernels
from satrl.dynamics import SatelliteParams
from satrl.kernels import _numba, _numpy

P = SatelliteParams()
ARGS = (P.inertia, P.rw_inertia, P.rw_saturation_speed)


@pytest.mark.parametrize("gyro", [True, False])
def test_integrate_backends_agree(gyro):
    rng = np.random.default_rng(1)
    for _ in range(20):
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        w = rng.uniform(-0.08, 0.08, 3)
        rw = rng.uniform(-700, 700, 3)
        tau = rng.uniform(-0.002, 0.002, 3)
        a = _numba.integrate(q, w, rw, tau, 0.5, 100, *ARGS, gyro)
        b = _numpy.integrate(q, w, rw, tau, 0.5, 100, *ARGS, gyro)
        for x, y in zip(a[:4], b[:4]):
            np.testing.assert_allclose(x, y, rtol=1e-12, atol=1e-15)
        assert a[4] and b[4]


def test_integrate_saturation_backends_agree():
    sat = P.rw_saturation_speed
    q = np.array([1.0, 0, 0, 0])
    rw = np.array([sat - 1.0, -sat + 1.0, 0.0])
    tau = np.array([-0.002, 0.002, 0.001])
    a = _numba.integrate(q, np.zeros(3), rw, tau, 0.5, 100, *ARGS, True)
    b = _numpy.integrate(q, np.zeros(3), rw, tau, 0.5, 100, *ARGS, True)
    np.testing.assert_allclose(a[2], b[2], rtol=1e-14)
    np.testing.assert_allclose(a[3], b[3], rtol=1e-12, atol=1e-18)
    assert np.all(np.abs(a[2]) <= sat)


def test_gae_backends_agree():
    rng = np.random.default_rng(2)
    r, v = rng.normal(size=500), rng.normal(size=500)
    d = (rng.random(500) < 0.05).astype(float)
    np.testing.assert_allclose(_numba.gae(r, v, d, 0.3, 0.99, 0.95),
                               _numpy.gae(r, v, d, 0.3, 0.99, 0.95), rtol=1e-13, atol=1e-13)


def test_backend_flag_selects_numpy():
    env = dict(os.environ, SATRL_NUMBA="0")
    out = subprocess.run([sys.executable, "-c", "from satrl import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
    assert kernels.BACKEND in ("numba", "numpy")
