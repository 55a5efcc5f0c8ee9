"""numba implementations of the hot loops (scalar code, compiled)."""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def integrate(q0, w0, rw0, tau, dt, n_sub, inertia, irw, sat, wheel_gyro):
    q = q0.copy()
    w = w0.copy()
    rw = rw0.copy()
    w_new = np.empty(3)
    rw_new = np.empty(3)
    te = np.empty(3)
    hr = np.empty(3)
    tau_sum = np.zeros(3)
    h = dt / n_sub
    for _ in range(n_sub):
        for i in range(3):
            r = rw[i] - tau[i] * h / irw
            if r > sat:
                r = sat
            elif r < -sat:
                r = -sat
            rw_new[i] = r
            te[i] = -irw * (r - rw[i]) / h
            tau_sum[i] += te[i]
        if wheel_gyro:
            hx = inertia[0] * w[0] + irw * rw[0]
            hy = inertia[1] * w[1] + irw * rw[1]
            hz = inertia[2] * w[2] + irw * rw[2]
            wn = math.sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2])
            if wn > 0.0:
                ux = w[0] / wn
                uy = w[1] / wn
                uz = w[2] / wn
                c = math.cos(wn * h)
                s = -math.sin(wn * h)
                ud = ux * hx + uy * hy + uz * hz
                hr[0] = hx * c + (uy * hz - uz * hy) * s + ux * ud * (1.0 - c)
                hr[1] = hy * c + (uz * hx - ux * hz) * s + uy * ud * (1.0 - c)
                hr[2] = hz * c + (ux * hy - uy * hx) * s + uz * ud * (1.0 - c)
            else:
                hr[0] = hx
                hr[1] = hy
                hr[2] = hz
            for i in range(3):
                w_new[i] = (hr[i] - irw * rw_new[i]) / inertia[i]
        else:
            lx = inertia[0] * w[0]
            ly = inertia[1] * w[1]
            lz = inertia[2] * w[2]
            w_new[0] = w[0] + h * (te[0] - (w[1] * lz - w[2] * ly)) / inertia[0]
            w_new[1] = w[1] + h * (te[1] - (w[2] * lx - w[0] * lz)) / inertia[1]
            w_new[2] = w[2] + h * (te[2] - (w[0] * ly - w[1] * lx)) / inertia[2]
        mx = 0.5 * (w[0] + w_new[0])
        my = 0.5 * (w[1] + w_new[1])
        mz = 0.5 * (w[2] + w_new[2])
        s0, x0, y0, z0 = q[0], q[1], q[2], q[3]
        k = 0.5 * h
        q[0] = s0 + k * (-mx * x0 - my * y0 - mz * z0)
        q[1] = x0 + k * (mx * s0 + mz * y0 - my * z0)
        q[2] = y0 + k * (my * s0 - mz * x0 + mx * z0)
        q[3] = z0 + k * (mz * s0 + my * x0 - mx * y0)
        n = math.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
        for i in range(4):
            q[i] /= n
        for i in range(3):
            w[i] = w_new[i]
            rw[i] = rw_new[i]
        if not (math.isfinite(n) and math.isfinite(w[0]) and math.isfinite(w[1])
                and math.isfinite(w[2])):
            return q, w, rw, tau_sum / n_sub, False
    return q, w, rw, tau_sum / n_sub, True


@njit(cache=True)
def gae(rewards, values, dones, last_value, gamma, lam):
    n = rewards.shape[0]
    adv = np.empty(n)
    running = 0.0
    for t in range(n - 1, -1, -1):
        nonterminal = 1.0 - dones[t]
        next_value = last_value if t == n - 1 else values[t + 1]
        delta = rewards[t] + gamma * nonterminal * next_value - values[t]
        running = delta + gamma * lam * nonterminal * running
        adv[t] = running
    return adv
