"""Pure-numpy implementations of the hot loops, used when numba is disabled."""

import numpy as np


def _omega(w):
    wx, wy, wz = w
    return np.array([
        [0.0, -wx, -wy, -wz],
        [wx, 0.0, wz, -wy],
        [wy, -wz, 0.0, wx],
        [wz, wy, -wx, 0.0],
    ])


def integrate(q0, w0, rw0, tau, dt, n_sub, inertia, irw, sat, wheel_gyro):
    q = np.array(q0, dtype=np.float64)
    w = np.array(w0, dtype=np.float64)
    rw = np.array(rw0, dtype=np.float64)
    tau = np.asarray(tau, dtype=np.float64)
    inertia = np.asarray(inertia, dtype=np.float64)
    h = dt / n_sub
    tau_sum = np.zeros(3)
    for _ in range(n_sub):
        rw_new = np.clip(rw - tau * h / irw, -sat, sat)
        te = -irw * (rw_new - rw) / h
        tau_sum += te
        if wheel_gyro:
            H = inertia * w + irw * rw
            wn = np.sqrt(w @ w)
            if wn > 0.0:
                u = w / wn
                c = np.cos(wn * h)
                s = -np.sin(wn * h)
                H = H * c + np.cross(u, H) * s + u * (u @ H) * (1.0 - c)
            w_new = (H - irw * rw_new) / inertia
        else:
            w_new = w + h * (te - np.cross(w, inertia * w)) / inertia
        q = q + 0.5 * h * (_omega(0.5 * (w + w_new)) @ q)
        n = np.sqrt(q @ q)
        q = q / n
        w, rw = w_new, rw_new
        if not (np.isfinite(n) and np.all(np.isfinite(w))):
            return q, w, rw, tau_sum / n_sub, False
    return q, w, rw, tau_sum / n_sub, True


def gae(rewards, values, dones, last_value, gamma, lam):
    n = rewards.shape[0]
    nonterminal = 1.0 - dones
    next_values = np.append(values[1:], last_value)
    deltas = rewards + gamma * nonterminal * next_values - values
    decay = gamma * lam * nonterminal
    adv = np.empty(n)
    running = 0.0
    for t in range(n - 1, -1, -1):
        running = deltas[t] + decay[t] * running
        adv[t] = running
    return adv
