"""Pure-numpy versions of the recurrence loops in ``_lstm_kernels.pyx``."""

import numpy as np


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def layer_forward(xproj, U):
    xproj = np.ascontiguousarray(xproj, dtype=np.float64)
    U = np.ascontiguousarray(U, dtype=np.float64)
    T, H4 = xproj.shape
    H = H4 // 4
    if U.shape != (H4, H) or H4 != 4 * H:
        raise ValueError("recurrent weights must be 4H x H")
    acts = np.empty((T, H4))
    c = np.empty((T, H))
    h = np.empty((T, H))
    h_prev = np.zeros(H)
    c_prev = np.zeros(H)
    for t in range(T):
        z = xproj[t] + U @ h_prev
        a = acts[t]
        a[:3 * H] = sigmoid(z[:3 * H])
        a[3 * H:] = np.tanh(z[3 * H:])
        c_prev = a[H:2 * H] * c_prev + a[:H] * a[3 * H:]
        h_prev = a[2 * H:3 * H] * np.tanh(c_prev)
        c[t] = c_prev
        h[t] = h_prev
    return acts, c, h


def layer_backward(acts, c, U, dh_ext, t_stop=0):
    T, H4 = acts.shape
    H = H4 // 4
    if U.shape != (H4, H) or c.shape[0] != T or dh_ext.shape[0] != T:
        raise ValueError("trace and weights disagree in shape")
    dz = np.zeros((T, H4))
    dh_carry = np.zeros(H)
    dc_carry = np.zeros(H)
    for t in range(T - 1, max(t_stop, 0) - 1, -1):
        i, f, o, g = acts[t, :H], acts[t, H:2 * H], acts[t, 2 * H:3 * H], acts[t, 3 * H:]
        dh = dh_ext[t] + dh_carry
        tc = np.tanh(c[t])
        c_prev = c[t - 1] if t > 0 else np.zeros(H)
        dc = dc_carry + dh * o * (1.0 - tc * tc)
        row = dz[t]
        row[:H] = dc * g * i * (1.0 - i)
        row[H:2 * H] = dc * c_prev * f * (1.0 - f)
        row[2 * H:3 * H] = dh * tc * o * (1.0 - o)
        row[3 * H:] = dc * i * (1.0 - g * g)
        dc_carry = dc * f
        dh_carry = U.T @ row
    return dz
