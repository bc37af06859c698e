# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled recurrence loops for one LSTM layer.

Gate blocks in every 4H-wide array are ordered (input, forget, output, candidate).
Input projections (W x_t + b) are computed by the caller for the whole sequence;
only the sequential part lives here.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, tanh

cnp.import_array()


cdef inline double _sigmoid(double z) nogil:
    cdef double e
    if z >= 0.0:
        return 1.0 / (1.0 + exp(-z))
    e = exp(z)
    return e / (1.0 + e)


def layer_forward(const double[:, ::1] xproj, const double[:, ::1] U):
    """Run the recurrence from zero state.

    Returns (acts, c, h): gate activations T x 4H, cell states T x H,
    hidden states T x H.
    """
    cdef Py_ssize_t T = xproj.shape[0]
    cdef Py_ssize_t H4 = xproj.shape[1]
    cdef Py_ssize_t H = H4 // 4
    if U.shape[0] != H4 or U.shape[1] != H or H4 != 4 * H:
        raise ValueError("recurrent weights must be 4H x H")
    UT_arr = np.ascontiguousarray(np.asarray(U).T)
    acts_arr = np.empty((T, H4))
    c_arr = np.empty((T, H))
    h_arr = np.empty((T, H))
    z_arr = np.empty(H4)
    cdef double[:, ::1] UT = UT_arr
    cdef double[:, ::1] acts = acts_arr
    cdef double[:, ::1] c = c_arr
    cdef double[:, ::1] h = h_arr
    cdef double[::1] z = z_arr
    cdef Py_ssize_t t, j, k
    cdef double hj, cp, ig, fg, og, gg, ct
    with nogil:
        for t in range(T):
            for k in range(H4):
                z[k] = xproj[t, k]
            if t > 0:
                for j in range(H):
                    hj = h[t - 1, j]
                    for k in range(H4):
                        z[k] += UT[j, k] * hj
            for j in range(H):
                ig = _sigmoid(z[j])
                fg = _sigmoid(z[H + j])
                og = _sigmoid(z[2 * H + j])
                gg = tanh(z[3 * H + j])
                cp = c[t - 1, j] if t > 0 else 0.0
                ct = fg * cp + ig * gg
                acts[t, j] = ig
                acts[t, H + j] = fg
                acts[t, 2 * H + j] = og
                acts[t, 3 * H + j] = gg
                c[t, j] = ct
                h[t, j] = og * tanh(ct)
    return acts_arr, c_arr, h_arr


def layer_backward(const double[:, ::1] acts, const double[:, ::1] c,
                   const double[:, ::1] U, const double[:, ::1] dh_ext,
                   Py_ssize_t t_stop=0):
    """Backpropagate through the recurrence.

    dh_ext holds the loss gradient reaching each h_t from outside the layer.
    Steps t < t_stop receive no error signal (truncated BPTT). Returns the
    gradient with respect to gate pre-activations, T x 4H.
    """
    cdef Py_ssize_t T = acts.shape[0]
    cdef Py_ssize_t H4 = acts.shape[1]
    cdef Py_ssize_t H = H4 // 4
    if U.shape[0] != H4 or U.shape[1] != H or c.shape[0] != T or dh_ext.shape[0] != T:
        raise ValueError("trace and weights disagree in shape")
    if t_stop < 0:
        t_stop = 0
    dz_arr = np.zeros((T, H4))
    dh_arr = np.zeros(H)
    dc_arr = np.zeros(H)
    cdef double[:, ::1] dz = dz_arr
    cdef double[::1] dh_carry = dh_arr
    cdef double[::1] dc_carry = dc_arr
    cdef Py_ssize_t t, j, k
    cdef double dh, ig, fg, og, gg, tc, dc, cp, dzk
    with nogil:
        t = T - 1
        while t >= t_stop:
            for j in range(H):
                dh = dh_ext[t, j] + dh_carry[j]
                ig = acts[t, j]
                fg = acts[t, H + j]
                og = acts[t, 2 * H + j]
                gg = acts[t, 3 * H + j]
                tc = tanh(c[t, j])
                cp = c[t - 1, j] if t > 0 else 0.0
                dc = dc_carry[j] + dh * og * (1.0 - tc * tc)
                dz[t, j] = dc * gg * ig * (1.0 - ig)
                dz[t, H + j] = dc * cp * fg * (1.0 - fg)
                dz[t, 2 * H + j] = dh * tc * og * (1.0 - og)
                dz[t, 3 * H + j] = dc * ig * (1.0 - gg * gg)
                dc_carry[j] = dc * fg
            for j in range(H):
                dh_carry[j] = 0.0
            for k in range(H4):
                dzk = dz[t, k]
                for j in range(H):
                    dh_carry[j] += U[k, j] * dzk
            t -= 1
    return dz_arr
