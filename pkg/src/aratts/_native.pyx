# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in ``_kernels_py``."""
import numpy as np
cimport cython
from libc.math cimport exp, fabs, sqrt

ctypedef fused real:
    float
    double


cdef inline real _tanh(real x) noexcept nogil:
    # libm tanh is several times slower than exp; the absolute error of this
    # form stays at a few ulp of 1
    cdef double e = exp(-2.0 * fabs(x))
    e = (1.0 - e) / (1.0 + e)
    return e if x >= 0 else -e


cdef inline real _sig(real x) noexcept nogil:
    return 0.5 * (1.0 + _tanh(0.5 * x))


def lstm_pointwise_forward(real[:, ::1] gates, real[:, ::1] c_prev):
    cdef Py_ssize_t B = c_prev.shape[0], H = c_prev.shape[1]
    cdef Py_ssize_t b, k
    dtype = np.float32 if real is float else np.float64
    hc_arr = np.empty((B, 2 * H), dtype=dtype)
    acts_arr = np.empty((B, 5 * H), dtype=dtype)
    cdef real[:, ::1] hc = hc_arr
    cdef real[:, ::1] acts = acts_arr
    cdef real i, f, g, o, c, tc
    with nogil:
        for b in range(B):
            for k in range(H):
                i = _sig(gates[b, k])
                f = _sig(gates[b, H + k])
                g = _tanh(gates[b, 2 * H + k])
                o = _sig(gates[b, 3 * H + k])
                c = f * c_prev[b, k] + i * g
                tc = _tanh(c)
                acts[b, k] = i
                acts[b, H + k] = f
                acts[b, 2 * H + k] = g
                acts[b, 3 * H + k] = o
                acts[b, 4 * H + k] = tc
                hc[b, k] = o * tc
                hc[b, H + k] = c
    return hc_arr, acts_arr


def lstm_pointwise_backward(real[:, ::1] dhc, real[:, ::1] acts, real[:, ::1] c_prev):
    cdef Py_ssize_t B = c_prev.shape[0], H = c_prev.shape[1]
    cdef Py_ssize_t b, k
    dtype = np.float32 if real is float else np.float64
    dg_arr = np.empty((B, 4 * H), dtype=dtype)
    dcp_arr = np.empty((B, H), dtype=dtype)
    cdef real[:, ::1] dgates = dg_arr
    cdef real[:, ::1] dcp = dcp_arr
    cdef real i, f, g, o, tc, dh, dc
    with nogil:
        for b in range(B):
            for k in range(H):
                i = acts[b, k]
                f = acts[b, H + k]
                g = acts[b, 2 * H + k]
                o = acts[b, 3 * H + k]
                tc = acts[b, 4 * H + k]
                dh = dhc[b, k]
                dc = dhc[b, H + k] + dh * o * (1.0 - tc * tc)
                dgates[b, k] = dc * g * i * (1.0 - i)
                dgates[b, H + k] = dc * c_prev[b, k] * f * (1.0 - f)
                dgates[b, 2 * H + k] = dc * i * (1.0 - g * g)
                dgates[b, 3 * H + k] = dh * tc * o * (1.0 - o)
                dcp[b, k] = dc * f
    return dg_arr, dcp_arr


def fir_gather(const double[::1] xpad, const double[:, ::1] table,
               const Py_ssize_t[::1] base, const Py_ssize_t[::1] phase):
    cdef Py_ssize_t n, m, N = base.shape[0], taps = table.shape[1]
    cdef Py_ssize_t b0, p
    cdef double acc
    out_arr = np.empty(N, dtype=np.float64)
    cdef double[::1] out = out_arr
    with nogil:
        for n in range(N):
            b0 = base[n]
            p = phase[n]
            acc = 0.0
            for m in range(taps):
                acc = acc + xpad[b0 + m] * table[p, m]
            out[n] = acc
    return out_arr


def frame_rms(const double[::1] x, Py_ssize_t frame, Py_ssize_t hop):
    cdef Py_ssize_t n_frames = 1 + (x.shape[0] - frame) // hop
    if n_frames <= 0:
        return np.zeros(0)
    out_arr = np.empty(n_frames, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t k, j, s, per = frame // hop
    cdef double acc
    cdef double[::1] blocks
    if frame % hop == 0:
        # each sample is squared once: per-hop block energies, then window sums
        blocks = np.empty(n_frames + per - 1, dtype=np.float64)
        with nogil:
            for k in range(n_frames + per - 1):
                s = k * hop
                acc = 0.0
                for j in range(hop):
                    acc = acc + x[s + j] * x[s + j]
                blocks[k] = acc
            for k in range(n_frames):
                acc = 0.0
                for j in range(per):
                    acc = acc + blocks[k + j]
                out[k] = sqrt(acc / frame)
        return out_arr
    with nogil:
        for k in range(n_frames):
            s = k * hop
            acc = 0.0
            for j in range(frame):
                acc = acc + x[s + j] * x[s + j]
            out[k] = sqrt(acc / frame)
    return out_arr
