"""Pure-numpy reference versions of the hot kernels.

Every function here has a twin in ``_native.pyx`` with identical semantics;
``aratts.kernels`` picks one at import time.
"""
import numpy as np


def lstm_pointwise_forward(gates, c_prev):
    """Gate nonlinearities and state update for a batch of LSTM cells.

    ``gates`` holds pre-activations ``[i | f | g | o]`` with shape (B, 4H).
    Returns ``(hc, acts)`` where ``hc = [h | c]`` (B, 2H) and
    ``acts = [i | f | g | o | tanh(c)]`` (B, 5H) is kept for the backward pass.
    """
    H = c_prev.shape[1]
    acts = np.empty((gates.shape[0], 5 * H), dtype=gates.dtype)
    sig = 0.5 * (1.0 + np.tanh(0.5 * gates))
    acts[:, 0:H] = sig[:, 0:H]
    acts[:, H:2 * H] = sig[:, H:2 * H]
    acts[:, 2 * H:3 * H] = np.tanh(gates[:, 2 * H:3 * H])
    acts[:, 3 * H:4 * H] = sig[:, 3 * H:4 * H]
    i, f, g, o = (acts[:, k * H:(k + 1) * H] for k in range(4))
    c = f * c_prev + i * g
    tc = np.tanh(c)
    acts[:, 4 * H:] = tc
    hc = np.empty((gates.shape[0], 2 * H), dtype=gates.dtype)
    hc[:, :H] = o * tc
    hc[:, H:] = c
    return hc, acts


def lstm_pointwise_backward(dhc, acts, c_prev):
    """Backward of :func:`lstm_pointwise_forward`; returns ``(dgates, dc_prev)``."""
    H = c_prev.shape[1]
    i, f, g, o, tc = (acts[:, k * H:(k + 1) * H] for k in range(5))
    dh = dhc[:, :H]
    dc = dhc[:, H:] + dh * o * (1.0 - tc * tc)
    dgates = np.empty((dhc.shape[0], 4 * H), dtype=dhc.dtype)
    dgates[:, 0:H] = dc * g * i * (1.0 - i)
    dgates[:, H:2 * H] = dc * c_prev * f * (1.0 - f)
    dgates[:, 2 * H:3 * H] = dc * i * (1.0 - g * g)
    dgates[:, 3 * H:] = dh * tc * o * (1.0 - o)
    return dgates, dc * f


def fir_gather(xpad, table, base, phase):
    """``y[n] = sum_m xpad[base[n] + m] * table[phase[n], m]``.

    The polyphase resampler's inner loop; ``xpad`` must already be padded so
    every index is in range.
    """
    taps = table.shape[1]
    out = np.empty(base.shape[0], dtype=np.float64)
    step = 8192
    offs = np.arange(taps)
    for s in range(0, base.shape[0], step):
        b = base[s:s + step]
        idx = b[:, None] + offs[None, :]
        out[s:s + step] = np.einsum("nm,nm->n", xpad[idx], table[phase[s:s + step]])
    return out


def frame_rms(x, frame, hop):
    """RMS of each length-``frame`` window starting at multiples of ``hop``."""
    n = 1 + (x.shape[0] - frame) // hop
    if n <= 0:
        return np.zeros(0)
    windows = np.lib.stride_tricks.sliding_window_view(x, frame)[::hop][:n]
    return np.sqrt(np.einsum("nk,nk->n", windows, windows) / frame)
