"""Compare the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Each kernel is timed on the shapes it sees in practice: an LSTM step of the
desk and default decoders, one second of 48 kHz audio through the resampler,
and the silence-trim RMS scan.
"""
import argparse
import timeit

import numpy as np

from aratts import _kernels_py

try:
    from aratts import _native
except ImportError:
    _native = None


def cases(rng):
    for batch, hidden in [(8, 128), (8, 1024)]:
        gates = rng.standard_normal((batch, 4 * hidden))
        c_prev = rng.standard_normal((batch, hidden))
        yield f"lstm_forward   B={batch} H={hidden}", "lstm_pointwise_forward", (gates, c_prev)
        hc, acts = _kernels_py.lstm_pointwise_forward(gates, c_prev)
        dhc = rng.standard_normal(hc.shape)
        yield f"lstm_backward  B={batch} H={hidden}", "lstm_pointwise_backward", (dhc, acts, c_prev)

    # 48 kHz -> 22050 Hz polyphase resampling of one second
    n_out, taps, phases = 22050, 64, 147
    xpad = rng.standard_normal(48000 + 2 * taps)
    table = rng.standard_normal((phases, taps))
    pos = np.arange(n_out) * 48000 / 22050
    base = np.floor(pos).astype(np.intp)
    phase = (np.arange(n_out) % phases).astype(np.intp)
    yield "fir_gather     1 s @ 48 kHz", "fir_gather", (xpad, table, base, phase)

    x = rng.standard_normal(22050 * 5)
    yield "frame_rms      5 s, 1024/256", "frame_rms", (x, 1024, 256)


def best_of(fn, args, repeat):
    number = max(1, int(0.2 / max(timeit.timeit(lambda: fn(*args), number=1), 1e-6)))
    return min(timeit.repeat(lambda: fn(*args), number=number, repeat=repeat)) / number


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args()
    if _native is None:
        print("compiled kernels not built; run `pip install -e . --no-build-isolation` first")
        return 1
    print(f"{'kernel':32s} {'python':>10s} {'cython':>10s} {'speedup':>8s}")
    for label, name, call_args in cases(np.random.default_rng(0)):
        py = best_of(getattr(_kernels_py, name), call_args, args.repeat)
        nat = best_of(getattr(_native, name), call_args, args.repeat)
        ref, got = getattr(_kernels_py, name)(*call_args), getattr(_native, name)(*call_args)
        ref, got = (ref, got) if isinstance(ref, tuple) else ((ref,), (got,))
        agree = all(np.allclose(a, b, rtol=1e-10, atol=1e-12) for a, b in zip(ref, got))
        print(f"{label:32s} {py * 1e6:8.1f}us {nat * 1e6:8.1f}us {py / nat:7.1f}x{'' if agree else '  MISMATCH'}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
