"""Waveform preprocessing and mel-spectrogram features."""
import math
import wave
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from aratts import kernels

SAMPLE_RATE = 22050
FRAME_LENGTH = 1024
HOP = 256
N_MELS = 80
F_MIN = 0.0
F_MAX = 8000.0
LOG_FLOOR = 1e-5
TRIM_DB = 60.0

RESAMPLE_TAPS = 64
KAISER_BETA = 8.6


class AudioError(Exception):
    pass


class MalformedWav(AudioError):
    pass


class UnsupportedEncoding(AudioError):
    pass


class AllSilent(AudioError):
    pass


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self):
        return len(self) / self.sample_rate


@dataclass
class MelSpectrogram:
    values: np.ndarray  # (n_frames, n_mels), natural-log magnitudes
    frame_hop: int = HOP
    frame_length: int = FRAME_LENGTH
    sample_rate: int = SAMPLE_RATE

    @property
    def n_frames(self):
        return self.values.shape[0]

    @property
    def n_mels(self):
        return self.values.shape[1]


# ---------------------------------------------------------------------------
# WAV I/O


def load_wav(path):
    """Read a 16-bit PCM WAV; multi-channel files keep channel 0."""
    try:
        with wave.open(str(path), "rb") as w:
            width = w.getsampwidth()
            channels = w.getnchannels()
            rate = w.getframerate()
            frames = w.readframes(w.getnframes())
    except wave.Error as e:
        if "unknown format" in str(e):
            raise UnsupportedEncoding(f"{path}: {e}") from e
        raise MalformedWav(f"{path}: {e}") from e
    except EOFError as e:
        raise MalformedWav(f"{path}: truncated header") from e
    if width != 2:
        raise UnsupportedEncoding(f"{path}: {8 * width}-bit samples, expected 16-bit PCM")
    if rate <= 0 or channels <= 0:
        raise MalformedWav(f"{path}: bad format chunk")
    pcm = np.frombuffer(frames, dtype="<i2")
    pcm = pcm[: (pcm.shape[0] // channels) * channels].reshape(-1, channels)[:, 0]
    return AudioClip(pcm.astype(np.float64) / 32768.0, rate)


def write_wav(path, clip):
    """Write mono 16-bit PCM. Samples are scaled by 32768, rounded and clipped."""
    q = np.clip(np.round(np.asarray(clip.samples) * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(int(clip.sample_rate))
        w.writeframes(q.tobytes())


# ---------------------------------------------------------------------------
# Resampling


@lru_cache(maxsize=16)
def _polyphase_table(up, down, taps):
    """Kaiser-windowed sinc filter sampled at the ``up`` fractional offsets.

    Row ``p`` holds the taps applied to input samples ``floor(t) - taps/2 + 1 + m``
    for an output instant ``t`` with fractional part ``p / up``.
    """
    cutoff = min(1.0, up / down)
    half = taps // 2
    frac = np.arange(up)[:, None] / up
    m = np.arange(taps)[None, :]
    tau = frac - (m - half + 1)  # output instant minus input sample position
    u = np.clip(tau / half, -1.0, 1.0)
    w = np.i0(KAISER_BETA * np.sqrt(1.0 - u * u)) / np.i0(KAISER_BETA)
    h = cutoff * np.sinc(cutoff * tau) * w
    h[np.abs(tau) >= half] = 0.0
    return np.ascontiguousarray(h)


def resample(clip, target_rate):
    """Band-limited polyphase resampling to ``target_rate`` Hz.

    Output length is ``round(len * target / source)``; the result is clamped
    to [-1, 1].
    """
    if target_rate <= 0:
        raise ValueError("target_rate must be positive")
    src = int(clip.sample_rate)
    target_rate = int(target_rate)
    if target_rate == src:
        return AudioClip(clip.samples.copy(), src)
    g = math.gcd(src, target_rate)
    up, down = target_rate // g, src // g
    n_in = len(clip)
    n_out = int(round(n_in * target_rate / src))
    taps = RESAMPLE_TAPS
    half = taps // 2
    table = _polyphase_table(up, down, taps)
    pos = np.arange(n_out, dtype=np.int64) * down
    base = pos // up  # floor of the output instant in input samples
    phase = (pos % up).astype(np.intp)
    # window starts at base - half + 1; pad so every index is valid
    xpad = np.concatenate([np.zeros(half), clip.samples, np.zeros(taps + 1)])
    out = kernels.fir_gather(xpad, table, (base + 1).astype(np.intp), phase)
    return AudioClip(np.clip(out, -1.0, 1.0), target_rate)


# ---------------------------------------------------------------------------
# Silence trimming


def trim_silence(clip, threshold_db=TRIM_DB, frame=FRAME_LENGTH, hop=HOP):
    """Drop leading/trailing audio more than ``threshold_db`` below the loudest frame.

    Frame levels are RMS over ``frame`` samples every ``hop`` samples,
    measured relative to the peak frame. Inside the first and last retained
    frames the cut point is refined to ``hop``-sized blocks using the same
    reference level, so the kept region starts and ends within one hop of
    the audible content. The result is a contiguous slice of the input.
    """
    x = clip.samples
    if x.shape[0] == 0:
        raise ValueError("cannot trim an empty clip")
    # zero-pad so the frame grid reaches the last sample
    covered = frame + -(-max(x.shape[0] - frame, 0) // hop) * hop
    padded = np.concatenate([x, np.zeros(covered - x.shape[0])])
    rms = kernels.frame_rms(padded, frame, hop)
    peak = rms.max()
    if peak <= 0.0:
        raise AllSilent("every frame is silent")
    ref = peak * 10.0 ** (-threshold_db / 20.0)
    loud = np.flatnonzero(rms > ref)
    if loud.size == 0:
        raise AllSilent("every frame is below threshold")
    first, last = loud[0], loud[-1]

    start = first * hop
    stop = min(x.shape[0], last * hop + frame)
    blocks = kernels.frame_rms(padded, hop, hop)
    # a block is audible if its own energy, spread over a full frame, clears the bar
    block_level = blocks * math.sqrt(hop / frame)
    b0, b1 = start // hop, (stop + hop - 1) // hop
    audible = np.flatnonzero(block_level[b0:b1] > ref)
    if audible.size:
        start = (b0 + audible[0]) * hop
        stop = min(stop, (b0 + audible[-1] + 1) * hop)
    return AudioClip(x[start:stop].copy(), clip.sample_rate)


# ---------------------------------------------------------------------------
# Spectral analysis


def hann(n):
    """Periodic Hann window (sums to n/2)."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def n_frames_for(length, frame_length=FRAME_LENGTH, hop=HOP):
    return 1 + (length + 2 * (frame_length // 2) - frame_length) // hop


def stft(clip, frame_length=FRAME_LENGTH, hop=HOP, window=None):
    """Magnitude STFT, shape (n_frames, frame_length // 2 + 1).

    The signal is reflection-padded by ``frame_length // 2`` on both sides so
    frame ``k`` is centred on sample ``k * hop``.
    """
    if frame_length < hop:
        raise ValueError("frame_length must be >= hop")
    x = clip.samples if isinstance(clip, AudioClip) else np.asarray(clip, dtype=np.float64)
    pad = frame_length // 2
    if x.shape[0] <= pad:
        raise ValueError("signal too short for reflection padding")
    win = hann(frame_length) if window is None else window
    xp = np.pad(x, pad, mode="reflect")
    n = n_frames_for(x.shape[0], frame_length, hop)
    frames = np.lib.stride_tricks.sliding_window_view(xp, frame_length)[::hop][:n]
    return np.abs(np.fft.rfft(frames * win, axis=1))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def _triangle_cdf(f, lo, mid, hi):
    """Cumulative area of a unit-area triangle on [lo, hi] peaking at ``mid``."""
    f = np.clip(f, lo, hi)
    rising = (f - lo) ** 2 / ((hi - lo) * (mid - lo))
    falling = 1.0 - (hi - f) ** 2 / ((hi - lo) * (hi - mid))
    return np.where(f <= mid, rising, falling)


def mel_filterbank(n_mels=N_MELS, frame_length=FRAME_LENGTH, sample_rate=SAMPLE_RATE,
                   f_min=F_MIN, f_max=F_MAX):
    """Unit-area triangular filters with centres equally spaced in HTK mel.

    Each weight is the triangle's mean height over the frequency band owned
    by the FFT bin (bin centre +/- half a bin), so narrow low-frequency
    filters still land on at least one bin.
    """
    if not (0.0 <= f_min < f_max <= sample_rate / 2.0):
        raise ValueError("need 0 <= f_min < f_max <= sample_rate / 2")
    n_bins = frame_length // 2 + 1
    df = sample_rate / frame_length
    centres = np.arange(n_bins) * df
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    fb = np.empty((n_mels, n_bins))
    for m in range(n_mels):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        area = _triangle_cdf(centres + df / 2, lo, mid, hi) - _triangle_cdf(centres - df / 2, lo, mid, hi)
        fb[m] = area / df
    return fb


@lru_cache(maxsize=8)
def _cached_filterbank(n_mels, frame_length, sample_rate, f_min, f_max):
    fb = mel_filterbank(n_mels, frame_length, sample_rate, f_min, f_max)
    fb.setflags(write=False)
    return fb


def mel_spectrogram(clip, frame_length=FRAME_LENGTH, hop=HOP, n_mels=N_MELS,
                    f_min=F_MIN, f_max=F_MAX, floor=LOG_FLOOR):
    """``ln(max(filterbank @ |STFT|, floor))`` as a (n_frames, n_mels) matrix."""
    mags = stft(clip, frame_length, hop)
    fb = _cached_filterbank(n_mels, frame_length, clip.sample_rate, f_min, f_max)
    values = np.log(np.maximum(mags @ fb.T, floor))
    return MelSpectrogram(values, hop, frame_length, clip.sample_rate)
