"""Normalizing-flow vocoder: squeeze by 8, then invertible 1x1 conv + affine coupling.

All eight channels pass through every flow step (no early outputs). The
mel conditioning is upsampled to the audio rate by a transposed
convolution (stride = hop, width = 2 * hop), grouped like the audio, and
projected once per flow step. :meth:`WaveGlow.condition` returns those
projections so a forward/inverse pair can share them.

The eight-channel flow state, the 1x1 mixes and the affine updates always
run in float64; only the conditioning path and the WN networks use the
configured dtype. The state is tiny next to the WN activations, and
keeping it wide makes a float32 model invert to float64 round-off.
"""
from dataclasses import asdict, dataclass

import numpy as np

from aratts.audio.dsp import SAMPLE_RATE, AudioClip, MelSpectrogram
from aratts.autodiff import ops
from aratts.autodiff.nn import Conv1d, Module, Parameter, xavier_uniform
from aratts.autodiff.rng import make_rng
from aratts.autodiff.tensor import ShapeMismatch, Tensor, is_grad_enabled, no_grad

GROUP = 8
MIN_ABS_DET = 1e-8
STATE_DTYPE = np.float64


class SingularWeight(ValueError):
    pass


@dataclass
class VocoderConfig:
    n_mels: int = 80
    hop: int = 256
    n_flows: int = 12
    group: int = GROUP
    wn_layers: int = 4
    wn_channels: int = 64
    wn_kernel: int = 3
    sigma: float = 1.0
    log_s_clamp: float = 7.0
    dtype: str = "float64"

    @classmethod
    def full(cls, **overrides):
        """Larger WN preset; provided for configuration, not exercised by tests."""
        base = dict(wn_layers=8, wn_channels=256)
        base.update(overrides)
        return cls(**base)

    def to_dict(self):
        return asdict(self)


def squeeze(audio, group=GROUP):
    """(..., L) samples -> ((..., group, ceil(L/group)), L).

    Zero-pads to a multiple of ``group``; column t holds samples
    ``group*t .. group*t + group - 1``.
    """
    audio = np.asarray(audio)
    length = audio.shape[-1]
    pad = -length % group
    if pad:
        audio = np.pad(audio, [(0, 0)] * (audio.ndim - 1) + [(0, pad)])
    lead = audio.shape[:-1]
    z = audio.reshape(lead + (-1, group))
    return np.swapaxes(z, -1, -2).copy(), length


def unsqueeze(z, length=None):
    z = np.asarray(z)
    out = np.swapaxes(z, -1, -2).reshape(z.shape[:-2] + (-1,))
    return out if length is None else out[..., :length]


def _squeeze_t(x, group):
    B, L = x.shape
    return ops.transpose(ops.reshape(x, (B, L // group, group)), (0, 2, 1))


class InvConv(Module):
    """Per-time-step channel mix ``y = W z`` with ``log|det W|`` per column."""

    def __init__(self, channels, rng, dtype=np.float64):
        q, _ = np.linalg.qr(rng.standard_normal((channels, channels)))
        if np.linalg.det(q) < 0:
            q[:, 0] = -q[:, 0]
        self.weight = Parameter(q.astype(dtype))

    def check(self):
        det = abs(np.linalg.det(self.weight.data.astype(np.float64)))
        if not det > MIN_ABS_DET:
            raise SingularWeight(f"|det W| = {det:.3e} below {MIN_ABS_DET}")

    def forward(self, z):
        """z (B, C, n) -> (W z, log|det W| * n * B)."""
        B, _, n = z.shape
        w = ops.cast(self.weight, STATE_DTYPE)
        y = ops.matmul(w, z)
        return y, ops.scale(ops.logabsdet(w), float(n * B))

    def inverse(self, y):
        self.check()
        w_inv = np.linalg.inv(self.weight.data.astype(STATE_DTYPE))
        return w_inv @ np.asarray(y.data if isinstance(y, Tensor) else y, dtype=STATE_DTYPE)


class WN(Module):
    """Dilated gated convolution stack producing ``(log_s, t)`` for a coupling."""

    def __init__(self, n_in, cond_channels, cfg, rng):
        dt = np.dtype(cfg.dtype)
        C = cfg.wn_channels
        self.n_layers = cfg.wn_layers
        self.channels = C
        self.start = Conv1d(n_in, C, 1, rng, dtype=dt)
        self.cond = Conv1d(cond_channels, 2 * C * cfg.wn_layers, 1, rng, dtype=dt)
        self.in_layers = []
        self.res_skip = []
        for i in range(cfg.wn_layers):
            self.in_layers.append(Conv1d(C, 2 * C, cfg.wn_kernel, rng, dilation=2 ** i, dtype=dt))
            n_out = 2 * C if i < cfg.wn_layers - 1 else C
            self.res_skip.append(Conv1d(C, n_out, 1, rng, dtype=dt))
        self.end = Conv1d(C, 2 * n_in, 1, rng, dtype=dt)
        self.end.weight.data[...] = 0.0

    def project_condition(self, cond):
        return self.cond(cond)

    def forward(self, x, cond_proj):
        if not is_grad_enabled():
            return Tensor(self._forward_array(x.data, cond_proj.data))
        C = self.channels
        h = self.start(x)
        skip = None
        for i, (inl, rs) in enumerate(zip(self.in_layers, self.res_skip)):
            a = ops.add(inl(h), cond_proj[:, 2 * C * i:2 * C * (i + 1)])
            acts = ops.gated_tanh(a)
            r = rs(acts)
            if i < self.n_layers - 1:
                h = ops.add(h, r[:, :C])
                s = r[:, C:]
            else:
                s = r
            skip = s if skip is None else ops.add(skip, s)
        return self.end(skip)

    def _forward_array(self, x, cond_proj):
        # same operations in the same order as forward, updated in place and
        # without graph nodes; results are bitwise identical
        def conv(layer, inp):
            bias = None if layer.bias is None else layer.bias.data
            return ops.conv1d_array(inp, layer.weight.data, bias, layer.dilation)[0]

        C = self.channels
        h = conv(self.start, x)
        skip = None
        for i, (inl, rs) in enumerate(zip(self.in_layers, self.res_skip)):
            a = conv(inl, h)
            a += cond_proj[:, 2 * C * i:2 * C * (i + 1)]
            lo, hi = a[:, :C], a[:, C:]
            hi *= 0.5
            np.tanh(a, out=a)
            hi += 1.0
            hi *= 0.5
            lo *= hi
            r = conv(rs, lo)
            if i < self.n_layers - 1:
                h += r[:, :C]
                s = r[:, C:]
            else:
                s = r
            if skip is None:
                skip = s
            else:
                skip += s
        return conv(self.end, skip)


class Coupling(Module):
    def __init__(self, channels, cond_channels, cfg, rng):
        self.half = channels // 2
        self.clamp = cfg.log_s_clamp
        self.dtype = np.dtype(cfg.dtype)
        self.wn = WN(self.half, cond_channels, cfg, rng)

    def _scale_shift(self, z_a, cond_proj):
        out = ops.cast(self.wn(ops.cast(z_a, self.dtype), cond_proj), STATE_DTYPE)
        log_s = ops.clip(out[:, :self.half], -self.clamp, self.clamp)
        return log_s, out[:, self.half:]

    def forward(self, z, cond_proj):
        """Returns (z', log-det contribution = sum of log_s)."""
        z_a, z_b = z[:, :self.half], z[:, self.half:]
        log_s, t = self._scale_shift(z_a, cond_proj)
        z_b = ops.add(ops.mul(z_b, ops.exp(log_s)), t)
        return ops.concat([z_a, z_b], axis=1), ops.sum(log_s)

    def inverse(self, y, cond_proj):
        y = y if isinstance(y, Tensor) else Tensor(y)
        y_a, y_b = y[:, :self.half], y[:, self.half:]
        log_s, t = self._scale_shift(y_a, cond_proj)
        z_b = (y_b.data - t.data) / np.exp(log_s.data)
        return np.concatenate([y_a.data, z_b], axis=1)


@dataclass
class FlowResult:
    z: Tensor  # (B, group, n)
    log_det: Tensor  # scalar, summed over the batch
    step_log_dets: list  # one float per conv and per coupling, in order
    length: int


class WaveGlow(Module):
    def __init__(self, cfg=None, seed=0):
        self.cfg = cfg or VocoderConfig()
        cfg = self.cfg
        if cfg.hop % cfg.group:
            raise ValueError("hop must be a multiple of the group size")
        dt = np.dtype(cfg.dtype)
        rng = make_rng(seed)
        k = 2 * cfg.hop
        self.upsample_weight = Parameter(
            xavier_uniform(rng, (cfg.n_mels, cfg.n_mels, k), cfg.n_mels * k // cfg.hop,
                           cfg.n_mels * k // cfg.hop, dtype=dt))
        self.upsample_bias = Parameter(np.zeros(cfg.n_mels, dtype=dt))
        cond_channels = cfg.n_mels * cfg.group
        self.convs = [InvConv(cfg.group, rng, dt) for _ in range(cfg.n_flows)]
        self.couplings = [Coupling(cfg.group, cond_channels, cfg, rng) for _ in range(cfg.n_flows)]

    @property
    def dtype(self):
        return np.dtype(self.cfg.dtype)

    def check_invertible(self):
        for conv in self.convs:
            conv.check()

    def load_state_dict(self, state, strict=True):
        super().load_state_dict(state, strict)
        self.check_invertible()

    def _mel_tensor(self, mel):
        if isinstance(mel, MelSpectrogram):
            mel = mel.values.T  # (n_mels, F)
        if isinstance(mel, Tensor):
            mel = mel.data
        mel = np.asarray(mel, dtype=self.dtype)
        if mel.ndim == 2:
            mel = mel[None]
        if mel.shape[1] != self.cfg.n_mels:
            raise ShapeMismatch(f"mel must be (B, {self.cfg.n_mels}, frames), got {mel.shape}")
        return Tensor(mel)

    def condition(self, mel, length=None):
        """Per-flow conditioning projections for audio of ``length`` samples.

        ``mel`` is (B, n_mels, F) or (n_mels, F). ``length`` defaults to
        ``hop * F`` and is rounded up to a multiple of the group size.
        """
        cfg = self.cfg
        mel = self._mel_tensor(mel)
        B, _, F = mel.shape
        length = cfg.hop * F if length is None else length
        padded = length + (-length % cfg.group)
        up = ops.conv_transpose1d(mel, self.upsample_weight, self.upsample_bias, stride=cfg.hop)
        if up.shape[-1] < padded:
            raise ShapeMismatch(f"{F} mel frames cannot condition {length} samples")
        up = up[:, :, :padded]
        n = padded // cfg.group
        grouped = ops.reshape(
            ops.transpose(ops.reshape(up, (B, cfg.n_mels, n, cfg.group)), (0, 1, 3, 2)),
            (B, cfg.n_mels * cfg.group, n))
        return [c.wn.project_condition(grouped) for c in self.couplings]

    def flow_forward(self, audio, mel=None, cond=None):
        """audio (B, L) or (L,) -> :class:`FlowResult`."""
        cfg = self.cfg
        x = audio if isinstance(audio, Tensor) else Tensor(np.asarray(audio, dtype=STATE_DTYPE))
        x = ops.cast(x, STATE_DTYPE)
        if x.ndim == 1:
            x = ops.reshape(x, (1, x.shape[0]))
        length = x.shape[-1]
        pad = -length % cfg.group
        if pad:
            x = ops.concat([x, Tensor(np.zeros((x.shape[0], pad), dtype=x.dtype))], axis=-1)
        if cond is None:
            cond = self.condition(mel, length)
        z = _squeeze_t(x, cfg.group)
        total = None
        steps = []
        for conv, coupling, c in zip(self.convs, self.couplings, cond):
            z, ld_w = conv(z)
            z, ld_s = coupling(z, c)
            steps += [ld_w.item(), ld_s.item()]
            part = ops.add(ld_w, ld_s)
            total = part if total is None else ops.add(total, part)
        return FlowResult(z, total, steps, length)

    def flow_inverse(self, z, mel=None, cond=None, length=None):
        """Exact inverse of :meth:`flow_forward`; returns audio (B, length)."""
        z = np.asarray(z.data if isinstance(z, Tensor) else z, dtype=STATE_DTYPE)
        if z.ndim == 2:
            z = z[None]
        full = z.shape[-1] * self.cfg.group
        length = full if length is None else length
        with no_grad():
            if cond is None:
                cond = self.condition(mel, length)
            for conv, coupling, c in zip(reversed(self.convs), reversed(self.couplings), reversed(cond)):
                z = coupling.inverse(z, c)
                z = conv.inverse(z)
        return unsqueeze(z, length)

    def nll(self, audio, mel=None, cond=None, sigma=None):
        """``sum(z^2) / (2 sigma^2) - total_log_det`` summed over the batch."""
        sigma = self.cfg.sigma if sigma is None else sigma
        res = self.flow_forward(audio, mel, cond)
        zz = ops.sum(ops.mul(res.z, res.z))
        return ops.sub(ops.scale(zz, 0.5 / sigma ** 2), res.log_det)

    def synthesize(self, mel, sigma=None, seed=0, rng=None):
        """Noise -> audio for one mel spectrogram ((n_mels, F) or MelSpectrogram)."""
        cfg = self.cfg
        sigma = cfg.sigma if sigma is None else sigma
        mel_t = self._mel_tensor(mel)
        if mel_t.shape[0] != 1:
            raise ShapeMismatch("synthesize expects a single mel spectrogram")
        length = cfg.hop * mel_t.shape[-1]
        n = length // cfg.group
        if sigma == 0:
            z = np.zeros((1, cfg.group, n), dtype=STATE_DTYPE)
        else:
            rng = make_rng(seed) if rng is None else rng
            z = sigma * rng.standard_normal((1, cfg.group, n))
        was_training = self.training
        self.eval()
        try:
            audio = self.flow_inverse(z, mel_t, length=length)[0]
        finally:
            self.train(was_training)
        audio = np.clip(audio, -1.0, 1.0)[:length]
        return AudioClip(audio.astype(np.float64), SAMPLE_RATE)


def gradcheck_nll_case(rng):
    """2-flow vocoder NLL on 64 samples with every WN layer randomised."""
    cfg = VocoderConfig(n_mels=3, hop=16, n_flows=2, wn_layers=2, wn_channels=4, log_s_clamp=50.0)
    wg = WaveGlow(cfg, seed=int(rng.integers(1 << 31)))
    for c in wg.couplings:
        c.wn.end.weight.data[...] = 0.3 * rng.standard_normal(c.wn.end.weight.shape)
    for conv in wg.convs:
        conv.weight.data += 0.2 * rng.standard_normal(conv.weight.shape)
    audio = 0.5 * rng.standard_normal((1, 64))
    mel = rng.standard_normal((1, cfg.n_mels, 4))
    names = [n for n, _ in wg.named_parameters()]
    arrays = [p.data.copy() for _, p in wg.named_parameters()] + [audio]

    from aratts.taco import _bind

    def fn(t):
        _bind(wg, names, t[:-1])
        return wg.nll(t[-1], mel)

    return fn, arrays
