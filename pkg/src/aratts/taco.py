"""Attention-based mel-spectrogram predictor.

Encoder: symbol embedding -> 3 x (conv5 + batch norm + ReLU + dropout) ->
bidirectional LSTM. Decoder: prenet on the previous frame, hybrid additive
attention over the encoder outputs, two zoneout LSTMs, a linear frame
projection and stop logit from ``[lstm_out, context]``, and a residual
5-layer convolutional postnet.

Layout conventions: encoder outputs are (B, T_x, D); mel frames are
(B, T_dec, n_mels); convolutions run on (B, C, T).
"""
from dataclasses import asdict, dataclass, field

import numpy as np

from aratts.autodiff import ops
from aratts.autodiff.nn import (
    BatchNorm1d,
    Conv1d,
    Embedding,
    Linear,
    LSTMCell,
    Module,
    Parameter,
    zoneout_lstm_cell,
)
from aratts.autodiff.rng import make_rng
from aratts.autodiff.tensor import Tensor, no_grad
from aratts.phonetizer import SYMBOLS


class UnknownSymbolId(IndexError):
    pass


@dataclass
class TacoConfig:
    n_symbols: int = len(SYMBOLS)
    embedding_dim: int = 512
    encoder_conv_channels: int = 512
    encoder_conv_layers: int = 3
    encoder_kernel: int = 5
    encoder_lstm_units: int = 512  # both directions together
    attention_dim: int = 128
    location_features: bool = True
    location_filters: int = 32
    location_kernel: int = 31
    prenet_dim: int = 256
    decoder_lstm_units: int = 1024
    postnet_channels: int = 512
    postnet_layers: int = 5
    postnet_kernel: int = 5
    n_mels: int = 80
    conv_dropout: float = 0.5
    prenet_dropout: float = 0.5
    zoneout: float = 0.1
    prenet_dropout_at_inference: bool = True
    stop_threshold: float = 0.5
    dtype: str = "float64"

    @classmethod
    def desk(cls, **overrides):
        """Reduced model used by the desk-scale experiments."""
        base = dict(
            embedding_dim=64,
            encoder_conv_channels=64,
            encoder_lstm_units=64,
            attention_dim=64,
            prenet_dim=64,
            decoder_lstm_units=128,
            postnet_channels=64,
            conv_dropout=0.1,
        )
        base.update(overrides)
        return cls(**base)

    def to_dict(self):
        return asdict(self)


@dataclass
class AttentionState:
    weights: Tensor  # (B, T_x)
    cumulative: Tensor  # (B, T_x)
    context: Tensor  # (B, D)


@dataclass
class DecoderState:
    lstm1: tuple
    lstm2: tuple


@dataclass
class InferenceResult:
    mel: np.ndarray  # (T_dec, n_mels), postnet output
    mel_pre: np.ndarray
    alignment: np.ndarray  # (T_dec, T_x)
    stop_probs: np.ndarray
    max_steps_reached: bool = False


@dataclass
class TacoOutput:
    mel_pre: Tensor
    mel_post: Tensor
    stop_logits: Tensor  # (B, T_dec)
    alignments: np.ndarray  # (B, T_dec, T_x)
    frame_mask: np.ndarray = field(default=None)


def lengths_to_mask(lengths, max_len=None):
    lengths = np.asarray(lengths)
    max_len = int(lengths.max()) if max_len is None else max_len
    return np.arange(max_len)[None, :] < lengths[:, None]


class Encoder(Module):
    def __init__(self, cfg, rng):
        dt = np.dtype(cfg.dtype)
        self.cfg = cfg
        self.embedding = Embedding(cfg.n_symbols, cfg.embedding_dim, rng, dtype=dt)
        self.convs = []
        self.norms = []
        n_in = cfg.embedding_dim
        for _ in range(cfg.encoder_conv_layers):
            self.convs.append(Conv1d(n_in, cfg.encoder_conv_channels, cfg.encoder_kernel, rng,
                                     bias=False, gain=np.sqrt(2.0), dtype=dt))
            self.norms.append(BatchNorm1d(cfg.encoder_conv_channels, dtype=dt))
            n_in = cfg.encoder_conv_channels
        half = cfg.encoder_lstm_units // 2
        self.lstm_fwd = LSTMCell(n_in, half, rng, dtype=dt)
        self.lstm_bwd = LSTMCell(n_in, half, rng, dtype=dt)

    def forward(self, ids, lengths=None, rng=None):
        """(B, T_x) integer ids -> (B, T_x, encoder_lstm_units) outputs and mask."""
        ids = np.asarray(ids)
        if ids.ndim == 1:
            ids = ids[None, :]
        if ids.size and (ids.min() < 0 or ids.max() >= self.cfg.n_symbols):
            raise UnknownSymbolId(f"symbol ids must lie in [0, {self.cfg.n_symbols})")
        B, T = ids.shape
        if lengths is None:
            lengths = np.full(B, T)
        mask = lengths_to_mask(lengths, T)
        mask_c = mask[:, None, :].astype(self.embedding.weight.dtype)

        x = ops.transpose(self.embedding(ids), (0, 2, 1))  # (B, E, T)
        x = ops.mul(x, mask_c)
        for conv, norm in zip(self.convs, self.norms):
            x = ops.relu(norm(conv(x), mask=mask))
            x = ops.dropout(x, self.cfg.conv_dropout, rng, self.training)
            x = ops.mul(x, mask_c)
        x = ops.transpose(x, (0, 2, 1))  # (B, T, C)

        dt = x.dtype
        proj_f = self.lstm_fwd.project_inputs(x)
        proj_b = self.lstm_bwd.project_inputs(x)
        zo = self.cfg.zoneout
        state = self.lstm_fwd.zero_state(B, dt)
        fwd = []
        for t in range(T):
            state = zoneout_lstm_cell(self.lstm_fwd, None, state, zo, rng, self.training,
                                      input_proj=proj_f[:, t])
            fwd.append(state[0])
        state = self.lstm_bwd.zero_state(B, dt)
        bwd = [None] * T
        for t in reversed(range(T)):
            h, c = zoneout_lstm_cell(self.lstm_bwd, None, state, zo, rng, self.training,
                                     input_proj=proj_b[:, t])
            m = mask[:, t:t + 1].astype(dt)
            if not m.all():
                # padded tail: keep the reverse pass at its zero initial state
                h, c = ops.mul(h, m), ops.mul(c, m)
            state = (h, c)
            bwd[t] = h
        out = ops.concat([ops.stack(fwd, axis=1), ops.stack(bwd, axis=1)], axis=-1)
        return ops.mul(out, mask[:, :, None].astype(dt)), mask


class Attention(Module):
    """Additive attention ``e_j = w . tanh(W s + V h_j + U f_j + b)``.

    ``f_j`` are location features: the cumulative attention weights passed
    through a 1-D convolution. Without location features the energy is the
    plain content-based form.
    """

    def __init__(self, cfg, rng):
        dt = np.dtype(cfg.dtype)
        self.location_features = cfg.location_features
        self.query = Linear(cfg.decoder_lstm_units, cfg.attention_dim, rng, bias=False, dtype=dt)
        self.memory = Linear(cfg.encoder_lstm_units, cfg.attention_dim, rng, bias=False, dtype=dt)
        self.v = Linear(cfg.attention_dim, 1, rng, bias=False, dtype=dt)
        self.b = Parameter(np.zeros(cfg.attention_dim, dtype=dt))
        if cfg.location_features:
            self.location_conv = Conv1d(1, cfg.location_filters, cfg.location_kernel, rng, bias=False, dtype=dt)
            self.location = Linear(cfg.location_filters, cfg.attention_dim, rng, bias=False, dtype=dt)

    def process_memory(self, memory):
        return self.memory(memory)

    def energies(self, s_prev, processed_memory, cumulative=None):
        """Energies (B, T_x) for decoder state ``s_prev`` (B, U)."""
        q = self.query(s_prev)  # (B, A)
        B, T, A = processed_memory.shape
        pre = ops.add(processed_memory, ops.reshape(q, (B, 1, A)))
        if self.location_features:
            if cumulative is None:
                cumulative = Tensor(np.zeros((B, T), dtype=processed_memory.dtype))
            f = self.location_conv(ops.reshape(cumulative, (B, 1, T)))  # (B, F, T)
            pre = ops.add(pre, self.location(ops.transpose(f, (0, 2, 1))))
        pre = ops.add(pre, self.b)
        return ops.reshape(self.v(ops.tanh(pre)), (B, T))

    @staticmethod
    def attend(energies, memory, mask=None):
        """Softmax weights over encoder positions and the context vector."""
        alpha = ops.softmax(energies, axis=-1, mask=mask)
        B, T = alpha.shape
        context = ops.reshape(ops.matmul(ops.reshape(alpha, (B, 1, T)), memory), (B, memory.shape[-1]))
        return alpha, context


class Prenet(Module):
    def __init__(self, cfg, rng):
        dt = np.dtype(cfg.dtype)
        self.p = cfg.prenet_dropout
        self.layers = [
            Linear(cfg.n_mels, cfg.prenet_dim, rng, gain=np.sqrt(2.0), dtype=dt),
            Linear(cfg.prenet_dim, cfg.prenet_dim, rng, gain=np.sqrt(2.0), dtype=dt),
        ]

    def forward(self, x, rng=None, active=True):
        for layer in self.layers:
            x = ops.dropout(ops.relu(layer(x)), self.p, rng, active)
        return x


class Postnet(Module):
    """Five conv layers (tanh on all but the last) predicting a residual."""

    def __init__(self, cfg, rng):
        dt = np.dtype(cfg.dtype)
        self.p = cfg.conv_dropout
        chans = [cfg.n_mels] + [cfg.postnet_channels] * (cfg.postnet_layers - 1) + [cfg.n_mels]
        self.convs = []
        self.norms = []
        for i in range(cfg.postnet_layers):
            gain = 5.0 / 3.0 if i < cfg.postnet_layers - 1 else 1.0
            self.convs.append(Conv1d(chans[i], chans[i + 1], cfg.postnet_kernel, rng, bias=False,
                                     gain=gain, dtype=dt))
            self.norms.append(BatchNorm1d(chans[i + 1], dtype=dt))

    def forward(self, mel_pre, mask=None, rng=None):
        """``mel_pre`` (B, T, n_mels) -> refined mel of the same shape."""
        x = ops.transpose(mel_pre, (0, 2, 1))
        last = len(self.convs) - 1
        for i, (conv, norm) in enumerate(zip(self.convs, self.norms)):
            x = norm(conv(x), mask=mask)
            if i < last:
                x = ops.tanh(x)
            x = ops.dropout(x, self.p, rng, self.training)
        return ops.add(mel_pre, ops.transpose(x, (0, 2, 1)))


class Decoder(Module):
    def __init__(self, cfg, rng):
        dt = np.dtype(cfg.dtype)
        self.cfg = cfg
        self.prenet = Prenet(cfg, rng)
        self.attention = Attention(cfg, rng)
        D, U = cfg.encoder_lstm_units, cfg.decoder_lstm_units
        self.lstm1 = LSTMCell(cfg.prenet_dim + D, U, rng, dtype=dt)
        self.lstm2 = LSTMCell(U + D, U, rng, dtype=dt)
        self.frame_proj = Linear(U + D, cfg.n_mels, rng, dtype=dt)
        self.stop_proj = Linear(U + D, 1, rng, dtype=dt)

    def initial_states(self, memory):
        B, T, D = memory.shape
        dt = memory.dtype
        zeros = np.zeros((B, T), dtype=dt)
        att = AttentionState(Tensor(zeros), Tensor(zeros.copy()), Tensor(np.zeros((B, D), dtype=dt)))
        return att, DecoderState(self.lstm1.zero_state(B, dt), self.lstm2.zero_state(B, dt))

    def _step(self, prenet_out, att, dec, memory, processed, mask, rng):
        # the first LSTM sees the previous frame and context; its output is
        # the decoder state that queries the attention
        zo = self.cfg.zoneout
        s1 = zoneout_lstm_cell(self.lstm1, ops.concat([prenet_out, att.context], axis=-1), dec.lstm1,
                               zo, rng, self.training)
        energies = self.attention.energies(s1[0], processed, att.cumulative)
        alpha, context = self.attention.attend(energies, memory, mask)
        att = AttentionState(alpha, ops.add(att.cumulative, alpha), context)
        s2 = zoneout_lstm_cell(self.lstm2, ops.concat([s1[0], context], axis=-1), dec.lstm2,
                               zo, rng, self.training)
        features = ops.concat([s2[0], context], axis=-1)
        return features, att, DecoderState(s1, s2)

    def prenet_active(self):
        return self.training or self.cfg.prenet_dropout_at_inference

    def decode_step(self, prev_frame, att, dec, memory, processed, mask=None, rng=None):
        """One autoregressive step: returns (mel_frame, stop_logit, att, dec)."""
        pre = self.prenet(prev_frame, rng, self.prenet_active())
        features, att, dec = self._step(pre, att, dec, memory, processed, mask, rng)
        stop = ops.reshape(self.stop_proj(features), (features.shape[0],))
        return self.frame_proj(features), stop, att, dec


class Tacotron(Module):
    def __init__(self, cfg=None, seed=0):
        self.cfg = cfg or TacoConfig()
        rng = make_rng(seed)
        self.encoder = Encoder(self.cfg, rng)
        self.decoder = Decoder(self.cfg, rng)
        self.postnet = Postnet(self.cfg, rng)

    def encode(self, ids, lengths=None, rng=None):
        return self.encoder(ids, lengths, rng)

    def forward(self, ids, targets, lengths=None, target_lengths=None, rng=None):
        """Teacher-forced pass over (B, T_dec, n_mels) targets."""
        cfg = self.cfg
        dt = np.dtype(cfg.dtype)
        ids = np.atleast_2d(np.asarray(ids))
        targets = np.asarray(targets, dtype=dt)
        if targets.ndim == 2:
            targets = targets[None]
        B, T_dec, _ = targets.shape
        if target_lengths is None:
            target_lengths = np.full(B, T_dec)
        frame_mask = lengths_to_mask(target_lengths, T_dec)

        memory, mask = self.encoder(ids, lengths, rng)
        processed = self.decoder.attention.process_memory(memory)
        go = np.zeros((B, 1, cfg.n_mels), dtype=dt)
        prev = Tensor(np.concatenate([go, targets[:, :-1]], axis=1))
        pre_all = self.decoder.prenet(prev, rng, self.decoder.prenet_active())  # (B, T_dec, P)

        att, dec = self.decoder.initial_states(memory)
        feats, alphas = [], []
        for t in range(T_dec):
            f, att, dec = self.decoder._step(pre_all[:, t], att, dec, memory, processed, mask, rng)
            feats.append(f)
            alphas.append(att.weights.data)
        features = ops.stack(feats, axis=1)  # (B, T_dec, U + D)
        mel_pre = self.decoder.frame_proj(features)
        stop = ops.reshape(self.decoder.stop_proj(features), (B, T_dec))
        mel_post = self.postnet(mel_pre, mask=frame_mask, rng=rng)
        return TacoOutput(mel_pre, mel_post, stop, np.stack(alphas, axis=1), frame_mask)

    def infer(self, ids, max_steps=None, rng=None, seed=0):
        """Free-running synthesis for one utterance until the stop token fires."""
        cfg = self.cfg
        ids = np.asarray(ids).reshape(1, -1)
        T_x = ids.shape[1]
        if max_steps is None:
            max_steps = 10 * T_x + 100
        if rng is None:
            rng = make_rng(seed)
        was_training = self.training
        self.eval()
        try:
            with no_grad():
                memory, mask = self.encoder(ids, rng=rng)
                processed = self.decoder.attention.process_memory(memory)
                att, dec = self.decoder.initial_states(memory)
                frame = Tensor(np.zeros((1, cfg.n_mels), dtype=np.dtype(cfg.dtype)))
                frames, alphas, stops = [], [], []
                stopped = False
                for _ in range(max_steps):
                    frame, stop, att, dec = self.decoder.decode_step(frame, att, dec, memory, processed, mask, rng)
                    p = float(ops._sigmoid(stop.data[0]))
                    frames.append(frame.data[0])
                    alphas.append(att.weights.data[0])
                    stops.append(p)
                    if p > cfg.stop_threshold:
                        stopped = True
                        break
                mel_pre = np.stack(frames)
                mel_post = self.postnet(Tensor(mel_pre[None]), rng=rng).data[0]
        finally:
            self.train(was_training)
        return InferenceResult(mel_post, mel_pre, np.stack(alphas), np.array(stops), not stopped)


def stop_targets(target_lengths, T_dec):
    """0 before each utterance's last frame, 1 at the last frame and beyond."""
    idx = np.arange(T_dec)[None, :]
    return (idx >= np.asarray(target_lengths)[:, None] - 1).astype(np.float64)


def taco_loss(out, targets, target_lengths, stop_weight=1.0):
    """MSE(pre) + MSE(post) + stop BCE, all restricted to real frames.

    Returns ``(total, parts)`` with ``parts`` a dict of floats.
    """
    targets = np.asarray(targets, dtype=out.mel_pre.dtype)
    if targets.ndim == 2:
        targets = targets[None]
    T_dec = targets.shape[1]
    fmask = out.frame_mask[:, :, None]
    l_pre = ops.mse_loss(out.mel_pre, targets, fmask)
    l_post = ops.mse_loss(out.mel_post, targets, fmask)
    l_stop = ops.bce_with_logits_loss(out.stop_logits, stop_targets(target_lengths, T_dec), out.frame_mask)
    total = ops.add(ops.add(l_pre, l_post), ops.scale(l_stop, stop_weight))
    return total, {"pre": l_pre.item(), "post": l_post.item(), "stop": l_stop.item()}


# ---------------------------------------------------------------------------
# finite-difference cases over whole sub-graphs


def _tiny_config(**kw):
    base = dict(
        n_symbols=7, embedding_dim=3, encoder_conv_channels=3, encoder_conv_layers=2, encoder_kernel=3,
        encoder_lstm_units=4, attention_dim=3, location_filters=2, location_kernel=3, prenet_dim=3,
        decoder_lstm_units=3, postnet_channels=3, postnet_layers=3, postnet_kernel=3, n_mels=4,
    )
    base.update(kw)
    return TacoConfig(**base)


def _bind(module, names, tensors):
    for name, t in zip(names, tensors):
        *path, leaf = name.split(".")
        obj = module
        for part in path:
            obj = obj[int(part)] if part.isdigit() else getattr(obj, part)
        setattr(obj, leaf, t)


def _param_case(module, build_loss):
    names = [n for n, _ in module.named_parameters()]
    arrays = [p.data.copy() for _, p in module.named_parameters()]

    def fn(tensors):
        _bind(module, names, tensors)
        return build_loss()

    return fn, arrays


def gradcheck_encoder_case(rng):
    """Encoder (embedding, conv+BN, BiLSTM with padding) under a random readout."""
    cfg = _tiny_config(zoneout=0.2)
    enc = Encoder(cfg, make_rng(int(rng.integers(1 << 31))))
    ids = np.array([[1, 4, 2], [3, 6, 0]])
    lengths = np.array([3, 2])
    r = rng.standard_normal((2, 3, cfg.encoder_lstm_units))

    def loss():
        out, _ = enc(ids, lengths, rng=make_rng(5))
        return ops.sum(ops.mul(out, r))

    return _param_case(enc, loss)


def gradcheck_attention_case(rng):
    """One hybrid attention step: energies, masked softmax, context."""
    cfg = _tiny_config()
    att = Attention(cfg, make_rng(int(rng.integers(1 << 31))))
    T = 4
    s_prev = rng.standard_normal((2, cfg.decoder_lstm_units))
    memory = rng.standard_normal((2, T, cfg.encoder_lstm_units))
    cum = rng.uniform(0.0, 1.0, (2, T))
    mask = np.array([[True] * 4, [True, True, True, False]])
    r = rng.standard_normal((2, cfg.encoder_lstm_units))
    ra = rng.standard_normal((2, T))
    names = [n for n, _ in att.named_parameters()]
    arrays = [p.data.copy() for _, p in att.named_parameters()] + [s_prev, memory, cum]

    def fn(t):
        _bind(att, names, t[: len(names)])
        s, mem, c = t[len(names):]
        e = att.energies(s, att.process_memory(mem), c)
        alpha, ctx = att.attend(e, mem, mask)
        return ops.add(ops.sum(ops.mul(ctx, r)), ops.sum(ops.mul(alpha, ra)))

    return fn, arrays


def gradcheck_postnet_case(rng):
    cfg = _tiny_config()
    post = Postnet(cfg, make_rng(int(rng.integers(1 << 31))))
    x = rng.standard_normal((2, 5, cfg.n_mels))
    mask = np.array([[True] * 5, [True] * 3 + [False] * 2])
    r = rng.standard_normal((2, 5, cfg.n_mels))

    def loss():
        return ops.sum(ops.mul(post(Tensor(x), mask=mask, rng=make_rng(9)), r))

    return _param_case(post, loss)
