"""Optimisation loops for the spectrogram predictor and the vocoder."""
import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from aratts import phonetizer
from aratts.autodiff import optim
from aratts.autodiff.rng import make_rng, spawn
from aratts.autodiff.tensor import NonFinite, backward, no_grad
from aratts.taco import Tacotron, TacoConfig, taco_loss
from aratts.training.checkpoint import Checkpoint, from_model
from aratts.training.diagnostics import (
    AlignmentReport,
    diagonality,
    write_alignment_csv,
    write_alignment_pgm,
)
from aratts.waveglow import VocoderConfig, WaveGlow

log = logging.getLogger(__name__)


class TrainingAborted(RuntimeError):
    def __init__(self, message, diagnostics_path=None):
        super().__init__(message)
        self.diagnostics_path = diagnostics_path


@dataclass
class TrainConfig:
    epochs: int = 1
    batch_size: int = 8
    lr: float = optim.LR
    beta1: float = optim.BETA1
    beta2: float = optim.BETA2
    eps: float = optim.EPS
    l2: float = optim.L2
    clip_norm: float = None
    stop_weight: float = 1.0
    max_steps: int = None
    seed: int = 0
    eval_every: int = 1  # epochs between validation passes
    alignment_every: int = 0  # also dump alignments every N steps (0: per epoch only)
    alignment_dumps: int = 2  # utterances dumped per report
    segment_frames: int = 16  # vocoder training window, in mel frames

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    curves: list = field(default_factory=list)  # (step, train_loss, val_loss, diagonality)
    reports: list = field(default_factory=list)
    steps: int = 0


def make_optimizer(model, cfg):
    return optim.Adam(model.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps,
                      l2=cfg.l2, clip_norm=cfg.clip_norm)


def write_curves(path, curves):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "train_loss", "val_loss", "diagonality"])
        for step, train, val, diag in curves:
            w.writerow([step, _fmt(train), _fmt(val), _fmt(diag)])


def _fmt(v):
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


def _check_grads(model):
    for name, p in model.named_parameters():
        if not np.all(np.isfinite(p.grad)):
            raise NonFinite(f"grad:{name}", p.grad.shape)


def _dump_nonfinite(out_dir, info):
    if out_dir is None:
        return None
    path = Path(out_dir) / "diagnostics" / f"nonfinite_step{info['step']}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(info, indent=1, sort_keys=True) + "\n")
    return path


# ---------------------------------------------------------------------------
# spectrogram predictor


def collate(utts, dtype=np.float64):
    """Zero-padded (ids, lengths, targets, target_lengths) for a batch."""
    lengths = np.array([len(u.ids) for u in utts])
    t_len = np.array([u.n_frames for u in utts])
    ids = np.zeros((len(utts), lengths.max()), dtype=np.int64)
    n_mels = utts[0].mel.shape[1]
    targets = np.zeros((len(utts), t_len.max(), n_mels), dtype=dtype)
    for k, u in enumerate(utts):
        ids[k, : lengths[k]] = u.ids
        targets[k, : t_len[k]] = u.mel
    return ids, lengths, targets, t_len


def buckets(utts, batch_size, rng):
    """Batches of similar text length, in a seeded random order."""
    order = sorted(range(len(utts)), key=lambda i: (len(utts[i].ids), i))
    batches = [order[k:k + batch_size] for k in range(0, len(order), batch_size)]
    return [batches[i] for i in rng.permutation(len(batches))]


def evaluate_taco(model, utts, batch_size=8, seed=0, stop_weight=1.0):
    """Teacher-forced loss and alignments in evaluation mode."""
    if not utts:
        return float("nan"), {}
    was = model.training
    model.eval()
    rng = make_rng(seed)
    total, count, aligns = 0.0, 0, {}
    try:
        with no_grad():
            for k in range(0, len(utts), batch_size):
                batch = utts[k:k + batch_size]
                ids, lengths, targets, t_len = collate(batch, np.dtype(model.cfg.dtype))
                out = model(ids, targets, lengths, t_len, rng=rng)
                loss, _ = taco_loss(out, targets, t_len, stop_weight)
                total += loss.item() * len(batch)
                count += len(batch)
                for b, u in enumerate(batch):
                    aligns[u.id] = out.alignments[b, : t_len[b], : lengths[b]]
    finally:
        model.train(was)
    return total / count, aligns


def _report(step, epoch, aligns, out_dir, n_dump):
    rep = AlignmentReport(step, epoch, {k: diagonality(a) for k, a in aligns.items()}, aligns)
    if out_dir is not None:
        d = Path(out_dir) / "alignments"
        d.mkdir(parents=True, exist_ok=True)
        for uid in sorted(aligns)[:n_dump]:
            write_alignment_csv(d / f"step{step:06d}_{uid}.csv", aligns[uid])
            write_alignment_pgm(d / f"step{step:06d}_{uid}.pgm", aligns[uid])
    return rep


def taco_checkpoint(model, step, symbols=None, **extra):
    meta = {"kind": "taco", "config": model.cfg.to_dict(), "step": step,
            "symbols": list(symbols or phonetizer.SYMBOLS)}
    meta.update(extra)
    return from_model(model, **meta)


def train_taco(model, train, validation=(), cfg=None, out_dir=None, on_epoch=None):
    """Teacher-forced training with the composite loss.

    ``on_epoch(epoch, checkpoint)`` is called after every epoch. Returns a
    :class:`TrainResult`; with zero epochs the checkpoint is the model as
    given and the curves are empty.
    """
    cfg = cfg or TrainConfig()
    train, validation = list(train), list(validation)
    result = TrainResult(taco_checkpoint(model, 0))
    if cfg.epochs <= 0 or not train:
        return result
    opt = make_optimizer(model, cfg)
    batch_rng = spawn(cfg.seed, 1)
    drop_rng = spawn(cfg.seed, 2)
    dt = np.dtype(model.cfg.dtype)
    step = 0
    history = []
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        for batch_idx in buckets(train, cfg.batch_size, batch_rng):
            if cfg.max_steps is not None and step >= cfg.max_steps:
                break
            batch = [train[i] for i in batch_idx]
            ids, lengths, targets, t_len = collate(batch, dt)
            try:
                opt.zero_grad()
                out = model(ids, targets, lengths, t_len, rng=drop_rng)
                loss, parts = taco_loss(out, targets, t_len, cfg.stop_weight)
                backward(loss)
                _check_grads(model)
            except NonFinite as exc:
                path = _dump_nonfinite(out_dir, {
                    "step": step + 1, "epoch": epoch, "op": exc.op, "shape": list(exc.shape),
                    "batch": [u.id for u in batch], "recent_losses": history[-20:],
                })
                raise TrainingAborted(f"non-finite value at step {step + 1} in {exc.op}", path) from exc
            opt.step()
            step += 1
            history.append(loss.item())
            result.curves.append((step, loss.item(), None, None))
            if cfg.alignment_every and step % cfg.alignment_every == 0:
                aligns = {u.id: out.alignments[b, : t_len[b], : lengths[b]] for b, u in enumerate(batch)}
                result.reports.append(_report(step, epoch, aligns, out_dir, cfg.alignment_dumps))
        if step == 0:
            break
        done = cfg.max_steps is not None and step >= cfg.max_steps
        if epoch % max(1, cfg.eval_every) and epoch != cfg.epochs and not done:
            continue
        val_loss, aligns = evaluate_taco(model, validation or train, cfg.batch_size, cfg.seed, cfg.stop_weight)
        if not validation:
            val_loss = float("nan")
        rep = _report(step, epoch, aligns, out_dir, cfg.alignment_dumps)
        result.reports.append(rep)
        last = result.curves[-1]
        result.curves[-1] = (last[0], last[1], val_loss, rep.mean)
        log.info("epoch %d step %d loss %.5f val %.5f diag %.3f", epoch, step, last[1], val_loss, rep.mean)
        result.checkpoint = taco_checkpoint(model, step)
        if on_epoch is not None:
            on_epoch(epoch, result.checkpoint)
        if done:
            break
    result.steps = step
    result.checkpoint = taco_checkpoint(model, step)
    return result


def load_taco(checkpoint):
    ckpt = checkpoint if isinstance(checkpoint, Checkpoint) else Checkpoint.load(checkpoint)
    if ckpt.metadata.get("kind") != "taco":
        raise ValueError("not a spectrogram-predictor checkpoint")
    model = Tacotron(TacoConfig(**ckpt.metadata["config"]))
    model.load_state_dict(ckpt.tensors)
    return model


# ---------------------------------------------------------------------------
# vocoder


def vocoder_checkpoint(model, step, **extra):
    meta = {"kind": "vocoder", "config": model.cfg.to_dict(), "step": step}
    meta.update(extra)
    return from_model(model, **meta)


def load_vocoder(checkpoint):
    ckpt = checkpoint if isinstance(checkpoint, Checkpoint) else Checkpoint.load(checkpoint)
    if ckpt.metadata.get("kind") != "vocoder":
        raise ValueError("not a vocoder checkpoint")
    model = WaveGlow(VocoderConfig(**ckpt.metadata["config"]))
    model.load_state_dict(ckpt.tensors)
    return model


def _segments(clips, hop, frames, rng, batch_size):
    """Random aligned (audio, mel) windows of ``frames`` mel frames."""
    audio, mels = [], []
    for _ in range(batch_size):
        samples, mel = clips[int(rng.integers(len(clips)))]
        n = min(mel.shape[0], len(samples) // hop)
        f0 = int(rng.integers(0, n - frames + 1)) if n > frames else 0
        seg = samples[f0 * hop:(f0 + frames) * hop]
        m = mel[f0:f0 + frames]
        if len(seg) < frames * hop:
            seg = np.pad(seg, (0, frames * hop - len(seg)))
            m = np.pad(m, ((0, frames - len(m)), (0, 0)), mode="edge")
        audio.append(seg)
        mels.append(m.T)
    return np.stack(audio), np.stack(mels)


def train_vocoder(model, clips, cfg=None, out_dir=None, on_epoch=None, steps_per_epoch=None):
    """Maximum-likelihood training on random windows.

    ``clips`` is a list of (samples, mel) with mel shaped (n_frames, n_mels).
    The reported loss is the NLL per audio sample.
    """
    cfg = cfg or TrainConfig()
    result = TrainResult(vocoder_checkpoint(model, 0))
    if cfg.epochs <= 0 or not clips:
        return result
    opt = make_optimizer(model, cfg)
    rng = spawn(cfg.seed, 3)
    hop = model.cfg.hop
    steps_per_epoch = steps_per_epoch or max(1, len(clips) // cfg.batch_size)
    dt = model.dtype
    step = 0
    history = []
    model.train()
    for epoch in range(1, cfg.epochs + 1):
        for _ in range(steps_per_epoch):
            if cfg.max_steps is not None and step >= cfg.max_steps:
                break
            audio, mel = _segments(clips, hop, cfg.segment_frames, rng, cfg.batch_size)
            try:
                opt.zero_grad()
                nll = model.nll(audio.astype(dt), mel.astype(dt))
                loss = nll * (1.0 / audio.size)
                backward(loss)
                _check_grads(model)
            except NonFinite as exc:
                path = _dump_nonfinite(out_dir, {"step": step + 1, "epoch": epoch, "op": exc.op,
                                                 "shape": list(exc.shape), "recent_losses": history[-20:]})
                raise TrainingAborted(f"non-finite value at step {step + 1} in {exc.op}", path) from exc
            opt.step()
            model.check_invertible()
            step += 1
            history.append(loss.item())
            result.curves.append((step, loss.item(), None, None))
        if step == 0:
            break
        result.checkpoint = vocoder_checkpoint(model, step)
        if on_epoch is not None:
            on_epoch(epoch, result.checkpoint)
        if cfg.max_steps is not None and step >= cfg.max_steps:
            break
    result.steps = step
    result.checkpoint = vocoder_checkpoint(model, step)
    return result
