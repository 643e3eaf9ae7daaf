"""Manifest ingestion, train/validation split and the synthetic toy corpus."""
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from aratts import phonetizer
from aratts.audio import dsp
from aratts.audio.melio import read_mel, write_mel
from aratts.autodiff.rng import make_rng

log = logging.getLogger(__name__)

VALIDATION_FRACTION = 0.05
MIN_RECORDS = 20
PROCESSED_MANIFEST = "manifest.jsonl"
FAILURE_REPORT = "failures.txt"


class EmptyManifest(ValueError):
    pass


class TooFewRecords(ValueError):
    pass


@dataclass
class Utterance:
    id: str
    text: str
    ids: np.ndarray
    mel_path: str = None
    wav_path: str = None
    _mel: np.ndarray = field(default=None, repr=False)

    @property
    def mel(self):
        """(n_frames, n_mels) target, loaded lazily from ``mel_path``."""
        if self._mel is None:
            self._mel = read_mel(self.mel_path).values
        return self._mel

    @property
    def n_frames(self):
        return self.mel.shape[0]


@dataclass
class Failure:
    line: int
    wav_path: str
    reason: str

    def __str__(self):
        return f"line {self.line}: {self.wav_path}: {self.reason}"


@dataclass
class IngestResult:
    records: list
    failures: list
    manifest_path: Path = None


def parse_manifest(path):
    """Yield (line_number, wav_path, text) for each non-blank line."""
    text = Path(path).read_text(encoding="utf-8")
    entries = []
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip("\r\n")
        if not line.strip():
            continue
        wav, sep, utt = line.partition("|")
        entries.append((n, wav.strip(), utt.strip() if sep else None))
    if not entries:
        raise EmptyManifest(f"{path}: no records")
    return entries


def _record_id(wav_path):
    return Path(wav_path).with_suffix("").as_posix().replace("/", "__")


def _process(entry, wav_dir, out_dir, sample_rate, trim_db):
    n, wav, text = entry
    if text is None:
        raise ValueError("expected 'wav_path|text'")
    seq = phonetizer.phonetize(text)
    path = Path(wav_dir) / wav
    if not path.is_file():
        raise FileNotFoundError(f"missing wav {path}")
    clip = dsp.load_wav(path)
    if clip.sample_rate != sample_rate:
        clip = dsp.resample(clip, sample_rate)
    clip = dsp.trim_silence(clip, trim_db)
    rid = _record_id(wav)
    wav_out = out_dir / "wavs" / f"{rid}.wav"
    dsp.write_wav(wav_out, clip)
    # features come from the quantised audio so vocoder targets match exactly
    clip = dsp.load_wav(wav_out)
    mel_out, _ = write_mel(out_dir / "mels" / f"{rid}.json", dsp.mel_spectrogram(clip))
    return {
        "id": rid,
        "text": text,
        "ids": [int(i) for i in seq.ids(add_boundaries=True)],
        "mel": mel_out.relative_to(out_dir).as_posix(),
        "wav": wav_out.relative_to(out_dir).as_posix(),
        "undiacritized": seq.undiacritized,
    }


def ingest(manifest_path, wav_dir, out_dir, sample_rate=dsp.SAMPLE_RATE, trim_db=dsp.TRIM_DB, threads=1):
    """Preprocess every record; per-record failures are collected, not raised."""
    entries = parse_manifest(manifest_path)
    out_dir = Path(out_dir)
    (out_dir / "wavs").mkdir(parents=True, exist_ok=True)
    (out_dir / "mels").mkdir(parents=True, exist_ok=True)

    def work(entry):
        try:
            return _process(entry, wav_dir, out_dir, sample_rate, trim_db)
        except (OSError, ValueError, dsp.AudioError) as exc:
            return Failure(entry[0], entry[1], f"{type(exc).__name__}: {exc}")

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = list(pool.map(work, entries))

    rows = [r for r in results if not isinstance(r, Failure)]
    failures = [r for r in results if isinstance(r, Failure)]
    manifest_out = out_dir / PROCESSED_MANIFEST
    with open(manifest_out, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")
    (out_dir / FAILURE_REPORT).write_text("".join(f"{f}\n" for f in failures), encoding="utf-8")
    for f in failures:
        log.warning("%s", f)
    return IngestResult(load_processed(manifest_out), failures, manifest_out)


def load_processed(path):
    path = Path(path)
    records = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        row = json.loads(line)
        records.append(Utterance(
            id=row["id"],
            text=row["text"],
            ids=np.asarray(row["ids"], dtype=np.int64),
            mel_path=str(path.parent / row["mel"]),
            wav_path=str(path.parent / row["wav"]) if row.get("wav") else None,
        ))
    return records


def validation_size(n):
    """round-half-up of 5% of ``n``."""
    return int(math.floor(VALIDATION_FRACTION * n + 0.5))


def split(records, seed=0):
    """Seeded shuffle; the first 95% train and the last 5% validate."""
    records = list(records)
    n = len(records)
    if n < MIN_RECORDS:
        raise TooFewRecords(f"need at least {MIN_RECORDS} records, got {n}")
    order = make_rng(seed).permutation(n)
    n_val = validation_size(n)
    return [records[i] for i in order[: n - n_val]], [records[i] for i in order[n - n_val:]]


# ---------------------------------------------------------------------------
# synthetic toy corpus

TOY_CONSONANTS = "بتدرسكلمنفقهوي"
TOY_VOWELS = "َُِ"  # fatha, damma, kasra
SUKUN = "ْ"


def symbol_templates(n_symbols=len(phonetizer.SYMBOLS), n_mels=dsp.N_MELS, seed=0):
    """One fixed pseudo-random mel frame per symbol id."""
    return make_rng(seed).standard_normal((n_symbols, n_mels))


def _toy_text(rng, min_len, max_len):
    # each syllable is consonant + vowel (2 symbols) or consonant + sukun (1);
    # the sequence also carries the two boundary markers
    while True:
        chars = []
        n = 2
        target = int(rng.integers(min_len, max_len + 1))
        while n < target:
            chars.append(TOY_CONSONANTS[rng.integers(len(TOY_CONSONANTS))])
            if target - n >= 2:
                chars.append(TOY_VOWELS[rng.integers(len(TOY_VOWELS))])
                n += 2
            else:
                chars.append(SUKUN)
                n += 1
        text = "".join(chars)
        ids = phonetizer.encode(text)
        if min_len <= len(ids) <= max_len:
            return text, ids


def make_toy_corpus(n=20, seed=0, min_len=5, max_len=12, frames_per_symbol=4, templates=None):
    """Random 5-12 symbol utterances whose target repeats a per-symbol template."""
    rng = make_rng(seed)
    templates = symbol_templates() if templates is None else templates
    out = []
    for k in range(n):
        text, ids = _toy_text(rng, min_len, max_len)
        mel = np.repeat(templates[ids], frames_per_symbol, axis=0)
        out.append(Utterance(id=f"toy{k:03d}", text=text, ids=np.asarray(ids), _mel=mel))
    return out


def write_corpus(records, out_dir):
    """Persist in-memory utterances (e.g. the toy corpus) as a processed manifest."""
    out_dir = Path(out_dir)
    (out_dir / "mels").mkdir(parents=True, exist_ok=True)
    path = out_dir / PROCESSED_MANIFEST
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            mel_path, _ = write_mel(out_dir / "mels" / f"{r.id}.json", dsp.MelSpectrogram(r.mel))
            row = {"id": r.id, "text": r.text, "ids": [int(i) for i in r.ids],
                   "mel": mel_path.relative_to(out_dir).as_posix(), "wav": None}
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")
    return path
