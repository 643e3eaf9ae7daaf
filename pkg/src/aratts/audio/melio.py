"""Mel feature files: a JSON header plus a raw float32 sidecar.

``name.json`` holds ``n_frames, n_mels, hop, frame_length, sample_rate, log``
and the name of the sidecar; ``name.f32`` holds the matrix row-major,
little-endian.
"""
import json
from pathlib import Path

import numpy as np

from aratts.audio.dsp import LOG_FLOOR, MelSpectrogram

LOG_CONVENTION = f"ln(max(mel, {LOG_FLOOR:g}))"


def write_mel(path, mel):
    """Write ``path`` (.json header) and its ``.f32`` sidecar; returns both paths."""
    header_path = Path(path).with_suffix(".json")
    data_path = header_path.with_suffix(".f32")
    header = {
        "n_frames": int(mel.n_frames),
        "n_mels": int(mel.n_mels),
        "hop": int(mel.frame_hop),
        "frame_length": int(mel.frame_length),
        "sample_rate": int(mel.sample_rate),
        "log": LOG_CONVENTION,
        "data": data_path.name,
    }
    header_path.write_text(json.dumps(header, sort_keys=True, indent=1) + "\n")
    data_path.write_bytes(np.ascontiguousarray(mel.values, dtype="<f4").tobytes())
    return header_path, data_path


def read_mel(path):
    header_path = Path(path).with_suffix(".json")
    header = json.loads(header_path.read_text())
    raw = np.frombuffer((header_path.parent / header["data"]).read_bytes(), dtype="<f4")
    values = raw.reshape(header["n_frames"], header["n_mels"]).astype(np.float64)
    return MelSpectrogram(values, header["hop"], header["frame_length"], header["sample_rate"])
