"""Alignment scoring and dumps (CSV and plain PGM)."""
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

BAND = 0.15


def diagonality(alignment, band=BAND):
    """Mean attention mass inside ``|j/T_x - i/T_dec| < band``.

    ``alignment`` is (T_dec, T_x) with rows on the simplex; indices are
    0-based.
    """
    a = np.asarray(alignment, dtype=np.float64)
    t_dec, t_x = a.shape
    i = np.arange(t_dec)[:, None] / t_dec
    j = np.arange(t_x)[None, :] / t_x
    return float((a * (np.abs(j - i) < band)).sum() / t_dec)


@dataclass
class AlignmentReport:
    step: int
    epoch: int
    scores: dict = field(default_factory=dict)  # utterance id -> diagonality
    alignments: dict = field(default_factory=dict)  # utterance id -> (T_dec, T_x)

    @property
    def mean(self):
        return float(np.mean(list(self.scores.values()))) if self.scores else float("nan")


def write_alignment_csv(path, alignment):
    a = np.asarray(alignment, dtype=np.float64)
    lines = [",".join(repr(float(v)) for v in row) for row in a]
    Path(path).write_text("\n".join(lines) + "\n")


def read_alignment_csv(path):
    return np.loadtxt(path, delimiter=",", ndmin=2)


def write_alignment_pgm(path, alignment):
    """Plain (P2) PGM: x = decoder step, y = encoder position with position 0 at the bottom."""
    a = np.asarray(alignment, dtype=np.float64)
    img = np.rint(np.clip(a.T[::-1], 0.0, 1.0) * 255).astype(int)
    height, width = img.shape
    body = "\n".join(" ".join(map(str, row)) for row in img)
    Path(path).write_text(f"P2\n{width} {height}\n255\n{body}\n")


def read_alignment_pgm(path):
    """Inverse of :func:`write_alignment_pgm`, rows renormalised to sum to 1."""
    tokens = [t for line in Path(path).read_text().splitlines() if not line.startswith("#") for t in line.split()]
    if tokens[0] != "P2":
        raise ValueError("not a plain PGM")
    width, height, maxval = map(int, tokens[1:4])
    img = np.array(tokens[4:4 + width * height], dtype=np.float64).reshape(height, width)
    a = img[::-1].T / maxval
    sums = a.sum(axis=1, keepdims=True)
    return np.divide(a, sums, out=np.full_like(a, 1.0 / a.shape[1]), where=sums > 0)
