from aratts.training.checkpoint import Checkpoint, CheckpointError
from aratts.training.dataset import (
    EmptyManifest,
    TooFewRecords,
    Utterance,
    ingest,
    load_processed,
    make_toy_corpus,
    split,
)
from aratts.training.diagnostics import AlignmentReport, diagonality
from aratts.training.train import (
    TrainConfig,
    TrainingAborted,
    TrainResult,
    load_taco,
    load_vocoder,
    train_taco,
    train_vocoder,
)
from aratts.training.transfer import RemapReport, ShapeConflict, transfer_init

__all__ = [
    "AlignmentReport",
    "Checkpoint",
    "CheckpointError",
    "EmptyManifest",
    "RemapReport",
    "ShapeConflict",
    "TooFewRecords",
    "TrainConfig",
    "TrainResult",
    "TrainingAborted",
    "Utterance",
    "diagonality",
    "ingest",
    "load_processed",
    "load_taco",
    "load_vocoder",
    "make_toy_corpus",
    "split",
    "train_taco",
    "train_vocoder",
    "transfer_init",
]
