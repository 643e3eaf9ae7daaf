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
from aratts.autodiff.optim import Adam
from aratts.autodiff.rng import make_rng
from aratts.autodiff.tensor import (
    AutodiffError,
    NonFinite,
    ShapeMismatch,
    Tensor,
    as_tensor,
    backward,
    no_grad,
)

__all__ = [
    "Adam",
    "AutodiffError",
    "BatchNorm1d",
    "Conv1d",
    "Embedding",
    "LSTMCell",
    "Linear",
    "Module",
    "NonFinite",
    "Parameter",
    "ShapeMismatch",
    "Tensor",
    "as_tensor",
    "backward",
    "make_rng",
    "no_grad",
    "ops",
    "zoneout_lstm_cell",
]
