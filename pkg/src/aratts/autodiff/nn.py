"""Parameter containers and the standard layers built on the primitives."""
import numpy as np

from aratts.autodiff import ops
from aratts.autodiff.tensor import Tensor


def Parameter(data):
    return Tensor(np.array(data), requires_grad=True)


def xavier_uniform(rng, shape, fan_in, fan_out, gain=1.0, dtype=np.float64):
    bound = gain * np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Module:
    """Walks its attributes for parameters, buffers and child modules.

    Buffers are plain numpy arrays registered with :meth:`register_buffer`;
    they are persisted in checkpoints but never receive gradients.
    """

    training = True

    def register_buffer(self, name, value):
        if "_buffers" not in self.__dict__:
            self._buffers = []
        self._buffers.append(name)
        setattr(self, name, value)

    def _children(self):
        for name, value in self.__dict__.items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
                for i, v in enumerate(value):
                    yield f"{name}.{i}", v

    def named_parameters(self, prefix=""):
        for name, value in self.__dict__.items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
        for name, child in self._children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for name in self.__dict__.get("_buffers", []):
            yield prefix + name, getattr(self, name)
        for name, child in self._children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def state_dict(self):
        state = {name: p.data for name, p in self.named_parameters()}
        state.update(dict(self.named_buffers()))
        return state

    def load_state_dict(self, state, strict=True):
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        missing = (set(params) | set(buffers)) - set(state)
        unexpected = set(state) - set(params) - set(buffers)
        if strict and (missing or unexpected):
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, value in state.items():
            target = params[name].data if name in params else buffers.get(name)
            if target is None:
                continue
            if target.shape != value.shape:
                raise ValueError(f"{name}: shape {value.shape} != {target.shape}")
            target[...] = value

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def train(self, mode=True):
        self.training = mode
        for _, child in self._children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    def __init__(self, n_in, n_out, rng, bias=True, gain=1.0, dtype=np.float64):
        self.weight = Parameter(xavier_uniform(rng, (n_out, n_in), n_in, n_out, gain, dtype))
        self.bias = Parameter(np.zeros(n_out, dtype=dtype)) if bias else None

    def forward(self, x):
        return ops.linear(x, self.weight, self.bias)


class Conv1d(Module):
    def __init__(self, n_in, n_out, kernel, rng, dilation=1, bias=True, gain=1.0, dtype=np.float64):
        self.dilation = dilation
        self.weight = Parameter(
            xavier_uniform(rng, (n_out, n_in, kernel), n_in * kernel, n_out * kernel, gain, dtype)
        )
        self.bias = Parameter(np.zeros(n_out, dtype=dtype)) if bias else None

    def forward(self, x):
        return ops.conv1d(x, self.weight, self.bias, self.dilation)


class BatchNorm1d(Module):
    def __init__(self, channels, momentum=0.1, eps=1e-5, dtype=np.float64):
        self.momentum = momentum
        self.eps = eps
        self.gamma = Parameter(np.ones(channels, dtype=dtype))
        self.beta = Parameter(np.zeros(channels, dtype=dtype))
        self.register_buffer("running_mean", np.zeros(channels, dtype=dtype))
        self.register_buffer("running_var", np.ones(channels, dtype=dtype))

    def forward(self, x, mask=None):
        return ops.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                              self.training, self.momentum, self.eps, mask)


class Embedding(Module):
    def __init__(self, n, dim, rng, dtype=np.float64):
        std = np.sqrt(2.0 / (n + dim))
        val = np.sqrt(3.0) * std
        self.weight = Parameter(rng.uniform(-val, val, size=(n, dim)).astype(dtype))

    def forward(self, ids):
        return ops.embedding(ids, self.weight)


class LSTMCell(Module):
    """LSTM with gate order (i, f, g, o); the forget-gate bias starts at 1."""

    def __init__(self, n_in, hidden, rng, dtype=np.float64):
        self.hidden = hidden
        self.w_ih = Parameter(xavier_uniform(rng, (4 * hidden, n_in), n_in, 4 * hidden, dtype=dtype))
        self.w_hh = Parameter(xavier_uniform(rng, (4 * hidden, hidden), hidden, 4 * hidden, dtype=dtype))
        b = np.zeros(4 * hidden, dtype=dtype)
        b[hidden:2 * hidden] = 1.0
        self.bias = Parameter(b)

    def project_inputs(self, x):
        """Input half of the gates for every step at once: (..., 4H)."""
        return ops.linear(x, self.w_ih)

    def forward(self, x, state, input_proj=None):
        h, c = state
        return ops.lstm_cell(x, h, c, self.w_ih, self.w_hh, self.bias, input_proj)

    def zero_state(self, batch, dtype=np.float64):
        z = np.zeros((batch, self.hidden), dtype=dtype)
        return Tensor(z), Tensor(z.copy())


def zoneout_lstm_cell(cell, x, prev_state, rate, rng=None, training=True, input_proj=None):
    """Run ``cell`` and apply zoneout to both hidden and cell state."""
    h_new, c_new = cell(x, prev_state, input_proj)
    h_prev, c_prev = prev_state
    return (ops.zoneout(h_prev, h_new, rate, rng, training),
            ops.zoneout(c_prev, c_new, rate, rng, training))
