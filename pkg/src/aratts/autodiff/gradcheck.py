"""Central finite-difference verification of backward rules.

A case is a builder ``rng -> (fn, arrays)``: ``fn`` maps a list of input
tensors to a scalar tensor, ``arrays`` are the float64 inputs. Stochastic
ops inside ``fn`` must reseed their generator on every call so the finite
difference sees the same masks as the analytic pass.

The error metric for one input is ``max|analytic - numeric|`` divided by
``max(max|analytic|, max|numeric|, 1e-7)``; a case reports the worst input.
"""
import numpy as np

from aratts.autodiff import ops
from aratts.autodiff.rng import make_rng
from aratts.autodiff.tensor import Tensor, backward, no_grad

STEP = 1e-5
TOLERANCE = 1e-4


def numeric_grad(fn, arrays, index, h=STEP):
    base = [a.copy() for a in arrays]
    x = base[index]
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    with no_grad():
        for k in range(flat.size):
            old = flat[k]
            flat[k] = old + h
            up = fn([Tensor(a) for a in base]).item()
            flat[k] = old - h
            down = fn([Tensor(a) for a in base]).item()
            flat[k] = old
            gflat[k] = (up - down) / (2.0 * h)
    return g


def analytic_grads(fn, arrays):
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = fn(tensors)
    backward(out)
    return [t.grad for t in tensors]


def relative_error(a, n):
    denom = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0), 1e-7)
    return float(np.abs(a - n).max(initial=0.0) / denom)


def check(fn, arrays, h=STEP):
    """Worst absolute deviation relative to the largest gradient entry.

    The scale is shared by all inputs so that an input whose true gradient
    is exactly zero is judged against the function's overall sensitivity
    rather than against its own round-off.
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    grads = analytic_grads(fn, arrays)
    numeric = [numeric_grad(fn, arrays, i, h) for i in range(len(arrays))]
    return relative_error(np.concatenate([g.ravel() for g in grads]),
                          np.concatenate([n.ravel() for n in numeric]))


def _unary(op, lo=-2.0, hi=2.0, shape=(3, 4), avoid=None):
    def build(rng):
        x = rng.uniform(lo, hi, size=shape)
        if avoid is not None:
            x[np.abs(x - avoid) < 0.05] += 0.1
        w = rng.standard_normal(shape)
        return (lambda t: ops.sum(ops.mul(op(t[0]), w))), [x]
    return build


def _case_softmax(rng):
    x = rng.standard_normal((3, 5))
    mask = np.ones((3, 5), dtype=bool)
    mask[1, 3:] = False
    w = rng.standard_normal((3, 5))
    return (lambda t: ops.sum(ops.mul(ops.softmax(t[0], axis=-1, mask=mask), w))), [x]


def _case_softmax_axis0(rng):
    x = rng.standard_normal((4, 3))
    w = rng.standard_normal((4, 3))
    return (lambda t: ops.sum(ops.mul(ops.softmax(t[0], axis=0), w))), [x]


def _case_dropout(rng):
    x = rng.standard_normal((4, 6))
    w = rng.standard_normal((4, 6))
    return (lambda t: ops.sum(ops.mul(ops.dropout(t[0], 0.3, make_rng(7)), w))), [x]


def _case_zoneout_train(rng):
    a, b = rng.standard_normal((2, 3, 4))
    w = rng.standard_normal((3, 4))
    return (lambda t: ops.sum(ops.mul(ops.zoneout(t[0], t[1], 0.4, make_rng(3), True), w))), [a, b]


def _case_zoneout_eval(rng):
    a, b = rng.standard_normal((2, 3, 4))
    w = rng.standard_normal((3, 4))
    return (lambda t: ops.sum(ops.mul(ops.zoneout(t[0], t[1], 0.25, training=False), w))), [a, b]


def _binary(op, shape_a, shape_b):
    def build(rng):
        a = rng.standard_normal(shape_a)
        b = rng.standard_normal(shape_b)
        out_shape = np.broadcast_shapes(shape_a, shape_b)
        w = rng.standard_normal(out_shape)
        return (lambda t: ops.sum(ops.mul(op(t[0], t[1]), w))), [a, b]
    return build


def _case_matmul(rng):
    a = rng.standard_normal((2, 3, 4))
    b = rng.standard_normal((4, 5))
    w = rng.standard_normal((2, 3, 5))
    return (lambda t: ops.sum(ops.mul(ops.matmul(t[0], t[1]), w))), [a, b]


def _case_linear(rng):
    x = rng.standard_normal((2, 3, 4))
    wt = rng.standard_normal((5, 4))
    b = rng.standard_normal(5)
    r = rng.standard_normal((2, 3, 5))
    return (lambda t: ops.sum(ops.mul(ops.linear(t[0], t[1], t[2]), r))), [x, wt, b]


def _case_sum_axis(rng):
    x = rng.standard_normal((3, 4, 2))
    r = rng.standard_normal((3, 2))
    return (lambda t: ops.sum(ops.mul(ops.sum(t[0], axis=1), r))), [x]


def _case_mean(rng):
    x = rng.standard_normal((3, 4))
    r = rng.standard_normal((1, 4))
    return (lambda t: ops.sum(ops.mul(ops.mean(t[0], axis=0, keepdims=True), r))), [x]


def _case_reshape_transpose(rng):
    x = rng.standard_normal((2, 3, 4))
    r = rng.standard_normal((4, 6))
    return (lambda t: ops.sum(ops.mul(ops.reshape(ops.transpose(t[0], (2, 0, 1)), (4, 6)), r))), [x]


def _case_getitem(rng):
    x = rng.standard_normal((4, 5))
    r = rng.standard_normal((2, 3))
    return (lambda t: ops.sum(ops.mul(t[0][1:3, ::2], r))), [x]


def _case_getitem_fancy(rng):
    x = rng.standard_normal((4, 3))
    idx = np.array([0, 2, 2, 3])
    r = rng.standard_normal((4, 3))
    return (lambda t: ops.sum(ops.mul(ops.getitem(t[0], idx), r))), [x]


def _case_concat(rng):
    a = rng.standard_normal((2, 3))
    b = rng.standard_normal((2, 4))
    r = rng.standard_normal((2, 7))
    return (lambda t: ops.sum(ops.mul(ops.concat([t[0], t[1]], axis=1), r))), [a, b]


def _case_stack(rng):
    a, b = rng.standard_normal((2, 3, 2))
    r = rng.standard_normal((3, 2, 2))
    return (lambda t: ops.sum(ops.mul(ops.stack([t[0], t[1]], axis=1), r))), [a, b]


def _case_logabsdet(rng):
    w = np.linalg.qr(rng.standard_normal((4, 4)))[0] + 0.3 * rng.standard_normal((4, 4))
    return (lambda t: ops.logabsdet(t[0])), [w]


def _case_conv1d(rng):
    x = rng.standard_normal((2, 3, 7))
    w = rng.standard_normal((4, 3, 3))
    b = rng.standard_normal(4)
    r = rng.standard_normal((2, 4, 7))
    return (lambda t: ops.sum(ops.mul(ops.conv1d(t[0], t[1], t[2]), r))), [x, w, b]


def _case_conv1d_dilated(rng):
    x = rng.standard_normal((1, 2, 8))
    w = rng.standard_normal((3, 2, 3))
    r = rng.standard_normal((1, 3, 8))
    return (lambda t: ops.sum(ops.mul(ops.conv1d(t[0], t[1], dilation=2), r))), [x, w]


def _case_conv1d_pointwise(rng):
    x = rng.standard_normal((2, 3, 5))
    w = rng.standard_normal((4, 3, 1))
    b = rng.standard_normal(4)
    r = rng.standard_normal((2, 4, 5))
    return (lambda t: ops.sum(ops.mul(ops.conv1d(t[0], t[1], t[2]), r))), [x, w, b]


def _case_conv_transpose(rng):
    x = rng.standard_normal((2, 3, 4))
    w = rng.standard_normal((3, 2, 4))
    b = rng.standard_normal(2)
    r = rng.standard_normal((2, 2, 10))
    return (lambda t: ops.sum(ops.mul(ops.conv_transpose1d(t[0], t[1], t[2], stride=2), r))), [x, w, b]


def _case_embedding(rng):
    table = rng.standard_normal((6, 4))
    ids = np.array([[1, 5, 1], [0, 2, 3]])
    r = rng.standard_normal((2, 3, 4))
    return (lambda t: ops.sum(ops.mul(ops.embedding(ids, t[0]), r))), [table]


def _bn(training, masked):
    def build(rng):
        x = rng.standard_normal((3, 4, 5)) * 2.0 + 1.0
        gamma = rng.uniform(0.5, 1.5, 4)
        beta = rng.standard_normal(4)
        rm, rv = rng.standard_normal(4), rng.uniform(0.5, 2.0, 4)
        mask = None
        if masked:
            mask = np.ones((3, 5), dtype=bool)
            mask[0, 3:] = False
            mask[2, 4:] = False
        r = rng.standard_normal((3, 4, 5))

        def fn(t):
            out = ops.batch_norm(t[0], t[1], t[2], rm.copy(), rv.copy(), training=training, mask=mask)
            return ops.sum(ops.mul(out, r))

        return fn, [x, gamma, beta]
    return build


def _case_lstm_pointwise(rng):
    gates = rng.standard_normal((2, 12))
    c = rng.standard_normal((2, 3))
    r = rng.standard_normal((2, 6))
    return (lambda t: ops.sum(ops.mul(ops.lstm_pointwise(t[0], t[1]), r))), [gates, c]


def _case_lstm_cell(rng):
    x = rng.standard_normal((2, 3))
    h = rng.standard_normal((2, 2))
    c = rng.standard_normal((2, 2))
    w_ih = rng.standard_normal((8, 3)) * 0.5
    w_hh = rng.standard_normal((8, 2)) * 0.5
    b = rng.standard_normal(8) * 0.1
    r1, r2 = rng.standard_normal((2, 2, 2))

    def fn(t):
        h1, c1 = ops.lstm_cell(t[0], t[1], t[2], t[3], t[4], t[5])
        return ops.add(ops.sum(ops.mul(h1, r1)), ops.sum(ops.mul(c1, r2)))

    return fn, [x, h, c, w_ih, w_hh, b]


def _case_mse(rng):
    p = rng.standard_normal((3, 4))
    q = rng.standard_normal((3, 4))
    mask = np.array([[1], [1], [0]], dtype=float)
    return (lambda t: ops.mse_loss(t[0], t[1], mask)), [p, q]


def _case_gated(rng):
    x = rng.uniform(-2.0, 2.0, size=(2, 6, 3))
    w = rng.standard_normal((2, 3, 3))
    return (lambda t: ops.sum(ops.mul(ops.gated_tanh(t[0]), w))), [x]


def _case_bce(rng):
    x = rng.standard_normal((3, 5)) * 3.0
    y = (rng.random((3, 5)) > 0.5).astype(float)
    mask = np.ones((3, 5))
    mask[2, 2:] = 0
    return (lambda t: ops.bce_with_logits_loss(t[0], y, mask)), [x]


PRIMITIVE_CASES = {
    "add": _binary(ops.add, (3, 4), (1, 4)),
    "sub": _binary(ops.sub, (2, 3), (2, 3)),
    "mul": _binary(ops.mul, (3, 1, 4), (2, 4)),
    "neg": _unary(ops.neg),
    "scale": _unary(lambda x: ops.scale(x, -1.7)),
    "exp": _unary(ops.exp),
    "log": _unary(ops.log, lo=0.2, hi=3.0),
    "clip": _unary(lambda x: ops.clip(x, -1.0, 1.0), avoid=1.0),
    "relu": _unary(ops.relu, avoid=0.0),
    "tanh": _unary(ops.tanh),
    "sigmoid": _unary(ops.sigmoid),
    "gated_tanh": _case_gated,
    "softmax": _case_softmax,
    "softmax_axis0": _case_softmax_axis0,
    "dropout": _case_dropout,
    "zoneout_train": _case_zoneout_train,
    "zoneout_eval": _case_zoneout_eval,
    "sum": _case_sum_axis,
    "mean": _case_mean,
    "reshape_transpose": _case_reshape_transpose,
    "getitem": _case_getitem,
    "getitem_fancy": _case_getitem_fancy,
    "concat": _case_concat,
    "stack": _case_stack,
    "matmul": _case_matmul,
    "linear": _case_linear,
    "logabsdet": _case_logabsdet,
    "conv1d": _case_conv1d,
    "conv1d_dilated": _case_conv1d_dilated,
    "conv1d_pointwise": _case_conv1d_pointwise,
    "conv_transpose1d": _case_conv_transpose,
    "embedding": _case_embedding,
    "batch_norm_train": _bn(True, False),
    "batch_norm_train_masked": _bn(True, True),
    "batch_norm_eval": _bn(False, False),
    "lstm_pointwise": _case_lstm_pointwise,
    "lstm_cell": _case_lstm_cell,
    "mse_loss": _case_mse,
    "bce_with_logits_loss": _case_bce,
}


def composite_cases():
    """Whole-graph cases: encoder slice, one attention step, 2-flow vocoder NLL."""
    from aratts import taco, waveglow

    return {
        "encoder_slice": taco.gradcheck_encoder_case,
        "attention_step": taco.gradcheck_attention_case,
        "postnet": taco.gradcheck_postnet_case,
        "vocoder_nll_2flow": waveglow.gradcheck_nll_case,
    }


def cases(module="all"):
    if module == "autodiff":
        return dict(PRIMITIVE_CASES)
    composites = composite_cases()
    if module == "taco":
        return {k: v for k, v in composites.items() if k != "vocoder_nll_2flow"}
    if module == "waveglow":
        return {"vocoder_nll_2flow": composites["vocoder_nll_2flow"]}
    if module == "all":
        return {**PRIMITIVE_CASES, **composites}
    raise ValueError(f"unknown module {module!r}")


def run(module="all", seed=0, tolerance=TOLERANCE):
    """Run every case; returns ``{name: max relative error}``."""
    report = {}
    for name, build in cases(module).items():
        rng = np.random.default_rng([seed, sum(map(ord, name))])
        fn, arrays = build(rng)
        report[name] = check(fn, arrays)
    return report
