"""Adam with classic (coupled) L2 regularisation."""
import numpy as np

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-6
LR = 1e-3
L2 = 1e-6


class Adam:
    """Adam with bias correction.

    The L2 penalty is folded into the gradient (``g + l2 * theta``) before the
    moment updates. ``clip_norm`` rescales the global gradient norm when set.
    """

    def __init__(self, params, lr=LR, betas=(BETA1, BETA2), eps=EPS, l2=L2, clip_norm=None):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.l2 = l2
        self.clip_norm = clip_norm
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def grad_norm(self):
        return float(np.sqrt(sum(float((p.grad * p.grad).sum()) for p in self.params)))

    def step(self):
        self.t += 1
        scale = 1.0
        if self.clip_norm is not None:
            norm = self.grad_norm()
            if norm > self.clip_norm:
                scale = self.clip_norm / (norm + 1e-12)
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad * scale
            if self.l2:
                g = g + self.l2 * p.data
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self):
        state = {"t": np.array([self.t], dtype=np.float64)}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            state[f"m.{i}"] = m
            state[f"v.{i}"] = v
        return state
