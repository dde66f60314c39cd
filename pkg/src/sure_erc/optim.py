"""AdamW with decoupled weight decay, updating parameters in place."""
import numpy as np

from . import kernels


class AdamW:
    def __init__(self, params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.step_count += 1
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            # parameters must stay contiguous so the flat views alias them
            kernels.adamw_step(p.data.reshape(-1), np.ascontiguousarray(g, dtype=p.dtype).reshape(-1),
                               m.reshape(-1), v.reshape(-1), self.lr, self.beta1, self.beta2,
                               self.eps, self.weight_decay, float(self.step_count))

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def state_dict(self):
        return {"step": self.step_count, "m": [m.copy() for m in self.m], "v": [v.copy() for v in self.v]}

    def load_state_dict(self, state):
        self.step_count = int(state["step"])
        self.m = [np.array(m, dtype=p.dtype) for m, p in zip(state["m"], self.params)]
        self.v = [np.array(v, dtype=p.dtype) for v, p in zip(state["v"], self.params)]
