"""Adaptive-moment optimizer.

Fixed configuration on purpose: decay 0.9/0.999, eps 1e-8, bias
correction, no weight decay, no schedule. Parameters update in their
registration order every step, which keeps replays bitwise identical.
"""

import numpy as np

from .backend import kernels as K


class Adam:
    def __init__(self, params, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0.0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.params = list(params)
        self.lr = float(lr)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.state = {name: (np.zeros(p.values.size), np.zeros(p.values.size))
                      for name, p in self.params}

    def step(self) -> None:
        """Apply one update from the accumulated gradients, then clear them."""
        self.t += 1
        for name, p in self.params:
            g = p.grad
            if g is None:
                raise RuntimeError(f"parameter {name!r} has no gradient; run backward first")
            if not np.isfinite(g).all():
                raise RuntimeError(f"non-finite gradient in parameter {name!r}")
            m, v = self.state[name]
            K.adam_update(p.values.reshape(-1), g.reshape(-1), m, v,
                          self.t, self.lr, self.beta1, self.beta2, self.eps)
            p.grad = None
