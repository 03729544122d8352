"""Adaptive-moment optimizer over a dict of parameter arrays."""
from __future__ import annotations

import numpy as np

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


class AdamState:
    def __init__(self, params: dict[str, np.ndarray], beta1: float = BETA1,
                 beta2: float = BETA2, eps: float = EPS):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.step = 0
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    def update(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float) -> bool:
        """Apply one update in place; return False if it was skipped.

        The step counter always advances.  When every gradient is exactly zero
        the moments and parameters are left alone, so a zero gradient never
        moves parameters through stale momentum.
        """
        if set(grads) != set(params):
            raise KeyError("gradient names do not match parameter names")
        self.step += 1
        if not any(np.any(g) for g in grads.values()):
            return False
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.step
        c2 = 1.0 - b2 ** self.step
        for k, p in params.items():
            g = grads[k]
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype, copy=False)
        return True
