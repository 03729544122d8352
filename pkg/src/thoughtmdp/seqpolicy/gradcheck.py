"""Central finite-difference check of analytic gradients."""
from __future__ import annotations

from typing import Callable

import numpy as np

Params = dict[str, np.ndarray]


def grad_check(params: Params, loss_fn: Callable[[Params], tuple[float, Params]],
               eps: float = 1e-4, fraction: float = 0.01, rng: np.random.Generator | None = None,
               atol: float = 1e-7, min_per_param: int = 1) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``loss_fn`` returns ``(loss, grads)`` and must be deterministic.  A random
    ``fraction`` of the entries (at least ``min_per_param`` per array) is
    probed.  Relative error is ``|a - n| / max(|a|, |n|, atol)``; ``atol``
    keeps entries whose gradient is essentially zero from dominating.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    _, analytic = loss_fn(params)
    worst = 0.0
    for name, p in params.items():
        flat = p.reshape(-1)
        k = max(min_per_param, int(round(fraction * flat.size)))
        idx = rng.choice(flat.size, size=min(k, flat.size), replace=False)
        ga = analytic[name].reshape(-1)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            lp, _ = loss_fn(params)
            flat[i] = orig - eps
            lm, _ = loss_fn(params)
            flat[i] = orig
            num = (lp - lm) / (2 * eps)
            a = float(ga[i])
            err = abs(a - num) / max(abs(a), abs(num), atol)
            worst = max(worst, err)
    return worst
