"""Kernel backend selection.

The compiled extension is used when it was built; otherwise, or when
``THOUGHTMDP_PURE_PYTHON=1`` is set, the pure-Python fallback is loaded.
"""
from __future__ import annotations

import os

import numpy as np

from . import _kernels_py

if os.environ.get("THOUGHTMDP_PURE_PYTHON") == "1":
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        _impl = _kernels_py

BACKEND = "cython" if _impl is not _kernels_py else "python"


def _backend(name: str | None):
    if name is None:
        return _impl
    if name == "python":
        return _kernels_py
    if name == "cython":
        from . import _kernels  # type: ignore[attr-defined]
        return _kernels
    raise ValueError(f"unknown kernel backend {name!r}")


def gauss_seidel(P: np.ndarray, r: np.ndarray, gamma: float, v: np.ndarray,
                 threshold: float, max_sweeps: int, backend: str | None = None) -> int:
    P = np.ascontiguousarray(P, dtype=np.float64)
    r = np.ascontiguousarray(r, dtype=np.float64)
    return _backend(backend).gauss_seidel(P, r, float(gamma), v, float(threshold), int(max_sweeps))


def goal_rollouts(P: np.ndarray, policy: np.ndarray, goal: np.ndarray, start: int,
                  forced: int, uniforms: np.ndarray,
                  backend: str | None = None) -> tuple[int, np.ndarray]:
    """Return ``(hits, first_hit)`` for a batch of rollouts; see ``_kernels.goal_rollouts``."""
    P = np.ascontiguousarray(P, dtype=np.float64)
    policy = np.ascontiguousarray(policy, dtype=np.float64)
    goal = np.ascontiguousarray(goal, dtype=np.uint8)
    uniforms = np.ascontiguousarray(uniforms, dtype=np.float64)
    first_hit = np.empty(uniforms.shape[0], dtype=np.int_)
    hits = _backend(backend).goal_rollouts(P, policy, goal, int(start), int(forced),
                                           uniforms, first_hit)
    return int(hits), first_hit
