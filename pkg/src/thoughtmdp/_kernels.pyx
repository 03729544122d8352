# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops for tabular evaluation and Monte Carlo rollouts.

Signatures and results mirror ``_kernels_py`` exactly; callers choose one via
``thoughtmdp.kernels``.
"""
from libc.math cimport fabs

cdef inline Py_ssize_t _draw(const double[:] prob, double u) nogil:
    cdef Py_ssize_t j, n = prob.shape[0], last = 0
    cdef double acc = 0.0
    for j in range(n):
        if prob[j] > 0.0:
            last = j
        acc += prob[j]
        if acc > u:
            return j
    return last


def gauss_seidel(const double[:, ::1] P, const double[::1] r, double gamma,
                 double[::1] v, double threshold, long max_sweeps):
    """In-place Gauss-Seidel sweeps of ``v <- r + gamma P v``.

    Returns the number of sweeps, or -1 when ``max_sweeps`` ran out before the
    largest per-sweep change dropped to ``threshold``.
    """
    cdef Py_ssize_t n = P.shape[0], i, j
    cdef long sweep, done = -1
    cdef double acc, delta, change
    with nogil:
        for sweep in range(1, max_sweeps + 1):
            delta = 0.0
            for i in range(n):
                acc = 0.0
                for j in range(n):
                    if P[i, j] != 0.0:
                        acc += P[i, j] * v[j]
                acc = r[i] + gamma * acc
                change = fabs(acc - v[i])
                if change > delta:
                    delta = change
                v[i] = acc
            if delta <= threshold:
                done = sweep
                break
    return done


def goal_rollouts(const double[:, :, ::1] P, const double[:, ::1] policy,
                  const unsigned char[::1] goal, long start, long forced,
                  const double[:, :, ::1] uniforms, long[::1] first_hit):
    """Roll out a flat MDP from ``start`` for ``uniforms.shape[1]`` steps.

    ``forced >= 0`` overrides the first action.  ``first_hit[n]`` receives the
    first step index at which rollout ``n`` occupies a goal state (0 when the
    start is a goal) or -1 if it never does.  Returns the hit count.
    """
    cdef Py_ssize_t n_roll = uniforms.shape[0], horizon = uniforms.shape[1]
    cdef Py_ssize_t n, t, s, k
    cdef long hits = 0
    with nogil:
        for n in range(n_roll):
            s = start
            first_hit[n] = -1
            if goal[s]:
                first_hit[n] = 0
                hits += 1
                continue
            for t in range(horizon):
                if t == 0 and forced >= 0:
                    k = forced
                else:
                    k = _draw(policy[s], uniforms[n, t, 0])
                s = _draw(P[s, k], uniforms[n, t, 1])
                if goal[s]:
                    first_hit[n] = t + 1
                    hits += 1
                    break
    return hits
