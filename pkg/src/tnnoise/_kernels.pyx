# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled transfer-matrix chain contraction used by the training loop."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def chain_contract(
    const double complex[::1] w_flat,
    const long long[::1] w_off,
    const long long[::1] dims,
    const long long[:, ::1] idx,
    const double[::1] weights,
    double floor,
    bint accumulate,
):
    """Per-shot chain values and, optionally, weighted ``left (x) right`` environments.

    Site ``j`` of combo ``c`` is the ``dims[j] x dims[j+1]`` row-major block at
    ``w_off[j] + c * dims[j] * dims[j+1]`` of ``w_flat``. Environments are
    accumulated with weight ``weights[b] / max(p_b, floor)`` in the same layout.
    """
    cdef Py_ssize_t n_shots = idx.shape[0]
    cdef Py_ssize_t n = idx.shape[1]
    cdef Py_ssize_t j, b, x, y, dl, dr, base, lo
    cdef Py_ssize_t total = 0
    cdef Py_ssize_t maxd = 1
    cdef double p, s
    cdef double complex acc, lx

    lofs_np = np.zeros(n + 2, dtype=np.int64)
    cdef long long[::1] lofs = lofs_np
    for j in range(n + 1):
        lofs[j + 1] = lofs[j] + dims[j]
        if dims[j] > maxd:
            maxd = dims[j]
    left_np = np.zeros(lofs[n + 1], dtype=np.complex128)
    cdef double complex[::1] left = left_np
    r1_np = np.zeros(maxd, dtype=np.complex128)
    r2_np = np.zeros(maxd, dtype=np.complex128)
    cdef double complex[::1] ra = r1_np
    cdef double complex[::1] rb = r2_np
    cdef double complex[::1] tmp
    probs_np = np.zeros(n_shots, dtype=np.float64)
    cdef double[::1] probs = probs_np
    env_np = np.zeros(w_flat.shape[0] if accumulate else 0, dtype=np.complex128)
    cdef double complex[::1] env = env_np

    with nogil:
        for b in range(n_shots):
            left[0] = 1.0
            for j in range(n):
                dl = dims[j]
                dr = dims[j + 1]
                base = w_off[j] + idx[b, j] * dl * dr
                lo = lofs[j]
                for y in range(dr):
                    left[lofs[j + 1] + y] = 0.0
                for x in range(dl):
                    lx = left[lo + x]
                    if lx == 0:
                        continue
                    for y in range(dr):
                        left[lofs[j + 1] + y] = left[lofs[j + 1] + y] + lx * w_flat[base + x * dr + y]
            p = left[lofs[n]].real
            probs[b] = p
            if not accumulate:
                continue
            s = weights[b] / (p if p > floor else floor)
            ra[0] = s
            for j in range(n - 1, -1, -1):
                dl = dims[j]
                dr = dims[j + 1]
                base = w_off[j] + idx[b, j] * dl * dr
                lo = lofs[j]
                for x in range(dl):
                    lx = left[lo + x]
                    acc = 0.0
                    for y in range(dr):
                        env[base + x * dr + y] = env[base + x * dr + y] + lx * ra[y]
                        acc = acc + w_flat[base + x * dr + y] * ra[y]
                    rb[x] = acc
                tmp = ra
                ra = rb
                rb = tmp
    return probs_np, (env_np if accumulate else None)
