"""Batched transfer-matrix chain contraction with a compiled and a NumPy backend.

A *chain* assigns to every shot ``b`` and site ``j`` a transfer matrix
``transfers[j][idx[b, j]]`` of shape ``(D_j, D_{j+1})`` with ``D_0 = D_n = 1``.
The chain value is the product of these matrices. For the loss gradient the
kernels also accumulate, per site and transfer matrix, the sum over shots of
``w_b / max(p_b, floor) * outer(left_b, right_b)``, which is the derivative of
``sum_b w_b log p_b`` with respect to that transfer matrix.

The compiled extension is used when importable; set ``TNNOISE_KERNEL=numpy`` to
force the fallback.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from . import _kernels as _ext
except ImportError:  # pragma: no cover - exercised when the extension is not built
    _ext = None

__all__ = ["BACKEND", "available_backends", "chain_contract"]

available_backends = ["numpy"] + (["cython"] if _ext is not None else [])
BACKEND = "cython" if _ext is not None and os.environ.get("TNNOISE_KERNEL") != "numpy" else "numpy"


def _numpy_chain(transfers, idx, weights, floor):
    n_shots, n = idx.shape
    gathered = []
    lefts = [np.ones((n_shots, 1), dtype=complex)]
    for j in range(n):
        w = transfers[j][idx[:, j]]
        gathered.append(w)
        lefts.append(np.einsum("bx,bxy->by", lefts[-1], w))
    probs = lefts[-1][:, 0].real.copy()
    if weights is None:
        return probs, None
    scale = weights / np.maximum(probs, floor)
    right = scale[:, None].astype(complex)
    envs = [None] * n
    for j in range(n - 1, -1, -1):
        c, dl, dr = transfers[j].shape
        outer = (lefts[j][:, :, None] * right[:, None, :]).reshape(n_shots, dl * dr)
        env = np.zeros((c, dl * dr), dtype=complex)
        np.add.at(env, idx[:, j], outer)
        envs[j] = env.reshape(c, dl, dr)
        right = np.einsum("bxy,by->bx", gathered[j], right)
    return probs, envs


def _cython_chain(transfers, idx, weights, floor):
    sizes = [t.size for t in transfers]
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
    dims = np.array([t.shape[1] for t in transfers] + [transfers[-1].shape[2]], dtype=np.int64)
    flat = np.concatenate([np.ascontiguousarray(t, dtype=np.complex128).ravel() for t in transfers])
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    accumulate = weights is not None
    w = np.ascontiguousarray(weights if accumulate else np.zeros(0), dtype=np.float64)
    probs, env = _ext.chain_contract(flat, offsets, dims, idx, w, float(floor), accumulate)
    if not accumulate:
        return probs, None
    envs = [env[o:o + t.size].reshape(t.shape) for o, t in zip(offsets, transfers)]
    return probs, envs


def chain_contract(transfers, idx, weights=None, floor: float = 1e-12, backend: str | None = None):
    """Evaluate chain values and optional weighted environments.

    Args:
        transfers: per site, an array ``(n_combos_j, D_j, D_{j+1})``.
        idx: ``(n_shots, n)`` integer combo index per shot and site.
        weights: per-shot weights; when given, environments are returned.
        floor: lower clamp on chain values inside the ``w / p`` factor.
        backend: ``"cython"`` or ``"numpy"``; defaults to :data:`BACKEND`.

    Returns:
        ``(values, envs)`` where ``values`` is real ``(n_shots,)`` and ``envs``
        is a list shaped like ``transfers`` or ``None``.
    """
    backend = backend or BACKEND
    idx = np.asarray(idx)
    if idx.ndim != 2 or idx.shape[1] != len(transfers):
        raise ValueError("idx must be (n_shots, n_sites)")
    if weights is not None:
        weights = np.asarray(weights, dtype=np.float64)
    if backend == "cython":
        if _ext is None:
            raise RuntimeError("compiled kernel not available; rebuild the package")
        return _cython_chain(transfers, idx, weights, floor)
    if backend == "numpy":
        return _numpy_chain(transfers, idx, weights, floor)
    raise ValueError(f"unknown backend {backend!r}")
