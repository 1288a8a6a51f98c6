"""Approximate inverses of superoperator chains.

The inverse ``U`` of ``G`` is sought as a chain of fixed bond dimension that
minimizes ``D(U) = ||G U - I||_F^2``. ``D`` is quadratic in every single site
tensor, so an alternating sweep solves one small linear system per site. A
gradient-based polish over all sites can follow.
"""

from __future__ import annotations

import math
import warnings

import numpy as np
from scipy.optimize import minimize

from .tncore import (
    StructureError,
    SuperOpMpo,
    _direct_difference,
    _flat,
    chain_norm_sq,
    compose,
    compress,
    svd_truncate,
)

__all__ = [
    "TIKHONOV",
    "inversion_residual",
    "initial_guess",
    "invert_sweep",
    "variational_polish",
]

TIKHONOV = 1e-12


def inversion_residual(gamma: SuperOpMpo, upsilon: SuperOpMpo) -> float:
    """Unnormalized ``||gamma upsilon - I||_F^2``; divide by ``4^n`` for the normalized value."""
    if gamma.basis != upsilon.basis:
        raise StructureError(f"basis mismatch: {gamma.basis} vs {upsilon.basis}")
    prod = compose(gamma, upsilon)
    ident = SuperOpMpo.identity(gamma.n, gamma.basis)
    return chain_norm_sq(_direct_difference(_flat(prod.sites), _flat(ident.sites)))


def _gamma_sq(gamma: SuperOpMpo) -> list[np.ndarray]:
    """Sites of ``gamma^dag gamma`` as ``(C, in', in, D)``."""
    sites = []
    for g in gamma.sites:
        t = np.einsum("copd,eoqf->cepqdf", g.conj(), g)
        sh = t.shape
        sites.append(t.reshape(sh[0] * sh[1], 4, 4, sh[4] * sh[5]))
    return list(compress(SuperOpMpo(sites, gamma.basis)).sites)


def initial_guess(gamma: SuperOpMpo, chi: int, seed: int = 0, noise: float = 1e-6) -> SuperOpMpo:
    """``2I - gamma`` truncated to ``chi``, with bonds padded to ``chi`` by small noise.

    The padding keeps every bond at full rank so the single-site updates can
    use all ``chi`` directions.
    """
    ident = SuperOpMpo.identity(gamma.n, gamma.basis).scaled(2.0)
    diff = _direct_difference(_flat(ident.sites), _flat(gamma.sites))
    base = SuperOpMpo([d.reshape(d.shape[0], 4, 4, d.shape[-1]) for d in diff], gamma.basis)
    base = svd_truncate(compress(base), chi_max=chi)
    n = gamma.n
    dims = [1] + [min(chi, 16 ** min(j, n - j)) for j in range(1, n)] + [1]
    rng = np.random.default_rng(seed)
    sites = []
    for j, s in enumerate(base.sites):
        shape = (dims[j], 4, 4, dims[j + 1])
        t = noise * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
        t[: s.shape[0], :, :, : s.shape[3]] += s
        sites.append(t)
    return SuperOpMpo(sites, gamma.basis)


class _Problem:
    """Environments of the quadratic form ``x^dag H x - 2 Re(v^T x) + 4^n`` per site."""

    def __init__(self, gamma: SuperOpMpo):
        self.n = gamma.n
        self.g = list(gamma.sites)
        self.g2 = _gamma_sq(gamma)
        self.const = 4.0**gamma.n

    # norm transfer: conj(U)[a,p,k,b] G2[C,p,q,D] U[g,q,k,h] -> (a C g), (b D h)
    def norm_left(self, env, u, j):
        return np.einsum("aCg,apkb,CpqD,gqkh->bDh", env, u.conj(), self.g2[j], u, optimize=True)

    def norm_right(self, env, u, j):
        return np.einsum("bDh,apkb,CpqD,gqkh->aCg", env, u.conj(), self.g2[j], u, optimize=True)

    # trace transfer: G[c,k,q,d] U[g,q,k,h] -> (c g), (d h)
    def trace_left(self, env, u, j):
        return np.einsum("cg,ckqd,gqkh->dh", env, self.g[j], u, optimize=True)

    def trace_right(self, env, u, j):
        return np.einsum("dh,ckqd,gqkh->cg", env, self.g[j], u, optimize=True)

    def all_envs(self, us):
        n = self.n
        one3 = np.ones((1, 1, 1), dtype=complex)
        one2 = np.ones((1, 1), dtype=complex)
        nl, tl = [one3], [one2]
        for j in range(n):
            nl.append(self.norm_left(nl[-1], us[j], j))
            tl.append(self.trace_left(tl[-1], us[j], j))
        nr, tr = [None] * (n + 1), [None] * (n + 1)
        nr[n], tr[n] = one3, one2
        for j in range(n - 1, -1, -1):
            nr[j] = self.norm_right(nr[j + 1], us[j], j)
            tr[j] = self.trace_right(tr[j + 1], us[j], j)
        return nl, nr, tl, tr

    def local_h(self, nl, nr, j):
        h = np.einsum("aCg,CpqD,bDh->apbgqh", nl, self.g2[j], nr, optimize=True)
        a, p, b = h.shape[:3]
        return h.reshape(a * p * b, a * p * b)

    def local_v(self, tl, tr, j):
        return np.einsum("cg,ckqd,dh->gqkh", tl, self.g[j], tr, optimize=True)

    def h_apply(self, nl, nr, u, j):
        return np.einsum("aCg,CpqD,bDh,gqkh->apkb", nl, self.g2[j], nr, u, optimize=True)

    def solve(self, nl, nr, tl, tr, j, shape):
        h = self.local_h(nl, nr, j)
        v = self.local_v(tl, tr, j)
        a, p, k, b = shape
        rhs = v.conj().transpose(0, 1, 3, 2).reshape(a * p * b, k)
        reg = h + TIKHONOV * np.eye(len(h))
        try:
            x = np.linalg.solve(reg, rhs)
        except np.linalg.LinAlgError:
            warnings.warn(f"singular local system at site {j}; using least squares",
                          RuntimeWarning, stacklevel=3)
            x = np.linalg.lstsq(reg, rhs, rcond=None)[0]
        return x.reshape(a, p, b, k).transpose(0, 1, 3, 2)

    def value(self, nl, nr, tl, tr, u, j):
        quad = np.vdot(u, self.h_apply(nl, nr, u, j)).real
        lin = np.sum(self.local_v(tl, tr, j) * u).real
        return quad - 2.0 * lin + self.const


def _right_canonical(sites):
    sites = [s.copy() for s in sites]
    for j in range(len(sites) - 1, 0, -1):
        l, p, k, r = sites[j].shape
        q, rr = np.linalg.qr(sites[j].reshape(l, p * k * r).T)
        sites[j] = q.T.reshape(q.shape[1], p, k, r)
        sites[j - 1] = np.tensordot(sites[j - 1], rr.T, axes=([3], [0]))
    return sites


def invert_sweep(
    gamma: SuperOpMpo,
    chi: int = 4,
    sweeps: int = 4,
    init: SuperOpMpo | None = None,
    seed: int = 0,
    tol: float = 0.0,
    history: list | None = None,
) -> SuperOpMpo:
    """Alternating single-site minimization of ``||gamma U - I||_F^2``.

    Each sweep runs left to right and back. The chain is kept in mixed
    canonical form so the local systems stay well conditioned; every local
    update is the exact minimizer, hence the residual never increases.

    Args:
        gamma: chain to invert.
        chi: bond dimension of the inverse.
        sweeps: number of full (left-right-left) sweeps.
        init: starting chain; defaults to :func:`initial_guess`.
        seed: seed of the padding noise in the default start.
        tol: stop early once the residual falls below this value.
        history: if given, receives the residual after every half sweep.
    """
    if chi < 1:
        raise ValueError("chi must be >= 1")
    prob = _Problem(gamma)
    n = gamma.n
    if init is None:
        init = initial_guess(gamma, chi, seed)
    elif init.basis != gamma.basis:
        init = init.to_basis(gamma.basis)
    us = _right_canonical([np.array(s, dtype=complex) for s in init.sites])
    nl, nr, tl, tr = prob.all_envs(us)
    order = list(range(n)) + list(range(n - 1, -1, -1))
    for _ in range(sweeps):
        for half, sites_in_half in enumerate((order[:n], order[n:])):
            for j in sites_in_half:
                us[j] = prob.solve(nl[j], nr[j + 1], tl[j], tr[j + 1], j, us[j].shape)
                if half == 0 and j < n - 1:
                    l, p, k, r = us[j].shape
                    q, rr = np.linalg.qr(us[j].reshape(l * p * k, r))
                    us[j] = q.reshape(l, p, k, q.shape[1])
                    us[j + 1] = np.tensordot(rr, us[j + 1], axes=([1], [0]))
                    nl[j + 1] = prob.norm_left(nl[j], us[j], j)
                    tl[j + 1] = prob.trace_left(tl[j], us[j], j)
                elif half == 1 and j > 0:
                    l, p, k, r = us[j].shape
                    q, rr = np.linalg.qr(us[j].reshape(l, p * k * r).T)
                    us[j] = q.T.reshape(q.shape[1], p, k, r)
                    us[j - 1] = np.tensordot(us[j - 1], rr.T, axes=([3], [0]))
                    nr[j] = prob.norm_right(nr[j + 1], us[j], j)
                    tr[j] = prob.trace_right(tr[j + 1], us[j], j)
            res = inversion_residual(gamma, SuperOpMpo(us, gamma.basis))
            if history is not None:
                history.append(res)
        if res <= tol:
            break
    return SuperOpMpo(us, gamma.basis)


def variational_polish(
    gamma: SuperOpMpo,
    upsilon0: SuperOpMpo,
    max_iters: int = 200,
    history: list | None = None,
) -> SuperOpMpo:
    """Refine all sites jointly with L-BFGS; returns the best iterate seen.

    The result is never worse than ``upsilon0`` as measured by
    :func:`inversion_residual`.
    """
    prob = _Problem(gamma)
    us0 = [np.array(s, dtype=complex) for s in upsilon0.to_basis(gamma.basis).sites]
    shapes = [u.shape for u in us0]
    sizes = [u.size for u in us0]
    start = inversion_residual(gamma, SuperOpMpo(us0, gamma.basis))
    if max_iters < 1 or start == 0.0:
        return SuperOpMpo(us0, gamma.basis)

    def unpack(x):
        half = len(x) // 2
        z = x[:half] + 1j * x[half:]
        out, pos = [], 0
        for sh, sz in zip(shapes, sizes):
            out.append(z[pos:pos + sz].reshape(sh))
            pos += sz
        return out

    def fun(x):
        us = unpack(x)
        nl, nr, tl, tr = prob.all_envs(us)
        f = prob.value(nl[0], nr[1], tl[0], tr[1], us[0], 0)
        grads = []
        for j, u in enumerate(us):
            # Wirtinger derivative H u - conj(v); the real gradient is twice that
            g = prob.h_apply(nl[j], nr[j + 1], u, j) - prob.local_v(tl[j], tr[j + 1], j).conj()
            grads.append(2.0 * g.ravel())
        gz = np.concatenate(grads)
        return f, np.concatenate([gz.real, gz.imag])

    z0 = np.concatenate([u.ravel() for u in us0])
    x0 = np.concatenate([z0.real, z0.imag])
    res = minimize(fun, x0, jac=True, method="L-BFGS-B",
                   options={"maxiter": max_iters, "ftol": 0.0, "gtol": 1e-14})
    cand = SuperOpMpo(unpack(res.x), gamma.basis)
    final = inversion_residual(gamma, cand)
    if history is not None:
        history.extend([start, final])
    if not math.isfinite(final) or final >= start:
        return SuperOpMpo(us0, gamma.basis)
    return cand
