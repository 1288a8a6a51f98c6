"""Dense reference implementations for small systems.

Everything here works on explicit ``2^n x 2^n`` operators and is deliberately
independent of the chain code paths it is used to check. Superoperators in the
computational basis use the same per-qubit interleaved vectorization as
:class:`~tnnoise.tncore.SuperOpMpo`; Pauli-basis matrices hold
``Tr[P_i N(P_j)] / 2^n`` with Pauli strings ordered lexicographically in
``I, X, Y, Z`` (qubit 0 most significant).
"""

from __future__ import annotations

import itertools
from functools import reduce
from typing import Callable, Sequence

import numpy as np

from .noisemodels import (
    CoherentDepolSpec,
    DepolBrickworkSpec,
    IdentitySpec,
    SplSpec,
    rotation,
)
from .tncore import PAULI, PAULI_LETTERS, Lpdo, SuperOpMpo
from .tomography import EFFECT_VECTORS, sic_state

__all__ = [
    "MAX_QUBITS",
    "OracleSizeError",
    "pauli_string",
    "kron_all",
    "lpdo_kraus",
    "dense_channel",
    "dense_superoperator",
    "dense_cnot_layer",
    "dense_born_distribution",
    "dense_inverse",
    "dense_frobenius_error",
]

MAX_QUBITS = 5


class OracleSizeError(ValueError):
    pass


def _check_size(n: int, allow_large: bool) -> None:
    limit = 6 if allow_large else MAX_QUBITS
    if n > limit:
        raise OracleSizeError(
            f"dense oracle limited to n <= {MAX_QUBITS} (n = 6 with allow_large=True), got n = {n}"
        )


def kron_all(mats: Sequence[np.ndarray]) -> np.ndarray:
    return reduce(np.kron, mats, np.eye(1, dtype=complex))


def pauli_string(label: str) -> np.ndarray:
    return kron_all([PAULI[c] for c in label])


def _embed(op: np.ndarray, n: int, first: int) -> np.ndarray:
    k = int(round(np.log2(op.shape[0])))
    return kron_all([np.eye(2**first), op, np.eye(2 ** (n - first - k))])


def lpdo_kraus(lpdo: Lpdo) -> np.ndarray:
    """Global Kraus operators as an array ``(n_kraus, 2^n, 2^n)``."""
    t = None
    for a in lpdo.sites:
        # a: (b, a, left, right, kappa)
        if t is None:
            t = a[:, :, 0, :, :]  # (b, a, right, kappa)
            t = t.transpose(0, 1, 3, 2)  # (B, A, K, right)
            continue
        x = np.einsum("BAKm,bamrk->BbAaKkr", t, a)
        sh = x.shape
        t = x.reshape(sh[0] * sh[1], sh[2] * sh[3], sh[4] * sh[5], sh[6])
    t = t[..., 0]
    return t.transpose(2, 0, 1)


def _partial_trace_embed(rho: np.ndarray, n: int, q: int) -> np.ndarray:
    """``Tr_{q,q+1}[rho] (x) I/4`` placed back on qubits q, q+1."""
    t = rho.reshape((2,) * (2 * n))
    red = np.trace(np.trace(t, axis1=q, axis2=n + q), axis1=q, axis2=n + q - 1)
    # red has ket axes (n-2) then bra axes (n-2)
    m = n - 2
    red = red.reshape(2**q, 2 ** (m - q), 2**q, 2 ** (m - q))
    out = np.einsum("abcd,ij->aibcjd", red, np.eye(4) / 4)
    return out.reshape(2**n, 2**n)


def dense_channel(spec, allow_large: bool = False) -> Callable[[np.ndarray], np.ndarray]:
    """Return ``rho -> N(rho)`` acting on dense density matrices."""
    if isinstance(spec, SuperOpMpo):
        n = spec.n
        _check_size(n, allow_large)
        s = dense_superoperator(spec, "comp", allow_large)
        return lambda rho: _unvec(s @ _vec(rho, n), n)
    if isinstance(spec, Lpdo):
        _check_size(spec.n, allow_large)
        ks = lpdo_kraus(spec)
        return lambda rho: sum(k @ rho @ k.conj().T for k in ks)
    n = spec.n
    _check_size(n, allow_large)
    if isinstance(spec, IdentitySpec):
        return lambda rho: rho.copy()
    if isinstance(spec, DepolBrickworkSpec):
        p = spec.p

        def depol(rho):
            for q in range(0, n - 1, 2):
                rho = (1 - p) * rho + p * _partial_trace_embed(rho, n, q)
            for q in range(1, n - 1, 2):
                rho = (1 - p / 2) * rho + (p / 2) * _partial_trace_embed(rho, n, q)
            return rho

        return depol
    if isinstance(spec, CoherentDepolSpec):
        u = kron_all([rotation(*a) for a in spec.angles])
        inc = dense_channel(spec.base, allow_large)
        return lambda rho: inc(u @ rho @ u.conj().T)
    if isinstance(spec, SplSpec):
        factors = [(pauli_string(p), (1 + np.exp(-2 * lam)) / 2) for p, lam in spec.generators]

        def spl(rho):
            for pk, w in factors:
                rho = w * rho + (1 - w) * pk @ rho @ pk
            return rho

        return spl
    raise TypeError(f"unsupported spec {type(spec).__name__}")


def _interleave_perm(n: int) -> list[int]:
    return [x for j in range(n) for x in (j, n + j)]


def _vec(rho: np.ndarray, n: int) -> np.ndarray:
    return rho.reshape((2,) * (2 * n)).transpose(_interleave_perm(n)).reshape(-1)


def _unvec(v: np.ndarray, n: int) -> np.ndarray:
    inv = np.argsort(_interleave_perm(n))
    return v.reshape((2,) * (2 * n)).transpose(inv).reshape(2**n, 2**n)


def dense_superoperator(spec, basis: str = "pauli", allow_large: bool = False) -> np.ndarray:
    """Full ``4^n x 4^n`` matrix of a noise spec, LPDO or superoperator chain."""
    n = spec.n
    _check_size(n, allow_large)
    if isinstance(spec, SuperOpMpo):
        if spec.basis == basis:
            return spec.to_dense()
        return dense_superoperator(spec.to_basis(basis), basis, allow_large)
    chan = dense_channel(spec, allow_large)
    d = 2**n
    if basis == "pauli":
        labels = ["".join(t) for t in itertools.product(PAULI_LETTERS, repeat=n)]
        paulis = [pauli_string(l) for l in labels]
        images = [chan(p) for p in paulis]
        # c_ij = Tr[P_i N(P_j)] / 2^n
        pm = np.array([p.reshape(-1) for p in paulis])
        im = np.array([x.T.reshape(-1) for x in images])
        return (pm @ im.T) / d
    if basis != "comp":
        raise ValueError(f"unknown basis {basis!r}")
    cols = []
    for k in range(d * d):
        unit = np.zeros(d * d, dtype=complex)
        unit[k] = 1
        cols.append(_vec(chan(_unvec(unit, n)), n))
    return np.array(cols).T


_CNOT = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)


def dense_cnot_layer(n: int, parity: str = "even") -> np.ndarray:
    start = 0 if parity == "even" else 1
    u = np.eye(2**n, dtype=complex)
    for q in range(start, n - 1, 2):
        u = _embed(_CNOT, n, q) @ u
    return u


def dense_born_distribution(
    spec, alpha: Sequence[int], beta: Sequence[int], parity: str | None = "even",
    allow_large: bool = False,
) -> np.ndarray:
    """All ``2^n`` outcome probabilities, outcome bits ordered with qubit 0 first (0 -> +1)."""
    n = len(alpha)
    _check_size(n, allow_large)
    rho = kron_all([sic_state(a) for a in alpha])
    if parity is not None:
        u = dense_cnot_layer(n, parity)
        rho = u @ rho @ u.conj().T
    sigma = dense_channel(spec, allow_large)(rho)
    basis_vecs = [[EFFECT_VECTORS[2 * b], EFFECT_VECTORS[2 * b + 1]] for b in beta]
    probs = np.empty(2**n)
    for k, bits in enumerate(itertools.product((0, 1), repeat=n)):
        e = kron_all([basis_vecs[j][bit].reshape(2, 1) for j, bit in enumerate(bits)]).reshape(-1)
        probs[k] = float(np.real(e.conj() @ sigma @ e))
    return probs


def dense_inverse(matrix: np.ndarray, max_cond: float = 1e12) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=complex)
    cond = np.linalg.cond(matrix)
    if not np.isfinite(cond) or cond > max_cond:
        raise np.linalg.LinAlgError(f"matrix is singular to working precision (cond = {cond:.3e})")
    return np.linalg.inv(matrix)


def dense_frobenius_error(a: np.ndarray, b: np.ndarray) -> float:
    d = a.shape[0]
    return float(np.linalg.norm(a - b) ** 2 / d)


def _check(name: str, n: int, dev: float) -> tuple[str, int, float]:
    return (name, n, float(dev))


def cross_validate(ns: Sequence[int] = (2, 3, 4), seed: int = 0) -> list[tuple[str, int, float]]:
    """Compare every chain code path against its dense reference.

    Returns ``(check, n, max deviation)`` triples. Deviations are absolute and
    entrywise, except Frobenius distances which are compared as scalars.
    """
    from .conversion import lpdo_to_superop, ptm_coefficient, random_pauli_strings, to_pauli_basis
    from .noisemodels import build_channel, cnot_layer_superop, sample_coherent_spec, sample_spl_spec
    from .tncore import frobenius_error, lpdo_apply
    from .tomography import born_probability, generate_settings, tomographic_state
    from .training import init_lpdo

    out = []
    rng = np.random.default_rng(seed)
    for n in ns:
        depol = DepolBrickworkSpec(n, 1e-3)
        specs = {
            "depol": depol,
            "coherent": sample_coherent_spec(depol, 0.1, seed + n),
            "spl": sample_spl_spec(n, seed + n),
        }
        chains = {k: build_channel(s) for k, s in specs.items()}
        for k, s in specs.items():
            dev = np.abs(chains[k].to_dense() - dense_superoperator(s)).max()
            out.append(_check(f"superop:{k}", n, dev))

        lp = init_lpdo(n, 2, 2, seed + 7 * n)
        ks = lpdo_kraus(lp)
        setting = generate_settings(n, 1, seed + n)[0]
        state = tomographic_state(setting.alpha, cnot_layer_superop(n, "even"))
        rho = state.to_dense()
        dev = np.abs(lpdo_apply(lp, state).to_dense() - sum(k @ rho @ k.conj().T for k in ks)).max()
        out.append(_check("lpdo_apply", n, dev))
        sup = to_pauli_basis(lpdo_to_superop(lp))
        out.append(_check("lpdo_to_superop", n, np.abs(sup.to_dense() - dense_superoperator(lp)).max()))

        for k, s in specs.items():
            ref = dense_born_distribution(s, setting.alpha, setting.beta)
            got = []
            for bits in itertools.product((0, 1), repeat=n):
                zeta = [1 - 2 * b for b in bits]
                got.append(born_probability(chains[k], state, setting, zeta))
            out.append(_check(f"born:{k}", n, np.abs(np.array(got) - ref).max()))

        labels = random_pauli_strings(n, 3, seed + n)
        dense_spl = dense_superoperator(specs["spl"])
        dense_lp = dense_superoperator(lp)
        dev = 0.0
        for p_out in labels + ["I" * n]:
            p_in = labels[int(rng.integers(len(labels)))]
            for chain, dense in ((chains["spl"], dense_spl), (sup, dense_lp)):
                for a, b in ((p_out, p_out), (p_out, p_in)):
                    i = _pauli_index(a)
                    j = _pauli_index(b)
                    dense_val = dense[i, j]
                    if abs(dense_val.imag) > 1e-10:
                        continue
                    dev = max(dev, abs(ptm_coefficient(chain, a, b) - dense_val.real))
        out.append(_check("ptm", n, dev))

        pairs = [(chains["depol"], chains["spl"]), (chains["coherent"], sup)]
        dev = 0.0
        for a, b in pairs:
            dev = max(dev, abs(frobenius_error(a, b) - dense_frobenius_error(a.to_dense(), b.to_dense())))
        out.append(_check("frobenius", n, dev))
    return out


def _pauli_index(label: str) -> int:
    idx = 0
    for c in label:
        idx = 4 * idx + PAULI_LETTERS.index(c)
    return idx
