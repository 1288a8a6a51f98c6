"""LPDO to superoperator conversion and Pauli-transfer-matrix queries."""

from __future__ import annotations

import numpy as np

from .tncore import PAULI_LETTERS, Lpdo, StructureError, SuperOpMpo

__all__ = [
    "lpdo_to_superop",
    "to_pauli_basis",
    "from_pauli_basis",
    "ptm_coefficient",
    "parse_pauli",
    "random_pauli_strings",
]


def lpdo_to_superop(lpdo: Lpdo) -> SuperOpMpo:
    """Merge each Kraus site with its conjugate into a computational-basis superoperator site.

    Output bond dimension is the square of the LPDO bond dimension.
    """
    sites = []
    for a in lpdo.sites:
        # (b, a, m, x, k) x conj(b', a', nu, nu', k) -> (m nu, b b', a a', x nu')
        t = np.einsum("bamxk,dcnyk->mnbdacxy", a, a.conj())
        sh = t.shape
        sites.append(t.reshape(sh[0] * sh[1], 4, 4, sh[6] * sh[7]))
    return SuperOpMpo(sites, "comp")


def to_pauli_basis(mpo: SuperOpMpo) -> SuperOpMpo:
    """Unitary change of every physical leg to normalized Paulis ``{I, X, Y, Z}/sqrt(2)``."""
    if mpo.basis != "comp":
        raise StructureError(f"expected a computational-basis chain, got basis {mpo.basis!r}")
    return mpo.to_basis("pauli")


def from_pauli_basis(mpo: SuperOpMpo) -> SuperOpMpo:
    if mpo.basis != "pauli":
        raise StructureError(f"expected a Pauli-basis chain, got basis {mpo.basis!r}")
    return mpo.to_basis("comp")


def parse_pauli(label: str, n: int | None = None) -> list[int]:
    label = label.strip().upper()
    if any(c not in PAULI_LETTERS for c in label) or not label:
        raise ValueError(f"not a Pauli string: {label!r}")
    if n is not None and len(label) != n:
        raise ValueError(f"Pauli string {label!r} has length {len(label)}, expected {n}")
    return [PAULI_LETTERS.index(c) for c in label]


def ptm_coefficient(mpo: SuperOpMpo, p_out: str, p_in: str) -> float:
    """``Tr[P_out N(P_in)] / 2^n`` read off a Pauli-basis chain.

    With the ``1/sqrt(2)``-normalized basis the chain entry already equals the
    normalized coefficient. The real part is returned; an imaginary part above
    ``1e-10`` raises, since it signals a non-Hermiticity-preserving map.
    """
    if mpo.basis != "pauli":
        raise StructureError("ptm_coefficient needs a Pauli-basis chain")
    out_idx = parse_pauli(p_out, mpo.n)
    in_idx = parse_pauli(p_in, mpo.n)
    env = np.ones(1, dtype=complex)
    for s, o, i in zip(mpo.sites, out_idx, in_idx):
        env = env @ s[:, o, i, :]
    val = complex(env[0])
    if abs(val.imag) > 1e-10:
        raise ValueError(f"PTM entry has imaginary part {val.imag:.3e}")
    return val.real


def random_pauli_strings(n: int, per_weight: int, seed: int, max_weight: int | None = None) -> list[str]:
    """Sample Pauli strings uniformly within each weight ``1..max_weight``."""
    rng = np.random.default_rng(seed)
    out = []
    for w in range(1, (max_weight or n) + 1):
        for _ in range(per_weight):
            support = rng.choice(n, size=w, replace=False)
            letters = ["I"] * n
            for q in support:
                letters[q] = "XYZ"[rng.integers(3)]
            out.append("".join(letters))
    return out
