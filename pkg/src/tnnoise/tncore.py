"""Chain tensor networks for states, channels and superoperators.

Leg conventions used throughout the package:

* ``StateMpo`` site: ``(left, ket, bra, right)``.
* ``Lpdo`` site: ``(bra_phys b, ket_phys a, left, right, kraus)``. The local
  Kraus factor acts as ``K[b, a]`` so the channel is ``rho -> sum K rho K^dag``.
* ``SuperOpMpo`` site: ``(left, out, in, right)`` with 4-dimensional physical
  legs. In the computational basis the local vectorization index is
  ``2 * ket + bra``; in the Pauli basis it runs over ``I, X, Y, Z`` with every
  Pauli normalized by ``1/sqrt(2)`` so the change of basis is unitary.

Dense forms of chains list qubit 0 as the most significant digit.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "PAULI",
    "PAULI_LETTERS",
    "PAULI_CHANGE",
    "StructureError",
    "StateMpo",
    "Lpdo",
    "SuperOpMpo",
    "ProductEffect",
    "lpdo_apply",
    "lpdo_trace",
    "apply_superop",
    "compose",
    "mpo_inner",
    "frobenius_error",
    "chain_norm_sq",
    "svd_truncate",
    "truncate_chain",
    "expectation",
    "save_model",
    "load_model",
]

PAULI_LETTERS = "IXYZ"
PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}

# Row P maps a computational vectorization v[2i+j] = rho[i, j] to Tr[P rho]/sqrt(2).
PAULI_CHANGE = np.array(
    [PAULI[p].T.reshape(4) / np.sqrt(2) for p in PAULI_LETTERS], dtype=complex
)

FORMAT_VERSION = 1
_MAGIC = b"TNNOISE\x00"


class StructureError(ValueError):
    """Raised on mismatched chain lengths, bond dimensions or bases."""


def _freeze(sites: Sequence[np.ndarray], ndim: int) -> tuple[np.ndarray, ...]:
    out = []
    for s in sites:
        a = np.array(s, dtype=np.complex128)
        if a.ndim != ndim:
            raise StructureError(f"site tensor must have {ndim} legs, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise StructureError("site tensor contains non-finite entries")
        a.setflags(write=False)
        out.append(a)
    if not out:
        raise StructureError("a chain needs at least one site")
    return tuple(out)


def _check_bonds(shapes: list[tuple[int, int]]) -> None:
    if shapes[0][0] != 1 or shapes[-1][1] != 1:
        raise StructureError("boundary bonds must have dimension 1")
    for j in range(len(shapes) - 1):
        if shapes[j][1] != shapes[j + 1][0]:
            raise StructureError(
                f"bond mismatch between sites {j} and {j + 1}: "
                f"{shapes[j][1]} != {shapes[j + 1][0]}"
            )


@dataclass(frozen=True, eq=False)
class StateMpo:
    """Density operator in MPO form with site legs ``(left, ket, bra, right)``."""

    sites: tuple[np.ndarray, ...]

    def __init__(self, sites: Sequence[np.ndarray]):
        frozen = _freeze(sites, 4)
        for s in frozen:
            if s.shape[1:3] != (2, 2):
                raise StructureError(f"state site must have 2x2 physical legs, got {s.shape}")
        _check_bonds([(s.shape[0], s.shape[3]) for s in frozen])
        object.__setattr__(self, "sites", frozen)

    @property
    def n(self) -> int:
        return len(self.sites)

    @property
    def bond_dims(self) -> list[int]:
        return [s.shape[3] for s in self.sites[:-1]]

    @classmethod
    def product(cls, mats: Sequence[np.ndarray]) -> "StateMpo":
        return cls([np.asarray(m, dtype=complex).reshape(1, 2, 2, 1) for m in mats])

    def trace(self) -> complex:
        env = np.ones(1, dtype=complex)
        for s in self.sites:
            env = env @ np.einsum("liir->lr", s)
        return complex(env[0])

    def to_dense(self) -> np.ndarray:
        n = self.n
        t = _contract_chain([s.reshape(s.shape[0], 4, s.shape[3]) for s in self.sites])
        t = t.reshape((2, 2) * n)
        perm = list(range(0, 2 * n, 2)) + list(range(1, 2 * n, 2))
        return t.transpose(perm).reshape(2**n, 2**n)

    def vectorized(self, basis: str = "comp") -> list[np.ndarray]:
        """Site tensors ``(left, 4, right)`` in the requested basis."""
        vs = [s.reshape(s.shape[0], 4, s.shape[3]) for s in self.sites]
        if basis == "pauli":
            vs = [np.einsum("px,lxr->lpr", PAULI_CHANGE, v) for v in vs]
        elif basis != "comp":
            raise StructureError(f"unknown basis {basis!r}")
        return vs

    @classmethod
    def from_vectorized(cls, sites: Sequence[np.ndarray], basis: str = "comp") -> "StateMpo":
        if basis == "pauli":
            inv = PAULI_CHANGE.conj().T
            sites = [np.einsum("xp,lpr->lxr", inv, v) for v in sites]
        elif basis != "comp":
            raise StructureError(f"unknown basis {basis!r}")
        return cls([v.reshape(v.shape[0], 2, 2, v.shape[2]) for v in sites])


@dataclass(frozen=True, eq=False)
class Lpdo:
    """Locally purified channel; site legs ``(b, a, left, right, kraus)``."""

    sites: tuple[np.ndarray, ...]

    def __init__(self, sites: Sequence[np.ndarray]):
        frozen = _freeze(sites, 5)
        for s in frozen:
            if s.shape[:2] != (2, 2):
                raise StructureError(f"LPDO site must have 2x2 physical legs, got {s.shape}")
        _check_bonds([(s.shape[2], s.shape[3]) for s in frozen])
        object.__setattr__(self, "sites", frozen)

    @property
    def n(self) -> int:
        return len(self.sites)

    @property
    def chi_b(self) -> int:
        return max([1] + [s.shape[3] for s in self.sites[:-1]])

    @property
    def chi_kappa(self) -> int:
        return max(s.shape[4] for s in self.sites)

    @classmethod
    def identity(cls, n: int) -> "Lpdo":
        return cls([np.eye(2, dtype=complex).reshape(2, 2, 1, 1, 1)] * n)

    @classmethod
    def from_local_kraus(cls, kraus: Sequence[Sequence[np.ndarray]]) -> "Lpdo":
        """Product channel from per-qubit lists of 2x2 Kraus operators."""
        sites = []
        for ks in kraus:
            a = np.stack([np.asarray(k, dtype=complex) for k in ks], axis=-1)
            sites.append(a.reshape(2, 2, 1, 1, len(ks)))
        return cls(sites)

    def scaled(self, factor: float) -> "Lpdo":
        """Channel multiplied by ``factor`` (spread evenly over the sites)."""
        f = abs(factor) ** (0.5 / self.n)
        return Lpdo([s * f for s in self.sites])


@dataclass(frozen=True, eq=False)
class SuperOpMpo:
    """Superoperator chain with site legs ``(left, out, in, right)``."""

    sites: tuple[np.ndarray, ...]
    basis: str

    def __init__(self, sites: Sequence[np.ndarray], basis: str = "comp"):
        if basis not in ("comp", "pauli"):
            raise StructureError(f"unknown basis {basis!r}")
        frozen = _freeze(sites, 4)
        for s in frozen:
            if s.shape[1:3] != (4, 4):
                raise StructureError(f"superoperator site must have 4x4 physical legs, got {s.shape}")
        _check_bonds([(s.shape[0], s.shape[3]) for s in frozen])
        object.__setattr__(self, "sites", frozen)
        object.__setattr__(self, "basis", basis)

    @property
    def n(self) -> int:
        return len(self.sites)

    @property
    def bond_dims(self) -> list[int]:
        return [s.shape[3] for s in self.sites[:-1]]

    @property
    def max_bond(self) -> int:
        return max([1] + self.bond_dims)

    @classmethod
    def identity(cls, n: int, basis: str = "comp") -> "SuperOpMpo":
        return cls([np.eye(4, dtype=complex).reshape(1, 4, 4, 1)] * n, basis)

    @classmethod
    def product(cls, mats: Sequence[np.ndarray], basis: str = "comp") -> "SuperOpMpo":
        return cls([np.asarray(m, dtype=complex).reshape(1, 4, 4, 1) for m in mats], basis)

    def to_dense(self) -> np.ndarray:
        n = self.n
        t = _contract_chain([s.reshape(s.shape[0], 16, s.shape[3]) for s in self.sites])
        t = t.reshape((4, 4) * n)
        perm = list(range(0, 2 * n, 2)) + list(range(1, 2 * n, 2))
        return t.transpose(perm).reshape(4**n, 4**n)

    def scaled(self, factor: complex) -> "SuperOpMpo":
        sites = list(self.sites)
        sites[0] = sites[0] * factor
        return SuperOpMpo(sites, self.basis)

    def adjoint(self) -> "SuperOpMpo":
        return SuperOpMpo([s.transpose(0, 2, 1, 3).conj() for s in self.sites], self.basis)

    def to_basis(self, basis: str) -> "SuperOpMpo":
        if basis == self.basis:
            return self
        u = PAULI_CHANGE if basis == "pauli" else PAULI_CHANGE.conj().T
        sites = [np.einsum("po,loir,qi->lpqr", u, s, u.conj()) for s in self.sites]
        return SuperOpMpo(sites, basis)

    def norm_sq(self) -> float:
        return float(mpo_inner(self, self).real)


@dataclass(frozen=True, eq=False)
class ProductEffect:
    """Tensor product of single-qubit POVM effects."""

    factors: tuple[np.ndarray, ...]

    def __init__(self, factors: Sequence[np.ndarray]):
        object.__setattr__(self, "factors", tuple(np.asarray(f, dtype=complex) for f in factors))

    @property
    def n(self) -> int:
        return len(self.factors)

    @classmethod
    def from_outcomes(cls, beta: Sequence[int], zeta: Sequence[int]) -> "ProductEffect":
        """Projectors for bases ``beta`` (0=X, 1=Y, 2=Z) and outcomes ``zeta`` in {+1, -1}."""
        from .tomography import effect_vector

        mats = []
        for b, z in zip(beta, zeta):
            e = effect_vector(int(b), int(z))
            mats.append(np.outer(e, e.conj()))
        return cls(mats)


def _contract_chain(sites: Sequence[np.ndarray]) -> np.ndarray:
    """Contract ``(left, p, right)`` sites into a tensor with one leg per site."""
    t = sites[0][0]
    for s in sites[1:]:
        t = np.tensordot(t, s, axes=([t.ndim - 1], [0]))
    return t[..., 0]


def _check_same_n(a, b) -> None:
    if a.n != b.n:
        raise StructureError(f"qubit count mismatch: {a.n} != {b.n}")


def lpdo_apply(channel: Lpdo, state: StateMpo) -> StateMpo:
    """Apply the LPDO channel to a state; output bond is ``state_bond * chi_b**2``."""
    _check_same_n(channel, state)
    out = []
    for a, r in zip(channel.sites, state.sites):
        t = np.einsum("bamxk,lacs,dcnyk->lmnbdsxy", a, r, a.conj())
        sh = t.shape
        out.append(t.reshape(sh[0] * sh[1] * sh[2], 2, 2, sh[5] * sh[6] * sh[7]))
    return StateMpo(out)


def lpdo_trace(channel: Lpdo) -> complex:
    """``Tr[Lambda] = sum_k Tr[K_k K_k^dag]`` by a chain of local transfer matrices."""
    env = np.ones((1, 1), dtype=complex)
    for a in channel.sites:
        t = np.einsum("bamxk,banyk->mnxy", a, a.conj())
        env = np.einsum("mn,mnxy->xy", env, t)
    return complex(env[0, 0])


def apply_superop(op: SuperOpMpo, state: StateMpo) -> StateMpo:
    """Apply a superoperator chain to a state (no truncation)."""
    _check_same_n(op, state)
    vs = state.vectorized(op.basis)
    out = []
    for s, v in zip(op.sites, vs):
        t = np.einsum("LoiR,lir->LloRr", s, v)
        sh = t.shape
        out.append(t.reshape(sh[0] * sh[1], 4, sh[3] * sh[4]))
    return StateMpo.from_vectorized(out, op.basis)


def compose(a: SuperOpMpo, b: SuperOpMpo) -> SuperOpMpo:
    """Return the chain for ``a o b`` (``b`` acts first)."""
    _check_same_n(a, b)
    if a.basis != b.basis:
        raise StructureError(f"basis mismatch: {a.basis} vs {b.basis}")
    out = []
    for sa, sb in zip(a.sites, b.sites):
        t = np.einsum("LokR,lkir->LloiRr", sa, sb)
        sh = t.shape
        out.append(t.reshape(sh[0] * sh[1], 4, 4, sh[4] * sh[5]))
    return SuperOpMpo(out, a.basis)


def _flat(sites) -> list[np.ndarray]:
    return [s.reshape(s.shape[0], -1, s.shape[-1]) for s in sites]


def chain_inner(a_sites: Sequence[np.ndarray], b_sites: Sequence[np.ndarray]) -> complex:
    """``sum conj(a) * b`` over all open legs of two ``(left, p, right)`` chains."""
    env = np.ones((1, 1), dtype=complex)
    for x, y in zip(a_sites, b_sites):
        env = np.einsum("ab,apc,bpd->cd", env, x.conj(), y, optimize=True)
    return complex(env[0, 0])


def mpo_inner(a: SuperOpMpo, b: SuperOpMpo) -> complex:
    """Hilbert-Schmidt inner product ``Tr[a^dag b]`` of two superoperators."""
    _check_same_n(a, b)
    if a.basis != b.basis:
        raise StructureError(f"basis mismatch: {a.basis} vs {b.basis}")
    return chain_inner(_flat(a.sites), _flat(b.sites))


def _direct_difference(a_sites, b_sites) -> list[np.ndarray]:
    """Chain for ``a - b`` built as a block-diagonal direct sum of bonds."""
    n = len(a_sites)
    if n == 1:
        return [a_sites[0] - b_sites[0]]
    out = []
    for j, (x, y) in enumerate(zip(a_sites, b_sites)):
        p = x.shape[1]
        if j == 0:
            out.append(np.concatenate([x, -y], axis=2))
        elif j == n - 1:
            out.append(np.concatenate([x, y], axis=0))
        else:
            t = np.zeros((x.shape[0] + y.shape[0], p, x.shape[2] + y.shape[2]), dtype=complex)
            t[: x.shape[0], :, : x.shape[2]] = x
            t[x.shape[0]:, :, x.shape[2]:] = y
            out.append(t)
    return out


def frobenius_error(a: SuperOpMpo, b: SuperOpMpo) -> float:
    """Normalized squared distance ``||a - b||_F^2 / 4^n``."""
    _check_same_n(a, b)
    if a.basis != b.basis:
        raise StructureError(f"basis mismatch: {a.basis} vs {b.basis}")
    d = _direct_difference(_flat(a.sites), _flat(b.sites))
    return chain_norm_sq(d) / 4.0**a.n


def chain_norm_sq(sites: Sequence[np.ndarray]) -> float:
    """Squared norm of a ``(left, p, right)`` chain via a QR sweep.

    Unlike expanding ``<a, a>`` through environments, the sweep keeps the
    absolute error near machine precision times the norm, so tiny differences of
    large chains come out accurately.
    """
    carry = np.ones((1, 1), dtype=complex)
    for s in sites:
        t = np.tensordot(carry, s, axes=([1], [0]))
        l, p, r = t.shape
        _, carry = np.linalg.qr(t.reshape(l * p, r))
    return float(np.sum(np.abs(carry) ** 2))


def _fix_signs(u: np.ndarray, vh: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    idx = np.argmax(np.abs(u), axis=0)
    piv = u[idx, np.arange(u.shape[1])]
    mag = np.abs(piv)
    phase = np.where(mag > 0, piv / np.where(mag > 0, mag, 1.0), 1.0)
    return u * phase.conj()[None, :], vh * phase[:, None]


def truncate_chain(
    sites: Sequence[np.ndarray], chi_max: int | None = None, cutoff: float = 0.0
) -> tuple[list[np.ndarray], list[float]]:
    """Left-canonicalize then truncate right to left.

    Sites are ``(left, ..., right)`` with any number of physical legs. Returns the
    new sites and, per bond (left to right), the discarded squared singular values.
    """
    if chi_max is not None and chi_max < 1:
        raise ValueError("chi_max must be >= 1")
    if cutoff < 0:
        raise ValueError("cutoff must be >= 0")
    shapes = [s.shape for s in sites]
    work = [np.asarray(s, dtype=complex).reshape(s.shape[0], -1, s.shape[-1]) for s in sites]
    n = len(work)
    for j in range(n - 1):
        l, p, r = work[j].shape
        q, rr = np.linalg.qr(work[j].reshape(l * p, r))
        work[j] = q.reshape(l, p, q.shape[1])
        work[j + 1] = np.tensordot(rr, work[j + 1], axes=([1], [0]))
    discarded = [0.0] * (n - 1)
    for j in range(n - 1, 0, -1):
        l, p, r = work[j].shape
        u, s, vh = np.linalg.svd(work[j].reshape(l, p * r), full_matrices=False)
        u, vh = _fix_signs(u, vh)
        sq = s**2
        tail = np.concatenate([np.cumsum(sq[::-1])[::-1], [0.0]])
        keep = int(np.argmax(tail <= cutoff))
        keep = max(keep, 1)
        if chi_max is not None:
            keep = min(keep, chi_max)
        discarded[j - 1] = float(tail[keep])
        work[j] = vh[:keep].reshape(keep, p, r)
        work[j - 1] = np.tensordot(work[j - 1], u[:, :keep] * s[:keep], axes=([2], [0]))
    out = [
        w.reshape((w.shape[0],) + tuple(sh[1:-1]) + (w.shape[-1],))
        for w, sh in zip(work, shapes)
    ]
    return out, discarded


def svd_truncate(mpo, chi_max: int | None = None, cutoff: float = 0.0):
    """Canonicalize and truncate a ``SuperOpMpo`` or ``StateMpo``."""
    sites, _ = truncate_chain(mpo.sites, chi_max, cutoff)
    if isinstance(mpo, SuperOpMpo):
        return SuperOpMpo(sites, mpo.basis)
    if isinstance(mpo, StateMpo):
        return StateMpo(sites)
    raise TypeError(f"cannot truncate {type(mpo).__name__}")


def compress(mpo, rel_tol: float = 1e-13, chi_max: int | None = None):
    """Exact-up-to-rounding compression: drop singular values below ``rel_tol`` relative."""
    norm_sq = abs(chain_inner(_flat(mpo.sites), _flat(mpo.sites)))
    return svd_truncate(mpo, chi_max, cutoff=rel_tol**2 * norm_sq)


def expectation(state: StateMpo, effect: ProductEffect) -> float:
    """``Tr[rho E]`` for a product effect."""
    _check_same_n(state, effect)
    env = np.ones(1, dtype=complex)
    for s, e in zip(state.sites, effect.factors):
        env = env @ np.einsum("lijr,ji->lr", s, e)
    return float(env[0].real)


# --- serialization -----------------------------------------------------------

def save_model(path, model, extra: dict | None = None) -> None:
    """Write a chain to a self-describing binary container."""
    if isinstance(model, Lpdo):
        kind, basis = "lpdo", None
    elif isinstance(model, SuperOpMpo):
        kind, basis = "superop", model.basis
    elif isinstance(model, StateMpo):
        kind, basis = "state", None
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    header = {
        "version": FORMAT_VERSION,
        "kind": kind,
        "n": model.n,
        "shapes": [list(s.shape) for s in model.sites],
        "basis": basis,
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for s in model.sites:
            fh.write(np.ascontiguousarray(s, dtype="<c16").tobytes(order="C"))


def load_model(path):
    """Read a chain written by :func:`save_model`; returns ``(model, header)``."""
    data = Path(path).read_bytes()
    if not data.startswith(_MAGIC):
        raise StructureError(f"{path}: not a model file")
    buf = io.BytesIO(data[len(_MAGIC):])
    (hlen,) = struct.unpack("<I", buf.read(4))
    header = json.loads(buf.read(hlen).decode("utf-8"))
    if header.get("version") != FORMAT_VERSION:
        raise StructureError(f"{path}: unsupported version {header.get('version')}")
    sites = []
    for shape in header["shapes"]:
        count = int(np.prod(shape))
        raw = buf.read(16 * count)
        if len(raw) != 16 * count:
            raise StructureError(f"{path}: truncated payload")
        sites.append(np.frombuffer(raw, dtype="<c16").reshape(shape).astype(np.complex128))
    if buf.read(1):
        raise StructureError(f"{path}: trailing bytes after payload")
    kind = header["kind"]
    if kind == "lpdo":
        model = Lpdo(sites)
    elif kind == "superop":
        model = SuperOpMpo(sites, header["basis"])
    elif kind == "state":
        model = StateMpo(sites)
    else:
        raise StructureError(f"{path}: unknown kind {kind!r}")
    return model, header
