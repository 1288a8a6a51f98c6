"""Correlated noise channels on a CNOT layer, as Pauli-basis superoperator chains."""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from .tncore import PAULI, PAULI_CHANGE, SuperOpMpo, compose, compress

__all__ = [
    "IdentitySpec",
    "DepolBrickworkSpec",
    "CoherentDepolSpec",
    "SplSpec",
    "NoiseModelSpec",
    "rotation",
    "sample_coherent_spec",
    "sample_spl_spec",
    "first_neighbor_generators",
    "build_depol_superop",
    "build_spl_superop",
    "build_channel",
    "cnot_layer_superop",
    "two_site_superop",
    "superop_matrix",
    "spec_descriptor",
    "read_noise_spec",
    "write_noise_spec",
]


@dataclass(frozen=True)
class IdentitySpec:
    n: int


@dataclass(frozen=True)
class DepolBrickworkSpec:
    n: int
    p: float

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"depolarizing rate must lie in [0, 1], got {self.p}")
        if self.n < 1:
            raise ValueError("n must be >= 1")


@dataclass(frozen=True)
class CoherentDepolSpec:
    base: DepolBrickworkSpec
    epsilon: float
    angles: tuple[tuple[float, float, float], ...]
    seed: int | None = None

    @property
    def n(self) -> int:
        return self.base.n

    def __post_init__(self):
        if len(self.angles) != self.base.n:
            raise ValueError("need one (phi, varphi, psi) triple per qubit")


@dataclass(frozen=True)
class SplSpec:
    """Sparse Pauli-Lindblad model: generators are full-length Pauli strings."""

    n: int
    generators: tuple[tuple[str, float], ...] = field(default_factory=tuple)

    def __post_init__(self):
        gens = tuple((str(p).upper(), float(lam)) for p, lam in self.generators)
        object.__setattr__(self, "generators", gens)
        for pauli, lam in gens:
            if lam < 0:
                raise ValueError(f"Lindblad rate must be >= 0, got {lam} for {pauli}")
            if len(pauli) != self.n or any(c not in "IXYZ" for c in pauli):
                raise ValueError(f"bad Pauli string {pauli!r} for n={self.n}")
            support = [i for i, c in enumerate(pauli) if c != "I"]
            if len(support) > 2 or (len(support) == 2 and support[1] - support[0] != 1):
                raise ValueError(f"generator {pauli} must act on one or two adjacent qubits")

    def omegas(self) -> np.ndarray:
        return np.array([(1 + math.exp(-2 * lam)) / 2 for _, lam in self.generators])

    def restricted(self, n: int) -> "SplSpec":
        """Keep only generators supported on the first ``n`` qubits."""
        gens = [
            (p[:n], lam) for p, lam in self.generators if set(p[n:]) <= {"I"} and set(p[:n]) != {"I"}
        ]
        return SplSpec(n, tuple(gens))


NoiseModelSpec = Union[IdentitySpec, DepolBrickworkSpec, CoherentDepolSpec, SplSpec]


def rotation(phi: float, varphi: float, psi: float) -> np.ndarray:
    """Single-qubit unitary parameterized by three angles."""
    return np.array(
        [
            [np.exp(1j * varphi) * np.cos(phi), np.exp(1j * psi) * np.sin(phi)],
            [-np.exp(-1j * psi) * np.sin(phi), np.exp(-1j * varphi) * np.cos(phi)],
        ]
    )


def sample_coherent_spec(base: DepolBrickworkSpec, epsilon: float, seed: int) -> CoherentDepolSpec:
    """Draw one small random rotation per qubit (Haar angles shrunk by ``epsilon``)."""
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    rng = np.random.default_rng(seed)
    angles = []
    for _ in range(base.n):
        psi = rng.uniform(0, 2 * np.pi)
        varphi = epsilon * rng.uniform(0, 2 * np.pi)
        zeta = epsilon * rng.uniform(0, 1)
        angles.append((float(np.arcsin(np.sqrt(zeta))), float(varphi), float(psi)))
    return CoherentDepolSpec(base, float(epsilon), tuple(angles), seed)


def first_neighbor_generators(n: int) -> list[str]:
    """All weight-1 Paulis and all weight-2 Paulis on adjacent pairs."""
    gens = []
    for q in range(n):
        for a in "XYZ":
            gens.append("I" * q + a + "I" * (n - q - 1))
    for q in range(n - 1):
        for a in "XYZ":
            for b in "XYZ":
                gens.append("I" * q + a + b + "I" * (n - q - 2))
    return gens


def sample_spl_spec(
    n: int, seed: int, low: float = 1e-4, high: float = 5e-3
) -> SplSpec:
    """Seeded SPL model with log-uniform rates over the first-neighbour generator set."""
    rng = np.random.default_rng(seed)
    gens = first_neighbor_generators(n)
    lams = np.exp(rng.uniform(np.log(low), np.log(high), size=len(gens)))
    return SplSpec(n, tuple(zip(gens, (float(x) for x in lams))))


# --- local superoperators ------------------------------------------------------

def superop_matrix(kraus, basis: str = "pauli") -> np.ndarray:
    """Local superoperator of ``rho -> sum K rho K^dag`` with interleaved vectorization."""
    kraus = [np.asarray(k, dtype=complex) for k in kraus]
    d = kraus[0].shape[0]
    m = int(round(math.log2(d)))
    s = sum(np.kron(k, k.conj()) for k in kraus)
    # kron(K, K*) indexes (k1..km, b1..bm); regroup into per-qubit (k_j, b_j) pairs
    t = s.reshape((2,) * (4 * m))
    perm_out = [x for j in range(m) for x in (j, m + j)]
    perm = perm_out + [2 * m + p for p in perm_out]
    s = t.transpose(perm).reshape(4**m, 4**m)
    if basis == "pauli":
        u = PAULI_CHANGE
        for _ in range(m - 1):
            u = np.kron(u, PAULI_CHANGE)
        s = u @ s @ u.conj().T
    return s


def _split_two_site(mat: np.ndarray, tol: float = 1e-14) -> tuple[np.ndarray, np.ndarray]:
    t = mat.reshape(4, 4, 4, 4).transpose(0, 2, 1, 3).reshape(16, 16)
    u, s, vh = np.linalg.svd(t)
    keep = max(1, int(np.sum(s > tol * s[0])))
    left = (u[:, :keep] * s[:keep]).reshape(1, 4, 4, keep)
    right = vh[:keep].reshape(keep, 4, 4, 1)
    return left, right


def _layer(n: int, ops: dict[int, np.ndarray], basis: str) -> SuperOpMpo:
    """Chain for disjoint two-site operators keyed by their first qubit."""
    sites = [np.eye(4, dtype=complex).reshape(1, 4, 4, 1) for _ in range(n)]
    for q, mat in ops.items():
        sites[q], sites[q + 1] = _split_two_site(mat)
    return SuperOpMpo(sites, basis)


def two_site_superop(n: int, q: int, mat: np.ndarray, basis: str = "pauli") -> SuperOpMpo:
    return _layer(n, {q: mat}, basis)


def _depol_pair_matrix(p: float) -> np.ndarray:
    d = np.full(16, 1.0 - p)
    d[0] = 1.0
    return np.diag(d).astype(complex)


_CNOT = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)


def cnot_layer_superop(n: int, parity: str = "even", basis: str = "pauli") -> SuperOpMpo:
    """Unitary superoperator of CNOTs on pairs (0,1),(2,3),... or (1,2),(3,4),...

    The control is the lower-index qubit of each pair.
    """
    if parity not in ("even", "odd"):
        raise ValueError("parity must be 'even' or 'odd'")
    start = 0 if parity == "even" else 1
    mat = superop_matrix([_CNOT], basis)
    return _layer(n, {q: mat for q in range(start, n - 1, 2)}, basis)


def build_depol_superop(spec: DepolBrickworkSpec) -> SuperOpMpo:
    """Even layer of rate-p pair depolarizers followed by an odd layer at rate p/2."""
    n, p = spec.n, spec.p
    even = _layer(n, {q: _depol_pair_matrix(p) for q in range(0, n - 1, 2)}, "pauli")
    odd = _layer(n, {q: _depol_pair_matrix(p / 2) for q in range(1, n - 1, 2)}, "pauli")
    return compress(compose(odd, even))


def _pauli_sign_diag(letter: str) -> np.ndarray:
    """+1 where a basis Pauli commutes with ``letter``, -1 where it anticommutes."""
    if letter == "I":
        return np.ones(4)
    return np.array([1.0 if q in ("I", letter) else -1.0 for q in "IXYZ"])


def build_spl_superop(spec: SplSpec) -> SuperOpMpo:
    """Product of ``omega * id + (1 - omega) P . P`` factors, compressed after each one."""
    n = spec.n
    out = SuperOpMpo.identity(n, "pauli")
    for (pauli, lam), omega in zip(spec.generators, spec.omegas()):
        if lam == 0:
            continue
        # omega * id + (1 - omega) * (sign pattern of P), a bond-2 chain
        terms = [(np.eye(4), np.diag(_pauli_sign_diag(c)).astype(float)) for c in pauli]
        if n == 1:
            ident, sign = terms[0]
            sites = [(omega * ident + (1 - omega) * sign).reshape(1, 4, 4, 1)]
        else:
            sites = []
            for j, (ident, sign) in enumerate(terms):
                if j == 0:
                    t = np.stack([omega * ident, (1 - omega) * sign], axis=-1)[None]
                elif j == n - 1:
                    t = np.stack([ident, sign], axis=0)[..., None]
                else:
                    t = np.zeros((2, 4, 4, 2))
                    t[0, :, :, 0] = ident
                    t[1, :, :, 1] = sign
                sites.append(t)
        factor = SuperOpMpo(sites, "pauli")
        out = compress(compose(factor, out))
    return out


def _rotation_layer(spec: CoherentDepolSpec) -> SuperOpMpo:
    mats = [superop_matrix([rotation(*a)], "pauli") for a in spec.angles]
    return SuperOpMpo.product(mats, "pauli")


def build_channel(spec: NoiseModelSpec) -> SuperOpMpo:
    """Pauli-basis superoperator chain for any supported noise spec."""
    if isinstance(spec, IdentitySpec):
        return SuperOpMpo.identity(spec.n, "pauli")
    if isinstance(spec, DepolBrickworkSpec):
        return build_depol_superop(spec)
    if isinstance(spec, CoherentDepolSpec):
        if spec.epsilon == 0:
            return build_depol_superop(spec.base)
        return compress(compose(build_depol_superop(spec.base), _rotation_layer(spec)))
    if isinstance(spec, SplSpec):
        return build_spl_superop(spec)
    raise TypeError(f"unsupported noise spec {type(spec).__name__}")


# --- noise-spec files ------------------------------------------------------------

def spec_descriptor(spec: NoiseModelSpec) -> str:
    """Short one-line description used in dataset headers and manifests."""
    if isinstance(spec, IdentitySpec):
        return f"identity:n={spec.n}"
    if isinstance(spec, DepolBrickworkSpec):
        return f"depol:n={spec.n}:p={spec.p!r}"
    if isinstance(spec, CoherentDepolSpec):
        return f"coherent:n={spec.n}:p={spec.base.p!r}:epsilon={spec.epsilon!r}:seed={spec.seed}"
    if isinstance(spec, SplSpec):
        return f"spl:n={spec.n}:generators={len(spec.generators)}"
    raise TypeError(type(spec).__name__)


def read_noise_spec(path) -> NoiseModelSpec:
    """Parse a sectioned key-value noise description.

    ``[noise]`` holds ``kind`` (identity, depol, coherent, spl) and ``n`` plus
    ``p``; ``epsilon`` and ``seed`` for coherent noise; for SPL either ``seed``
    (rates drawn by :func:`sample_spl_spec`) or a ``[generators]`` section
    mapping full Pauli strings to rates.
    """
    cp = configparser.ConfigParser()
    cp.optionxform = str
    read = cp.read(path)
    if not read:
        raise FileNotFoundError(path)
    if "noise" not in cp:
        raise ValueError(f"{path}: missing [noise] section")
    sec = cp["noise"]
    kind = sec.get("kind", "").strip().lower()
    n = sec.getint("n")
    if n is None:
        raise ValueError(f"{path}: missing n")
    if kind == "identity":
        return IdentitySpec(n)
    if kind == "depol":
        return DepolBrickworkSpec(n, sec.getfloat("p"))
    if kind == "coherent":
        base = DepolBrickworkSpec(n, sec.getfloat("p"))
        return sample_coherent_spec(base, sec.getfloat("epsilon", 1e-3), sec.getint("seed"))
    if kind == "spl":
        if "generators" in cp:
            gens = tuple((k.strip().upper(), float(v)) for k, v in cp["generators"].items())
            return SplSpec(n, gens)
        return sample_spl_spec(
            n, sec.getint("seed"), sec.getfloat("low", 1e-4), sec.getfloat("high", 5e-3)
        )
    raise ValueError(f"{path}: unknown noise kind {kind!r}")


def write_noise_spec(path, spec: NoiseModelSpec) -> None:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    if isinstance(spec, IdentitySpec):
        cp["noise"] = {"kind": "identity", "n": str(spec.n)}
    elif isinstance(spec, DepolBrickworkSpec):
        cp["noise"] = {"kind": "depol", "n": str(spec.n), "p": repr(spec.p)}
    elif isinstance(spec, CoherentDepolSpec):
        if spec.seed is None:
            raise ValueError("coherent specs are stored by seed; this one has none")
        cp["noise"] = {
            "kind": "coherent", "n": str(spec.n), "p": repr(spec.base.p),
            "epsilon": repr(spec.epsilon), "seed": str(spec.seed),
        }
    elif isinstance(spec, SplSpec):
        cp["noise"] = {"kind": "spl", "n": str(spec.n)}
        cp["generators"] = {p: repr(lam) for p, lam in spec.generators}
    else:
        raise TypeError(type(spec).__name__)
    with open(Path(path), "w") as fh:
        cp.write(fh)
