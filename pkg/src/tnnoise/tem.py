"""Noisy layered Clifford circuits and tensor-network error mitigation.

A circuit step is a layer of single-qubit Cliffords followed by a layer of
CNOTs on alternating (even, odd, even, ...) links. After every step the same
noise channel acts. The measured observable is the image of ``Z^n`` under the
ideal circuit, so its ideal expectation on ``|0...0>`` is exactly one.

The mitigation map inverts every noise layer and undoes every ideal layer; it
is applied to the vectorized noisy state one layer at a time, which keeps all
chains at the bond dimension of a state rather than that of the full map.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .noisemodels import SplSpec, build_channel, cnot_layer_superop, superop_matrix
from .tncore import (
    PAULI,
    PAULI_CHANGE,
    PAULI_LETTERS,
    StructureError,
    SuperOpMpo,
    truncate_chain,
)

__all__ = [
    "CLIFFORD_WORDS",
    "clifford_unitary",
    "CliffordCircuit",
    "PauliObservable",
    "build_circuit",
    "stabilizer_observable",
    "noisy_expectation",
    "heisenberg_factors",
    "layer_superop",
    "noisy_state",
    "mitigated_expectation",
    "depth_sweep",
    "UnsupportedNoiseError",
]

_H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
_S = np.array([[1, 0], [0, 1j]], dtype=complex)
_CNOT = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)


class UnsupportedNoiseError(TypeError):
    pass


def _phase_key(u: np.ndarray) -> tuple:
    flat = u.reshape(-1)
    k = int(np.argmax(np.abs(flat) > 1e-9))
    v = flat / (flat[k] / abs(flat[k]))
    return tuple(np.round(v, 8).view(float))


def _enumerate_cliffords() -> tuple[list[str], list[np.ndarray]]:
    """Shortest H/S words for the 24 single-qubit Cliffords (breadth-first, H before S).

    A word is read left to right in application order: ``"HS"`` applies H first.
    """
    words, mats, seen = [], [], set()
    queue = deque([("", np.eye(2, dtype=complex))])
    while queue:
        w, u = queue.popleft()
        key = _phase_key(u)
        if key in seen:
            continue
        seen.add(key)
        words.append(w)
        mats.append(u)
        queue.append((w + "H", _H @ u))
        queue.append((w + "S", _S @ u))
    return words, mats


CLIFFORD_WORDS, _CLIFFORD_MATS = _enumerate_cliffords()
assert len(CLIFFORD_WORDS) == 24


def clifford_unitary(cid: int) -> np.ndarray:
    return _CLIFFORD_MATS[cid].copy()


# conjugation tables: C P C^dag = sign * P'
def _pauli_image(u: np.ndarray, labels: Sequence[str]) -> dict[str, tuple[int, str]]:
    k = len(labels[0])
    table = {}
    ops = {lab: _kron_labels(lab) for lab in labels}
    for lab in labels:
        img = u @ ops[lab] @ u.conj().T
        for cand in labels:
            c = np.trace(ops[cand] @ img) / 2**k
            if abs(abs(c) - 1) < 1e-9:
                table[lab] = (int(round(c.real)), cand)
                break
        else:  # pragma: no cover - Clifford images are always Paulis
            raise RuntimeError("not a Clifford")
    return table


def _kron_labels(label: str) -> np.ndarray:
    out = np.eye(1, dtype=complex)
    for c in label:
        out = np.kron(out, PAULI[c])
    return out


_ONE = list(PAULI_LETTERS)
_TWO = [a + b for a in PAULI_LETTERS for b in PAULI_LETTERS]
_CLIFF_CONJ = [_pauli_image(u, _ONE) for u in _CLIFFORD_MATS]
_CLIFF_CONJ_INV = [_pauli_image(u.conj().T, _ONE) for u in _CLIFFORD_MATS]
_CNOT_CONJ = _pauli_image(_CNOT, _TWO)


def _parity(step: int) -> str:
    return "even" if step % 2 == 0 else "odd"


@dataclass(frozen=True)
class CliffordCircuit:
    """Layered circuit; step ``k`` applies ``cliffords[k]`` then CNOTs of parity ``k mod 2``."""

    n: int
    cliffords: tuple[tuple[int, ...], ...]
    seed: int | None = None

    def __post_init__(self):
        for layer in self.cliffords:
            if len(layer) != self.n or any(not 0 <= c < 24 for c in layer):
                raise ValueError("each step needs one Clifford id in [0, 24) per qubit")

    @property
    def depth(self) -> int:
        return len(self.cliffords)

    @property
    def steps(self) -> list[tuple[tuple[int, ...], str]]:
        return [(c, _parity(k)) for k, c in enumerate(self.cliffords)]

    def prefix(self, m: int) -> "CliffordCircuit":
        return CliffordCircuit(self.n, self.cliffords[:m], self.seed)

    def unitary(self) -> np.ndarray:
        """Dense circuit unitary (small ``n`` only)."""
        u = np.eye(2**self.n, dtype=complex)
        for cl, parity in self.steps:
            u = _dense_step(self.n, cl, parity) @ u
        return u


def _dense_step(n: int, cliffords, parity: str) -> np.ndarray:
    single = np.eye(1, dtype=complex)
    for c in cliffords:
        single = np.kron(single, _CLIFFORD_MATS[c])
    cx = np.eye(2**n, dtype=complex)
    for q in range(0 if parity == "even" else 1, n - 1, 2):
        cx = np.kron(np.kron(np.eye(2**q), _CNOT), np.eye(2 ** (n - q - 2))) @ cx
    return cx @ single


@dataclass(frozen=True)
class PauliObservable:
    phase: int
    letters: str

    def __post_init__(self):
        if self.phase not in (1, -1):
            raise ValueError("phase must be +1 or -1")
        if any(c not in PAULI_LETTERS for c in self.letters):
            raise ValueError(f"bad Pauli letters {self.letters!r}")

    @property
    def n(self) -> int:
        return len(self.letters)

    def dense(self) -> np.ndarray:
        return self.phase * _kron_labels(self.letters)

    def __str__(self) -> str:
        return ("+" if self.phase > 0 else "-") + self.letters


def build_circuit(n: int, m_steps: int, seed: int) -> CliffordCircuit:
    """Uniformly random single-qubit Cliffords for ``m_steps`` steps."""
    if n < 2:
        raise ValueError("need at least two qubits")
    if m_steps < 0:
        raise ValueError("m_steps must be >= 0")
    rng = np.random.default_rng(seed)
    ids = rng.integers(0, 24, size=(m_steps, n))
    return CliffordCircuit(n, tuple(tuple(int(x) for x in row) for row in ids), seed)


def _conj_step(obs: PauliObservable, cliffords, parity: str, inverse: bool) -> PauliObservable:
    phase = obs.phase
    letters = list(obs.letters)
    n = len(letters)
    pairs = range(0 if parity == "even" else 1, n - 1, 2)

    def single():
        nonlocal phase
        tabs = _CLIFF_CONJ_INV if inverse else _CLIFF_CONJ
        for q, c in enumerate(cliffords):
            s, p = tabs[c][letters[q]]
            phase *= s
            letters[q] = p

    def cnots():
        nonlocal phase
        # CNOT is self-inverse, so the same table serves both directions
        for q in pairs:
            s, p = _CNOT_CONJ[letters[q] + letters[q + 1]]
            phase *= s
            letters[q], letters[q + 1] = p[0], p[1]

    if inverse:
        cnots()
        single()
    else:
        single()
        cnots()
    return PauliObservable(phase, "".join(letters))


def stabilizer_observable(circuit: CliffordCircuit) -> PauliObservable:
    """``U Z^n U^dag`` for the circuit unitary ``U``."""
    obs = PauliObservable(1, "Z" * circuit.n)
    for cl, parity in circuit.steps:
        obs = _conj_step(obs, cl, parity, inverse=False)
    return obs


def _anticommutes(a: str, b: str) -> bool:
    return sum(1 for x, y in zip(a, b) if x != "I" and y != "I" and x != y) % 2 == 1


def _spl_factor(letters: str, spec: SplSpec) -> float:
    rate = sum(lam for p, lam in spec.generators if _anticommutes(letters, p))
    return float(np.exp(-2.0 * rate))


def heisenberg_factors(circuit: CliffordCircuit, noise: SplSpec) -> list[float]:
    """Damping factor contributed by the noise after each step."""
    if not isinstance(noise, SplSpec):
        raise UnsupportedNoiseError("Heisenberg propagation needs a Pauli-diagonal (SPL) noise spec")
    if noise.n != circuit.n:
        raise StructureError("noise and circuit qubit counts differ")
    obs = PauliObservable(1, "Z" * circuit.n)
    out = []
    for cl, parity in circuit.steps:
        obs = _conj_step(obs, cl, parity, inverse=False)
        out.append(_spl_factor(obs.letters, noise))
    return out


def noisy_expectation(circuit: CliffordCircuit, noise: SplSpec) -> float:
    """Exact noisy expectation of the stabilizer observable under SPL noise."""
    return float(np.prod(heisenberg_factors(circuit, noise)))


# --- chain path -------------------------------------------------------------------------

def layer_superop(n: int, cliffords, parity: str, inverse: bool = False) -> SuperOpMpo:
    """Pauli-basis chain of one ideal step (or its inverse)."""
    single = SuperOpMpo.product([superop_matrix([_CLIFFORD_MATS[c]]) for c in cliffords], "pauli")
    cx = cnot_layer_superop(n, parity, "pauli")
    if inverse:
        single, cx = single.adjoint(), cx.adjoint()
        first, second = cx, single
    else:
        first, second = single, cx
    # second o first as a direct site-wise product
    sites = []
    for a, b in zip(second.sites, first.sites):
        t = np.einsum("LokR,lkir->LloiRr", a, b)
        sh = t.shape
        sites.append(t.reshape(sh[0] * sh[1], 4, 4, sh[4] * sh[5]))
    return SuperOpMpo(sites, "pauli")


def _zero_state_vec(n: int) -> list[np.ndarray]:
    rho = np.array([[1, 0], [0, 0]], dtype=complex)
    v = PAULI_CHANGE @ rho.reshape(4)
    return [v.reshape(1, 4, 1).copy() for _ in range(n)]


def _apply(op: SuperOpMpo, vec: list[np.ndarray], chi: int) -> list[np.ndarray]:
    out = []
    for s, v in zip(op.sites, vec):
        t = np.einsum("LoiR,lir->LloRr", s, v)
        sh = t.shape
        out.append(t.reshape(sh[0] * sh[1], 4, sh[3] * sh[4]))
    # the cutoff only removes numerically zero singular values
    out, _ = truncate_chain(out, chi_max=chi, cutoff=1e-26)
    return out


def _as_superop(noise, n: int) -> SuperOpMpo:
    if isinstance(noise, SuperOpMpo):
        if noise.n != n:
            raise StructureError("noise and circuit qubit counts differ")
        return noise.to_basis("pauli")
    return build_channel(noise)


def noisy_state(circuit: CliffordCircuit, noise, chi_state: int = 64) -> list[np.ndarray]:
    """Pauli-basis vectorized state after the noisy circuit, as ``(left, 4, right)`` sites."""
    n = circuit.n
    chan = _as_superop(noise, n)
    vec = _zero_state_vec(n)
    for cl, parity in circuit.steps:
        vec = _apply(layer_superop(n, cl, parity), vec, chi_state)
        vec = _apply(chan, vec, chi_state)
    return vec


def _pauli_overlap(vec: list[np.ndarray], obs: PauliObservable) -> float:
    # <<P|sigma>> = Tr[P sigma] = sqrt(2)^n * (Pauli component)
    env = np.ones(1, dtype=complex)
    for v, c in zip(vec, obs.letters):
        env = env @ (np.sqrt(2) * v[:, PAULI_LETTERS.index(c), :])
    return float(obs.phase * env[0].real)


def mitigated_expectation(
    circuit: CliffordCircuit,
    noise_inverse: SuperOpMpo | None,
    noise_true,
    chi_tem: int = 200,
    chi_state: int = 64,
) -> float:
    """Mitigated expectation of the stabilizer observable by exact contraction.

    Args:
        circuit: ideal circuit.
        noise_inverse: Pauli-basis chain approximating the inverse noise
            channel, or ``None`` to apply no noise inversion.
        noise_true: noise acting after every step (spec or chain).
        chi_tem: bond cap while the mitigation layers are applied.
        chi_state: bond cap while the noisy state is evolved.
    """
    if chi_tem < 1 or chi_state < 1:
        raise ValueError("bond dimensions must be >= 1")
    vec = noisy_state(circuit, noise_true, chi_state)
    return _mitigate(circuit, vec, noise_inverse, chi_tem)


def _mitigate(circuit, vec, noise_inverse, chi_tem) -> float:
    n = circuit.n
    if noise_inverse is not None:
        if noise_inverse.basis != "pauli":
            raise StructureError("noise_inverse must be a Pauli-basis chain")
        if noise_inverse.n != n:
            raise StructureError("noise and circuit qubit counts differ")
    # <<O| C_ideal = <<Z^n|, so only the inverse noise and inverse ideal layers remain
    for cl, parity in reversed(circuit.steps):
        if noise_inverse is not None:
            vec = _apply(noise_inverse, vec, chi_tem)
        vec = _apply(layer_superop(n, cl, parity, inverse=True), vec, chi_tem)
    return _pauli_overlap(vec, PauliObservable(1, "Z" * n))


def depth_sweep(
    circuit: CliffordCircuit,
    noise_true,
    inverses: dict[str, SuperOpMpo | None] | None = None,
    chi_tem: int = 200,
    chi_state: int = 64,
) -> list[dict]:
    """Unmitigated and mitigated values for every prefix depth ``1..M``.

    ``inverses`` maps a column name (e.g. ``"mitigated_true"``) to an inverse
    chain. The unmitigated column is the plain noisy expectation.
    """
    n = circuit.n
    chan = _as_superop(noise_true, n)
    vec = _zero_state_vec(n)
    obs = PauliObservable(1, "Z" * n)
    rows = []
    for m, (cl, parity) in enumerate(circuit.steps, start=1):
        vec = _apply(layer_superop(n, cl, parity), vec, chi_state)
        vec = _apply(chan, vec, chi_state)
        obs = _conj_step(obs, cl, parity, inverse=False)
        row = {"depth": m, "unmitigated": _pauli_overlap(vec, obs)}
        for name, inv in (inverses or {}).items():
            row[name] = _mitigate(circuit.prefix(m), vec, inv, chi_tem)
        rows.append(row)
    return rows
