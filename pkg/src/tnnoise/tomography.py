"""Randomized tomographic experiments on a noisy unitary layer."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .tncore import (
    PAULI,
    PAULI_CHANGE,
    ProductEffect,
    StateMpo,
    SuperOpMpo,
    apply_superop,
    expectation,
)

__all__ = [
    "SIC_BLOCH",
    "BASES",
    "sic_state",
    "effect_vector",
    "Setting",
    "TomographicDataset",
    "generate_settings",
    "tomographic_state",
    "born_probability",
    "sample_shots",
    "write_dataset",
    "read_dataset",
    "DatasetParseError",
    "SamplingError",
]

SIC_BLOCH = np.array(
    [[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float
) / np.sqrt(3)
BASES = "XYZ"
DATASET_VERSION = 1


class DatasetParseError(ValueError):
    pass


class SamplingError(RuntimeError):
    pass


def sic_state(alpha: int) -> np.ndarray:
    """Pure single-qubit state with Bloch vector ``SIC_BLOCH[alpha]``."""
    a = SIC_BLOCH[alpha]
    return 0.5 * (PAULI["I"] + a[0] * PAULI["X"] + a[1] * PAULI["Y"] + a[2] * PAULI["Z"])


_EFFECTS = {
    (0, 1): np.array([1, 1]) / np.sqrt(2),
    (0, -1): np.array([1, -1]) / np.sqrt(2),
    (1, 1): np.array([1, 1j]) / np.sqrt(2),
    (1, -1): np.array([1, -1j]) / np.sqrt(2),
    (2, 1): np.array([1, 0]),
    (2, -1): np.array([0, 1]),
}
# effect id = 2 * basis + (0 for +1, 1 for -1)
EFFECT_VECTORS = np.array(
    [_EFFECTS[(b, z)] for b in range(3) for z in (1, -1)], dtype=complex
)


def effect_vector(beta: int, zeta: int) -> np.ndarray:
    """Eigenvector of Pauli ``beta`` (0=X, 1=Y, 2=Z) with eigenvalue ``zeta``."""
    if zeta not in (1, -1):
        raise ValueError(f"outcome must be +1 or -1, got {zeta}")
    return _EFFECTS[(beta, zeta)].astype(complex)


@dataclass(frozen=True)
class Setting:
    alpha: tuple[int, ...]
    beta: tuple[int, ...]

    def __post_init__(self):
        if len(self.alpha) != len(self.beta):
            raise ValueError("alpha and beta must have equal length")


@dataclass
class TomographicDataset:
    """Settings plus one outcome row per shot.

    ``alpha``/``beta`` are ``(n_set, n)`` integer arrays; ``shot_setting`` maps
    each shot to its setting and ``zeta`` holds outcomes as +1/-1 int8.
    """

    n: int
    alpha: np.ndarray
    beta: np.ndarray
    shot_setting: np.ndarray
    zeta: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=np.int8).reshape(-1, self.n)
        self.beta = np.asarray(self.beta, dtype=np.int8).reshape(-1, self.n)
        self.shot_setting = np.asarray(self.shot_setting, dtype=np.int64).reshape(-1)
        self.zeta = np.asarray(self.zeta, dtype=np.int8).reshape(-1, self.n)
        if len(self.alpha) != len(self.beta):
            raise ValueError("alpha and beta must list the same settings")
        if len(self.shot_setting) != len(self.zeta):
            raise ValueError("one setting index per outcome row required")
        if len(self.shot_setting) and (
            self.shot_setting.min() < 0 or self.shot_setting.max() >= len(self.alpha)
        ):
            raise ValueError("shot refers to an unknown setting")

    @property
    def n_set(self) -> int:
        return len(self.alpha)

    @property
    def n_records(self) -> int:
        return len(self.shot_setting)

    def settings(self) -> list[Setting]:
        return [Setting(tuple(map(int, a)), tuple(map(int, b))) for a, b in zip(self.alpha, self.beta)]

    def subset(self, shots: np.ndarray) -> "TomographicDataset":
        return TomographicDataset(
            self.n, self.alpha, self.beta, self.shot_setting[shots], self.zeta[shots], dict(self.metadata)
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, TomographicDataset):
            return NotImplemented
        return (
            self.n == other.n
            and np.array_equal(self.alpha, other.alpha)
            and np.array_equal(self.beta, other.beta)
            and np.array_equal(self.shot_setting, other.shot_setting)
            and np.array_equal(self.zeta, other.zeta)
            and self.metadata == other.metadata
        )


def generate_settings(n: int, n_set: int, seed: int) -> list[Setting]:
    """I.i.d. uniform SIC indices and measurement bases per qubit."""
    if n_set < 1:
        raise ValueError("n_set must be >= 1")
    rng = np.random.default_rng(seed)
    alpha = rng.integers(0, 4, size=(n_set, n))
    beta = rng.integers(0, 3, size=(n_set, n))
    return [Setting(tuple(map(int, a)), tuple(map(int, b))) for a, b in zip(alpha, beta)]


def tomographic_state(alpha: Sequence[int], layer: SuperOpMpo | None = None) -> StateMpo:
    """Product of SIC states evolved through the ideal layer."""
    rho = StateMpo.product([sic_state(a) for a in alpha])
    if layer is None:
        return rho
    return apply_superop(layer, rho)


def born_probability(
    noise: SuperOpMpo, state: StateMpo, setting: Setting, zeta: Sequence[int]
) -> float:
    """``Tr[N[rho] * prod_j Pi_{zeta_j}(beta_j)]``."""
    out = apply_superop(noise, state)
    return expectation(out, ProductEffect.from_outcomes(setting.beta, zeta))


def _effect_site_vectors(basis: str) -> np.ndarray:
    """Per effect id, the length-4 vector ``f`` with ``Tr[sigma Pi] = f . vec(sigma)``."""
    out = []
    for e in EFFECT_VECTORS:
        pi = np.outer(e, e.conj())
        f = pi.T.reshape(4)
        if basis == "pauli":
            f = PAULI_CHANGE.conj() @ f
        out.append(f)
    return np.array(out)


def _noisy_vectors(noise: SuperOpMpo, alpha, layer: SuperOpMpo | None) -> list[np.ndarray]:
    rho = tomographic_state(alpha, layer)
    vs = rho.vectorized(noise.basis)
    out = []
    for s, v in zip(noise.sites, vs):
        t = np.einsum("LoiR,lir->LloRr", s, v)
        sh = t.shape
        out.append(t.reshape(sh[0] * sh[1], 4, sh[3] * sh[4]))
    return out


def _sample_setting(vecs, beta, n_shots, rng, fvec) -> np.ndarray:
    """Sequential conditional sampling of all shots of one setting."""
    n = len(vecs)
    # right environments with later qubits marginalized (effects of a basis sum to I)
    ident = fvec[0] + fvec[1]
    right = [None] * (n + 1)
    right[n] = np.ones(1, dtype=complex)
    for j in range(n - 1, -1, -1):
        right[j] = np.einsum("lpr,p,r->l", vecs[j], ident, right[j + 1])
    left = np.ones((n_shots, 1), dtype=complex)
    outcomes = np.empty((n_shots, n), dtype=np.int8)
    for j in range(n):
        b = int(beta[j])
        mats = [np.einsum("lpr,p->lr", vecs[j], fvec[2 * b + k]) for k in (0, 1)]
        cand = [left @ m for m in mats]
        probs = np.stack([(c @ right[j + 1]).real for c in cand], axis=1)
        if probs.min() < -1e-9 * max(1.0, np.abs(probs).max()):
            raise SamplingError(f"negative conditional probability {probs.min():.3e} at qubit {j}")
        probs = np.clip(probs, 0.0, None)
        tot = probs.sum(axis=1)
        u = rng.random(n_shots)
        minus = u * tot >= probs[:, 0]
        outcomes[:, j] = np.where(minus, -1, 1)
        left = np.where(minus[:, None], cand[1], cand[0])
        # rescale to keep conditionals well conditioned
        scale = np.where(tot > 0, np.where(minus, probs[:, 1], probs[:, 0]), 1.0)
        scale = np.where(scale > 0, scale, 1.0)
        left = left / scale[:, None]
    return outcomes


def sample_shots(
    noise: SuperOpMpo,
    settings: Sequence[Setting],
    n_shots: int,
    seed: int,
    layer: SuperOpMpo | None = None,
    metadata: dict | None = None,
) -> TomographicDataset:
    """Draw ``n_shots`` outcomes per setting from the exact Born distribution.

    Each setting uses its own RNG stream derived from ``(seed, setting_index)``.
    """
    if n_shots < 1:
        raise ValueError("n_shots must be >= 1")
    if not settings:
        raise ValueError("need at least one setting")
    n = noise.n
    fvec = _effect_site_vectors(noise.basis)
    zetas = []
    for idx, s in enumerate(settings):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(idx,)))
        vecs = _noisy_vectors(noise, s.alpha, layer)
        zetas.append(_sample_setting(vecs, s.beta, n_shots, rng, fvec))
    alpha = np.array([s.alpha for s in settings])
    beta = np.array([s.beta for s in settings])
    meta = {"n_shots": n_shots, "seed": seed}
    meta.update(metadata or {})
    return TomographicDataset(
        n,
        alpha,
        beta,
        np.repeat(np.arange(len(settings)), n_shots),
        np.concatenate(zetas, axis=0),
        meta,
    )


# --- dataset files -----------------------------------------------------------------
#
# Line 1:   "#tnnoise-dataset <version>" followed by "key=value" tokens
#           (n, n_set, n_records and any metadata; values without spaces).
# Then n_set lines "S <index> <alpha digits> <beta letters>", e.g. "S 0 0312 XZZY".
# Then one line per shot "<setting_index> <zeta_1> ... <zeta_n>" with zeta in {1, -1}.

def _meta_token(k: str, v) -> str:
    text = str(v)
    if any(c.isspace() for c in text) or "=" in k:
        raise ValueError(f"metadata {k}={text!r} must not contain whitespace")
    return f"{k}={text}"


def write_dataset(path, ds: TomographicDataset) -> None:
    meta = {k: v for k, v in ds.metadata.items() if k not in ("n", "n_set", "n_records")}
    head = [f"#tnnoise-dataset {DATASET_VERSION}", f"n={ds.n}", f"n_set={ds.n_set}",
            f"n_records={ds.n_records}"]
    head += [_meta_token(k, meta[k]) for k in sorted(meta)]
    lines = [" ".join(head)]
    for i, (a, b) in enumerate(zip(ds.alpha, ds.beta)):
        lines.append(f"S {i} {''.join(str(int(x)) for x in a)} {''.join(BASES[int(x)] for x in b)}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
        if ds.n_records:
            rows = np.column_stack([ds.shot_setting, ds.zeta.astype(np.int64)])
            np.savetxt(fh, rows, fmt="%d", delimiter=" ")


def _parse_value(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def read_dataset(path) -> TomographicDataset:
    """Parse a dataset file; malformed content raises ``DatasetParseError`` with a line number."""
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("#tnnoise-dataset"):
        raise DatasetParseError(f"{path}:1: missing dataset header")
    tokens = lines[0].split()
    if len(tokens) < 2 or tokens[1] != str(DATASET_VERSION):
        raise DatasetParseError(f"{path}:1: unsupported dataset version")
    meta = {}
    for tok in tokens[2:]:
        if "=" not in tok:
            raise DatasetParseError(f"{path}:1: bad header token {tok!r}")
        k, v = tok.split("=", 1)
        meta[k] = _parse_value(v)
    try:
        n, n_set, n_rec = int(meta.pop("n")), int(meta.pop("n_set")), int(meta.pop("n_records"))
    except KeyError as exc:
        raise DatasetParseError(f"{path}:1: header lacks {exc.args[0]}") from None
    if len(lines) != 1 + n_set + n_rec:
        raise DatasetParseError(
            f"{path}:{len(lines)}: expected {1 + n_set + n_rec} lines, found {len(lines)}"
        )
    alpha = np.zeros((n_set, n), dtype=np.int8)
    beta = np.zeros((n_set, n), dtype=np.int8)
    for i in range(n_set):
        lineno = 2 + i
        parts = lines[1 + i].split()
        if (
            len(parts) != 4 or parts[0] != "S" or parts[1] != str(i)
            or len(parts[2]) != n or len(parts[3]) != n
            or any(c not in "0123" for c in parts[2]) or any(c not in BASES for c in parts[3])
        ):
            raise DatasetParseError(f"{path}:{lineno}: malformed setting line")
        alpha[i] = [int(c) for c in parts[2]]
        beta[i] = [BASES.index(c) for c in parts[3]]
    rows = np.zeros((n_rec, n + 1), dtype=np.int64)
    base = 1 + n_set
    for r in range(n_rec):
        parts = lines[base + r].split()
        lineno = base + r + 1
        try:
            vals = [int(x) for x in parts]
        except ValueError:
            raise DatasetParseError(f"{path}:{lineno}: non-integer field") from None
        if len(vals) != n + 1:
            raise DatasetParseError(f"{path}:{lineno}: expected {n + 1} fields, got {len(vals)}")
        if not 0 <= vals[0] < n_set:
            raise DatasetParseError(f"{path}:{lineno}: setting index {vals[0]} out of range")
        if any(z not in (1, -1) for z in vals[1:]):
            raise DatasetParseError(f"{path}:{lineno}: outcomes must be +1 or -1")
        rows[r] = vals
    return TomographicDataset(n, alpha, beta, rows[:, 0], rows[:, 1:], meta)
