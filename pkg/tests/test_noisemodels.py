import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tnnoise.conversion import ptm_coefficient
from tnnoise.noisemodels import (
    CoherentDepolSpec,
    DepolBrickworkSpec,
    IdentitySpec,
    SplSpec,
    build_channel,
    build_depol_superop,
    cnot_layer_superop,
    first_neighbor_generators,
    read_noise_spec,
    rotation,
    sample_coherent_spec,
    sample_spl_spec,
    write_noise_spec,
)
from tnnoise.oracle import _pauli_index, dense_channel, dense_cnot_layer, dense_superoperator, pauli_string
from tnnoise.tncore import StateMpo, apply_superop


def choi(spec, n):
    d = 2**n
    chan = dense_channel(spec)
    out = np.zeros((d * d, d * d), dtype=complex)
    for i in range(d):
        for j in range(d):
            e = np.zeros((d, d), dtype=complex)
            e[i, j] = 1.0
            out += np.kron(e, chan(e))
    return out


def specs(n):
    base = DepolBrickworkSpec(n, 1e-2)
    return [base, sample_coherent_spec(base, 0.2, 5), sample_spl_spec(n, 3)]


class TestDepolarizing:
    def test_zero_rate_is_identity(self):
        np.testing.assert_allclose(build_channel(DepolBrickworkSpec(3, 0.0)).to_dense(), np.eye(64), atol=1e-14)

    @pytest.mark.parametrize("label", ["XI", "IZ", "XY", "ZZ", "YX"])
    def test_pair_diagonal(self, label):
        chan = build_channel(DepolBrickworkSpec(2, 1e-3))
        assert ptm_coefficient(chan, label, label) == pytest.approx(0.999, abs=1e-14)

    def test_four_qubits_matches_dense(self):
        spec = DepolBrickworkSpec(4, 1e-3)
        assert np.abs(build_depol_superop(spec).to_dense() - dense_superoperator(spec)).max() < 1e-12

    def test_rejects_bad_rate(self):
        with pytest.raises(ValueError):
            DepolBrickworkSpec(2, 1.5)


class TestSpl:
    def test_zero_rates_identity(self):
        spec = SplSpec(3, (("XII", 0.0), ("IZZ", 0.0)))
        np.testing.assert_allclose(build_channel(spec).to_dense(), np.eye(64), atol=1e-14)

    def test_single_generator(self):
        chan = build_channel(SplSpec(2, (("ZI", 0.01),)))
        assert ptm_coefficient(chan, "XI", "XI") == pytest.approx(math.exp(-0.02), abs=1e-14)
        assert ptm_coefficient(chan, "ZI", "ZI") == pytest.approx(1.0, abs=1e-14)

    def test_ten_random_generators_match_dense(self):
        rng = np.random.default_rng(3)
        gens = first_neighbor_generators(4)
        picks = rng.choice(len(gens), size=10, replace=False)
        spec = SplSpec(4, tuple((gens[i], float(rng.uniform(1e-4, 5e-3))) for i in picks))
        assert np.abs(build_channel(spec).to_dense() - dense_superoperator(spec)).max() < 1e-12

    def test_rejects_nonlocal_generator(self):
        with pytest.raises(ValueError):
            SplSpec(3, (("XIX", 0.01),))

    def test_rejects_negative_rate(self):
        with pytest.raises(ValueError):
            SplSpec(2, (("XI", -0.01),))

    def test_generator_set_size(self):
        # 3 weight-1 terms per qubit plus 9 weight-2 terms per adjacent pair
        assert len(first_neighbor_generators(6)) == 3 * 6 + 9 * 5

    def test_sampler_seeded(self):
        a, b = sample_spl_spec(5, 11), sample_spl_spec(5, 11)
        assert a == b
        rates = np.array([lam for _, lam in a.generators])
        assert rates.min() >= 1e-4 and rates.max() <= 5e-3

    def test_maps_paulis_to_multiples(self):
        spec = sample_spl_spec(3, 1)
        chan = dense_channel(spec)
        for label in map("".join, itertools.product("IXYZ", repeat=3)):
            p = pauli_string(label)
            out = chan(p)
            coef = np.trace(p @ out) / 8
            np.testing.assert_allclose(out, coef * p, atol=1e-12)


class TestCoherent:
    def test_zero_epsilon_rotations_trivial(self):
        spec = sample_coherent_spec(DepolBrickworkSpec(3, 1e-3), 0.0, 5)
        for phi, varphi, _ in spec.angles:
            assert phi == 0.0 and varphi == 0.0
        np.testing.assert_array_equal(build_channel(spec).to_dense(), build_depol_superop(spec.base).to_dense())

    @settings(max_examples=30, deadline=None)
    @given(a=st.floats(-7, 7), b=st.floats(-7, 7), c=st.floats(-7, 7))
    def test_rotation_unitary(self, a, b, c):
        u = rotation(a, b, c)
        assert np.abs(u.conj().T @ u - np.eye(2)).max() < 1e-12

    def test_seed_reproducible(self):
        base = DepolBrickworkSpec(4, 1e-3)
        assert sample_coherent_spec(base, 1e-3, 5).angles == sample_coherent_spec(base, 1e-3, 5).angles

    def test_three_qubits_match_dense(self):
        spec = sample_coherent_spec(DepolBrickworkSpec(3, 1e-3), 0.3, 5)
        assert np.abs(build_channel(spec).to_dense() - dense_superoperator(spec)).max() < 1e-12

    def test_needs_angle_per_qubit(self):
        with pytest.raises(ValueError):
            CoherentDepolSpec(DepolBrickworkSpec(2, 0.0), 0.1, ((0.0, 0.0, 0.0),))


def test_identity_spec():
    np.testing.assert_allclose(build_channel(IdentitySpec(2)).to_dense(), np.eye(16))


@pytest.mark.parametrize("n", [2, 3, 4])
def test_trace_preserving(n):
    for spec in specs(n):
        row = build_channel(spec).to_dense()[0]
        unit = np.zeros(4**n)
        unit[0] = 1.0
        assert np.abs(row - unit).max() < 1e-12


@pytest.mark.parametrize("n", [2, 3])
def test_diagonal_structure(n):
    depol, coherent, spl = specs(n)
    for spec in (depol, spl):
        m = build_channel(spec).to_dense()
        assert np.abs(m - np.diag(np.diag(m))).max() < 1e-12
    m = build_channel(coherent).to_dense()
    assert np.abs(m - np.diag(np.diag(m))).max() > 1e-6


@pytest.mark.parametrize("n", [1, 2, 3])
def test_completely_positive(n):
    for spec in specs(n):
        j = choi(spec, n)
        assert np.linalg.eigvalsh((j + j.conj().T) / 2).min() > -1e-10


class TestCnotLayer:
    def test_truth_table(self):
        ket10 = np.diag([0, 1]).astype(complex), np.diag([1, 0]).astype(complex)
        out = apply_superop(cnot_layer_superop(2, "even"), StateMpo.product(ket10)).to_dense()
        target = np.zeros((4, 4))
        target[3, 3] = 1.0
        np.testing.assert_allclose(out, target, atol=1e-14)

    def test_x_spreads_to_target(self):
        m = cnot_layer_superop(2, "even").to_dense()
        np.testing.assert_allclose(m[:, _pauli_index("XI")], np.eye(16)[_pauli_index("XX")], atol=1e-14)

    @pytest.mark.parametrize("parity", ["even", "odd"])
    def test_four_qubits_match_dense(self, parity):
        u = dense_cnot_layer(4, parity)
        ref = dense_superoperator(cnot_layer_superop(4, parity))
        paulis = [pauli_string("".join(p)) for p in itertools.product("IXYZ", repeat=4)]
        dense = np.array([[np.trace(a @ u @ b @ u.conj().T) / 16 for b in paulis] for a in paulis])
        assert np.abs(ref - dense).max() < 1e-12

    def test_bad_parity(self):
        with pytest.raises(ValueError):
            cnot_layer_superop(3, "both")


@pytest.mark.parametrize("spec", [
    IdentitySpec(3),
    DepolBrickworkSpec(3, 0.002),
    sample_coherent_spec(DepolBrickworkSpec(3, 0.002), 1e-3, 4),
    sample_spl_spec(3, 8),
    SplSpec(2, (("XY", 0.003),)),
])
def test_spec_file_round_trip(tmp_path, spec):
    path = tmp_path / "noise.ini"
    write_noise_spec(path, spec)
    back = read_noise_spec(path)
    np.testing.assert_array_equal(build_channel(back).to_dense(), build_channel(spec).to_dense())


def test_spec_file_unknown_kind(tmp_path):
    path = tmp_path / "noise.ini"
    path.write_text("[noise]\nkind = amplitude\nn = 2\n")
    with pytest.raises(ValueError):
        read_noise_spec(path)
