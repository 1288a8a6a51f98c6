import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tnnoise.inversion import invert_sweep
from tnnoise.noisemodels import DepolBrickworkSpec, SplSpec, build_channel, sample_spl_spec, superop_matrix
from tnnoise.oracle import dense_channel, dense_superoperator, pauli_string
from tnnoise.tem import (
    CLIFFORD_WORDS,
    CliffordCircuit,
    PauliObservable,
    UnsupportedNoiseError,
    build_circuit,
    clifford_unitary,
    depth_sweep,
    heisenberg_factors,
    layer_superop,
    mitigated_expectation,
    noisy_expectation,
    stabilizer_observable,
)
from tnnoise.tncore import SuperOpMpo

ZERO = np.array([[1, 0], [0, 0]], dtype=complex)


def zero_state(n):
    rho = np.zeros((2**n, 2**n), dtype=complex)
    rho[0, 0] = 1.0
    return rho


def pauli_superop(u):
    n = int(round(math.log2(u.shape[0])))
    labels = ["".join(p) for p in itertools.product("IXYZ", repeat=n)]
    ps = [pauli_string(lab) for lab in labels]
    return np.array([[np.trace(a @ u @ b @ u.conj().T) / 2**n for b in ps] for a in ps])


class TestCliffords:
    def test_group_size_and_distinct(self):
        assert len(CLIFFORD_WORDS) == 24
        assert CLIFFORD_WORDS[0] == ""
        mats = [clifford_unitary(i) for i in range(24)]
        for a, b in itertools.combinations(mats, 2):
            # distinct up to a global phase
            assert abs(abs(np.trace(a.conj().T @ b)) - 2) > 1e-6

    @pytest.mark.parametrize("cid", range(24))
    def test_maps_paulis_to_paulis(self, cid):
        u = clifford_unitary(cid)
        for p in "XYZ":
            img = u @ pauli_string(p) @ u.conj().T
            coefs = [np.trace(pauli_string(q) @ img) / 2 for q in "XYZ"]
            assert sorted(np.round(np.abs(coefs), 12)) == [0.0, 0.0, 1.0]

    def test_circuit_validation(self):
        with pytest.raises(ValueError):
            CliffordCircuit(2, ((0, 24),))
        with pytest.raises(ValueError):
            build_circuit(1, 3, 0)


class TestStabilizer:
    def test_empty_circuit(self):
        assert stabilizer_observable(build_circuit(4, 0, 0)) == PauliObservable(1, "ZZZZ")

    def test_cnot_step_dense_conjugation(self):
        circ = CliffordCircuit(2, ((0, 0),))
        obs = stabilizer_observable(circ)
        u = circ.unitary()
        np.testing.assert_allclose(obs.dense(), u @ pauli_string("ZZ") @ u.conj().T, atol=1e-14)
        assert obs == PauliObservable(1, "IZ")

    @settings(max_examples=25, deadline=None)
    @given(n=st.integers(2, 5), m=st.integers(0, 6), seed=st.integers(0, 10**6))
    def test_ideal_expectation_is_one(self, n, m, seed):
        circ = build_circuit(n, m, seed)
        u = circ.unitary()
        psi = u[:, 0]
        assert np.vdot(psi, stabilizer_observable(circ).dense() @ psi).real == pytest.approx(1.0, abs=1e-12)


class TestNoisyExpectation:
    def test_no_noise(self):
        circ = build_circuit(4, 6, 1)
        spec = SplSpec(4, (("ZIII", 0.0),))
        assert noisy_expectation(circ, spec) == 1.0

    def test_single_generator_count(self):
        # an even step cannot turn ZZ into XX, so look at the factor of the
        # second (CNOT-free for n=2) step; ZI anticommutes with XX once
        spec = SplSpec(2, (("ZI", 0.01),))
        for a, b, c, d in itertools.product(range(24), repeat=4):
            circ = CliffordCircuit(2, ((a, b), (c, d)))
            if stabilizer_observable(circ).letters == "XX":
                break
        else:  # pragma: no cover
            pytest.fail("no step produces XX")
        assert heisenberg_factors(circ, spec)[-1] == pytest.approx(math.exp(-0.02), abs=1e-15)

    def test_matches_dense_simulation(self):
        n, m = 4, 5
        spec = sample_spl_spec(n, 3)
        circ = build_circuit(n, m, 3)
        chan = dense_channel(spec)
        rho = zero_state(n)
        for k, (cl, parity) in enumerate(circ.steps):
            step = CliffordCircuit(n, (cl,)).unitary() if parity == "even" else None
            if step is None:
                from tnnoise.tem import _dense_step

                step = _dense_step(n, cl, parity)
            rho = chan(step @ rho @ step.conj().T)
        ref = np.trace(stabilizer_observable(circ).dense() @ rho).real
        assert abs(noisy_expectation(circ, spec) - ref) < 1e-10

    def test_monotone_in_depth(self):
        spec = sample_spl_spec(5, 2)
        circ = build_circuit(5, 15, 4)
        vals = [noisy_expectation(circ.prefix(m), spec) for m in range(16)]
        assert all(b < a for a, b in zip(vals, vals[1:]))

    def test_factors_length(self):
        circ = build_circuit(3, 7, 0)
        assert len(heisenberg_factors(circ, sample_spl_spec(3, 0))) == 7

    def test_rejects_non_pauli_noise(self):
        with pytest.raises(UnsupportedNoiseError):
            noisy_expectation(build_circuit(3, 2, 0), DepolBrickworkSpec(3, 0.01))


class TestChainPath:
    @pytest.mark.parametrize("parity", ["even", "odd"])
    def test_layer_matches_dense(self, parity):
        from tnnoise.tem import _dense_step

        cl = (5, 17, 2)
        u = _dense_step(3, cl, parity)
        np.testing.assert_allclose(layer_superop(3, cl, parity).to_dense(), pauli_superop(u), atol=1e-12)
        np.testing.assert_allclose(layer_superop(3, cl, parity, inverse=True).to_dense(),
                                   pauli_superop(u.conj().T), atol=1e-12)

    @pytest.mark.parametrize("n", [2, 3])
    def test_composition_identity(self, n):
        # C_ideal o C_TEM o C_noisy = C_ideal densely, with exact inverses
        spec = sample_spl_spec(n, 7, low=1e-2, high=5e-2)
        noise = dense_superoperator(spec)
        noise_inv = np.linalg.inv(noise)
        circ = build_circuit(n, 3, 9)
        noisy = np.eye(4**n)
        tem = np.eye(4**n)
        for cl, parity in circ.steps:
            fwd = layer_superop(n, cl, parity).to_dense()
            noisy = noise @ fwd @ noisy
            tem = tem @ layer_superop(n, cl, parity, inverse=True).to_dense() @ noise_inv
        ideal = pauli_superop(circ.unitary())
        assert np.abs(ideal @ tem @ noisy - ideal).max() < 1e-8

    def test_heisenberg_equals_chain(self):
        spec = sample_spl_spec(6, 5)
        circ = build_circuit(6, 8, 5)
        chain = mitigated_expectation(circ, None, spec, chi_state=256)
        assert chain == pytest.approx(noisy_expectation(circ, spec), abs=1e-8)

    def test_noiseless_identity_inverse(self):
        circ = build_circuit(4, 6, 2)
        ident = SuperOpMpo.identity(4, "pauli")
        assert mitigated_expectation(circ, ident, SplSpec(4, ())) == pytest.approx(1.0, abs=1e-12)

    def test_exact_inverse_recovers_one(self):
        spec = sample_spl_spec(4, 1)
        inv = invert_sweep(build_channel(spec), chi=4, sweeps=4)
        circ = build_circuit(4, 6, 1)
        assert noisy_expectation(circ, spec) < 0.99
        assert mitigated_expectation(circ, inv, spec) == pytest.approx(1.0, abs=1e-6)

    def test_depth_sweep_columns(self):
        spec = sample_spl_spec(4, 2)
        circ = build_circuit(4, 5, 2)
        inv = invert_sweep(build_channel(spec), chi=4, sweeps=3)
        rows = depth_sweep(circ, spec, {"mitigated_true": inv})
        assert [r["depth"] for r in rows] == [1, 2, 3, 4, 5]
        for r in rows:
            assert r["unmitigated"] == pytest.approx(noisy_expectation(circ.prefix(r["depth"]), spec), abs=1e-10)
            assert r["mitigated_true"] == pytest.approx(1.0, abs=1e-6)

    def test_chain_noise_accepted(self):
        spec = sample_spl_spec(3, 4)
        circ = build_circuit(3, 4, 4)
        a = mitigated_expectation(circ, None, spec)
        b = mitigated_expectation(circ, None, build_channel(spec).to_basis("comp"))
        assert a == pytest.approx(b, abs=1e-12)

    def test_bad_bond(self):
        with pytest.raises(ValueError):
            mitigated_expectation(build_circuit(2, 1, 0), None, SplSpec(2, ()), chi_tem=0)


def test_superop_matrix_consistent():
    u = clifford_unitary(7)
    np.testing.assert_allclose(superop_matrix([u], "pauli"), pauli_superop(u), atol=1e-12)
