import numpy as np
import pytest

from tnnoise.noisemodels import DepolBrickworkSpec, IdentitySpec
from tnnoise.oracle import (
    OracleSizeError,
    cross_validate,
    dense_born_distribution,
    dense_channel,
    dense_cnot_layer,
    dense_frobenius_error,
    dense_inverse,
    dense_superoperator,
    pauli_string,
)


@pytest.mark.parametrize("check", cross_validate((2, 3, 4), seed=0), ids=lambda c: f"{c[0]}-n{c[1]}")
def test_cross_validation(check):
    name, n, dev = check
    assert dev <= 1e-10, f"{name} at n={n} deviates by {dev:.3e}"


def test_cross_validation_covers_paths():
    names = {c[0] for c in cross_validate((2,), seed=3)}
    assert {"lpdo_apply", "lpdo_to_superop", "ptm", "frobenius", "born:spl", "superop:coherent"} <= names


class TestSizeCap:
    def test_default_cap(self):
        with pytest.raises(OracleSizeError):
            dense_channel(DepolBrickworkSpec(6, 1e-3))

    def test_allow_large(self):
        chan = dense_channel(IdentitySpec(6), allow_large=True)
        rho = np.eye(64) / 64
        np.testing.assert_allclose(chan(rho), rho)

    def test_hard_limit(self):
        with pytest.raises(OracleSizeError):
            dense_superoperator(IdentitySpec(7), allow_large=True)


class TestDenseInverse:
    def test_singular(self):
        with pytest.raises(np.linalg.LinAlgError):
            dense_inverse(np.diag([1.0, 0.0]))

    def test_ill_conditioned(self):
        with pytest.raises(np.linalg.LinAlgError):
            dense_inverse(np.diag([1.0, 1e-14]))

    def test_regular(self):
        m = np.array([[2.0, 1.0], [0.0, 1.0]])
        np.testing.assert_allclose(dense_inverse(m) @ m, np.eye(2), atol=1e-15)


def test_pauli_basis_depolarizer():
    # single two-qubit gate, so every non-identity string decays by 1 - p
    dense = dense_superoperator(DepolBrickworkSpec(2, 1e-3))
    np.testing.assert_allclose(dense, np.diag([1.0] + [0.999] * 15), atol=1e-14)


def test_cnot_layer_odd_parity():
    u = dense_cnot_layer(3, "odd")
    # control 1, target 2: |010> -> |011>
    assert u[0b011, 0b010] == 1
    np.testing.assert_allclose(u @ pauli_string("IZI") @ u.conj().T, pauli_string("IZI"))


def test_born_distribution_normalized():
    probs = dense_born_distribution(DepolBrickworkSpec(3, 0.05), [0, 1, 2], [2, 0, 1])
    assert probs.sum() == pytest.approx(1.0, abs=1e-14)
    assert (probs >= 0).all()


def test_frobenius_normalization():
    assert dense_frobenius_error(np.eye(16), np.zeros((16, 16))) == pytest.approx(1.0)
