import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tnnoise import kernels
from tnnoise.kernels import available_backends, chain_contract

needs_cython = pytest.mark.skipif("cython" not in available_backends, reason="extension not built")


def random_chain(rng, n, chi, combos, shots):
    dims = [1] + [chi] * (n - 1) + [1]
    transfers = [rng.standard_normal((combos, dims[j], dims[j + 1]))
                 + 1j * rng.standard_normal((combos, dims[j], dims[j + 1])) for j in range(n)]
    idx = rng.integers(0, combos, size=(shots, n))
    return transfers, idx


def brute_force(transfers, idx):
    out = []
    for row in idx:
        m = np.eye(1)
        for j, c in enumerate(row):
            m = m @ transfers[j][c]
        out.append(m[0, 0].real)
    return np.array(out)


@pytest.mark.parametrize("backend", available_backends)
def test_values_match_brute_force(backend):
    rng = np.random.default_rng(0)
    transfers, idx = random_chain(rng, 5, 3, 6, 40)
    values, envs = chain_contract(transfers, idx, backend=backend)
    assert envs is None
    np.testing.assert_allclose(values, brute_force(transfers, idx), rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("backend", available_backends)
def test_environment_is_gradient(backend):
    # d/dW sum_b w_b log p_b by central differences; positive entries keep p_b > 0
    rng = np.random.default_rng(1)
    dims = [1, 2, 2, 2, 1]
    transfers = [rng.uniform(0.1, 1.0, (3, dims[j], dims[j + 1])) + 0j for j in range(4)]
    idx = rng.integers(0, 3, size=(30, 4))
    weights = rng.uniform(0.5, 1.5, 30)

    def objective(ts):
        return float(np.sum(weights * np.log(brute_force(ts, idx))))

    _, envs = chain_contract(transfers, idx, weights, floor=0.0, backend=backend)
    h = 1e-6
    for site, combo, x, y in [(0, 1, 0, 1), (2, 2, 1, 0), (3, 0, 1, 0)]:
        plus = [t.copy() for t in transfers]
        minus = [t.copy() for t in transfers]
        plus[site][combo, x, y] += h
        minus[site][combo, x, y] -= h
        fd = (objective(plus) - objective(minus)) / (2 * h)
        assert envs[site][combo, x, y].real == pytest.approx(fd, rel=1e-6)


@needs_cython
@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 6), chi=st.integers(1, 5), combos=st.integers(1, 8),
       shots=st.integers(1, 50), seed=st.integers(0, 10**6), floor=st.sampled_from([1e-12, 1e-3, 10.0]))
def test_backends_agree(n, chi, combos, shots, seed, floor):
    rng = np.random.default_rng(seed)
    transfers, idx = random_chain(rng, n, chi, combos, shots)
    weights = rng.uniform(0, 2, shots)
    pc, ec = chain_contract(transfers, idx, weights, floor=floor, backend="cython")
    pn, en = chain_contract(transfers, idx, weights, floor=floor, backend="numpy")
    np.testing.assert_allclose(pc, pn, rtol=1e-12, atol=1e-12)
    for a, b in zip(ec, en):
        np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-10 * max(1.0, np.abs(b).max()))


def test_bad_shapes():
    rng = np.random.default_rng(0)
    transfers, idx = random_chain(rng, 3, 2, 2, 5)
    with pytest.raises(ValueError):
        chain_contract(transfers, idx[:, :2])
    with pytest.raises(ValueError):
        chain_contract(transfers, idx, backend="fortran")


def test_default_backend_is_known():
    assert kernels.BACKEND in available_backends
