import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tnnoise.kernels import available_backends
from tnnoise.noisemodels import DepolBrickworkSpec, IdentitySpec, build_channel, cnot_layer_superop, superop_matrix
from tnnoise.oracle import dense_born_distribution, lpdo_kraus
from tnnoise.tncore import Lpdo, SuperOpMpo, lpdo_trace
from tnnoise.tomography import Setting, TomographicDataset, generate_settings, sample_shots, sic_state
from tnnoise.training import (
    TomographicLoss,
    TrainConfig,
    init_lpdo,
    init_sigma_sq,
    loss_gradient,
    nll_loss,
    pre_optimize_tp,
    reconstruction_error,
    total_loss,
    tp_penalty,
    tp_penalty_and_grad,
    train,
    trace_ratio,
    write_metrics,
)


def depol_data(n, n_set, n_shots, p=1e-2, seed=0, layer="even"):
    spec = DepolBrickworkSpec(n, p)
    lay = cnot_layer_superop(n, layer) if layer != "none" else None
    ds = sample_shots(build_channel(spec), generate_settings(n, n_set, seed), n_shots, seed,
                      layer=lay, metadata={"layer": layer})
    return ds


def zero_layer(n):
    """Pauli-basis layer rotating SIC state 0 to |0> on each qubit."""
    _, v = np.linalg.eigh(sic_state(0))
    u = np.stack([v[:, 1].conj(), v[:, 0].conj()])
    return SuperOpMpo.product([superop_matrix([u], "pauli")] * n, "pauli")


def full_depolarizer(n):
    paulis = [np.eye(2), np.array([[0, 1], [1, 0]]), np.array([[0, -1j], [1j, 0]]), np.diag([1, -1])]
    return Lpdo.from_local_kraus([[p / 2 for p in paulis]] * n)


def real_loss(sites, ds, shots, eta):
    return total_loss(Lpdo(sites), ds, shots, eta)


def finite_difference(sites, ds, shots, eta, h=1e-5):
    out = []
    for j, a in enumerate(sites):
        g = np.zeros(a.shape, dtype=complex)
        for idx in np.ndindex(a.shape):
            parts = []
            for step in (h, 1j * h):
                plus = [s.copy() for s in sites]
                minus = [s.copy() for s in sites]
                plus[j][idx] += step
                minus[j][idx] -= step
                parts.append((real_loss(plus, ds, shots, eta) - real_loss(minus, ds, shots, eta)) / (2 * h))
            # dL/dconj(z) = (dL/dx + i dL/dy) / 2
            g[idx] = 0.5 * (parts[0] + 1j * parts[1])
        out.append(g)
    return out


def max_rel_err(analytic, numeric):
    a = np.concatenate([x.ravel() for x in analytic])
    f = np.concatenate([x.ravel() for x in numeric])
    # entries far below the gradient scale are compared against that scale
    denom = np.maximum(np.abs(f), 1e-3 * np.abs(f).max())
    return float(np.max(np.abs(a - f) / denom))


class TestInit:
    @pytest.mark.parametrize("chi_k", [1, 2, 7])
    def test_single_qubit_variance(self, chi_k):
        s2 = init_sigma_sq(1, 1, chi_k)
        assert s2 == pytest.approx(1 / (4 * chi_k))
        assert 8 * s2 * chi_k == pytest.approx(2.0)

    def test_ten_qubit_variance(self):
        assert init_sigma_sq(10, 16, 2) == pytest.approx(2 / (16 * 16**0.9), rel=1e-12)
        assert init_sigma_sq(10, 16, 2) == pytest.approx(1.031e-2, abs=1e-5)

    def test_expected_trace(self):
        # E[Tr] = (8 sigma^2 chi_k)^n chi_b^(n-1) = 2^n
        for n, cb, ck in [(3, 2, 2), (5, 4, 3)]:
            s2 = init_sigma_sq(n, cb, ck)
            assert (8 * s2 * ck) ** n * cb ** (n - 1) == pytest.approx(2.0**n)

    def test_deterministic(self):
        a, b = init_lpdo(4, 2, 3, 9), init_lpdo(4, 2, 3, 9)
        for x, y in zip(a.sites, b.sites):
            np.testing.assert_array_equal(x, y)

    def test_rejects_zero_dims(self):
        with pytest.raises(ValueError):
            init_lpdo(3, 0, 2, 0)


class TestNll:
    def test_certain_prediction_gives_zero(self):
        n = 3
        ds = TomographicDataset(n, [[0] * n], [[2] * n], np.zeros(5, int), np.ones((5, n), int))
        assert nll_loss(Lpdo.identity(n), ds, layer=zero_layer(n)) == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.parametrize("n", [1, 3])
    def test_uniform_prediction(self, n):
        ds = depol_data(n, 5, 4, layer="none")
        assert nll_loss(full_depolarizer(n), ds) == pytest.approx(n * math.log(2), abs=1e-12)

    def test_identity_channel_matches_enumeration(self):
        n = 2
        ds = sample_shots(build_channel(IdentitySpec(n)), generate_settings(n, 20, 4), 10, 4,
                          layer=None, metadata={"layer": "none"})
        logs = []
        for s, z in zip(ds.shot_setting, ds.zeta):
            probs = dense_born_distribution(IdentitySpec(n), ds.alpha[s], ds.beta[s], parity=None)
            code = int(((1 - z) // 2) @ (2 ** np.arange(n)[::-1]))
            logs.append(math.log(probs[code]))
        assert nll_loss(Lpdo.identity(n), ds) == pytest.approx(-np.mean(logs), abs=1e-12)

    @pytest.mark.skipif("cython" not in available_backends, reason="extension not built")
    def test_backends_agree(self):
        ds = depol_data(4, 30, 20)
        lp = init_lpdo(4, 2, 3, 1)
        shots = np.arange(0, 600, 3)
        res = {}
        for b in ("numpy", "cython"):
            loss, grads = TomographicLoss(ds, backend=b).nll_and_grad(list(lp.sites), shots)
            res[b] = (loss, grads)
        assert res["numpy"][0] == pytest.approx(res["cython"][0], rel=1e-13)
        for g1, g2 in zip(res["numpy"][1], res["cython"][1]):
            np.testing.assert_allclose(g1, g2, rtol=1e-10, atol=1e-14)


class TestTpPenalty:
    def test_identity_zero(self):
        assert tp_penalty(Lpdo.identity(4)) == pytest.approx(0.0, abs=1e-14)

    @pytest.mark.parametrize("c", [0.5, 0.97, 1.3])
    def test_scaled_identity(self, c):
        assert tp_penalty(Lpdo.identity(3).scaled(c)) == pytest.approx(abs(c - 1), abs=1e-13)

    def test_matches_dense(self):
        lp = init_lpdo(3, 2, 2, 5)
        m = sum(k.conj().T @ k for k in lpdo_kraus(lp))
        ref = np.linalg.norm(m - np.eye(8)) / 2**1.5
        assert tp_penalty(lp) == pytest.approx(ref, abs=1e-10)

    def test_gradient_vanishes_at_tp_model(self):
        _, grads = tp_penalty_and_grad(Lpdo.identity(3))
        assert max(np.abs(g).max() for g in grads) == 0.0

    @settings(max_examples=25, deadline=None)
    @given(n=st.integers(1, 4), cb=st.integers(1, 3), ck=st.integers(1, 3), seed=st.integers(0, 10**6))
    def test_trace_bounded_by_penalty(self, n, cb, ck, seed):
        lp = init_lpdo(n, cb, ck, seed)
        assert abs(lpdo_trace(lp).real / 2**n - 1) <= tp_penalty(lp) + 1e-12
        assert trace_ratio(lp) == pytest.approx(lpdo_trace(lp).real / 2**n, rel=1e-12)


class TestTotalLoss:
    def test_equals_nll_when_tp(self):
        ds = depol_data(2, 5, 5)
        lp = Lpdo.identity(2)
        assert total_loss(lp, ds) == pytest.approx(nll_loss(lp, ds), abs=1e-15)

    def test_zero_for_certain_tp_model(self):
        n = 2
        ds = TomographicDataset(n, [[0] * n], [[2] * n], np.zeros(3, int), np.ones((3, n), int))
        assert total_loss(Lpdo.identity(n), ds, layer=zero_layer(n)) == pytest.approx(0.0, abs=1e-12)

    def test_sum_of_terms(self):
        ds = depol_data(2, 8, 4)
        lp = init_lpdo(2, 2, 2, 3)
        assert total_loss(lp, ds, eta_tp=1.2) == pytest.approx(nll_loss(lp, ds) + 1.2 * tp_penalty(lp), rel=1e-14)


class TestGradient:
    def test_matches_finite_differences(self):
        ds = depol_data(2, 8, 2, seed=13)
        lp = init_lpdo(2, 2, 2, 13)
        shots = np.random.default_rng(13).choice(ds.n_records, 16, replace=False)
        sites = list(lp.sites)
        analytic = loss_gradient(lp, ds, shots, 1.2)
        assert max_rel_err(analytic, finite_difference(sites, ds, shots, 1.2)) < 1e-6

    @pytest.mark.parametrize("seed", range(3))
    def test_random_three_qubit(self, seed):
        ds = depol_data(3, 4, 2, p=0.05, seed=seed, layer="odd")
        lp = init_lpdo(3, 2, 1, 100 + seed)
        shots = np.arange(ds.n_records)
        analytic = loss_gradient(lp, ds, shots, 0.7)
        assert max_rel_err(analytic, finite_difference(list(lp.sites), ds, shots, 0.7)) < 1e-6

    def test_duplicated_batch(self):
        ds = depol_data(3, 6, 3)
        lp = init_lpdo(3, 2, 2, 1)
        one = loss_gradient(lp, ds, np.array([4]))
        many = loss_gradient(lp, ds, np.array([4] * 7))
        for a, b in zip(one, many):
            np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)


class TestPreOptimize:
    def test_tp_input_unchanged(self):
        lp = Lpdo.identity(3)
        out, iters = pre_optimize_tp(lp)
        assert iters == 0 and out is lp

    def test_reaches_tolerance(self):
        out, iters = pre_optimize_tp(init_lpdo(4, 2, 2, 21))
        assert tp_penalty(out) < 1e-2
        assert iters > 0

    def test_deterministic(self):
        a, _ = pre_optimize_tp(init_lpdo(3, 2, 2, 4))
        b, _ = pre_optimize_tp(init_lpdo(3, 2, 2, 4))
        for x, y in zip(a.sites, b.sites):
            np.testing.assert_array_equal(x, y)


class TestTrain:
    def test_identity_channel(self):
        # N = 1e4 sits at the statistical floor of Delta ~ 1e-3, so the bound is
        # checked on the median over seeds rather than on every single run
        n = 2
        ident = build_channel(IdentitySpec(n))
        deltas = []
        for seed in range(5):
            ds = sample_shots(ident, generate_settings(n, 1000, seed), 10, seed,
                              layer=cnot_layer_superop(n, "even"), metadata={"layer": "even"})
            lp, rep = train(ds, TrainConfig(chi_b=1, chi_kappa=2, seed=seed), true_channel=ident)
            assert rep.best.test_loss == min(r.test_loss for r in rep.records)
            assert rep.best.delta == pytest.approx(reconstruction_error(lp, ident))
            deltas.append(rep.best.delta)
        assert np.median(deltas) < 1e-3

    def test_trained_model_normalized(self, tmp_path):
        ds = depol_data(3, 200, 20, p=1e-2, seed=5)
        cfg = TrainConfig(chi_b=2, chi_kappa=4, epochs=15, seed=5)
        lp, rep = train(ds, cfg, checkpoint_dir=tmp_path)
        d = tp_penalty(lp)
        assert d < 0.05
        assert abs(trace_ratio(lp) - 1) <= d + 1e-12
        # test loss improves from the first epoch to the best one
        assert rep.best.test_loss <= rep.records[1].test_loss
        assert (tmp_path / "best.tnm").exists()

    def test_deterministic_and_metrics(self, tmp_path):
        ds = depol_data(2, 50, 10, seed=2)
        cfg = TrainConfig(chi_b=2, chi_kappa=2, epochs=3, seed=4)
        a, rep = train(ds, cfg)
        b, _ = train(ds, cfg)
        for x, y in zip(a.sites, b.sites):
            np.testing.assert_array_equal(x, y)
        path = tmp_path / "m.csv"
        write_metrics(path, rep)
        rows = list(csv.DictReader(path.open()))
        assert [int(r["epoch"]) for r in rows] == [0, 1, 2, 3]

    def test_early_stopping(self):
        ds = depol_data(2, 20, 5, seed=1)
        cfg = TrainConfig(chi_b=1, chi_kappa=1, epochs=200, patience=2, seed=0, lr0=0.5)
        _, rep = train(ds, cfg)
        assert len(rep.records) - 1 < 200
        assert rep.records[-1].epoch - rep.best_epoch == 2

    def test_too_small_dataset(self):
        ds = TomographicDataset(1, [[0]], [[0]], np.zeros(1, int), np.ones((1, 1), int))
        with pytest.raises(ValueError):
            train(ds, TrainConfig())


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lr0=-1.0)
