"""Learning an LPDO channel from tomographic shot data.

The loss is the mean negative log-likelihood of the observed outcomes plus a
soft trace-preservation penalty. Every probability is a chain of per-site
transfer matrices

    W[(mu, lam, nu), (mu', lam', nu')] = sum_{a, c, k} B[a, mu, mu', k] rho[lam, a, c, lam'] conj(B[c, nu, nu', k])

with ``B = sum_b conj(e_b) A[b, ...]`` for the measured effect vector ``e``. The
number of distinct ``(state site, effect)`` pairs per site is small, so transfer
matrices are built once per step for all pairs and the per-shot work reduces to
chain products handled by :mod:`tnnoise.kernels`.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from .conversion import lpdo_to_superop, to_pauli_basis
from .kernels import chain_contract
from .noisemodels import cnot_layer_superop
from .tncore import Lpdo, SuperOpMpo, frobenius_error, save_model
from .tomography import EFFECT_VECTORS, TomographicDataset, tomographic_state

__all__ = [
    "TrainConfig",
    "TrainReport",
    "TrainingError",
    "TomographicLoss",
    "init_sigma_sq",
    "init_lpdo",
    "nll_loss",
    "tp_penalty",
    "tp_penalty_and_grad",
    "total_loss",
    "loss_gradient",
    "pre_optimize_tp",
    "train",
    "reconstruction_error",
    "write_metrics",
    "default_batch_size",
    "default_test_size",
    "dataset_layer",
]

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12
N_EFFECTS = len(EFFECT_VECTORS)


class TrainingError(RuntimeError):
    pass


# --- configuration ----------------------------------------------------------------

def default_test_size(n_records: int) -> int:
    return min(n_records // 10, 12500)


def default_batch_size(n_records: int) -> int:
    return 50 if n_records <= 1000 else 250


@dataclass
class TrainConfig:
    """Hyperparameters of one training run.

    ``batch_size`` and ``test_size`` of ``None`` select the defaults from the
    dataset size (see :func:`default_batch_size` and :func:`default_test_size`).
    """

    chi_b: int = 2
    chi_kappa: int = 16
    eta_tp: float = 1.2
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    lr0: float = 1e-2
    gamma: float = 0.9
    warmup_steps: int = 500
    batch_size: int | None = None
    test_size: int | None = None
    epochs: int = 200
    patience: int = 25
    seed: int = 0
    pre_optimize: bool = True
    pre_optimize_tol: float = 1e-2
    pre_optimize_iters: int = 500
    floor: float = PROB_FLOOR
    backend: str | None = None

    def __post_init__(self):
        for name in ("chi_b", "chi_kappa", "epochs", "patience"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.eta_tp < 0 or self.lr0 <= 0 or not 0 < self.gamma <= 1:
            raise ValueError("eta_tp >= 0, lr0 > 0 and 0 < gamma <= 1 required")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class EpochRecord:
    epoch: int
    step: int
    train_loss: float
    test_loss: float
    tp_penalty: float
    trace_ratio: float
    delta: float | None = None


@dataclass
class TrainReport:
    """Per-epoch metrics; epoch 0 is the state before the first update."""

    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    pre_optimize_iters: int = 0

    @property
    def best(self) -> EpochRecord:
        return next(r for r in self.records if r.epoch == self.best_epoch)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)


def write_metrics(path, report: TrainReport) -> None:
    cols = ["epoch", "step", "train_loss", "test_loss", "tp_penalty", "trace_ratio", "delta"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in report.records:
            row = [getattr(r, c) for c in cols]
            w.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v) for v in row])


# --- initialization ------------------------------------------------------------------

def init_sigma_sq(n: int, chi_b: int, chi_kappa: int) -> float:
    """Entry variance giving ``E[Tr Lambda] = 2^n`` for Gaussian site tensors."""
    return 2.0 / (8.0 * chi_kappa * chi_b ** (1.0 - 1.0 / n))


def _bond_dims(n: int, chi_b: int) -> list[int]:
    return [1] + [chi_b] * (n - 1) + [1]


def init_lpdo(n: int, chi_b: int, chi_kappa: int, seed: int) -> Lpdo:
    """Random LPDO with i.i.d. complex Gaussian entries of normalized variance."""
    if min(n, chi_b, chi_kappa) < 1:
        raise ValueError("n, chi_b and chi_kappa must be >= 1")
    rng = np.random.default_rng(seed)
    sigma = math.sqrt(init_sigma_sq(n, chi_b, chi_kappa))
    dims = _bond_dims(n, chi_b)
    sites = []
    for j in range(n):
        shape = (2, 2, dims[j], dims[j + 1], chi_kappa)
        sites.append(sigma * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)))
    return Lpdo(sites)


# --- data likelihood -------------------------------------------------------------

def dataset_layer(ds: TomographicDataset) -> SuperOpMpo | None:
    """Ideal layer recorded in the dataset metadata (``layer=even|odd|none``)."""
    kind = str(ds.metadata.get("layer", "none"))
    if kind == "none":
        return None
    if kind in ("even", "odd"):
        return cnot_layer_superop(ds.n, kind)
    raise TrainingError(f"unknown layer {kind!r} in dataset metadata")


def _resolve_layer(ds, layer):
    if isinstance(layer, str):
        if layer != "auto":
            raise ValueError(f"layer must be 'auto', None or a SuperOpMpo, got {layer!r}")
        return dataset_layer(ds)
    return layer


def _site_transfers(b: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """``w[u,e,m,l,n,x,r,y] = sum_ac b[e,a,m,x,k] rho[u,l,a,c,r] conj(b[e,c,n,y,k])``."""
    e, _, m, x, k = b.shape
    u, l, _, _, r = rho.shape
    bf = b.reshape(e, 2 * m * x, k)
    t = np.matmul(bf, bf.conj().transpose(0, 2, 1))  # (e, amx, cny)
    t = t.reshape(e, 2, m, x, 2, m, x).transpose(0, 2, 3, 5, 6, 1, 4).reshape(-1, 4)
    w = t @ rho.transpose(2, 3, 0, 1, 4).reshape(4, -1)  # (e m x n y, u l r)
    w = w.reshape(e, m, x, m, x, u, l, r)
    return w.transpose(5, 0, 1, 6, 3, 2, 7, 4)


def _site_grad(env: np.ndarray, b: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """``g[e,c,n,y,k] = sum env[u,e,m,l,n,x,r,y] b[e,a,m,x,k] rho[u,l,a,c,r]``."""
    u, e, m, l, _, x, r, _ = env.shape
    k = b.shape[-1]
    s = env.transpose(1, 2, 5, 4, 7, 0, 3, 6).reshape(e * m * x * m * x, u * l * r)
    s = s @ rho.transpose(0, 1, 4, 2, 3).reshape(u * l * r, 4)
    s = s.reshape(e, m, x, m, x, 2, 2).transpose(0, 6, 3, 4, 5, 1, 2).reshape(e, 2 * m * x, 2 * m * x)
    g = np.matmul(s, b.reshape(e, 2 * m * x, k))
    return g.reshape(e, 2, m, x, k)


class TomographicLoss:
    """Precomputed state tables for fast likelihood and gradient evaluation.

    Args:
        dataset: shot records.
        layer: ideal layer applied to the SIC product states, ``"auto"`` to read
            it from the dataset metadata, or ``None`` for no layer.
        floor: lower clamp of predicted probabilities inside the logarithm.
        backend: chain kernel backend, see :func:`tnnoise.kernels.chain_contract`.
    """

    def __init__(self, dataset: TomographicDataset, layer="auto", floor: float = PROB_FLOOR,
                 backend: str | None = None):
        self.n = dataset.n
        self.floor = floor
        self.backend = backend
        layer = _resolve_layer(dataset, layer)
        ualpha, alpha_inv = np.unique(dataset.alpha, axis=0, return_inverse=True)
        alpha_inv = alpha_inv.reshape(-1)
        states = [tomographic_state(tuple(int(x) for x in a), layer) for a in ualpha]
        n = self.n
        dims = [max(s.sites[j].shape[0] for s in states) for j in range(n)] + [1]
        self.state_tables = []
        setting_state = np.zeros((dataset.n_set, n), dtype=np.int64)
        for j in range(n):
            arr = np.zeros((len(states), dims[j], 2, 2, dims[j + 1]), dtype=complex)
            for i, s in enumerate(states):
                t = s.sites[j]
                arr[i, : t.shape[0], :, :, : t.shape[3]] = t
            flat = np.ascontiguousarray(arr.reshape(len(states), -1)).view(np.float64)
            _, first, inv = np.unique(flat, axis=0, return_index=True, return_inverse=True)
            self.state_tables.append(arr[first])
            setting_state[:, j] = inv.reshape(-1)[alpha_inv]
        effect = 2 * dataset.beta.astype(np.int64)[dataset.shot_setting] + (dataset.zeta < 0)
        self.combos = setting_state[dataset.shot_setting] * N_EFFECTS + effect
        self.n_records = dataset.n_records

    # transfer matrices for every (state, effect) pair of each site
    def _transfers(self, sites):
        bs, ws = [], []
        ev = EFFECT_VECTORS.conj()
        for a, rho in zip(sites, self.state_tables):
            b = np.einsum("eb,bamxk->eamxk", ev, a)
            w = _site_transfers(b, rho)
            sh = w.shape
            ws.append(w.reshape(sh[0] * sh[1], sh[2] * sh[3] * sh[4], sh[5] * sh[6] * sh[7]))
            bs.append(b)
        return bs, ws

    def probabilities(self, sites, shots=None) -> np.ndarray:
        _, ws = self._transfers(sites)
        idx = self.combos if shots is None else self.combos[shots]
        p, _ = chain_contract(ws, idx, None, self.floor, self.backend)
        return p

    def nll(self, sites, shots=None) -> float:
        p = self.probabilities(sites, shots)
        return _nll_from_probs(p, self.floor, shots)

    def nll_and_grad(self, sites, shots=None) -> tuple[float, list[np.ndarray]]:
        """Mean negative log-likelihood and its derivative with respect to ``conj(A)``."""
        bs, ws = self._transfers(sites)
        idx = self.combos if shots is None else self.combos[shots]
        n_b = len(idx)
        p, envs = chain_contract(ws, idx, np.ones(n_b), self.floor, self.backend)
        loss = _nll_from_probs(p, self.floor, shots)
        grads = []
        for a, b, rho, env in zip(sites, bs, self.state_tables, envs):
            u, dl, dr = rho.shape[0], rho.shape[1], rho.shape[4]
            cl, cr = a.shape[2], a.shape[3]
            e = env.reshape(u, N_EFFECTS, cl, dl, cl, cr, dr, cr)
            # d/d conj(B[e, c, nu, nu', k])
            gb = _site_grad(e, b, rho)
            g = np.einsum("ed,ecnyk->dcnyk", EFFECT_VECTORS, gb)
            grads.append(-g / n_b)
        return loss, grads


def _nll_from_probs(p: np.ndarray, floor: float, shots=None) -> float:
    if not np.all(np.isfinite(p)):
        bad = int(np.flatnonzero(~np.isfinite(p))[0])
        rec = bad if shots is None else int(np.asarray(shots)[bad])
        raise TrainingError(f"non-finite predicted probability for record {rec}")
    if len(p) == 0:
        raise ValueError("empty batch")
    return float(-np.mean(np.log(np.maximum(p, floor))))


def _sites(model) -> list[np.ndarray]:
    return list(model.sites) if isinstance(model, Lpdo) else list(model)


def nll_loss(lpdo: Lpdo, dataset: TomographicDataset, shots=None, layer="auto",
             floor: float = PROB_FLOOR) -> float:
    """``-(1/|batch|) sum_m log Tr[Lambda(rho_m) Pi_m]`` over the selected shots."""
    return TomographicLoss(dataset, layer, floor).nll(_sites(lpdo), shots)


# --- trace preservation penalty ---------------------------------------------------------

def _m_sites(sites):
    """Sites ``(X, X', a, c)`` of ``M = sum_k K_k^dag K_k`` with merged bonds ``X = (mu, nu)``."""
    out = []
    for a in sites:
        # contract b and k: (a, m, x) x (c, n, y)
        m = np.tensordot(a.conj(), a, axes=([0, 4], [0, 4]))
        m = m.transpose(1, 4, 2, 5, 0, 3)
        sh = m.shape
        out.append(m.reshape(sh[0] * sh[1], sh[2] * sh[3], 2, 2))
    return out


def _envs(transfers):
    n = len(transfers)
    left = [np.ones(1, dtype=complex)]
    for t in transfers:
        left.append(left[-1] @ t)
    right = [None] * (n + 1)
    right[n] = np.ones(1, dtype=complex)
    for j in range(n - 1, -1, -1):
        right[j] = transfers[j] @ right[j + 1]
    return left, right


def tp_penalty_and_grad(model) -> tuple[float, list[np.ndarray]]:
    """``delta_TP = ||Tr_out Lambda - I||_F / 2^(n/2)`` and its derivative w.r.t. ``conj(A)``."""
    sites = _sites(model)
    n = len(sites)
    ms = _m_sites(sites)
    t1 = [np.einsum("XYaa->XY", m) for m in ms]
    t2 = []
    for m in ms:
        cx, cy = m.shape[:2]
        t = m.reshape(cx * cy, 4) @ m.transpose(0, 1, 3, 2).reshape(cx * cy, 4).T
        t2.append(t.reshape(cx, cy, cx, cy).transpose(0, 2, 1, 3).reshape(cx * cx, cy * cy))
    l1, r1 = _envs(t1)
    l2, r2 = _envs(t2)
    tr_m = l1[n][0].real
    tr_m2 = l2[n][0].real
    x = max(tr_m2 - 2.0 * tr_m + 2.0**n, 0.0)
    delta = math.sqrt(x) / 2.0 ** (n / 2)
    if delta == 0.0:
        return 0.0, [np.zeros_like(a) for a in sites]
    scale = 1.0 / (2.0 * math.sqrt(x) * 2.0 ** (n / 2))
    grads = []
    for j, (a, m) in enumerate(zip(sites, ms)):
        cx = m.shape[0]
        cy = m.shape[1]
        lj2 = l2[j].reshape(cx, cx)
        rj2 = r2[j + 1].reshape(cy, cy)
        # g[X, Y, a, c] = 2 sum_UV L[X, U] R[Y, V] m[U, V, c, a] - 2 l[X] r[Y] delta_ac
        g = np.tensordot(lj2, np.tensordot(rj2, m, axes=(1, 1)), axes=(1, 1))
        g = 2.0 * g.transpose(0, 1, 3, 2)
        g -= 2.0 * (np.multiply.outer(l1[j], r1[j + 1]))[:, :, None, None] * np.eye(2)
        cl, cr = a.shape[2], a.shape[3]
        g = g.reshape(cl, cl, cr, cr, 2, 2)
        # contract c, n, y against A[b, c, n, y, k] -> (m, x, a, b, k)
        out = np.tensordot(g, a, axes=([5, 1, 3], [1, 2, 3]))
        grads.append(scale * out.transpose(3, 2, 0, 1, 4))
    return delta, grads


def tp_penalty(model) -> float:
    return tp_penalty_and_grad(model)[0]


def trace_ratio(model) -> float:
    """``Tr[Lambda] / 2^n``."""
    sites = _sites(model)
    env = np.ones((1, 1), dtype=complex)
    for a in sites:
        env = np.einsum("mn,bamxk,banyk->xy", env, a.conj(), a)
    return float(env[0, 0].real) / 2.0 ** len(sites)


def total_loss(lpdo: Lpdo, dataset: TomographicDataset, shots=None, eta_tp: float = 1.2,
               layer="auto", floor: float = PROB_FLOOR) -> float:
    return nll_loss(lpdo, dataset, shots, layer, floor) + eta_tp * tp_penalty(lpdo)


def loss_gradient(lpdo: Lpdo, dataset: TomographicDataset, shots=None, eta_tp: float = 1.2,
                  layer="auto", floor: float = PROB_FLOOR) -> list[np.ndarray]:
    """Per-site Wirtinger derivatives ``dL/d conj(A)`` of the total loss."""
    sites = _sites(lpdo)
    _, g_nll = TomographicLoss(dataset, layer, floor).nll_and_grad(sites, shots)
    _, g_tp = tp_penalty_and_grad(sites)
    return [a + eta_tp * b for a, b in zip(g_nll, g_tp)]


# --- trace-preserving pre-optimization --------------------------------------------

def _pack(sites) -> np.ndarray:
    flat = np.concatenate([a.ravel() for a in sites])
    return np.concatenate([flat.real, flat.imag])


def _unpack(x: np.ndarray, shapes) -> list[np.ndarray]:
    half = len(x) // 2
    z = x[:half] + 1j * x[half:]
    out, pos = [], 0
    for sh in shapes:
        size = int(np.prod(sh))
        out.append(z[pos:pos + size].reshape(sh))
        pos += size
    return out


def pre_optimize_tp(lpdo: Lpdo, tol: float = 1e-2, max_iters: int = 500) -> tuple[Lpdo, int]:
    """Drive ``delta_TP`` below ``tol`` with L-BFGS on ``delta_TP**2``.

    Returns the updated LPDO and the number of iterations used. Inputs that
    already satisfy the tolerance are returned unchanged.
    """
    sites = _sites(lpdo)
    if tp_penalty(sites) < tol:
        return lpdo, 0
    shapes = [a.shape for a in sites]
    state = {"iters": 0}

    def fun(x):
        s = _unpack(x, shapes)
        d, g = tp_penalty_and_grad(s)
        # d(delta^2)/d conj(A) = 2 delta g; real gradient is twice the Wirtinger one
        gz = np.concatenate([(4.0 * d * gi).ravel() for gi in g])
        return d * d, np.concatenate([gz.real, gz.imag])

    def callback(intermediate_result):
        state["iters"] += 1
        if math.sqrt(max(intermediate_result.fun, 0.0)) < tol:
            raise StopIteration

    res = minimize(fun, _pack(sites), jac=True, method="L-BFGS-B", callback=callback,
                   options={"maxiter": max_iters, "ftol": 0.0, "gtol": 0.0})
    out = Lpdo(_unpack(res.x, shapes))
    final = tp_penalty(out)
    if final >= tol:
        warnings.warn(f"TP pre-optimization stopped at delta_TP = {final:.3e} after "
                      f"{state['iters']} iterations", RuntimeWarning, stacklevel=2)
    return out, state["iters"]


# --- training loop ----------------------------------------------------------------------

def reconstruction_error(lpdo: Lpdo, true: SuperOpMpo) -> float:
    """``||S(lpdo) - true||_F^2 / 4^n`` on superoperator chains."""
    model = to_pauli_basis(lpdo_to_superop(lpdo))
    return frobenius_error(model, true.to_basis("pauli"))


def _split(n_records: int, test_size: int, rng) -> tuple[np.ndarray, np.ndarray]:
    perm = rng.permutation(n_records)
    return np.sort(perm[test_size:]), np.sort(perm[:test_size])


def train(
    dataset: TomographicDataset,
    config: TrainConfig,
    true_channel: SuperOpMpo | None = None,
    layer="auto",
    init: Lpdo | None = None,
    checkpoint_dir=None,
    progress=None,
) -> tuple[Lpdo, TrainReport]:
    """Fit an LPDO by Adam on the total loss and return the best-test-loss model.

    Args:
        dataset: tomographic shots; a held-out test split is drawn from it.
        config: hyperparameters.
        true_channel: when given, the reconstruction error is recorded per epoch.
        layer: ideal layer of the tomographic states (``"auto"`` reads metadata).
        init: optional starting LPDO instead of a random initialization.
        checkpoint_dir: directory receiving ``best.tnm`` (tncore model format).
        progress: optional callable receiving each :class:`EpochRecord`.
    """
    n_rec = dataset.n_records
    if n_rec < 2:
        raise ValueError("dataset needs at least two records")
    seq = np.random.SeedSequence(config.seed)
    init_seq, split_seq, batch_seq = seq.spawn(3)
    test_size = config.test_size if config.test_size is not None else default_test_size(n_rec)
    test_size = max(1, min(test_size, n_rec - 1))
    train_idx, test_idx = _split(n_rec, test_size, np.random.default_rng(split_seq))
    batch = config.batch_size or default_batch_size(n_rec)
    batch = min(batch, len(train_idx))
    loss = TomographicLoss(dataset, layer, config.floor, config.backend)

    if init is None:
        seed = int(init_seq.generate_state(1)[0])
        init = init_lpdo(dataset.n, config.chi_b, config.chi_kappa, seed)
    report = TrainReport()
    if config.pre_optimize:
        init, report.pre_optimize_iters = pre_optimize_tp(
            init, config.pre_optimize_tol, config.pre_optimize_iters)
    sites = [np.array(a) for a in init.sites]

    def evaluate(epoch, step, train_loss):
        d = tp_penalty(sites)
        rec = EpochRecord(
            epoch, step, train_loss,
            loss.nll(sites, test_idx) + config.eta_tp * d,
            d, trace_ratio(sites),
            reconstruction_error(Lpdo(sites), true_channel) if true_channel is not None else None,
        )
        report.records.append(rec)
        if progress is not None:
            progress(rec)
        log.info("epoch %d test_loss %.6f tp %.3e", epoch, rec.test_loss, d)
        return rec

    n_batches = max(1, len(train_idx) // batch)
    best = evaluate(0, 0, float("nan"))
    best_sites = [a.copy() for a in sites]
    m1 = [np.zeros_like(a) for a in sites]
    m2 = [np.zeros(a.shape) for a in sites]
    rng = np.random.default_rng(batch_seq)
    step = 0
    stale = 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(train_idx)
        losses = []
        for k in range(n_batches):
            shots = order[k * batch:(k + 1) * batch]
            l_nll, g_nll = loss.nll_and_grad(sites, shots)
            d, g_tp = tp_penalty_and_grad(sites)
            l_tot = l_nll + config.eta_tp * d
            if not math.isfinite(l_tot):
                raise TrainingError(f"non-finite loss at epoch {epoch}, step {step}")
            losses.append(l_tot)
            step += 1
            lr = config.lr0
            if step > config.warmup_steps:
                lr = config.lr0 * config.gamma ** ((step - config.warmup_steps) / n_batches)
            c1 = 1.0 - config.beta1**step
            c2 = 1.0 - config.beta2**step
            for j in range(len(sites)):
                g = 2.0 * (g_nll[j] + config.eta_tp * g_tp[j])
                m1[j] = config.beta1 * m1[j] + (1 - config.beta1) * g
                m2[j] = config.beta2 * m2[j] + (1 - config.beta2) * (g.real**2 + g.imag**2)
                sites[j] = sites[j] - lr * (m1[j] / c1) / (np.sqrt(m2[j] / c2) + config.eps_adam)
        rec = evaluate(epoch, step, float(np.mean(losses)))
        if rec.test_loss < best.test_loss:
            best, stale = rec, 0
            best_sites = [a.copy() for a in sites]
        else:
            stale += 1
            if stale >= config.patience:
                break
    report.best_epoch = best.epoch
    model = Lpdo(best_sites)
    if checkpoint_dir is not None:
        path = Path(checkpoint_dir)
        path.mkdir(parents=True, exist_ok=True)
        save_model(path / "best.tnm", model, {"epoch": best.epoch, "test_loss": best.test_loss})
    return model, report

