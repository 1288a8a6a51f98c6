"""Compare the compiled and NumPy chain-contraction backends.

Times :func:`tnnoise.kernels.chain_contract` with environment accumulation on
random chains shaped like the training workload (mini-batches of 250 shots)
and on the loss-gradient step of a real six-qubit training problem.

Usage::

    python benchmarks/bench_kernels.py [--repeat 50]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from tnnoise.kernels import available_backends, chain_contract
from tnnoise.noisemodels import DepolBrickworkSpec, build_channel, cnot_layer_superop
from tnnoise.tomography import generate_settings, sample_shots
from tnnoise.training import TomographicLoss, init_lpdo


def _time(fn, repeat: int) -> float:
    fn()
    best = float("inf")
    for _ in range(3):
        t0 = time.perf_counter()
        for _ in range(repeat):
            fn()
        best = min(best, (time.perf_counter() - t0) / repeat)
    return best


def random_case(n: int, bond: int, combos: int, shots: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    dims = [1] + [bond] * (n - 1) + [1]
    transfers = [rng.standard_normal((combos, dims[j], dims[j + 1]))
                 + 1j * rng.standard_normal((combos, dims[j], dims[j + 1])) for j in range(n)]
    idx = rng.integers(0, combos, size=(shots, n))
    return transfers, idx, np.ones(shots)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=50)
    args = parser.parse_args()
    print(f"backends: {', '.join(available_backends)}")
    print(f"{'case':34s}" + "".join(f"{b:>12s}" for b in available_backends) + "     speedup")

    cases = [(f"random n={n} D={d} shots={s}", random_case(n, d, 64, s))
             for n, d, s in [(6, 8, 250), (6, 16, 250), (10, 16, 250), (6, 16, 2500)]]
    for name, (transfers, idx, w) in cases:
        times = [_time(lambda b=b: chain_contract(transfers, idx, w, backend=b), args.repeat)
                 for b in available_backends]
        _report(name, times)

    n = 6
    chan = build_channel(DepolBrickworkSpec(n, 1e-3))
    ds = sample_shots(chan, generate_settings(n, 200, 0), 5, 0, layer=cnot_layer_superop(n, "even"),
                      metadata={"layer": "even"})
    sites = list(init_lpdo(n, 2, 16, 0).sites)
    batch = np.arange(250)
    times = []
    for b in available_backends:
        loss = TomographicLoss(ds, backend=b)
        times.append(_time(lambda loss=loss: loss.nll_and_grad(sites, batch), args.repeat))
    _report("nll_and_grad n=6 chi_b=2 chi_k=16", times)


def _report(name: str, times: list[float]) -> None:
    row = f"{name:34s}" + "".join(f"{t * 1e3:10.3f}ms" for t in times)
    if len(times) == 2:
        row += f"  {times[0] / times[1]:9.2f}x"  # numpy time over compiled time
    print(row)


if __name__ == "__main__":
    main()
