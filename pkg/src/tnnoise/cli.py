"""Command-line driver for sampling, training, inversion and mitigation runs.

Every command accepts ``--config FILE``: an INI file whose section named after
the command supplies defaults for any flag (keys use underscores, e.g.
``chi_kappa = 16``). Flags given on the command line take precedence. Each run
writes a JSON manifest with the resolved arguments, their hash, the seeds and
package versions; ``tnnoise replay MANIFEST`` re-executes it.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .conversion import lpdo_to_superop, ptm_coefficient, random_pauli_strings, to_pauli_basis
from .inversion import invert_sweep, inversion_residual, variational_polish
from .kernels import BACKEND
from .noisemodels import (
    DepolBrickworkSpec,
    IdentitySpec,
    build_channel,
    cnot_layer_superop,
    read_noise_spec,
    sample_coherent_spec,
    sample_spl_spec,
    spec_descriptor,
)
from .oracle import cross_validate
from .tem import build_circuit, depth_sweep
from .tncore import Lpdo, SuperOpMpo, load_model, save_model
from .tomography import generate_settings, read_dataset, sample_shots, write_dataset
from .training import (
    TomographicLoss,
    TrainConfig,
    reconstruction_error,
    tp_penalty,
    trace_ratio,
    train,
    write_metrics,
)

log = logging.getLogger("tnnoise")

ORACLE_TOL = 1e-10


class UsageError(Exception):
    pass


# --- shared helpers ---------------------------------------------------------------

def _add_noise_args(p: argparse.ArgumentParser, required: bool = False) -> None:
    g = p.add_argument_group("noise model")
    g.add_argument("--noise", choices=["identity", "depol", "coherent", "spl"],
                   help="noise model kind (ignored when --noise-spec is given)")
    g.add_argument("--noise-spec", help="noise-spec INI file")
    g.add_argument("--qubits", type=int, help="number of qubits")
    g.add_argument("--p", type=float, default=1e-3, help="depolarizing rate")
    g.add_argument("--epsilon", type=float, default=1e-3, help="coherent rotation scale")
    g.add_argument("--noise-seed", type=int, default=0, help="seed of random noise parameters")
    p.set_defaults(_noise_required=required)


def _noise_from_args(args, n: int | None = None):
    if args.noise_spec:
        spec = read_noise_spec(args.noise_spec)
        if n is not None and spec.n != n:
            raise UsageError(f"noise spec has n={spec.n}, expected {n}")
        return spec
    if args.noise is None:
        if args._noise_required:
            raise UsageError("a noise model is required (--noise or --noise-spec)")
        return None
    n = n if n is not None else args.qubits
    if n is None:
        raise UsageError("--qubits is required")
    if args.noise == "identity":
        return IdentitySpec(n)
    depol = DepolBrickworkSpec(n, args.p)
    if args.noise == "depol":
        return depol
    if args.noise == "coherent":
        return sample_coherent_spec(depol, args.epsilon, args.noise_seed)
    return sample_spl_spec(n, args.noise_seed)


def _load_lpdo(path) -> Lpdo:
    model, _ = load_model(path)
    if not isinstance(model, Lpdo):
        raise UsageError(f"{path}: expected an LPDO model")
    return model


def _load_channel(path) -> SuperOpMpo:
    model, _ = load_model(path)
    if isinstance(model, Lpdo):
        return to_pauli_basis(lpdo_to_superop(model))
    if isinstance(model, SuperOpMpo):
        return model.to_basis("pauli")
    raise UsageError(f"{path}: expected an LPDO or superoperator model")


def _file_sha(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _public_args(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if not k.startswith("_") and k != "func"}


def _write_manifest(args, argv, outputs: list, extra: dict | None = None) -> Path:
    resolved = _public_args(args)
    blob = json.dumps(resolved, sort_keys=True, default=str)
    seeds = {k: v for k, v in resolved.items() if "seed" in k}
    manifest = {
        "command": args.command,
        "argv": list(argv),
        "arguments": resolved,
        "config_hash": hashlib.sha256(blob.encode()).hexdigest(),
        "seeds": seeds,
        "versions": {
            "tnnoise": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
        "kernel_backend": BACKEND,
        "outputs": {str(o): _file_sha(o) for o in outputs if Path(o).exists()},
    }
    if extra:
        manifest["results"] = extra
    path = Path(args.manifest) if args.manifest else (
        Path(str(outputs[0]) + ".manifest.json") if outputs else Path(f"tnnoise-{args.command}.manifest.json")
    )
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return path


def _emit_rows(rows: list[dict], out) -> None:
    if not rows:
        return
    cols = list(rows[0].keys())
    fh = open(out, "w", newline="") if out else sys.stdout
    try:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    finally:
        if out:
            fh.close()


# --- commands -----------------------------------------------------------------------

def cmd_sample(args, argv):
    spec = _noise_from_args(args)
    n = spec.n
    chan = build_channel(spec)
    layer = None if args.layer == "none" else cnot_layer_superop(n, args.layer)
    settings = generate_settings(n, args.settings, args.seed)
    meta = {"noise": spec_descriptor(spec), "layer": args.layer}
    ds = sample_shots(chan, settings, args.shots, args.seed, layer=layer, metadata=meta)
    write_dataset(args.out, ds)
    _write_manifest(args, argv, [args.out])
    print(f"wrote {ds.n_records} records ({ds.n_set} settings) to {args.out}")
    return 0


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        chi_b=args.chi_b, chi_kappa=args.chi_kappa, eta_tp=args.eta_tp, lr0=args.lr0,
        gamma=args.gamma, warmup_steps=args.warmup_steps, batch_size=args.batch_size,
        epochs=args.epochs, patience=args.patience, seed=args.seed,
        pre_optimize=not args.no_pre_optimize,
    )


def cmd_train(args, argv):
    ds = read_dataset(args.data)
    spec = _noise_from_args(args, ds.n)
    true = build_channel(spec) if spec is not None else None
    model, report = train(ds, _train_config(args), true_channel=true)
    save_model(args.out, model, {"best_epoch": report.best_epoch, "chi_b": args.chi_b,
                                 "chi_kappa": args.chi_kappa})
    outputs = [args.out]
    if args.metrics:
        write_metrics(args.metrics, report)
        outputs.append(args.metrics)
    best = report.best
    results = {"best_epoch": best.epoch, "test_loss": best.test_loss, "tp_penalty": best.tp_penalty,
               "delta": best.delta}
    _write_manifest(args, argv, outputs, results)
    print(json.dumps(results, default=str))
    return 0


def cmd_evaluate(args, argv):
    lp = _load_lpdo(args.model)
    spec = _noise_from_args(args, lp.n)
    results = {"n": lp.n, "tp_penalty": tp_penalty(lp), "trace_ratio": trace_ratio(lp)}
    if spec is not None:
        d = reconstruction_error(lp, build_channel(spec))
        results["delta"] = d
    if args.data:
        ds = read_dataset(args.data)
        results["nll"] = TomographicLoss(ds).nll(list(lp.sites))
    outputs = []
    if args.out:
        Path(args.out).write_text(json.dumps(results, indent=2, sort_keys=True) + "\n")
        outputs.append(args.out)
    _write_manifest(args, argv, outputs, results)
    print(json.dumps(results, sort_keys=True))
    return 0


def cmd_ptm(args, argv):
    if args.model:
        chan = _load_channel(args.model)
        spec = _noise_from_args(args, chan.n)
    else:
        spec = _noise_from_args(args)
        if spec is None:
            raise UsageError("give --model or a noise model")
        chan = build_channel(spec)
    truth = build_channel(spec) if (args.model and spec is not None) else None
    pairs = []
    for item in args.pauli or []:
        out, _, inp = item.partition(",")
        pairs.append((out.strip(), (inp or out).strip()))
    if args.random:
        pairs += [(p, p) for p in random_pauli_strings(chan.n, args.random, args.seed)]
    if not pairs:
        pairs = [("I" * chan.n, "I" * chan.n)]
    rows = []
    for a, b in pairs:
        try:
            row = {"p_out": a, "p_in": b, "value": ptm_coefficient(chan, a, b)}
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        if truth is not None:
            row["true"] = ptm_coefficient(truth, a, b)
        rows.append(row)
    _emit_rows(rows, args.out)
    _write_manifest(args, argv, [args.out] if args.out else [])
    return 0


def cmd_invert(args, argv):
    gamma = _load_channel(args.model)
    hist: list[float] = []
    ups = invert_sweep(gamma, args.chi, args.sweeps, seed=args.seed, history=hist)
    sweep_res = inversion_residual(gamma, ups)
    if args.polish_iters > 0:
        ups = variational_polish(gamma, ups, args.polish_iters)
    res = inversion_residual(gamma, ups)
    save_model(args.out, ups, {"residual": res, "chi": args.chi})
    scale = 4.0**gamma.n
    results = {"sweep_residual": sweep_res, "sweep_residual_normalized": sweep_res / scale,
               "residual": res, "residual_normalized": res / scale, "half_sweeps": hist}
    _write_manifest(args, argv, [args.out], results)
    print(json.dumps({k: v for k, v in results.items() if k != "half_sweeps"}))
    return 0


def cmd_mitigate(args, argv):
    spec = _noise_from_args(args, args.qubits)
    if spec is None:
        raise UsageError("a true noise model is required")
    n = spec.n
    circuit = build_circuit(n, args.steps, args.seed)
    inverses = {}
    chan = build_channel(spec)
    inverses["mitigated_true"] = invert_sweep(chan, args.chi_inv, args.sweeps)
    if args.learned_model:
        learned = _load_channel(args.learned_model)
        ups = invert_sweep(learned, args.chi_inv, args.sweeps)
        if args.polish_iters > 0:
            ups = variational_polish(learned, ups, args.polish_iters)
        inverses["mitigated_learned"] = ups
    rows = depth_sweep(circuit, spec, inverses, args.chi_tem, args.chi_state)
    _emit_rows(rows, args.out)
    _write_manifest(args, argv, [args.out] if args.out else [])
    return 0


def cmd_oracle_check(args, argv):
    rows = cross_validate(tuple(args.n), args.seed)
    worst = 0.0
    for name, n, dev in rows:
        print(f"{name:24s} n={n}  max_dev={dev:.3e}")
        worst = max(worst, dev)
    status = "PASS" if worst < ORACLE_TOL else "FAIL"
    print(f"{status} worst deviation {worst:.3e} (tolerance {ORACLE_TOL:.0e})")
    _write_manifest(args, argv, [], {"worst": worst})
    return 0 if worst < ORACLE_TOL else 1


def _fit_loglog(x, y) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def cmd_scaling(args, argv):
    rows = []
    values = args.values
    if args.axis == "shots":
        values = values or [1e4, 1e5, 1e6]
    else:
        values = values or [4, 6, 8, 10]
    for v in values:
        n = int(v) if args.axis == "qubits" else args.qubits
        total = args.records if args.axis == "qubits" else int(v)
        n_shots = max(1, total // args.settings)
        spec = DepolBrickworkSpec(n, args.p)
        chan = build_channel(spec)
        for s in args.seeds:
            settings = generate_settings(n, args.settings, s)
            ds = sample_shots(chan, settings, n_shots, s, layer=cnot_layer_superop(n, "even"),
                              metadata={"noise": spec_descriptor(spec), "layer": "even"})
            cfg = TrainConfig(chi_b=args.chi_b, chi_kappa=args.chi_kappa, epochs=args.epochs,
                              patience=args.patience, seed=s)
            _, rep = train(ds, cfg, true_channel=chan)
            rows.append({"axis": args.axis, "value": v, "n": n, "n_set": args.settings,
                         "n_shots": n_shots, "seed": s, "delta": rep.best.delta,
                         "tp_penalty": rep.best.tp_penalty, "best_epoch": rep.best_epoch})
            log.info("scaling %s=%s seed=%d delta=%.3e", args.axis, v, s, rep.best.delta)
    _emit_rows(rows, args.out)
    med = {}
    for r in rows:
        med.setdefault(r["value"], []).append(r["delta"])
    xs = sorted(med)
    ys = [float(np.median(med[x])) for x in xs]
    results = {"values": xs, "median_delta": ys}
    if len(xs) >= 2:
        if args.axis == "shots":
            results["loglog_slope"] = _fit_loglog(xs, ys)
        else:
            fit = np.polyfit(xs, ys, 1)
            pred = np.polyval(fit, xs)
            ss = float(np.sum((np.array(ys) - np.mean(ys)) ** 2))
            results["slope"] = float(fit[0])
            results["r2"] = 1.0 - float(np.sum((np.array(ys) - pred) ** 2)) / ss if ss > 0 else 1.0
    _write_manifest(args, argv, [args.out] if args.out else [], results)
    print(json.dumps(results), file=sys.stderr)
    return 0


def cmd_replay(args, argv):
    manifest = json.loads(Path(args.manifest_file).read_text())
    return main(manifest["argv"])


# --- parser ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tnnoise", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="INI file; section [%s] supplies defaults" % name)
        p.add_argument("--manifest", help="manifest path (default: next to the main output)")
        p.set_defaults(func=func)
        return p

    p = command("sample", cmd_sample, "simulate a tomographic dataset")
    _add_noise_args(p, required=True)
    p.add_argument("--settings", type=int, default=100)
    p.add_argument("--shots", type=int, default=100)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--layer", choices=["even", "odd", "none"], default="even")
    p.add_argument("--out", default="dataset.txt")

    def train_args(p):
        p.add_argument("--chi-b", type=int, default=2)
        p.add_argument("--chi-kappa", type=int, default=16)
        p.add_argument("--eta-tp", type=float, default=1.2)
        p.add_argument("--lr0", type=float, default=1e-2)
        p.add_argument("--gamma", type=float, default=0.9)
        p.add_argument("--warmup-steps", type=int, default=500)
        p.add_argument("--batch-size", type=int, default=None)
        p.add_argument("--epochs", type=int, default=200)
        p.add_argument("--patience", type=int, default=25)
        p.add_argument("--no-pre-optimize", action="store_true")

    p = command("train", cmd_train, "learn an LPDO from a dataset")
    p.add_argument("--data", required=True)
    _add_noise_args(p)
    train_args(p)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default="model.tnm")
    p.add_argument("--metrics", help="per-epoch metrics CSV")

    p = command("evaluate", cmd_evaluate, "reconstruction error and diagnostics of a model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", help="dataset for the likelihood")
    _add_noise_args(p)
    p.add_argument("--out", help="JSON results file")

    p = command("ptm", cmd_ptm, "Pauli-transfer-matrix entries")
    p.add_argument("--model", help="model file (LPDO or superoperator)")
    _add_noise_args(p)
    p.add_argument("--pauli", action="append", help="'OUT,IN' or 'P' for a diagonal entry")
    p.add_argument("--random", type=int, default=0, help="random diagonal entries per weight")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="CSV output (default stdout)")

    p = command("invert", cmd_invert, "approximate inverse of a channel model")
    p.add_argument("--model", required=True)
    p.add_argument("--chi", type=int, default=4)
    p.add_argument("--sweeps", type=int, default=4)
    p.add_argument("--polish-iters", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="inverse.tnm")

    p = command("mitigate", cmd_mitigate, "noisy and mitigated Clifford-circuit expectations")
    _add_noise_args(p, required=True)
    p.add_argument("--steps", type=int, default=20)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--learned-model", help="learned LPDO or superoperator model")
    p.add_argument("--chi-tem", type=int, default=200)
    p.add_argument("--chi-state", type=int, default=64)
    p.add_argument("--chi-inv", type=int, default=4)
    p.add_argument("--sweeps", type=int, default=4)
    p.add_argument("--polish-iters", type=int, default=0)
    p.add_argument("--out", help="CSV output (default stdout)")

    p = command("oracle-check", cmd_oracle_check, "cross-validate against dense references")
    p.add_argument("--n", type=int, nargs="+", default=[2, 3, 4])
    p.add_argument("--seed", type=int, default=0)

    p = command("scaling", cmd_scaling, "reconstruction error versus data size or qubits")
    p.add_argument("--axis", choices=["shots", "qubits"], required=True)
    p.add_argument("--values", type=float, nargs="+")
    p.add_argument("--qubits", type=int, default=4, help="qubits for --axis shots")
    p.add_argument("--records", type=int, default=10**6, help="total records for --axis qubits")
    p.add_argument("--settings", type=int, default=1000)
    p.add_argument("--p", type=float, default=1e-3)
    p.add_argument("--chi-b", type=int, default=2)
    p.add_argument("--chi-kappa", type=int, default=16)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--patience", type=int, default=25)
    p.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3])
    p.add_argument("--out", help="CSV output (default stdout)")

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    p.add_argument("manifest_file")
    p.set_defaults(func=cmd_replay)
    return parser


def _config_path(argv) -> str | None:
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if a.startswith("--config="):
            return a.split("=", 1)[1]
    return None


def _apply_config(parser: argparse.ArgumentParser, argv) -> argparse.Namespace:
    """Parse ``argv`` after loading defaults from the ``--config`` file, if any."""
    path = _config_path(argv)
    choices = parser._subparsers._group_actions[0].choices
    command = next((a for a in argv if a in choices), None)
    if not path or command is None:
        return parser.parse_args(argv)
    cp = configparser.ConfigParser()
    if not cp.read(path):
        parser.error(f"config file {path} not found")
    if not cp.has_section(command):
        return parser.parse_args(argv)
    sub = choices[command]
    known = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, raw in cp[command].items():
        dest = key.replace("-", "_")
        if dest not in known or dest in ("config", "help", "manifest"):
            parser.error(f"unknown key {key!r} in [{command}] of {path}")
        act = known[dest]
        try:
            if isinstance(act, argparse._StoreTrueAction):
                value = cp[command].getboolean(key)
            elif act.nargs in ("+", "*"):
                value = [act.type(x) if act.type else x for x in raw.split()]
            else:
                value = act.type(raw) if act.type else raw
        except ValueError:
            parser.error(f"bad value {raw!r} for {key!r} in {path}")
        if act.choices and value not in act.choices:
            parser.error(f"bad value {raw!r} for {key!r} in {path}")
        defaults[dest] = value
        act.required = False
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = _apply_config(parser, argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, argv)
    except (UsageError, ValueError, FileNotFoundError) as exc:
        print(f"tnnoise {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
