"""Command-line interface.

Exit status: 0 on success, 1 on invalid input or configuration, 2 on
numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
import time
from pathlib import Path

import numpy as np

from . import data as dat
from . import evaluation as ev
from . import ot, oracles
from .config import build_config, describe, load_config, write_manifest
from .errors import ConfigError, InfeasibleError, NumericalError, ShapeError
from .trainer import Trainer

# flag name -> TrainConfig field
TRAIN_FLAGS = {
    "m": ("m", int), "eps": ("eps", float), "sinkhorn_iters": ("L", int), "lr": ("lr", float),
    "lambda": ("lam", float), "J": ("J", int), "seed": ("seed", int), "iters": ("iters", int),
}


def _add_train_flags(p, with_m=True):
    if with_m:
        p.add_argument("--m", type=int, help="batch size")
    p.add_argument("--eps", type=float, help="entropic regularisation")
    p.add_argument("--sinkhorn-iters", type=int, dest="sinkhorn_iters", help="Sinkhorn iterations L")
    p.add_argument("--lr", type=float, help="initial learning rate")
    p.add_argument("--lambda", type=float, dest="lambda", help="martingale penalty weight")
    p.add_argument("--J", type=int, help="number of (h, M) network pairs")
    p.add_argument("--seed", type=int)
    p.add_argument("--iters", type=int, help="training iterations")


def _resolve(args):
    over = load_config(args.config) if getattr(args, "config", None) else {}
    for dest, (field, _) in TRAIN_FLAGS.items():
        v = getattr(args, dest, None)
        if v is not None:
            over[field] = v
    for field in ("dataset", "data_path", "T", "d"):
        v = getattr(args, field, None)
        if v is not None:
            over[field] = v
    return build_config(over)


def _infer_shape(path):
    """``(T, d)`` from the first sequence in a CSV file or directory."""
    p = Path(path)
    first = sorted(p.glob("*.csv"))[0] if p.is_dir() else p
    blocks = dat._read_blocks(first)
    if not blocks:
        raise ValueError(f"{first}: no sequences found")
    return len(blocks[0]), len(blocks[0][0][1])


def _load_any(path):
    T, d = _infer_shape(path)
    return dat.load_csv_sequences(path, T, d)


# ------------------------------------------------------------ commands


def cmd_train(args):
    if args.resume:
        tr = Trainer.load(args.resume)
        if args.iters is not None:
            tr.config = dataclasses.replace(tr.config, iters=args.iters)
        cfg = tr.config
    else:
        cfg = _resolve(args)
        tr = Trainer(cfg)
    print(describe(cfg))
    out = Path(args.out)
    write_manifest(out, cfg, "train")
    iters = cfg.iters - tr.state.iteration if args.resume else cfg.iters
    t0 = time.time()
    tr.train(max(iters, 0), log_path=out / "metrics.csv", checkpoint_dir=out / "checkpoint",
             checkpoint_every=args.checkpoint_every)
    last = tr.state.history[-1] if tr.state.history else {}
    print(f"trained {tr.state.iteration} iterations in {time.time() - t0:.1f}s; "
          f"last mixed divergence {last.get('mixed_divergence', float('nan')):.6g}")
    return 0


def cmd_generate(args):
    tr = Trainer.load(args.checkpoint)
    batch = tr.sample(args.n, np.random.default_rng(args.seed))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if out.suffix == ".cott":
        from .tensor import save_tensor

        save_tensor(out, batch)
    else:
        dat.save_csv_sequences(out, batch)
    write_manifest(out.parent, tr.config, "generate", {"checkpoint": str(args.checkpoint), "n": args.n,
                                                       "sample_seed": args.seed})
    print(f"wrote {batch.shape[0]} sequences of shape {batch.shape[1:]} to {out}")
    return 0


def cmd_evaluate(args):
    batch = _load_any(args.data)
    if args.reference:
        ref = _load_any(args.reference)
    else:
        spec = dat.Ar1Spec(T=batch.shape[1])
        ref = dat.gen_ar1(spec, args.n_reference, np.random.default_rng(args.seed))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rep = ev.correlation_stats(batch, ref)
    ev.write_rows_csv(out / "corr_report.csv", ["statistic", "i", "j", "value"], rep.rows())
    print(f"autocorrelation mismatch {rep.autocorr_mismatch:.6g}")
    print(f"channel correlation mismatch {rep.channel_mismatch:.6g}")
    if rep.degenerate:
        print("warning: zero-variance channel encountered; its correlations are reported as 0")
    if batch.min() >= 0 and batch.max() <= 1:
        ds = ev.distribution_stats(batch)
        ev.write_rows_csv(out / "histogram.csv", ["bin_lo", "bin_hi", "count"],
                          zip(ds.edges[:-1], ds.edges[1:], ds.histogram))
        d = ds.joint.shape[0]
        ev.write_rows_csv(out / "joint_counts.csv", ["loc_t", "loc_next", "count"],
                          ((i, j, ds.joint[i, j]) for i in range(d) for j in range(d)))
    write_manifest(out, None, "evaluate", {"data": str(args.data), "reference": str(args.reference),
                                           "seed": args.seed})
    return 0


def cmd_bias(args):
    ms = [int(s) for s in args.m.split(",")]
    kinds = args.kinds.split(",")
    rows = ev.bias_curve(kinds, ms=ms, replicates=args.replicates, eps=args.eps, L=args.sinkhorn_iters,
                         T=args.T, rng=np.random.default_rng(args.seed))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ev.write_bias_csv(out / "bias_curve.csv", rows)
    for k in kinds:
        for m in ms:
            print(f"{k:>12s} m={m:<3d} argmin theta = {ev.bias_argmin(rows, k, m):.1f}")
    write_manifest(out, None, "bias-experiment", {
        "seed": args.seed, "m": ms, "kinds": kinds, "replicates": args.replicates,
        "eps": args.eps, "L": args.sinkhorn_iters, "T": args.T})
    return 0


def cmd_oracle(args):
    results = oracles.run_all(args.seed)
    failures = 0
    for name, ok, detail in results:
        failures += not ok
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    print(f"{failures} failures")
    return 0 if failures == 0 else 1


def cmd_sinkhorn(args):
    C = np.loadtxt(args.cost, delimiter=",", ndmin=2)
    res = ot.sinkhorn(C, eps=args.eps, L=args.iters)
    print(f"value {float(res.sharp)!r}")
    print(f"objective {float(res.objective)!r}")
    print(f"marginal violation {float(res.marginal_violation):.3e}")
    if args.dump:
        write_sinkhorn_dump(args.dump, res)
    return 0


def write_sinkhorn_dump(path, res) -> None:
    """Long-format CSV ``(field, i, j, value)`` with potentials, plan and scalars."""
    rows = [("f", i, "", repr(float(v))) for i, v in enumerate(res.f)]
    rows += [("g", j, "", repr(float(v))) for j, v in enumerate(res.g)]
    rows += [("plan", i, j, repr(float(res.plan[i, j])))
             for i in range(res.plan.shape[0]) for j in range(res.plan.shape[1])]
    rows += [("sharp", "", "", repr(float(res.sharp))), ("objective", "", "", repr(float(res.objective))),
             ("iterations", "", "", res.iterations),
             ("marginal_violation", "", "", repr(float(res.marginal_violation)))]
    ev.write_rows_csv(path, ["field", "i", "j", "value"], rows)


def build_parser():
    p = argparse.ArgumentParser(prog="cotgan", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="adversarial training with the causal cost")
    t.add_argument("--config", help="INI config or a run manifest.json")
    _add_train_flags(t)
    t.add_argument("--dataset", choices=["ar1", "oscillation", "csv"])
    t.add_argument("--data-path", dest="data_path")
    t.add_argument("--T", type=int)
    t.add_argument("--d", type=int)
    t.add_argument("--out", required=True)
    t.add_argument("--resume", help="checkpoint directory to continue from")
    t.add_argument("--checkpoint-every", type=int, default=100, dest="checkpoint_every")
    t.set_defaults(func=cmd_train)

    g = sub.add_parser("generate", help="sample sequences from a checkpoint")
    g.add_argument("--checkpoint", required=True)
    g.add_argument("--n", type=int, default=100)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help=".csv or .cott output file")
    g.set_defaults(func=cmd_generate)

    e = sub.add_parser("evaluate", help="correlation and distribution statistics")
    e.add_argument("--data", required=True)
    e.add_argument("--reference", help="reference CSV; defaults to fresh AR-1 samples")
    e.add_argument("--n-reference", type=int, default=1000, dest="n_reference")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_evaluate)

    b = sub.add_parser("bias-experiment", help="divergence bias curves on the sinusoid family")
    b.add_argument("--m", default="8,16,32,64", help="comma-separated batch sizes")
    b.add_argument("--kinds", default="mixed,sinkhorn")
    b.add_argument("--replicates", type=int, default=300)
    b.add_argument("--eps", type=float, default=1.0)
    b.add_argument("--sinkhorn-iters", type=int, default=100, dest="sinkhorn_iters")
    b.add_argument("--T", type=int, default=20)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", default="bias_out")
    b.set_defaults(func=cmd_bias)

    o = sub.add_parser("oracle-check", help="compare solvers against exact oracles")
    o.add_argument("--seed", type=int, default=0)
    o.set_defaults(func=cmd_oracle)

    s = sub.add_parser("sinkhorn", help="solve one instance from a cost CSV")
    s.add_argument("--cost", required=True, help="header-free numeric CSV grid")
    s.add_argument("--eps", type=float, default=1.0)
    s.add_argument("--iters", type=int, default=100)
    s.add_argument("--dump", help="write potentials, plan and values as CSV")
    s.set_defaults(func=cmd_sinkhorn)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 1
    try:
        return args.func(args)
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 2
    except (ConfigError, ShapeError, InfeasibleError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
