"""Train on the AR-1 process and report the channel-correlation mismatch.

    python scripts/ar1_training.py --seeds 0 1 2 --iters 2000
"""

import argparse
import time

import numpy as np

from cotgan.data import Ar1Spec, gen_ar1
from cotgan.evaluation import correlation_stats
from cotgan.trainer import TrainConfig, Trainer


def mismatch(trainer, reference, n=1000, seed=12345):
    fake = trainer.sample(n, np.random.default_rng(seed))
    return correlation_stats(fake, reference).channel_mismatch


def run(seed, iters, report_every=0, n_eval=1000):
    reference = gen_ar1(Ar1Spec(), n_eval, np.random.default_rng(10_000 + seed))
    tr = Trainer(TrainConfig(seed=seed, iters=iters))
    before = mismatch(tr, reference, n_eval)
    t0 = time.time()
    for k in range(iters):
        row = tr.step()
        if report_every and (k + 1) % report_every == 0:
            print(f"  seed {seed} iter {k + 1}: mixed {row['mixed_divergence']:.3f} "
                  f"penalty {row['penalty']:.3f} mismatch {mismatch(tr, reference, n_eval):.3f}", flush=True)
    after = mismatch(tr, reference, n_eval)
    return before, after, time.time() - t0


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--iters", type=int, default=2000)
    ap.add_argument("--report-every", type=int, default=250)
    args = ap.parse_args()
    ratios = []
    for s in args.seeds:
        before, after, secs = run(s, args.iters, args.report_every)
        ratios.append(after / before)
        print(f"seed {s}: mismatch {before:.3f} -> {after:.3f} (ratio {after / before:.3f}, {secs:.0f}s)", flush=True)
    print(f"median ratio {np.median(ratios):.3f}")


if __name__ == "__main__":
    main()
