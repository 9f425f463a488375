"""Per-iteration training time as L and m are doubled.

    python scripts/scaling.py --m 128 --L 200
"""

import argparse

from cotgan.trainer import TrainConfig, Trainer, interleaved_step_seconds

SMALL = dict(T=8, d=2, J=4, disc_hidden=8, gen_state=8, gen_fc=8)


def trainer(**kw):
    return Trainer(TrainConfig(**{**SMALL, **kw}))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--m", type=int, default=128)
    ap.add_argument("--L", type=int, default=200)
    ap.add_argument("--iters", type=int, default=20)
    args = ap.parse_args()
    runs = [trainer(m=args.m, L=args.L), trainer(m=args.m, L=2 * args.L), trainer(m=2 * args.m, L=args.L)]
    base, dl, dm = interleaved_step_seconds(runs, iters=args.iters)
    print(f"base m={args.m} L={args.L}: {base * 1e3:.1f} ms/iter")
    print(f"doubled L: {dl * 1e3:.1f} ms/iter (x{dl / base:.2f})")
    print(f"doubled m: {dm * 1e3:.1f} ms/iter (x{dm / base:.2f})")


if __name__ == "__main__":
    main()
