"""Desk-scale trend: multiplexed vs budget-matched single head, hard vs soft integration.

    python scripts/trend_experiment.py --seeds 0 1 2 --out runs/trend.txt
"""

import argparse
import statistics
from dataclasses import replace

from mxspot.experiments import TrendConfig, run_trend


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--stage1", type=int)
    p.add_argument("--stage2", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--stage2-lr", type=float)
    p.add_argument("--optimizer", choices=["sgd", "adam"])
    p.add_argument("--out")
    args = p.parse_args()
    base = TrendConfig()
    over = {k: v for k, v in (("stage1", args.stage1), ("stage2", args.stage2), ("lr", args.lr), ("stage2_lr", args.stage2_lr),
                                          ("optimizer", args.optimizer)) if v is not None}
    lines = []
    results = []
    for seed in args.seeds:
        r = run_trend(replace(base, seed=seed, **over))
        results.append(r)
        lines.append(r.line())
        print(lines[-1], flush=True)
    keys = ("script_acc", "joint_mux", "joint_single", "joint_soft", "e2e_low_mux", "e2e_low_single")
    med = " ".join(f"{k}={statistics.median(getattr(r, k) for r in results):.4f}" for k in keys)
    lines.append(f"median {med}")
    print(lines[-1])
    if args.out:
        with open(args.out, "w") as f:
            f.write("\n".join(lines) + "\n")


if __name__ == "__main__":
    main()
