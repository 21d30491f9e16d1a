"""Run the whole CLI pipeline (gen-data, build-charset, train stages 1-3, infer, eval) in a work directory.

    python scripts/run_pipeline.py --work runs/pipe --seed 0            # tiny smoke run, seconds
    python scripts/run_pipeline.py --work runs/desk --desk              # desk-scale run, tens of minutes
"""

import argparse
import shutil
from pathlib import Path

from mxspot.experiments import DESK_HEADS
from mxspot.pipeline import run_pipeline

DESK_DATA = {"image_size": "128", "train": "500", "test": "100", "scales": "2", "max_len": "4",
             "weights": "Arabic:1,Bengali:1,Chinese:1,Hindi:1,Japanese:1,Korean:1,Latin:4,Symbol:1"}
DESK_MODEL = {"channels": "32", "pooled": "8", "widths": "8,16,32", "lpn_conv1": "16", "lpn_conv2": "16",
              "lpn_fc": "32", "t_max": "8", "min_component": "4",
              "head_sizes": ",".join(f"{k}:{e}/{h}" for k, (e, h) in DESK_HEADS.items())}


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--work", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--desk", action="store_true", help="desk-scale data and model instead of the tiny smoke setup")
    p.add_argument("--iterations", default=None, help="stage iterations as a,b,c")
    p.add_argument("--workers", type=int, default=1)
    args = p.parse_args()
    work = Path(args.work)
    if work.exists():
        shutil.rmtree(work)
    kw = {}
    if args.desk:
        kw = dict(data=DESK_DATA, model=DESK_MODEL, iterations=(1500, 600, 200), batch_size=8)
    if args.iterations:
        kw["iterations"] = tuple(int(v) for v in args.iterations.split(","))
    run_pipeline(work, seed=args.seed, workers=args.workers, **kw)
    for task in ("detection", "joint", "e2e"):
        print((work / "reports" / f"{task}.txt").read_text())


if __name__ == "__main__":
    main()
