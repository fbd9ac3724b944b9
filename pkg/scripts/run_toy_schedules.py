"""Final dev NLL of training schedules s1..s5 on the toy disambiguation task.

    python3 scripts/run_toy_schedules.py --seeds 20 --epochs 10,20
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

import numpy as np

from rasr.experiments import toy_run

SCHEDULES = ("s1", "s2", "s3", "s4", "s5")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--epochs", default="10,20", help="stage-1,stage-2 epochs")
    ap.add_argument("--out")
    args = ap.parse_args()
    a, b = (int(x) for x in args.epochs.split(","))

    nll = {name: [toy_run(name, seed, (a, b)).final_dev_nll for seed in range(args.seeds)] for name in SCHEDULES}
    print(f"{'schedule':8}  {'mean dev NLL':>12}  {'std':>6}")
    for name in SCHEDULES:
        print(f"{name:8}  {np.mean(nll[name]):12.4f}  {np.std(nll[name]):6.4f}")
    wins = sum(s5 <= 0.9 * s2 for s5, s2 in zip(nll["s5"], nll["s2"]))
    print(f"s5 at least 10% below s2 in {wins}/{args.seeds} seeds")
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(nll, indent=2))


if __name__ == "__main__":
    main()
