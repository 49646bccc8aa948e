"""Train the desk base model with instrument vs uniform sampling on skewed
TripletWorld data and report oracle accuracy on the five rarest triplets.

    python3 scripts/run_balance_ablation.py --cache results [--steps 20000] [--runs runs/balance]
"""

import argparse
import json
import logging

from tripletdiff.experiments import BalanceAblationSettings, balance_ablation

def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--steps", type=int, default=20000)
    p.add_argument("--n-frames", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples-per-triplet", type=int, default=10)
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    p.add_argument("--cache", default="results")
    p.add_argument("--runs", default=None, help="optional run directory for checkpoints and logs")
    a = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    s = BalanceAblationSettings(steps=a.steps, n_frames=a.n_frames, seed=a.seed,
                                samples_per_triplet=a.samples_per_triplet, overrides=tuple(a.set))
    res = balance_ablation(s, a.runs, a.cache)
    summary = {m: {k: v[k] for k in ("overall", "rare5", "train_seconds")} for m, v in res["modes"].items()}
    print(json.dumps({"rarest": res["rarest"], "rare_counts": res["rare_counts"], "modes": summary,
                      "rare5_gap": res["rare5_gap"]}, indent=1))

if __name__ == "__main__":
    main()
