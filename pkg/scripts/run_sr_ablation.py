"""Text-conditioned vs unconditioned super-resolution (same budget) vs
bicubic upsampling, scored by pixel MSE on held-out TripletWorld pairs.

    python3 scripts/run_sr_ablation.py --cache results [--steps 4000] [--seeds 0 1 2]
"""

import argparse
import json
import logging

from tripletdiff.experiments import SRAblationSettings, sr_ablation


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--steps", type=int, default=4000)
    p.add_argument("--n-frames", type=int, default=10000)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--set", action="append", default=None, metavar="SECTION.KEY=VALUE",
                   help="config override (default: %s)" % " ".join(SRAblationSettings.overrides))
    p.add_argument("--cache", default="results")
    p.add_argument("--runs", default=None)
    a = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    overrides = SRAblationSettings.overrides if a.set is None else tuple(a.set)
    s = SRAblationSettings(steps=a.steps, n_frames=a.n_frames, seeds=tuple(a.seeds), overrides=overrides)
    res = sr_ablation(s, a.runs, a.cache)
    print(json.dumps(res, indent=1, sort_keys=True))


if __name__ == "__main__":
    main()
