"""Seed-averaged one-at-a-time ablation over lambda_ortho, LoRA rank and k.

    python scripts/ablation_grid.py --seeds 10 --policy fixed_alpha
"""

import argparse

from spectral_guard.config import preset
from spectral_guard.lab import ablation_means, run_ablation

p = argparse.ArgumentParser()
p.add_argument("--seeds", type=int, default=10)
p.add_argument("--policy", choices=["fixed_scale", "fixed_alpha"], default="fixed_scale",
               help="hold alpha/r fixed on the rank axis, or hold alpha fixed")
p.add_argument("--axes", nargs="*", default=None)
args = p.parse_args()

cfg = preset("canonical", ablate_seeds=args.seeds, rank_alpha_policy=args.policy)
for axis, stats in ablation_means(run_ablation(cfg, axes=args.axes)).items():
    print(axis)
    for value, inter, recall, deg in stats:
        print(f"  {value:>6g}: interference {inter:.3e}  recall {recall:.3f}  skill degradation {deg:.5f}")
