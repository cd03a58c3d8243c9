"""Containment sweep on synthetic instances, with the perturbation and probe checks.

    python scripts/theory_sweep.py --seeds 100
"""

import argparse

import numpy as np

from spectral_guard.config import preset
from spectral_guard.lab import faithfulness, perturbation_scaling, theory_summary, theory_sweep

p = argparse.ArgumentParser()
p.add_argument("--seeds", type=int, default=100)
p.add_argument("--delta", type=float, default=None)
args = p.parse_args()

cfg = preset("canonical", seed_count=args.seeds)
rows = theory_sweep(cfg, delta=args.delta)
s = theory_summary(rows)
print(f"theorem holds in {s['theorem_holds']}/{s['seeds']} seeds")
print(f"small-gamma bound {s['small_bound_holds']}/{s['seeds']}, large-gamma bound {s['large_bound_holds']}/{s['seeds']}")
print(f"forfeited >= floor in {s['forfeited_exceeds_floor']}/{s['seeds']}")
print(f"median |S_T| = {np.median([r.skill_set_size for r in rows]):g}, "
      f"top-k members in {sum(r.topk_hits > 0 for r in rows)} seeds")

a, b = perturbation_scaling(cfg)
print(f"eta={a.eta:g}: relative-law residual {a.max_rel:.3e} ({a.max_rel / a.eta**2:.0f} eta^2), "
      f"signed-law residual {a.max_first_order:.3e} ({a.max_first_order / a.eta**2:.2f} eta^2)")
print(f"halving eta: relative-law ratio {a.max_rel / b.max_rel:.2f}, signed-law ratio {a.max_first_order / b.max_first_order:.2f}")
print(f"probe faithfulness spearman {faithfulness(cfg).spearman:.4f}")
