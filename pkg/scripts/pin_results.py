"""Regenerate tests/pinned_results.json from the canonical preset.

The file freezes the per-seed theory verdicts, the per-seed protection-mode
table and the phase-1 loss ratios that the acceptance suite compares against.
Run it only after an intentional change to the benchmark.
"""

import argparse
import json
import os

from spectral_guard.config import preset
from spectral_guard.lab import run_bench, theory_sweep

ACCEPTANCE_MODES = ("svf_guided", "topk_raw", "random_k", "none")
PHASE1_MAX_RATIO = 0.5


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", default=os.path.join(os.path.dirname(__file__), "..", "tests", "pinned_results.json"))
    args = p.parse_args()
    cfg = preset("canonical")

    theory = [{"seed": r.seed, "theorem_holds": r.theorem_holds, "skill_set_size": r.skill_set_size,
               "topk_hits": r.topk_hits, "gamma_max_topk": r.gamma_max_topk, "gamma_star": r.gamma_star}
              for r in theory_sweep(cfg)]
    runs, benches = run_bench(cfg, modes=ACCEPTANCE_MODES, progress=print)
    bench = [{"seed": r.seed, "mode": r.mode, "skill_degradation": r.skill_degradation,
              "fact_recall": r.fact_recall, "final_interference": r.interference[-1]} for r in runs]
    phase1 = [{"seed": b.seed, "loss_ratio": b.phase1.final_loss / b.phase1.initial_loss} for b in benches]
    doc = {"preset": "canonical", "phase1_max_ratio": PHASE1_MAX_RATIO, "theory": theory,
           "bench_modes": list(ACCEPTANCE_MODES), "bench": bench, "phase1": phase1}
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
    print(f"wrote {os.path.normpath(args.out)}")


if __name__ == "__main__":
    main()
