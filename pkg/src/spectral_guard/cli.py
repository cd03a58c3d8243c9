"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O error.
Output goes under ``--out``, else ``$SPECTRAL_GUARD_OUT``, else the config's
``out_dir``.
"""

from __future__ import annotations

import argparse
import glob
import json
import os
import sys

import numpy as np

from . import __version__
from .bundle import ArtifactBundle, BundleError, LayerState, load_bundle, save_bundle
from .config import ConfigError, ExperimentConfig, apply_overrides, load_config, preset
from .lab import (
    ablation_means,
    build_benchmark,
    overlap_vs_svf,
    run_ablation,
    run_bench,
    run_mode,
    theory_summary,
    theory_sweep,
)
from .linalg import ContractError, SvdConvergenceError
from .reports import (
    ABLATION_COLUMNS,
    COMPARISON_COLUMNS,
    CURVE_COLUMNS,
    PROBE_COLUMNS,
    THEORY_COLUMNS,
    comparison_rows,
    csv_text,
    curve_rows,
    emit_reports,
    probe_rows,
    svg_line_chart,
    theory_rows,
    write_text,
)
from .trainer import PROTECTION_MODES, DivergenceError, RunMetrics

OUT_ENV = "SPECTRAL_GUARD_OUT"
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="spectral-guard", description="Spectral probing and protected low-rank injection lab.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="JSON experiment config")
        sp.add_argument("--preset", help="named preset (canonical, smoke)")
        sp.add_argument("--seeds", type=int, help="number of seeds in the sweep")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--mode", choices=PROTECTION_MODES, help="protection mode")
        sp.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config field (repeatable)")
        sp.add_argument("-q", "--quiet", action="store_true")
        return sp

    common(sub.add_parser("theory", help="verify the containment claim on synthetic instances"))
    common(sub.add_parser("phase1", help="train SVF probes and save one bundle per seed"))
    sp = common(sub.add_parser("phase2", help="inject facts into a saved phase-1 bundle"))
    sp.add_argument("--bundle", required=True, help="phase-1 bundle to continue from")
    common(sub.add_parser("bench", help="compare protection modes across seeds"))
    common(sub.add_parser("ablate", help="one-at-a-time grids over lambda_ortho, rank and k"))
    common(sub.add_parser("probe", help="emit sorted |z - 1| spectra"))
    sp = common(sub.add_parser("report", help="aggregate CSV/SVG from stored bundles"))
    sp.add_argument("--bundle", action="append", default=[], help="bundle file(s); default: all in --out")
    return p


def resolve_config(args) -> ExperimentConfig:
    kind = {"ablate": "ablation"}.get(args.command, args.command)
    if args.config and args.preset:
        raise ConfigError("use either --config or --preset, not both")
    if args.config:
        try:
            cfg = load_config(args.config)
        except OSError as exc:
            raise BundleError(f"cannot read config '{args.config}': {exc.strerror or exc}") from None
    else:
        cfg = preset(args.preset or "canonical")
    changes = [_assign("kind", kind)] + list(args.overrides)
    if args.mode:
        changes.append(_assign("protection_mode", args.mode))
    if args.seeds is not None:
        field = {"theory": "seed_count", "ablation": "ablate_seeds"}.get(kind, "bench_seeds")
        changes.append(_assign(field, args.seeds))
    out = args.out or os.environ.get(OUT_ENV)
    if out:
        changes.append(_assign("out_dir", out))
    return apply_overrides(cfg, changes)


def _assign(key, value) -> str:
    return f"{key}={json.dumps(value)}"


def _say(args, msg):
    if not args.quiet:
        print(msg)


def _bundle_for(cfg: ExperimentConfig, bench, runs=()) -> ArtifactBundle:
    tables = {}
    if runs:
        tables["runs"] = [_run_record(r) for r in runs]
    return ArtifactBundle(
        config=cfg.to_dict(), root_seed=bench.seed,
        layers=[LayerState.from_layer(l) for l in bench.model.layers],
        subspaces=list(bench.subspaces), tables=tables, library_version=__version__,
    )


def _run_record(r: RunMetrics) -> dict:
    return {
        "mode": r.mode, "seed": r.seed, "sft_loss": list(r.sft_loss), "interference": list(r.interference),
        "ortho_loss": [list(x) for x in r.ortho_loss],
        "skill_loss_before": r.skill_loss_before, "skill_loss_after": r.skill_loss_after,
        "fact_recall": r.fact_recall, "max_complement_leak": r.max_complement_leak,
        "crit_indices": [list(c) for c in r.crit_indices],
    }


def _run_from_record(d: dict) -> RunMetrics:
    return RunMetrics(
        mode=d["mode"], seed=int(d["seed"]), sft_loss=[float(x) for x in d["sft_loss"]],
        ortho_loss=[[float(y) for y in x] for x in d["ortho_loss"]],
        interference=[float(x) for x in d["interference"]],
        skill_loss_before=float(d["skill_loss_before"]), skill_loss_after=float(d["skill_loss_after"]),
        fact_recall=float(d["fact_recall"]), max_complement_leak=float(d["max_complement_leak"]),
        crit_indices=[tuple(int(i) for i in c) for c in d["crit_indices"]],
    )


def cmd_theory(cfg, args) -> int:
    rows = theory_sweep(cfg)
    path = write_text(os.path.join(cfg.out_dir, "theory_verdicts.csv"),
                      csv_text(THEORY_COLUMNS, theory_rows(rows), "per-seed containment verdicts"))
    s = theory_summary(rows)
    _say(args, f"wrote {path}")
    print(f"theorem holds in {s['theorem_holds']}/{s['seeds']} seeds "
          f"(fraction {s['theorem_holds_fraction']:.2f}); small-gamma bound {s['small_bound_holds']}/{s['seeds']}, "
          f"large-gamma bound {s['large_bound_holds']}/{s['seeds']}")
    return EXIT_OK


def cmd_phase1(cfg, args) -> int:
    for i in range(cfg.bench_seeds):
        seed = cfg.root_seed + i
        bench = build_benchmark(cfg, seed)
        path = save_bundle(_bundle_for(cfg, bench), os.path.join(cfg.out_dir, f"phase1_seed{seed}.json"))
        p1 = bench.phase1
        flag = "" if p1.converged else " (not converged)"
        _say(args, f"seed {seed}: skill loss {p1.initial_loss:.4g} -> {p1.final_loss:.4g}{flag}; wrote {path}")
        if not p1.converged:
            raise DivergenceError("phase1", cfg.phase1_steps, p1.final_loss)
    return EXIT_OK


def cmd_phase2(cfg, args) -> int:
    b = load_bundle(args.bundle)
    base_cfg = ExperimentConfig.from_dict(b.config)
    run_cfg = apply_overrides(base_cfg, [_assign("out_dir", cfg.out_dir),
                                         _assign("protection_mode", cfg.protection_mode)] + list(args.overrides))
    bench = build_benchmark(run_cfg, b.root_seed, z=[st.z for st in b.layers])
    for st, layer in zip(b.layers, bench.model.layers):
        if not (np.array_equal(st.base.sigma, layer.base_svd.sigma) and np.array_equal(st.base.u, layer.base_svd.u)):
            raise BundleError(f"bundle '{args.bundle}' base weights do not match its config snapshot")
    bench.phase1.subspaces[:] = b.subspaces
    m = run_mode(run_cfg, bench, run_cfg.protection_mode)
    tag = f"phase2_{m.mode}_seed{m.seed}"
    write_text(os.path.join(run_cfg.out_dir, f"{tag}_curves.csv"),
               csv_text(CURVE_COLUMNS, curve_rows([m]), "per-epoch fact loss and interference"))
    save_bundle(_bundle_for(run_cfg, bench, [m]), os.path.join(run_cfg.out_dir, f"{tag}.json"))
    print(f"{m.mode} seed {m.seed}: recall {m.fact_recall:.3f}, skill {m.skill_loss_before:.4g} -> "
          f"{m.skill_loss_after:.4g}, final interference {m.interference[-1]:.3e}")
    return EXIT_OK


def cmd_bench(cfg, args) -> int:
    modes = (cfg.protection_mode,) if args.mode else cfg.modes
    runs, benches = run_bench(cfg, modes=modes, progress=None if args.quiet else print)
    ov = overlap_vs_svf(runs)
    probe = [(f"seed{b.seed}.{l.name}", l.svf.z, l.base_svd.sigma) for b in benches for l in b.model.layers]
    paths = emit_reports(runs, cfg.out_dir, ov, probe_layers=probe)
    for b in benches:
        save_bundle(_bundle_for(cfg, b, [r for r in runs if r.seed == b.seed]),
                    os.path.join(cfg.out_dir, "bundles", f"bench_seed{b.seed}.json"))
    for row in comparison_rows(runs, ov):
        if row[1] == "mean":
            print(f"{row[0]:>16}: recall {row[2]:.3f}  skill degradation {row[5]:.4g}  "
                  f"interference {row[6]:.3e}  overlap {row[7]:.2f}")
    _say(args, "wrote " + ", ".join(paths))
    return EXIT_OK


def cmd_ablate(cfg, args) -> int:
    rows = run_ablation(cfg, progress=None if args.quiet else print)
    table = [(r.axis, r.value, r.seed, r.lora_rank, r.alpha, r.lambda_ortho, r.k, r.final_interference,
              r.fact_recall, r.skill_degradation) for r in rows]
    path = write_text(os.path.join(cfg.out_dir, "ablation.csv"),
                      csv_text(ABLATION_COLUMNS, table, "one-at-a-time ablation grid"))
    means = ablation_means(rows)
    for axis, stats in means.items():
        for v, inter, rec, deg in stats:
            print(f"{axis:>13} = {v:<6g} interference {inter:.3e}  recall {rec:.3f}  skill degradation {deg:.4g}")
    for axis, col, label in (("lambda_ortho", 1, "interference"), ("lora_rank", 2, "recall")):
        if axis in means:
            pts = [(v[0], v[col]) for v in means[axis]]
            write_text(os.path.join(cfg.out_dir, f"ablation_{axis}.svg"),
                       svg_line_chart({label: pts}, f"{label} vs {axis}", axis, label,
                                      log_y=col == 1, markers=True))
    _say(args, f"wrote {path}")
    return EXIT_OK


def cmd_probe(cfg, args) -> int:
    layers = []
    for i in range(cfg.bench_seeds):
        bench = build_benchmark(cfg, cfg.root_seed + i)
        layers += [(f"seed{bench.seed}.{l.name}", l.svf.z, l.base_svd.sigma) for l in bench.model.layers]
    rows = probe_rows(layers)
    path = write_text(os.path.join(cfg.out_dir, "probe.csv"),
                      csv_text(PROBE_COLUMNS, rows, "sorted SVF scaling deviations"))
    series = {}
    for row in rows:
        series.setdefault(row[0], []).append((row[1], row[5]))
    write_text(os.path.join(cfg.out_dir, "probe.svg"),
               svg_line_chart(series, "sorted |z - 1|", "order", "|z - 1|", markers=True))
    _say(args, f"wrote {path}")
    return EXIT_OK


def cmd_report(cfg, args) -> int:
    files = args.bundle or sorted(glob.glob(os.path.join(cfg.out_dir, "**", "*.json"), recursive=True))
    if not files:
        raise BundleError(f"no bundles found under '{cfg.out_dir}'")
    runs = []
    for f in files:
        b = load_bundle(f)
        runs += [_run_from_record(d) for d in b.tables.get("runs", [])]
    if not runs:
        raise BundleError("the bundles contain no run tables")
    runs.sort(key=lambda r: (r.seed, PROTECTION_MODES.index(r.mode)))
    paths = emit_reports(runs, os.path.join(cfg.out_dir, "report"), overlap_vs_svf(runs))
    _say(args, "wrote " + ", ".join(paths))
    return EXIT_OK


COMMANDS = {"theory": cmd_theory, "phase1": cmd_phase1, "phase2": cmd_phase2, "bench": cmd_bench,
            "ablate": cmd_ablate, "probe": cmd_probe, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, SvdConvergenceError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (BundleError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ContractError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
