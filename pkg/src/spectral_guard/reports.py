"""CSV tables and standalone SVG charts.

Every CSV starts with ``#`` comment lines documenting its columns, then a
header row. Floats are written with 12 significant digits and lines end in LF,
so identical inputs give byte-identical files.
"""

from __future__ import annotations

import csv
import io
import math
import os
import xml.etree.ElementTree as ET
from xml.sax.saxutils import escape

import numpy as np

from .linalg import ContractError
from .trainer import RunMetrics


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".12g")
    if isinstance(v, (tuple, list)):
        return " ".join(fmt(x) for x in v)
    return str(v)


def csv_text(columns: list[tuple[str, str]], rows, title: str = "") -> str:
    """``columns`` are (name, description) pairs; ``rows`` are sequences in column order."""
    buf = io.StringIO()
    if title:
        buf.write(f"# {title}\n")
    for name, desc in columns:
        buf.write(f"# {name}: {desc}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([c[0] for c in columns])
    for row in rows:
        if len(row) != len(columns):
            raise ContractError(f"row has {len(row)} cells, expected {len(columns)}")
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def write_text(path, text: str) -> str:
    path = os.fspath(path)
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return path


def read_csv_rows(path_or_text: str) -> list[dict]:
    """Parse a CSV emitted here (skipping ``#`` comments) into dicts of strings."""
    text = path_or_text
    if "\n" not in path_or_text and os.path.exists(path_or_text):
        with open(path_or_text, encoding="utf-8") as fh:
            text = fh.read()
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


# ---------------------------------------------------------------- tables

PROBE_COLUMNS = [
    ("layer", "layer name"),
    ("order", "position after sorting by |z_i - 1| descending (0 = largest)"),
    ("index", "singular-component index i, 0-based in descending sigma order"),
    ("sigma_rank", "1-based rank of sigma_i among the layer's singular values"),
    ("sigma", "base singular value sigma_i"),
    ("abs_dev", "|z_i - 1| after phase 1; the sorted curve shows the elbow and tail of the scaling profile"),
    ("selected", "true for the top components by |z_i - 1| (the protected set when top equals k)"),
]


def probe_rows(layers, top: int = 64) -> list[tuple]:
    """``layers`` is a sequence of (name, z, sigma)."""
    rows = []
    for name, z, sigma in layers:
        dev = np.abs(np.asarray(z) - 1.0)
        order = np.argsort(-dev, kind="stable")
        for pos, i in enumerate(order):
            rows.append((name, pos, int(i), int(i) + 1, float(sigma[i]), float(dev[i]), pos < top))
    return rows


CURVE_COLUMNS = [
    ("mode", "protection mode of the run"),
    ("seed", "root seed of the run"),
    ("epoch", "1-based epoch"),
    ("sft_loss", "mean squared fact-reconstruction error over the epoch's minibatches"),
    ("interference", "sum over layers of ||(BA)^T U_crit||_F^2 against the svf-guided subspaces; "
                     "tracks how far the update reaches into the skill directions"),
]


def curve_rows(runs: list[RunMetrics]) -> list[tuple]:
    rows = []
    for r in runs:
        for e, (sft, inter) in enumerate(zip(r.sft_loss, r.interference), start=1):
            rows.append((r.mode, r.seed, e, sft, inter))
    return rows


COMPARISON_COLUMNS = [
    ("mode", "protection mode"),
    ("seed", "root seed, or 'mean' for the seed-averaged summary row of the mode"),
    ("fact_recall", "fraction of fact keys reproduced within the relative tolerance (knowledge acquisition)"),
    ("skill_before", "skill error after phase 1, before injection"),
    ("skill_after", "skill error after injection (skill retention; lower is better)"),
    ("skill_degradation", "skill_after - skill_before"),
    ("final_interference", "interference metric at the last epoch"),
    ("overlap", "|I & I_svf| / min(|I|, |I_svf|) pooled over layers, I = protected indices of the run"),
    ("jaccard", "|I & I_svf| / |I u I_svf| pooled over layers"),
]


def comparison_rows(runs: list[RunMetrics], overlaps: dict) -> list[tuple]:
    rows = []
    modes = list(dict.fromkeys(r.mode for r in runs))
    for mode in modes:
        sel = [r for r in runs if r.mode == mode]
        for r in sel:
            ov, jac = overlaps.get((r.mode, r.seed), (float("nan"), float("nan")))
            rows.append((r.mode, r.seed, r.fact_recall, r.skill_loss_before, r.skill_loss_after,
                         r.skill_degradation, r.interference[-1] if r.interference else float("nan"), ov, jac))
    for mode in modes:
        sel = [row for row in rows if row[0] == mode and row[1] != "mean"]
        means = [float(np.mean([row[c] for row in sel])) for c in range(2, len(COMPARISON_COLUMNS))]
        rows.append((mode, "mean", *means))
    return rows


ABLATION_COLUMNS = [
    ("axis", "parameter varied in this cell; all others at their configured values"),
    ("value", "value of the varied parameter"),
    ("seed", "root seed"),
    ("lora_rank", "adapter rank r"),
    ("alpha", "adapter scaling alpha (the update is (alpha/r) B A)"),
    ("lambda_ortho", "weight of the orthogonality penalty"),
    ("k", "protected subspace size per layer"),
    ("final_interference", "interference metric at the last epoch"),
    ("fact_recall", "fraction of facts recalled within tolerance"),
    ("skill_degradation", "increase in skill error caused by injection"),
]

THEORY_COLUMNS = [
    ("seed", "instance seed"),
    ("theorem_holds", "true when the skill-relevant set is not inside the top-k components"),
    ("skill_set_size", "size of {i : |z_i - 1| > epsilon} after one analytic SVF step"),
    ("topk_hits", "members of that set with index < k"),
    ("epsilon", "relevance threshold C eta_z sigma_max sqrt(delta), C = 1"),
    ("gamma_max_topk", "max_{i<k} |gamma_i|, gamma_i = u_i^T G v_i"),
    ("bound_small", "C1 sqrt(delta_achieved), C1 = sum_j ||g_j|| ||h_j||"),
    ("gamma_star", "max_{i>=k} |gamma_i|"),
    ("bound_large", "c_T / sqrt(n - k), c_T = ||G_T||_F / sqrt(s)"),
    ("i_star", "argmax of |gamma_i| over i >= k"),
    ("small_bound_holds", "gamma_max_topk <= bound_small"),
    ("large_bound_holds", "gamma_star >= bound_large (not guaranteed per instance)"),
    ("forfeited", "sum_{i>=k} (sigma_i gamma_i)^2, first-order loss decrease out of reach of top-k protection"),
    ("floor", "c_T^2 / (n - k)"),
]


def theory_rows(rows) -> list[tuple]:
    return [(r.seed, r.theorem_holds, r.skill_set_size, r.topk_hits, r.epsilon, r.gamma_max_topk,
             r.bound_small, r.gamma_star, r.bound_large, r.i_star, r.small_bound_holds,
             r.large_bound_holds, r.forfeited, r.floor) for r in rows]


# ---------------------------------------------------------------- svg

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")


def svg_line_chart(series: dict, title: str = "", xlabel: str = "", ylabel: str = "",
                   log_y: bool = False, width: int = 640, height: int = 400, markers: bool = False) -> str:
    """Standalone SVG 1.1 with one polyline per series.

    ``series`` maps a label to a sequence of (x, y) points. With ``log_y``
    nonpositive values are clamped to the smallest positive value present.
    """
    if not series:
        raise ContractError("nothing to plot")
    left, right, top, bottom = 64, 16, 32, 48
    pts_all = [(float(x), float(y)) for pts in series.values() for x, y in pts]
    if not pts_all:
        raise ContractError("every series is empty")

    def ty(y):
        if not log_y:
            return y
        return math.log10(max(y, floor))

    positive = [y for _, y in pts_all if y > 0 and math.isfinite(y)]
    floor = min(positive) if positive else 1e-300
    xs = [x for x, _ in pts_all]
    ys = [ty(y) for _, y in pts_all if math.isfinite(y)]
    x0, x1 = min(xs), max(xs)
    y0, y1 = (min(ys), max(ys)) if ys else (0.0, 1.0)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    pw, ph = width - left - right, height - top - bottom

    def px(x):
        return left + (x - x0) / (x1 - x0) * pw

    def py(y):
        return top + (1.0 - (ty(y) - y0) / (y1 - y0)) * ph

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    if title:
        out.append(f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>')
    if xlabel:
        out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 10}" text-anchor="middle" '
                   f'font-size="12">{escape(xlabel)}</text>')
    if ylabel:
        out.append(f'<text x="14" y="{top + ph / 2:.1f}" text-anchor="middle" font-size="12" '
                   f'transform="rotate(-90 14 {top + ph / 2:.1f})">{escape(ylabel)}</text>')
    for frac in (0.0, 0.5, 1.0):
        xv = x0 + frac * (x1 - x0)
        yv = y0 + frac * (y1 - y0)
        ylab = f"1e{yv:.1f}" if log_y else f"{yv:.3g}"
        out.append(f'<text x="{px(xv):.1f}" y="{top + ph + 16}" text-anchor="middle" font-size="10">{xv:.3g}</text>')
        out.append(f'<text x="{left - 4}" y="{top + (1 - frac) * ph + 4:.1f}" text-anchor="end" '
                   f'font-size="10">{ylab}</text>')
    for j, (label, pts) in enumerate(series.items()):
        color = PALETTE[j % len(PALETTE)]
        coords = " ".join(f"{px(float(x)):.2f},{py(float(y)):.2f}" for x, y in pts)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}">'
                   f'<title>{escape(str(label))}</title></polyline>')
        if markers:
            for x, y in pts:
                out.append(f'<circle cx="{px(float(x)):.2f}" cy="{py(float(y)):.2f}" r="2" fill="{color}"/>')
        ly = top + 14 + 14 * j
        out.append(f'<text x="{left + pw - 4}" y="{ly}" text-anchor="end" font-size="11" '
                   f'fill="{color}">{escape(str(label))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def polyline_point_count(svg: str) -> int:
    """Total number of points across all polylines of an SVG produced here."""
    root = ET.fromstring(svg)
    total = 0
    for el in root.iter("{http://www.w3.org/2000/svg}polyline"):
        total += len(el.get("points", "").split())
    return total


# ---------------------------------------------------------------- bundled emission

def emit_reports(runs: list[RunMetrics], out_dir, overlaps: dict | None = None,
                 probe_layers=None, prefix: str = "") -> list[str]:
    """Write curve, comparison and optional probe CSVs plus matching SVGs; returns paths."""
    if not runs:
        raise ContractError("no runs to report")
    overlaps = overlaps or {}
    paths = []
    crows = curve_rows(runs)
    paths.append(write_text(os.path.join(out_dir, f"{prefix}curves.csv"),
                            csv_text(CURVE_COLUMNS, crows, "per-epoch fact loss and interference")))
    for metric, col, log_y in (("sft_loss", 3, True), ("interference", 4, True)):
        series = {}
        for row in crows:
            series.setdefault(f"{row[0]} seed {row[1]}", []).append((row[2], row[col]))
        paths.append(write_text(os.path.join(out_dir, f"{prefix}{metric}.svg"),
                                svg_line_chart(series, metric, "epoch", metric, log_y=log_y)))
    paths.append(write_text(os.path.join(out_dir, f"{prefix}comparison.csv"),
                            csv_text(COMPARISON_COLUMNS, comparison_rows(runs, overlaps),
                                     "protection-mode comparison")))
    if probe_layers:
        prow = probe_rows(probe_layers)
        paths.append(write_text(os.path.join(out_dir, f"{prefix}probe.csv"),
                                csv_text(PROBE_COLUMNS, prow, "sorted SVF scaling deviations")))
        series = {}
        for row in prow:
            series.setdefault(row[0], []).append((row[1], row[5]))
        paths.append(write_text(os.path.join(out_dir, f"{prefix}probe.svg"),
                                svg_line_chart(series, "sorted |z - 1|", "order", "|z - 1|", markers=True)))
    return paths
