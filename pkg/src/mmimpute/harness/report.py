"""Report files: metrics CSVs, a mean-AUC table and SVG sweep plots.

Output is a pure function of (rows, config), so re-emitting the same rows
gives byte-identical files. Each file carries the config digest and the
package version.
"""
import hashlib
import os
from collections import defaultdict
from xml.sax.saxutils import escape

import numpy as np

from mmimpute import __version__
from mmimpute.downstream import rows_to_csv

W, H, PAD = 480, 320, 48
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


class ReportError(OSError):
    pass


def provenance(cfg):
    return [f"config_digest {cfg.digest()}", f"mmimpute {__version__}"]


def _check_outdir(outdir):
    try:
        os.makedirs(outdir, exist_ok=True)
    except OSError as e:
        raise ReportError(f"cannot create output directory {outdir}: {e}") from None
    if not os.access(outdir, os.W_OK):
        raise ReportError(f"output directory {outdir} is not writable")


def _write(path, text):
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def _ok(rows):
    return [r for r in rows if r.status == "ok"]


def grid_table(rows):
    """Mean AUC (over seeds) per (image imputer, factor imputer), as text."""
    cells = defaultdict(list)
    for r in _ok(rows):
        cells[(r.image_imputer, r.factor_imputer)].append(r.auc)
    row_names = list(dict.fromkeys(r.image_imputer for r in rows))
    col_names = list(dict.fromkeys(r.factor_imputer for r in rows))
    width = max([len(c) for c in col_names] + [6]) + 2
    lines = ["image \\ factors".ljust(16) + "".join(c.rjust(width) for c in col_names)]
    for rn in row_names:
        vals = [cells.get((rn, cn)) for cn in col_names]
        lines.append(rn.ljust(16) + "".join(
            (f"{np.mean(v):.4f}" if v else "-").rjust(width) for v in vals))
    return "\n".join(lines) + "\n"


def sweep_series(rows):
    """{method: [(rate, mean AUC), ...]} sorted by rate."""
    acc = defaultdict(lambda: defaultdict(list))
    for r in _ok(rows):
        varies_factors = r.image_imputer in ("drop-image", "full") and r.factor_imputer not in ("full",)
        method = r.factor_imputer if varies_factors else r.image_imputer
        rate = r.factor_rate if varies_factors else r.tp1_rate
        acc[method][rate].append(r.auc)
    return {m: sorted((rate, float(np.mean(v))) for rate, v in d.items()) for m, d in sorted(acc.items())}


def sweep_svg(series, title, prov):
    """One polyline per method; x = missing rate in [0, 1], y = AUC."""
    ys = [a for pts in series.values() for _, a in pts] or [0.5]
    lo = np.floor(min(ys) * 20) / 20
    hi = max(np.ceil(max(ys) * 20) / 20, lo + 0.05)
    sx = lambda x: PAD + x * (W - 2 * PAD)
    sy = lambda y: H - PAD - (y - lo) / (hi - lo) * (H - 2 * PAD)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">']
    out += [f"<!-- {escape(p)} -->" for p in prov]
    out.append(f'<text x="{W / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>')
    out.append(f'<line x1="{PAD}" y1="{H - PAD}" x2="{W - PAD}" y2="{H - PAD}" stroke="black"/>')
    out.append(f'<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{H - PAD}" stroke="black"/>')
    for t in np.linspace(0, 1, 6):
        out.append(f'<text x="{sx(t):.1f}" y="{H - PAD + 16}" text-anchor="middle" font-size="10">{t:.1f}</text>')
    for t in np.linspace(lo, hi, 5):
        out.append(f'<text x="{PAD - 6}" y="{sy(t) + 3:.1f}" text-anchor="end" font-size="10">{t:.3f}</text>')
    out.append(f'<text x="{W / 2:.1f}" y="{H - 10}" text-anchor="middle" font-size="11">missing rate</text>')
    for i, (method, pts) in enumerate(series.items()):
        color = COLORS[i % len(COLORS)]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{coords}" '
                   f'data-method="{escape(method)}"/>')
        out.append(f'<text x="{W - PAD + 4}" y="{PAD + 14 * i}" font-size="11" fill="{color}">{escape(method)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_report(cfg, outdir, grid_rows=(), sweep_rows=()):
    """Write report files; returns {filename: sha256}."""
    grid_rows, sweep_rows = list(grid_rows), list(sweep_rows)
    if not grid_rows and not sweep_rows:
        raise ValueError("emit_report: no rows to report")
    _check_outdir(outdir)
    prov = provenance(cfg)
    files = {}
    if grid_rows:
        files["grid.csv"] = rows_to_csv(grid_rows, prov)
        files["grid_table.txt"] = "".join(f"# {p}\n" for p in prov) + grid_table(grid_rows)
    if sweep_rows:
        files["sweep.csv"] = rows_to_csv(sweep_rows, prov)
        axis = "factor" if any(r.factor_rate > 0 for r in sweep_rows) else "tp1"
        files["sweep.svg"] = sweep_svg(sweep_series(sweep_rows), f"AUC vs {axis} missing rate", prov)
    files["config.cfg"] = "".join(f"# {p}\n" for p in prov) + cfg.canonical()
    digests = {}
    for name, text in sorted(files.items()):
        _write(os.path.join(outdir, name), text)
        digests[name] = hashlib.sha256(text.encode()).hexdigest()
    return digests
