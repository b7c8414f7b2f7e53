"""Plot-ready CSV emission and the human-readable run report.

Every emitted file starts with a `# sparselab-<kind> v<schema>` line.
The report is a pure function of whatever output files exist in the
results directory; absent inputs are listed by name instead of failing.
"""

from __future__ import annotations

import os
from pathlib import Path

from .analysis import ScalingFit, predict_steps
from .harness import read_summary

SCHEMA = 1

SUMMARY_FILE = "summary.csv"
FITS_FILE = "fits.csv"
TRACES_FILE = "traces.csv"
THEORY_FILE = "theory.csv"
RATIOS_FILE = "ratios.csv"
REPORT_FILE = "report.md"


def write_fits(path, fits: dict):
    """fits: {sparsity: ScalingFit}; one row per measured (B, s) with the
    fitted prediction alongside, plus the fit constants and residual."""
    with open(path, "w") as f:
        f.write(f"# sparselab-fits v{SCHEMA}\n")
        f.write("B,s,K_star,K_hat,form,c1,c2,residual\n")
        for s, fit in sorted(fits.items()):
            for b, k in fit.points:
                f.write(f"{int(b)},{s},{int(k)},{predict_steps(fit, b):.4f},"
                        f"{fit.form},{fit.c1:.6g},{fit.c2:.6g},{fit.residual:.6g}\n")


def read_fits(path) -> dict:
    fits: dict = {}
    points: dict = {}
    with open(path) as f:
        lines = [ln.strip() for ln in f if not ln.startswith("#")]
    for line in lines[1:]:
        b, s, k_star, _, form, c1, c2, residual = line.split(",")
        s = float(s)
        points.setdefault(s, []).append((float(b), float(k_star)))
        fits[s] = (form, float(c1), float(c2), float(residual))
    return {s: ScalingFit(form, c1, c2, residual, tuple(points[s]))
            for s, (form, c1, c2, residual) in fits.items()}


def write_traces(path, traces: dict):
    """traces: {sparsity: SmoothnessTrace}."""
    with open(path, "w") as f:
        f.write(f"# sparselab-traces v{SCHEMA}\n")
        f.write("s,step,lipschitz_hat\n")
        for s, trace in sorted(traces.items()):
            for step, value in trace.entries:
                text = "" if value is None else f"{value:.8g}"
                f.write(f"{s},{step},{text}\n")


def write_theory(path, rows: list):
    """rows: dicts with s, L_avg, beta, delta plus provenance fields."""
    with open(path, "w") as f:
        f.write(f"# sparselab-theory v{SCHEMA}\n")
        f.write("s,L_avg,beta,delta,eta_bar,batch_size,steps,stride\n")
        for r in sorted(rows, key=lambda r: r["s"]):
            f.write(f"{r['s']},{r['L_avg']:.8g},{r['beta']:.8g},{r['delta']:.8g},"
                    f"{r['eta_bar']:.8g},{r['batch_size']},{r['steps']},{r['stride']}\n")


def read_theory(path) -> list:
    rows = []
    with open(path) as f:
        lines = [ln.strip() for ln in f if not ln.startswith("#")]
    for line in lines[1:]:
        s, l_avg, beta, delta, eta, b, steps, stride = line.split(",")
        rows.append({"s": float(s), "L_avg": float(l_avg), "beta": float(beta),
                     "delta": float(delta), "eta_bar": float(eta),
                     "batch_size": int(b), "steps": int(steps), "stride": int(stride)})
    return rows


def write_ratios(path, rows: list):
    """rows: dicts from analysis.ratio_report plus the sparsity compared."""
    with open(path, "w") as f:
        f.write(f"# sparselab-ratios v{SCHEMA}\n")
        f.write("s,delta_ratio,beta_ratio,L_ratio,c1_ratio,c1_ratio_fitted\n")
        for r in sorted(rows, key=lambda r: r["s"]):
            fitted = r.get("c1_ratio_fitted")
            fitted_text = "" if fitted is None else f"{fitted:.6g}"
            f.write(f"{r['s']},{r['delta_ratio']:.6g},{r['beta_ratio']:.6g},"
                    f"{r['L_ratio']:.6g},{r['c1_ratio']:.6g},{fitted_text}\n")


def read_ratios(path) -> list:
    rows = []
    with open(path) as f:
        lines = [ln.strip() for ln in f if not ln.startswith("#")]
    for line in lines[1:]:
        s, dr, br, lr, cr, fitted = line.split(",")
        rows.append({"s": float(s), "delta_ratio": float(dr), "beta_ratio": float(br),
                     "L_ratio": float(lr), "c1_ratio": float(cr),
                     "c1_ratio_fitted": float(fitted) if fitted else None})
    return rows


# ---------------------------------------------------------------------------
# Report rendering
# ---------------------------------------------------------------------------

def _scaling_section(rows: list) -> list:
    lines = ["## Scaling: steps-to-result by batch size", ""]
    sparsities = sorted({r["s"] for r in rows})
    for s in sparsities:
        sub = sorted((r for r in rows if r["s"] == s and r["K_star"] is not None),
                     key=lambda r: r["B"])
        lines.append(f"### sparsity {s:g}")
        lines.append("")
        lines.append("| B | K* | K*/K*(B_min) | complete | incomplete | infeasible |")
        lines.append("|---|----|--------------|----------|------------|------------|")
        base = sub[0]["K_star"] if sub else None
        for r in sorted((r for r in rows if r["s"] == s), key=lambda r: r["B"]):
            k = r["K_star"]
            k_text = str(k) if k is not None else "-"
            norm = f"{k / base:.4f}" if (k is not None and base) else "-"
            lines.append(f"| {r['B']} | {k_text} | {norm} | {r['n_complete']} "
                         f"| {r['n_incomplete']} | {r['n_infeasible']} |")
        lines.append("")
    return lines


def _fit_section(fits: dict) -> list:
    lines = ["## Scaling-law fits", "",
             "| sparsity | form | c1 | c2 | RMS rel. residual |",
             "|----------|------|----|----|-------------------|"]
    for s, fit in sorted(fits.items()):
        lines.append(f"| {s:g} | {fit.form} | {fit.c1:.6g} | {fit.c2:.6g} "
                     f"| {fit.residual:.4g} |")
    lines.append("")
    return lines


def _smoothness_section(theory_rows: list) -> list:
    lines = ["## Smoothness and variance constants", "",
             "| sparsity | avg Lipschitz | beta (B=1 variance) | delta |",
             "|----------|---------------|---------------------|-------|"]
    for r in theory_rows:
        lines.append(f"| {r['s']:g} | {r['L_avg']:.6g} | {r['beta']:.6g} "
                     f"| {r['delta']:.6g} |")
    lines.append("")
    return lines


def _ratio_section(ratio_rows: list) -> list:
    lines = ["## Sparse/dense ratio decomposition", "",
             "| sparsity | delta ratio | beta ratio | L ratio | c1 ratio "
             "| fitted c1 ratio |",
             "|----------|-------------|------------|---------|----------"
             "|-----------------|"]
    for r in ratio_rows:
        fitted = r["c1_ratio_fitted"]
        fitted_text = f"{fitted:.6g}" if fitted is not None else "-"
        lines.append(f"| {r['s']:g} | {r['delta_ratio']:.6g} | {r['beta_ratio']:.6g} "
                     f"| {r['L_ratio']:.6g} | {r['c1_ratio']:.6g} | {fitted_text} |")
    lines.append("")
    return lines


def render_report(results_dir) -> str:
    results_dir = Path(results_dir)
    lines = [f"# sparselab report (schema v{SCHEMA})", "",
             f"results directory: `{os.fspath(results_dir)}`", ""]
    missing, sections = [], 0

    summary_path = results_dir / SUMMARY_FILE
    if summary_path.exists():
        lines += _scaling_section(read_summary(summary_path))
        sections += 1
    else:
        missing.append(SUMMARY_FILE)

    fits_path = results_dir / FITS_FILE
    if fits_path.exists():
        lines += _fit_section(read_fits(fits_path))
        sections += 1
    else:
        missing.append(FITS_FILE)

    theory_path = results_dir / THEORY_FILE
    if theory_path.exists():
        lines += _smoothness_section(read_theory(theory_path))
        sections += 1
    else:
        missing.append(THEORY_FILE)

    ratios_path = results_dir / RATIOS_FILE
    if ratios_path.exists():
        lines += _ratio_section(read_ratios(ratios_path))
        sections += 1
    else:
        missing.append(RATIOS_FILE)

    lines.append(f"Sections rendered: {sections}")
    if missing:
        lines.append("")
        lines.append("Missing inputs: " + ", ".join(missing))
    lines.append("")
    return "\n".join(lines)
