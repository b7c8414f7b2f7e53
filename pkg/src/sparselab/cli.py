"""Command-line front door.

Subcommands mirror the measurement workflow:

    run        execute (or resume) a study, writing records + summary
    fit        fit the scaling law to a study summary, per sparsity
    lipschitz  trace local smoothness / beta / delta per sparsity
    ratios     sparse-vs-dense decomposition of the c1 constant
    report     render everything found in the results directory

Exit codes: 0 success, 2 config error, 3 partial results, 4 I/O error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import analysis, report
from .config import echo_config, load_config
from .exceptions import ConfigError, InsufficientDataError
from .harness import (StudyPoint, _shaped, prune_at_init, read_summary,
                      resolve_dataset, run_study, write_summary)
from .models import build_model

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PARTIAL = 3
EXIT_IO = 4

FORM_NAMES = {"fixed": "fixed-lr", "decay": "decaying-lr"}


def _parse_grid_override(text: str):
    """'B=2,4,8;s=0,0.9' -> (batch sizes, sparsities); either part optional."""
    batches, sparsities = None, None
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        key, _, values = part.partition("=")
        if key == "B":
            batches = [int(v) for v in values.split(",")]
        elif key == "s":
            sparsities = [float(v) for v in values.split(",")]
        else:
            raise ConfigError(f"bad grid override key {key!r} (use B= and s=)")
    return batches, sparsities


def _load(args):
    cfg = load_config(args.config)
    if getattr(args, "budget", None) is not None:
        cfg.budget = args.budget
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "grid_override", None):
        batches, sparsities = _parse_grid_override(args.grid_override)
        if batches is not None:
            cfg.batch_sizes = batches
        if sparsities is not None:
            cfg.sparsities = sparsities
    return cfg


def cmd_run(args) -> int:
    cfg = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    print(echo_config(cfg))

    done = [0]

    def progress(rec):
        done[0] += 1
        print(f"  [{done[0]}] B={rec.batch_size} s={rec.sparsity} "
              f"trial={rec.trial_index} -> {rec.status}"
              + (f" K={rec.steps_to_goal}" if rec.steps_to_goal else ""))

    table = run_study(cfg, out / "records.jsonl", workers=args.workers,
                      progress=progress if args.verbose else None)
    write_summary(table, out / report.SUMMARY_FILE)

    incomplete_points = [(c.batch_size, c.sparsity) for c in table.cells
                         if c.k_star is None]
    for c in table.cells:
        k = c.k_star if c.k_star is not None else "-"
        print(f"B={c.batch_size} s={c.sparsity}: K*={k} "
              f"({c.n_complete}/{c.n_incomplete}/{c.n_infeasible} "
              f"complete/incomplete/infeasible)")
    if incomplete_points:
        print(f"{len(incomplete_points)} study point(s) without a complete trial: "
              f"{incomplete_points}")
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_fit(args) -> int:
    out = Path(args.out)
    summary_path = Path(args.summary) if args.summary else out / report.SUMMARY_FILE
    if not summary_path.exists():
        print(f"no summary at {summary_path}; run `sparselab run` first",
              file=sys.stderr)
        return EXIT_IO
    rows = read_summary(summary_path)
    form = FORM_NAMES[args.form]

    fits = {}
    for s in sorted({r["s"] for r in rows}):
        points = [(r["B"], r["K_star"]) for r in rows
                  if r["s"] == s and r["K_star"] is not None]
        try:
            fits[s] = analysis.fit_scaling(points, form)
        except InsufficientDataError:
            print(f"skip: sparsity {s:g} has fewer than 2 batch sizes with a K*")
            continue
        fit = fits[s]
        c1_label, c2_label = fit.constant_labels()
        print(f"sparsity {s:g}: {c1_label}={fit.c1:.6g} {c2_label}={fit.c2:.6g} "
              f"residual={fit.residual:.4g}")
    if not fits:
        return EXIT_PARTIAL
    report.write_fits(out / report.FITS_FILE, fits)
    print(f"wrote {out / report.FITS_FILE}")
    return EXIT_OK


def _trace_eta(args, rows, sparsity):
    if args.eta is not None:
        return args.eta
    for r in rows:
        if r["s"] == sparsity and r["B"] == args.batch_size and r.get("eta_star"):
            return float(r["eta_star"])
    raise ConfigError(
        f"no --eta given and no best learning rate in the summary for "
        f"B={args.batch_size}, s={sparsity}")


def cmd_lipschitz(args) -> int:
    cfg = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary_path = out / report.SUMMARY_FILE
    rows = read_summary(summary_path) if summary_path.exists() else []

    traces, theory_rows = {}, []
    for s in cfg.sparsities:
        eta = _trace_eta(args, rows, s)
        metaparams = {"eta_bar": eta}
        if args.momentum is not None:
            metaparams["momentum_coeff"] = args.momentum
        point = StudyPoint(args.batch_size, s)
        trace = analysis.trace_smoothness(
            cfg.workload, point, metaparams, stride=args.stride,
            num_steps=args.steps, seed=cfg.seed, data_root=cfg.data_root)
        traces[s] = trace

        train, _ = resolve_dataset(cfg.workload, cfg.data_root)
        probe = prune_at_init(build_model(cfg.workload.model_spec), train, s,
                              cfg.workload.data_seed)
        beta = analysis.estimate_beta(
            probe, _shaped(train.inputs, cfg.workload.model_spec), train.labels)
        delta = analysis.estimate_delta(trace.losses)
        theory_rows.append({"s": s, "L_avg": trace.average, "beta": beta,
                            "delta": delta, "eta_bar": eta,
                            "batch_size": args.batch_size, "steps": args.steps,
                            "stride": args.stride})
        print(f"sparsity {s:g}: avg L_hat={trace.average:.6g} beta={beta:.6g} "
              f"delta={delta:.6g}")

    report.write_traces(out / report.TRACES_FILE, traces)
    report.write_theory(out / report.THEORY_FILE, theory_rows)
    print(f"wrote {out / report.TRACES_FILE} and {out / report.THEORY_FILE}")
    return EXIT_OK


def cmd_ratios(args) -> int:
    out = Path(args.out)
    theory_path = out / report.THEORY_FILE
    if not theory_path.exists():
        print(f"no theory constants at {theory_path}; run `sparselab lipschitz` "
              f"first", file=sys.stderr)
        return EXIT_IO
    rows = report.read_theory(theory_path)
    dense = next((r for r in rows if r["s"] == 0.0), None)
    if dense is None:
        print("theory table has no dense (s=0) baseline", file=sys.stderr)
        return EXIT_PARTIAL

    fits_path = out / report.FITS_FILE
    fits = report.read_fits(fits_path) if fits_path.exists() else {}
    dense_params = analysis.TheoryParams(
        L=dense["L_avg"], beta=dense["beta"], delta=dense["delta"])

    ratio_rows = []
    for r in rows:
        if r["s"] == 0.0:
            continue
        sparse_params = analysis.TheoryParams(
            L=r["L_avg"], beta=r["beta"], delta=r["delta"])
        ratios = analysis.ratio_report(sparse_params, dense_params)
        fitted = None
        if 0.0 in fits and r["s"] in fits and fits[0.0].c1 > 0:
            fitted = fits[r["s"]].c1 / fits[0.0].c1
        ratio_rows.append({"s": r["s"], **ratios, "c1_ratio_fitted": fitted})
        print(f"s={r['s']:g}: delta x beta x L = {ratios['delta_ratio']:.3g} x "
              f"{ratios['beta_ratio']:.3g} x {ratios['L_ratio']:.3g} = "
              f"{ratios['c1_ratio']:.3g}"
              + (f" (fitted {fitted:.3g})" if fitted else ""))

    report.write_ratios(out / report.RATIOS_FILE, ratio_rows)
    print(f"wrote {out / report.RATIOS_FILE}")
    return EXIT_OK


def cmd_report(args) -> int:
    text = report.render_report(args.out)
    out_path = Path(args.out) / report.REPORT_FILE
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(text)
    print(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sparselab",
        description="Batch-size scaling and sparsity measurement laboratory.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        if config_required:
            p.add_argument("--config", required=True, help="experiment config file")
        p.add_argument("--out", default="results", help="results directory")

    p_run = sub.add_parser("run", help="run or resume a study")
    common(p_run)
    p_run.add_argument("--workers", type=int, default=1)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--budget", type=int, default=None)
    p_run.add_argument("--grid-override", default=None,
                       help="e.g. 'B=2,4,8;s=0,0.9'")
    p_run.add_argument("--verbose", action="store_true")
    p_run.set_defaults(func=cmd_run)

    p_fit = sub.add_parser("fit", help="fit the scaling law to a summary")
    common(p_fit, config_required=False)
    p_fit.add_argument("--summary", default=None, help="summary.csv path")
    p_fit.add_argument("--form", choices=sorted(FORM_NAMES), default="fixed")
    p_fit.set_defaults(func=cmd_fit)

    p_lip = sub.add_parser("lipschitz", help="smoothness traces per sparsity")
    common(p_lip)
    p_lip.add_argument("--stride", type=int, default=100)
    p_lip.add_argument("--steps", type=int, default=2000)
    p_lip.add_argument("--batch-size", type=int, default=16)
    p_lip.add_argument("--eta", type=float, default=None,
                       help="learning rate for the trace runs "
                            "(default: best from the summary)")
    p_lip.add_argument("--momentum", type=float, default=None)
    p_lip.add_argument("--seed", type=int, default=None)
    p_lip.add_argument("--budget", type=int, default=None)
    p_lip.add_argument("--grid-override", default=None)
    p_lip.set_defaults(func=cmd_lipschitz)

    p_ratio = sub.add_parser("ratios", help="sparse/dense c1 decomposition")
    common(p_ratio, config_required=False)
    p_ratio.set_defaults(func=cmd_ratios)

    p_report = sub.add_parser("report", help="render the results directory")
    common(p_report, config_required=False)
    p_report.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as e:
        print(f"missing file: {e}", file=sys.stderr)
        return EXIT_IO
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
