"""Command-line surface for the batch pipeline.

Subcommands: ingest, fit, ablate, simulate, curve, report. Exit codes:
0 success, 2 input/config error, 3 convergence failure, 4 internal
error. A flat key=value config file can hold any flag's long name
(dashes or underscores); explicit flags win. All machine outputs are
written atomically (temp file + rename).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile

from . import analytics
from .errors import IafmError, NotConverged
from .glmm import FitOptions, FitResult, fit as fit_model
from .ingest import (
    Dataset,
    apply_filters,
    assign_opportunity_counts,
    dataset_summary,
    parse_interactions,
    rows_to_csv,
)
from .models import ablation_grid
from .synth import GenParams, generate
from .types import FilterConfig

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NOT_CONVERGED = 3
EXIT_INTERNAL = 4


def write_atomic(path: str, text: str):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_config(path: str) -> dict:
    """Flat key=value file; '#' starts a comment, blank lines ignored."""
    values = {}
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key, _, value = line.partition("=")
            values[key.strip().replace("-", "_")] = value.strip()
    return values


def _read_dataset(args) -> Dataset:
    if not args.input:
        raise ValueError("an --input file is required")
    with open(args.input, "rb") as handle:
        records = parse_interactions(handle, args.format)
    rows = assign_opportunity_counts(records)
    return apply_filters(rows, _filter_config(args), provenance=args.input,
                         fixpoint=args.filter_fixpoint)


def _filter_config(args) -> FilterConfig:
    return FilterConfig(
        min_kc_interactions=args.min_kc_interactions,
        max_opportunity_index=args.max_opportunity_index,
    )


def _fit_options(args) -> FitOptions:
    return FitOptions(
        t_scale=args.t_scale,
        outer_tol=args.outer_tol,
        outer_max_iter=args.outer_max_iter,
        random_effects_correlated=args.correlated_random_effects,
        seed=args.seed,
    )


def _model_spec(name: str):
    grid = ablation_grid()
    if name in ("base", "m0"):
        return grid[0]
    if name.startswith("m") and name[1:].isdigit():
        index = int(name[1:])
        if 0 <= index < len(grid):
            return grid[index]
    raise ValueError(f"unknown model {name!r} (expected base or m0..m7)")


def cmd_ingest(args) -> int:
    dataset = _read_dataset(args)
    summary = dataset_summary(dataset)
    out = args.out_dir
    write_atomic(os.path.join(out, "filtered.csv"), rows_to_csv(dataset.rows))
    summary_json = json.dumps(summary.to_dict(), indent=2, sort_keys=True)
    write_atomic(os.path.join(out, "summary.json"), summary_json + "\n")
    print(summary_json)
    return EXIT_OK


def _fit_artifacts(result: FitResult, dataset: Dataset, out: str,
                   reference_offset, prefix: str = "") -> None:
    write_atomic(os.path.join(out, f"{prefix}fit.json"),
                 result.to_json() + "\n")

    theta_summary, delta_summary = analytics.effect_distributions(result)
    distributions = {
        "population": {
            "theta_pop": result.theta_pop,
            "delta_pop": result.delta_pop,
        },
        "student_effects": {
            "theta_s": theta_summary.to_dict(),
            "delta_s": delta_summary.to_dict(),
        },
        "model_prior_sd": {
            "sd_intercept": result.covariance.sd_intercept,
            "sd_slope": result.covariance.sd_slope,
            "rho": result.covariance.rho,
        },
    }
    write_atomic(
        os.path.join(out, f"{prefix}distributions.json"),
        json.dumps(distributions, indent=2, sort_keys=True) + "\n",
    )
    dist_rows = [
        ["initial knowledge (theta_s)"] + [
            getattr(theta_summary, k) for k in
            ("mean", "q1", "median", "q3", "sd")
        ],
        ["learning rate (delta_s)"] + [
            getattr(delta_summary, k) for k in
            ("mean", "q1", "median", "q3", "sd")
        ],
    ]
    text = analytics.render_table(
        ["student effect", "mean", "q1", "median", "q3", "sd"], dist_rows
    )
    write_atomic(os.path.join(out, f"{prefix}distributions.txt"), text)

    table = analytics.mastery_table(result, reference_offset)
    write_atomic(
        os.path.join(out, f"{prefix}mastery.json"),
        json.dumps(table.to_dict(), indent=2, sort_keys=True) + "\n",
    )
    mastery_rows = [
        [
            r.percentile,
            r.knowledge_logodds,
            r.knowledge_percent_correct,
            r.ops_to_mastery_fixed_rate,
            r.rate_logodds_per_opp,
            r.percent_point_improvement,
            r.ops_to_mastery_fixed_knowledge,
        ]
        for r in table.rows
    ]
    write_atomic(
        os.path.join(out, f"{prefix}mastery.txt"),
        analytics.render_table(
            ["percentile", "log-odds", "% correct", "ops to 80% (rate fixed)",
             "rate/opp", "pp improvement", "ops to 80% (knowledge fixed)"],
            mastery_rows,
            float_fmt="{:.4g}",
        ),
    )

    empirical = analytics.empirical_learning_curve(dataset, min_rows=100)
    max_opp = max((pt.opportunity for pt in empirical), default=18)
    predicted = analytics.predicted_learning_curve(result,
                                                   max_opportunity=max_opp)
    merged = analytics.merge_curves(empirical, predicted)
    write_atomic(os.path.join(out, f"{prefix}curve.csv"),
                 analytics.curve_to_csv(merged))


def cmd_fit(args) -> int:
    dataset = _read_dataset(args)
    spec = _model_spec(args.model)
    result = fit_model(dataset, spec, _fit_options(args))
    _fit_artifacts(result, dataset, args.out_dir, args.reference_offset)
    print(
        f"{spec.name}: converged={result.converged} "
        f"loglik={result.marginal_loglik:.4f} "
        f"theta_pop={result.theta_pop:.4f} delta_pop={result.delta_pop:.5f}"
    )
    if not result.converged and not args.allow_nonconverged:
        print(
            f"error: gradient norm {result.gradient_norm:.3g} above "
            f"tolerance after {result.n_outer_iterations} iterations",
            file=sys.stderr,
        )
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_ablate(args) -> int:
    dataset = _read_dataset(args)
    opts = _fit_options(args)
    fits = []
    failures = []
    for spec in ablation_grid():
        try:
            result = fit_model(dataset, spec, opts)
            fits.append((spec, result))
            write_atomic(
                os.path.join(args.out_dir,
                             f"fit_{spec.name.replace(' ', '')}.json"),
                result.to_json() + "\n",
            )
            if not result.converged:
                failures.append(f"{spec.name}: not converged")
        except IafmError as exc:
            failures.append(f"{spec.name}: {exc}")
    if len(fits) == 8:
        rows = analytics.ablation_report(fits)
        write_atomic(
            os.path.join(args.out_dir, "ablation.json"),
            json.dumps(rows, indent=2, sort_keys=True) + "\n",
        )
        headers = ["model", "level", "subject", "kc_type", "theta_pop",
                   "delta_pop", "mean_theta_s", "sd_theta_s",
                   "mean_delta_s", "sd_delta_s"]
        write_atomic(
            os.path.join(args.out_dir, "ablation.txt"),
            analytics.render_table(
                headers, [[r[h] for h in headers] for r in rows]
            ),
        )
        for factor in ("level", "subject", "kc_type"):
            table = analytics.factor_effect_table(fits, factor)
            write_atomic(
                os.path.join(args.out_dir, f"factor_effects_{factor}.json"),
                json.dumps(table, indent=2, sort_keys=True) + "\n",
            )
            write_atomic(
                os.path.join(args.out_dir, f"factor_effects_{factor}.txt"),
                analytics.render_table(
                    ["level", "mean_theta", "mean_delta", "sd_theta",
                     "sd_delta"],
                    [[r["level"], r["mean_theta"], r["mean_delta"],
                      r["sd_theta"], r["sd_delta"]] for r in table],
                ),
            )
        scatter = analytics.subject_scatter_data(fits)
        write_atomic(
            os.path.join(args.out_dir, "subject_scatter.json"),
            json.dumps(scatter, indent=2, sort_keys=True) + "\n",
        )
    for line in failures:
        print(f"error: {line}", file=sys.stderr)
    print(f"fitted {len(fits)}/8 models -> {args.out_dir}")
    if failures:
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def _gen_params(args) -> GenParams:
    kc_effects = None
    if args.kc_type_effect:
        from .synth import declarative_procedural_effects

        kc_effects = declarative_procedural_effects(
            magnitude_theta=args.kc_type_effect,
            magnitude_delta=args.kc_type_slope_effect,
        )
    return GenParams(
        theta_pop=args.theta_pop,
        delta_pop=args.delta_pop,
        sd_theta=args.sd_theta,
        sd_delta=args.sd_delta,
        rho=args.rho,
        beta_by_type={
            "MultipleChoice": args.beta_spread,
            "FillInTheBlank": -args.beta_spread,
            "PairMatching": -args.beta_spread,
            "HighlightTheMistake": args.beta_spread,
        },
        gamma=args.gamma,
        kc_type_effects=kc_effects,
        n_students=args.n_students,
        kcs_per_student=args.kcs_per_student,
        opps_per_kc=args.opps_per_kc,
        simplified_first_k=args.simplified_first_k,
        seed=args.seed,
    )


def cmd_simulate(args) -> int:
    try:
        params = _gen_params(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    dataset, truth = generate(params)
    write_atomic(os.path.join(args.out_dir, "dataset.csv"),
                 rows_to_csv(dataset.rows))
    truth_doc = {
        "params": {
            "theta_pop": params.theta_pop,
            "delta_pop": params.delta_pop,
            "sd_theta": params.sd_theta,
            "sd_delta": params.sd_delta,
            "rho": params.rho,
            "gamma": params.gamma,
            "beta_by_type": params.beta_by_type,
            "n_students": params.n_students,
            "kcs_per_student": params.kcs_per_student,
            "opps_per_kc": params.opps_per_kc,
            "simplified_first_k": params.simplified_first_k,
            "seed": params.seed,
        },
        "student_effects": [
            {"student_id": sid, "theta_s": th, "delta_s": de}
            for sid, (th, de) in sorted(truth.items())
        ],
    }
    write_atomic(
        os.path.join(args.out_dir, "ground_truth.json"),
        json.dumps(truth_doc, indent=2, sort_keys=True) + "\n",
    )
    print(f"wrote {len(dataset.rows)} rows -> {args.out_dir}")
    return EXIT_OK


def cmd_curve(args) -> int:
    dataset = _read_dataset(args)
    empirical = analytics.empirical_learning_curve(dataset,
                                                   min_rows=args.min_rows)
    if args.fit:
        with open(args.fit, "r", encoding="utf-8") as handle:
            result = FitResult.from_json(handle.read())
        max_opp = max((pt.opportunity for pt in empirical), default=18)
        predicted = analytics.predicted_learning_curve(
            result, max_opportunity=max_opp
        )
        points = analytics.merge_curves(empirical, predicted)
    else:
        points = empirical
    csv_text = analytics.curve_to_csv(points)
    write_atomic(os.path.join(args.out_dir, "curve.csv"), csv_text)
    print(csv_text, end="")
    return EXIT_OK


def cmd_report(args) -> int:
    with open(args.fit, "r", encoding="utf-8") as handle:
        result = FitResult.from_json(handle.read())
    theta_summary, delta_summary = analytics.effect_distributions(result)
    lines = []
    lines.append(f"model: {result.model.name}   converged: {result.converged}")
    lines.append(
        f"marginal loglik: {result.marginal_loglik:.4f}   "
        f"outer iterations: {result.n_outer_iterations}"
    )
    lines.append("")
    lines.append(analytics.render_table(
        ["parameter", "population", "mean", "q1", "median", "q3", "sd"],
        [
            ["initial knowledge", result.theta_pop, theta_summary.mean,
             theta_summary.q1, theta_summary.median, theta_summary.q3,
             theta_summary.sd],
            ["learning rate", result.delta_pop, delta_summary.mean,
             delta_summary.q1, delta_summary.median, delta_summary.q3,
             delta_summary.sd],
        ],
        float_fmt="{:.4g}",
    ))
    lines.append(
        f"model prior SDs: intercept {result.covariance.sd_intercept:.4g}, "
        f"slope {result.covariance.sd_slope:.4g}, "
        f"rho {result.covariance.rho:.4g}"
    )
    table = analytics.mastery_table(result, args.reference_offset)
    lines.append("")
    lines.append(f"mastery table (reference offset "
                 f"{table.reference_offset:.4g}, target {table.target:.0%}):")
    lines.append(analytics.render_table(
        ["percentile", "log-odds", "% correct", "ops to 80% (rate fixed)",
         "rate/opp", "pp improvement", "ops to 80% (knowledge fixed)"],
        [
            [r.percentile, r.knowledge_logodds, r.knowledge_percent_correct,
             r.ops_to_mastery_fixed_rate, r.rate_logodds_per_opp,
             r.percent_point_improvement, r.ops_to_mastery_fixed_knowledge]
            for r in table.rows
        ],
        float_fmt="{:.4g}",
    ))
    lines.append(
        "IQR across students: initial knowledge "
        f"{analytics.iqr_percent_initial_knowledge(result, args.reference_offset):.2f}% "
        "vs learning rate "
        f"{analytics.iqr_percent_learning_rate(result, args.reference_offset):.2f}pp"
    )
    text = "\n".join(lines) + "\n"
    if args.out_dir:
        write_atomic(os.path.join(args.out_dir, "report.txt"), text)
    print(text, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="iafm",
        description="Learning-curve analytics: model fitting and reports "
                    "for practice-opportunity logs.",
    )
    parser.add_argument("--config", help="flat key=value config file")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_input=True):
        if needs_input:
            p.add_argument("--input", required=False,
                           help="input interactions file")
            p.add_argument("--format", choices=["CSV", "JSONL"],
                           default="CSV")
            p.add_argument("--min-kc-interactions", type=int, default=5)
            p.add_argument("--max-opportunity-index", type=int, default=30)
            p.add_argument("--filter-fixpoint", action="store_true",
                           help="iterate both filters to a fixpoint")
        p.add_argument("--out-dir", default=".")
        p.add_argument("--seed", type=int, default=0)

    def fit_flags(p):
        p.add_argument("--model", default="base",
                       help="base or m0..m7")
        p.add_argument("--t-scale", type=float, default=0.01)
        p.add_argument("--outer-tol", type=float, default=1e-6)
        p.add_argument("--outer-max-iter", type=int, default=500)
        p.add_argument("--reference-offset", type=float, default=None)
        p.add_argument("--allow-nonconverged", action="store_true")
        p.add_argument("--correlated-random-effects", action="store_true",
                       help="estimate the intercept-slope correlation")

    p_ingest = sub.add_parser("ingest", help="parse, filter, summarize")
    common(p_ingest)
    p_ingest.set_defaults(func=cmd_ingest)

    p_fit = sub.add_parser("fit", help="fit one model, write artifacts")
    common(p_fit)
    fit_flags(p_fit)
    p_fit.set_defaults(func=cmd_fit)

    p_ablate = sub.add_parser("ablate", help="fit all 8 factor models")
    common(p_ablate)
    fit_flags(p_ablate)
    p_ablate.set_defaults(func=cmd_ablate)

    p_sim = sub.add_parser("simulate", help="generate a synthetic dataset")
    common(p_sim, needs_input=False)
    p_sim.add_argument("--theta-pop", type=float, default=0.686)
    p_sim.add_argument("--delta-pop", type=float, default=0.0657)
    p_sim.add_argument("--sd-theta", type=float, default=0.461)
    p_sim.add_argument("--sd-delta", type=float, default=0.0121)
    p_sim.add_argument("--rho", type=float, default=0.0)
    p_sim.add_argument("--gamma", type=float, default=0.3)
    p_sim.add_argument("--beta-spread", type=float, default=0.2)
    p_sim.add_argument("--kc-type-effect", type=float, default=0.0,
                       help="inject +/- intercept effects by KC type")
    p_sim.add_argument("--kc-type-slope-effect", type=float, default=0.0)
    p_sim.add_argument("--n-students", type=int, default=2000)
    p_sim.add_argument("--kcs-per-student", type=int, default=10)
    p_sim.add_argument("--opps-per-kc", type=int, default=10)
    p_sim.add_argument("--simplified-first-k", type=int, default=2)
    p_sim.set_defaults(func=cmd_simulate)

    p_curve = sub.add_parser("curve", help="emit learning-curve CSV")
    common(p_curve)
    p_curve.add_argument("--fit", help="fit.json for the predicted series")
    p_curve.add_argument("--min-rows", type=int, default=100)
    p_curve.set_defaults(func=cmd_curve)

    p_report = sub.add_parser("report", help="human-readable fit report")
    common(p_report, needs_input=False)
    p_report.add_argument("--fit", required=True)
    p_report.add_argument("--reference-offset", type=float, default=None)
    p_report.set_defaults(func=cmd_report)

    return parser


def _apply_config(parser, argv):
    """Pre-parse --config and inject file values as argument defaults."""
    args, _ = parser.parse_known_args(argv)
    if not getattr(args, "config", None):
        return argv
    values = load_config(args.config)
    # Flags given explicitly on the command line win over file values.
    given = {a.lstrip("-").replace("-", "_").split("=")[0] for a in argv
             if a.startswith("--")}
    extra = []
    for key, value in values.items():
        if key in given or key == "config":
            continue
        flag = "--" + key.replace("_", "-")
        if value.lower() in ("true", "false"):
            if value.lower() == "true":
                extra.append(flag)
        else:
            extra.extend([flag, value])
    return argv + extra


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _apply_config(parser, argv)
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except NotConverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    except (IafmError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # pragma: no cover
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
