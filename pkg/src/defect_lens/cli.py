"""Command-line entry point: ``defect-lens <subcommand> ...``.

Exit codes: 0 success, 1 input or usage error, 2 numerical failure
(non-converged fit under ``--strict``).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime
import logging
import math
import os
import sys
from typing import Any, Optional, Sequence

import numpy as np

from . import __version__
from .assist import assisted_series
from .changepoint import ChangePointConfig, bcp_posterior
from .decomp import DEFAULT_FACTORS, decompose, sensitivity_sweep
from .estimands import (
    SubgroupTable,
    WavePair,
    diff_error,
    diff_neff,
    diff_neff_decomposed,
    reldiff_error,
    reldiff_error_decomposed,
    reldiff_neff,
    reldiff_neff_decomposed,
    subgroup_decompose,
    subgroup_sigma,
)
from .io import (
    InputError,
    align,
    decomposition_to_dict,
    emit_report,
    factor_key,
    iter_rows,
    parse_series,
    put_float,
    to_incident,
)
from .schema import validate_report
from .simlab import (
    SelectionMechanism,
    apply_selection,
    exact_ddc,
    generate_population,
    verify_identity,
)

log = logging.getLogger("defect_lens")

DEFAULT_SEED = 20210118
SEED_ENV = "DEFECT_LENS_SEED"

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2


class UsageError(Exception):
    pass


class NumericalFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse would exit with 2
        raise UsageError(f"{self.prog}: error: {message}")


def _factors(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad factor list {text!r}") from None
    if not vals or any(not v > 0 for v in vals):
        raise argparse.ArgumentTypeError("factors must be positive numbers")
    return vals


def _default_seed() -> int:
    env = os.environ.get(SEED_ENV)
    if env is None:
        return DEFAULT_SEED
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    g = common.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=None, help=f"RNG seed (default {DEFAULT_SEED} or ${SEED_ENV})")
    g.add_argument("--out", default="defect-lens-out", help="output directory")
    g.add_argument("--format", choices=("json", "csv", "both"), default="both")
    mode = g.add_mutually_exclusive_group()
    mode.add_argument("--binary", dest="binary", action="store_true", default=True)
    mode.add_argument("--continuous", dest="binary", action="store_false")
    g.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="defect-lens", description="Selection-bias diagnostics for survey estimates.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("decompose", parents=[common], help="error decomposition + sensitivity sweep")
    s.add_argument("--survey", required=True)
    s.add_argument("--benchmark", required=True)
    s.add_argument("--factors", type=_factors, default=DEFAULT_FACTORS)
    s.add_argument("--align", choices=("exact", "nearest_preceding"), default="exact")

    s = sub.add_parser("diff", parents=[common], help="successive-difference effective sample sizes")
    s.add_argument("--survey", required=True)
    s.add_argument("--benchmark", required=True)
    s.add_argument("--relative", action="store_true", help="also the relative successive difference")
    s.add_argument("--decomposed", action="store_true", help="also evaluate through per-wave ddcs")
    s.add_argument("--exact", action="store_true", help="finite-population form of the difference n_eff")
    s.add_argument("--align", choices=("exact", "nearest_preceding"), default="exact")
    s.add_argument("--population-size", type=int, default=None, help="override the constant N")

    s = sub.add_parser("subgroup", parents=[common], help="subgroup-difference decomposition")
    s.add_argument("--survey-a", required=True, help="group I (G=0) survey file")
    s.add_argument("--survey-b", required=True, help="group II (G=1) survey file")
    s.add_argument("--benchmark-gap", required=True,
                   help="CSV with date,N_I,N_II,ybar_I,ybar_II[,p11]")
    s.add_argument("--p11", type=float, default=None, help="share with Y=1 and G=1 (overrides file)")
    s.add_argument("--sigma", choices=("paper", "exact"), default="exact")

    s = sub.add_parser("assist", parents=[common], help="model-assisted estimates + decomposition")
    s.add_argument("--target", required=True, help="paired file (date,a,b,n) of the survey under study")
    s.add_argument("--probability-survey", required=True, help="paired file (date,a,b,n) used to fit the link")
    s.add_argument("--benchmark", required=True, help="benchmark for the response (b) variable")
    s.add_argument("--factors", type=_factors, default=DEFAULT_FACTORS)
    s.add_argument("--direction", choices=("response_on_covariate", "covariate_on_response"),
                   default="response_on_covariate")
    s.add_argument("--strict", action="store_true", help="non-converged fit exits with code 2")

    s = sub.add_parser("changepoint", parents=[common], help="Bayesian change-point detection")
    s.add_argument("--series", required=True, help="CSV with date,value (or date,ybar)")
    s.add_argument("--incident", action="store_true", help="difference a cumulative series first")
    s.add_argument("--p0", type=float, default=0.2)
    s.add_argument("--w0", type=float, default=0.2)
    s.add_argument("--iters", type=int, default=5000)
    s.add_argument("--burn", type=int, default=500)
    s.add_argument("--threshold", type=float, default=0.6)
    s.add_argument("--chains", type=int, default=1)

    s = sub.add_parser("simulate", parents=[common], help="finite-population oracle runs")
    s.add_argument("--n-pop", type=int, required=True)
    s.add_argument("--prevalence", type=float, required=True)
    s.add_argument("--mechanism", required=True, help="srs:N | logistic:ALPHA,BETA | fixed:I,J,...")
    s.add_argument("--replicates", type=int, default=1000)
    return p


def _config_echo(args: argparse.Namespace, **extra: Any) -> dict:
    cfg = {
        "seed": args.seed,
        "binary": args.binary,
        "format": args.format,
    }
    cfg.update(extra)
    return cfg


def _sweep_block(decs) -> dict:
    return {factor_key(d.sensitivity_factor): decomposition_to_dict(d) for d in decs}


def cmd_decompose(args) -> tuple[dict, list[dict], str]:
    survey = parse_series(args.survey, "survey", args.binary)
    bench = parse_series(args.benchmark, "benchmark", args.binary)
    matched = align(survey, bench, args.align)
    results, table = [], []
    for s, b in matched:
        decs = sensitivity_sweep(s, b, args.factors)
        results.append({
            "date": s.date.isoformat(),
            "benchmark_date": b.date.isoformat(),
            "survey_n": s.sample_size,
            "survey_mean": s.sample_mean,
            "benchmark_N": b.population_size,
            "benchmark_mean": b.population_mean,
            "sweep": _sweep_block(decs),
        })
        table += iter_rows(decs, benchmark_date=b.date)
    report = {
        "analysis": "decompose",
        "config": _config_echo(args, factors=list(args.factors), align=args.align),
        "results": results,
        "unmatched_dates": [d.isoformat() for d in matched.unmatched],
    }
    return report, table, "figure1_decomposition.csv"


def cmd_diff(args) -> tuple[dict, list[dict], str]:
    survey = parse_series(args.survey, "survey", args.binary)
    bench = parse_series(args.benchmark, "benchmark", args.binary)
    matched = align(survey, bench, args.align).pairs
    if len(matched) < 2:
        raise InputError("successive differences need at least two aligned waves")
    results, table = [], []
    for (s0, b0), (s1, b1) in zip(matched, matched[1:]):
        pair = WavePair(s0, b0, s1, b1, population_size=args.population_size)
        level = decompose(s1, b1)
        row: dict[str, Any] = {"date": s1.date.isoformat(), "prev_date": s0.date.isoformat()}
        put_float(row, "difference_error", diff_error(pair))
        put_float(row, "n_eff", diff_neff(pair, exact=args.exact))
        put_float(row, "level_error", level.estimation_error)
        put_float(row, "level_n_eff", level.n_eff_approx)
        if args.decomposed:
            ddc0, ddc1 = decompose(s0, b0).ddc, level.ddc
            row["ddc_prev"], row["ddc_curr"] = ddc0, ddc1
            put_float(row, "n_eff_decomposed", diff_neff_decomposed(ddc0, ddc1, pair))
        if args.relative:
            put_float(row, "relative_error", reldiff_error(pair))
            put_float(row, "relative_n_eff", reldiff_neff(pair))
            if args.decomposed:
                put_float(row, "relative_error_decomposed", reldiff_error_decomposed(ddc0, ddc1, pair))
                put_float(row, "relative_n_eff_decomposed", reldiff_neff_decomposed(ddc0, ddc1, pair))
        results.append(row)
        table.append(_flat(row))
    report = {
        "analysis": "diff",
        "config": _config_echo(args, relative=args.relative, decomposed=args.decomposed,
                               exact=args.exact, align=args.align,
                               population_size=args.population_size),
        "results": results,
    }
    return report, table, "figure2_difference.csv"


def _flat(row: dict) -> dict:
    """CSV view of a JSON row: ``x: null, x_inf: true`` becomes ``x: inf``."""
    out = {k: v for k, v in row.items() if not k.endswith("_inf")}
    for k, v in row.items():
        if k.endswith("_inf"):
            out[k[: -len("_inf")]] = -math.inf if v == "-inf" else math.inf
    return out


def cmd_subgroup(args) -> tuple[dict, list[dict], str]:
    sa = {r.date: r for r in parse_series(args.survey_a, "survey", True).records}
    sb = {r.date: r for r in parse_series(args.survey_b, "survey", True).records}
    gap_rows = _read_gap_file(args.benchmark_gap)
    results, table, warnings = [], [], []
    for d, (n_i, n_ii, y_i, y_ii, p11_file) in gap_rows.items():
        if d not in sa or d not in sb:
            warnings.append(f"{d}: no survey data for both groups")
            continue
        N = n_i + n_ii
        g_mean = n_ii / N
        y_mean = (n_i * y_i + n_ii * y_ii) / N
        p11 = args.p11 if args.p11 is not None else (p11_file if p11_file is not None else g_mean * y_ii)
        table_ = SubgroupTable.from_margins(
            y_mean, g_mean, p11, (n_i, n_ii),
            (sa[d].sample_size, sb[d].sample_size), (sa[d].sample_mean, sb[d].sample_mean),
        )
        bench_gap = y_ii - y_i
        dec = subgroup_decompose(table_, bench_gap, args.sigma)
        dec = dataclasses.replace(dec, date=d)
        sig_exact = subgroup_sigma(table_, "exact")
        try:
            sig_paper = subgroup_sigma(table_, "paper")
        except ValueError:
            sig_paper = math.nan
        results.append({
            "date": d.isoformat(),
            "sigma_method": args.sigma,
            "sigma_exact": sig_exact,
            "sigma_paper": None if math.isnan(sig_paper) else sig_paper,
            "survey_gap": table_.survey_gap,
            "benchmark_gap": bench_gap,
            "p11": p11,
            "decomposition": decomposition_to_dict(dec),
        })
        table += iter_rows([dec], sigma_method=args.sigma, sigma_exact=sig_exact, sigma_paper=sig_paper)
    if not results:
        raise InputError("no dates shared by both survey files and the benchmark-gap file")
    report = {
        "analysis": "subgroup",
        "config": _config_echo(args, sigma=args.sigma, p11=args.p11),
        "results": results,
        "warnings": warnings,
    }
    return report, table, "figure3_subgroup.csv"


def _read_gap_file(path) -> dict:
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        need = {"date", "N_I", "N_II", "ybar_I", "ybar_II"}
        missing = need - set(reader.fieldnames or [])
        if missing:
            raise InputError(f"{path}: missing column(s) {', '.join(sorted(missing))}")
        for row in reader:
            line = reader.line_num
            try:
                d = datetime.date.fromisoformat(row["date"].strip())
                vals = (int(row["N_I"]), int(row["N_II"]), float(row["ybar_I"]), float(row["ybar_II"]))
                p11 = float(row["p11"]) if row.get("p11") else None
            except ValueError as exc:
                raise InputError(f"{path}, line {line}: {exc}") from None
            if d in out:
                raise InputError(f"{path}, line {line}: duplicate date {d}")
            out[d] = vals + (p11,)
    if not out:
        raise InputError(f"{path}: no data rows")
    return out


def cmd_assist(args) -> tuple[dict, list[dict], str]:
    target = parse_series(args.target, "paired").paired()
    ref = parse_series(args.probability_survey, "paired").paired()
    bench = parse_series(args.benchmark, "benchmark", True).records
    fit, rows = assisted_series(target, ref, bench, args.factors, direction=args.direction)
    if not fit.converged and args.strict:
        raise NumericalFailure(
            f"beta regression did not converge after {fit.iterations} iterations "
            f"(gradient max-norm {fit.grad_norm:.3g})"
        )
    results, table = [], []
    for r in rows:
        results.append({
            "date": r.date.isoformat(),
            "benchmark_date": r.benchmark_date.isoformat(),
            "predicted_mean": r.predicted_mean,
            "reference_assisted": r.reference_assisted,
            "target_original": r.target_original,
            "target_assisted": r.target_assisted,
            "original": _sweep_block(r.original),
            "assisted": _sweep_block(r.assisted),
        })
        table += iter_rows(r.original, estimate="original", value=r.target_original)
        table += iter_rows(r.assisted, estimate="assisted", value=r.target_assisted)
    fit_block: dict[str, Any] = {
        "converged": fit.converged,
        "iterations": fit.iterations,
        "beta0": fit.beta0,
        "beta1": fit.beta1,
        "pseudo_r2": fit.pseudo_r2,
    }
    put_float(fit_block, "phi", fit.phi)
    put_float(fit_block, "loglik", fit.loglik)
    report = {
        "analysis": "assist",
        "config": _config_echo(args, factors=list(args.factors), direction=args.direction,
                               strict=args.strict),
        "fit": fit_block,
        "results": results,
        "warnings": [] if fit.converged else ["beta regression did not converge"],
    }
    return report, table, "figure4_assisted.csv"


def cmd_changepoint(args) -> tuple[dict, list[dict], str]:
    sf = parse_series(args.series, "values")
    series = sf.values()
    warnings: list[str] = []
    if args.incident:
        inc = to_incident(series)
        warnings += inc.warnings
        series = list(zip(inc.dates, inc.values))
    cfg = ChangePointConfig(
        p0=args.p0, w0=args.w0, burn_in=args.burn, iterations=args.iters,
        seed=args.seed, threshold=args.threshold, chains=args.chains,
    )
    res = bcp_posterior(series, cfg)
    results, table = [], []
    for (d, v), p, m in zip(series, res.probabilities, res.posterior_means):
        row = {"date": d.isoformat(), "value": v, "probability": float(p), "posterior_mean": float(m)}
        results.append(row)
        table.append(row)
    report = {
        "analysis": "changepoint",
        "config": _config_echo(args, p0=cfg.p0, w0=cfg.w0, burn_in=cfg.burn_in,
                               iterations=cfg.iterations, threshold=cfg.threshold,
                               chains=cfg.chains, incident=args.incident,
                               defaults_note="priors and chain lengths are tool defaults"),
        "intervals": [[s.isoformat(), e.isoformat()] for s, e in res.intervals],
        "results": results,
        "warnings": warnings,
    }
    return report, table, "figureS4_changepoint.csv"


def cmd_simulate(args) -> tuple[dict, list[dict], str]:
    mech = SelectionMechanism.parse(args.mechanism)
    if args.replicates < 1:
        raise InputError("replicates must be positive")
    root = np.random.SeedSequence(args.seed)
    pop_seed, *rep_seeds = root.spawn(args.replicates + 1)
    pop = generate_population(args.n_pop, args.prevalence, seed=pop_seed)
    results = []
    for i, ss in enumerate(rep_seeds):
        sel = apply_selection(pop, mech, ss)
        results.append({
            "replicate": i,
            "n": sel.n_recorded,
            "ddc": exact_ddc(sel),
            "identity_residual": verify_identity(sel),
        })
    ddcs = np.array([r["ddc"] for r in results])
    se = float(ddcs.std(ddof=1) / math.sqrt(ddcs.size)) if ddcs.size > 1 else math.nan
    summary = {
        "mean_ddc": float(ddcs.mean()),
        "se_ddc": None if math.isnan(se) else se,
        "max_abs_residual": float(max(abs(r["identity_residual"]) for r in results)),
    }
    report = {
        "analysis": "simulate",
        "config": _config_echo(args, n_pop=args.n_pop, prevalence=args.prevalence,
                               mechanism=args.mechanism, replicates=args.replicates),
        "summary": summary,
        "results": results,
    }
    return report, results, "simulate.csv"


COMMANDS = {
    "decompose": cmd_decompose,
    "diff": cmd_diff,
    "subgroup": cmd_subgroup,
    "assist": cmd_assist,
    "changepoint": cmd_changepoint,
    "simulate": cmd_simulate,
}


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Parse ``argv``, run one analysis, write reports; returns the exit code."""
    try:
        args = build_parser().parse_args(argv)
        if args.seed is None:
            args.seed = _default_seed()
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s")
        report, table, csv_name = COMMANDS[args.command](args)
        validate_report({"schema": "defect-lens/1", **report})
        for w in report.get("warnings", []):
            log.warning(w)
        paths = emit_report(report, table, args.out, args.command, args.format, csv_name=csv_name)
        for path in paths:
            log.info("wrote %s", path)
        return EXIT_OK
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INPUT
    except NumericalFailure as exc:
        print(f"defect-lens: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError) as exc:
        print(f"defect-lens: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
