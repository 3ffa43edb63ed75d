"""Command-line front end.

Subcommands
-----------
estimate
    Adjusted SATE estimate from a CSV of observed outcomes.
simulate
    Run a JSON simulation plan and emit the report.
enumerate
    Exact randomization bias of one estimator over every assignment.

Results go to stdout (or ``--output``) as JSON. Errors go to stderr as a JSON
object with a stable ``error`` code; the exit status is 2 for invalid input
and 3 for model-fitting failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import dataclass
from math import comb
from typing import Any, Sequence

import numpy as np

from .dataset import SyntheticPopulation, load_csv, load_population_csv
from .design import enumeration_cap
from .errors import EnumerationTooLarge, InvalidSpec, PlanValidationError, RandAdjustError
from .models import FAMILIES, ModelSpec
from .simulate import (
    POPULATION_KINDS,
    EstimatorConfig,
    exhaustive_bias,
    generate_population,
    plan_from_dict,
    run,
)

METHODS = ("ob", "lin", "dim")
_KIND_FOR_METHOD = {"ob": "oaxaca_blinder", "lin": "lin_interactions",
                    "dim": "difference_in_means"}


class CliUsageError(RandAdjustError):
    code = "UsageError"
    exit_status = 2


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as JSON instead of exiting."""

    def error(self, message):
        raise CliUsageError(message, usage=self.format_usage().strip())


@dataclass(frozen=True)
class CliConfig:
    subcommand: str
    input: str | None
    output: str | None
    method: str
    family1: str | None
    family0: str | None
    alpha: float
    quantile: str
    hc: str
    log_covariates: bool
    seed: int | None
    replications: int | None
    threads: int
    pretty: bool

    def estimator(self) -> EstimatorConfig:
        kind = _KIND_FOR_METHOD[self.method]
        q = "t_welch" if self.quantile == "t" else "normal"
        if kind != "oaxaca_blinder":
            return EstimatorConfig(self.method, kind, quantile_kind=q, hc_variant=self.hc)
        f1 = self.family1 or "ols"
        f0 = self.family0 or f1
        return EstimatorConfig(
            f"{f1}/{f0}", kind,
            ModelSpec(f1, log_covariates=self.log_covariates),
            ModelSpec(f0, log_covariates=self.log_covariates),
            q, self.hc,
        )


def _split(s: str | None) -> list[str]:
    if not s:
        return []
    return [c.strip() for c in s.split(",") if c.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--output", "-o", help="write JSON here instead of stdout")
    common.add_argument("--pretty", action="store_true", help="indent the JSON output")

    model = _Parser(add_help=False)
    model.add_argument("--method", choices=METHODS, default="ob",
                       help="ob: Oaxaca-Blinder imputation; lin: interacted OLS; "
                            "dim: difference in means")
    model.add_argument("--family1", choices=FAMILIES, help="model family for the treated arm")
    model.add_argument("--family0", choices=FAMILIES,
                       help="model family for the control arm (default: family1)")
    model.add_argument("--log-covariates", action="store_true",
                       help="log-transform the non-intercept covariates before fitting")
    model.add_argument("--alpha", type=float, default=0.05)
    model.add_argument("--quantile", choices=("normal", "t"), default="t")
    model.add_argument("--hc", choices=("hc0", "hc2", "hc3"), default="hc3",
                       help="sandwich variant for --method lin")
    model.add_argument("--covariates", help="comma-separated covariate column names")
    model.add_argument("--no-intercept", action="store_true",
                       help="do not append an intercept column")

    parser = _Parser(prog="rand-adjust", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    est = sub.add_parser("estimate", parents=[common, model],
                         help="adjusted estimate from an experiment CSV")
    est.add_argument("--input", "-i", required=True, help="CSV with a header row")
    est.add_argument("--outcome", required=True)
    est.add_argument("--treatment", required=True)

    sim = sub.add_parser("simulate", parents=[common], help="run a simulation plan")
    sim.add_argument("--input", "-i", required=True, help="plan JSON")
    sim.add_argument("--seed", type=int, help="override the plan seed")
    sim.add_argument("--replications", type=int, help="override the plan replication count")
    sim.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    sim.add_argument("--dump-replicates",
                     help="CSV of per-replication tau_hat, one column per estimator")
    sim.add_argument("--no-timestamp", action="store_true",
                     help="omit the generated_at field")

    enum = sub.add_parser("enumerate", parents=[common, model],
                          help="exact bias over all assignments")
    enum.add_argument("--input", "-i", help="population CSV with both potential outcomes")
    enum.add_argument("--y1", help="treated potential outcome column")
    enum.add_argument("--y0", help="control potential outcome column")
    enum.add_argument("--population-kind", choices=POPULATION_KINDS, default="linear_gaussian")
    enum.add_argument("--n", type=int, help="population size for a generated population")
    enum.add_argument("--n1", type=int, help="treated count (default n // 2)")
    enum.add_argument("--effect", type=float, default=0.0)
    enum.add_argument("--seed", type=int, default=0)
    return parser


def _config(args: argparse.Namespace) -> CliConfig:
    """Cross-flag validation; runs before any data is read."""
    method = getattr(args, "method", "ob")
    if method != "ob":
        if args.family1 or args.family0 or args.log_covariates:
            raise InvalidSpec(f"--family1/--family0/--log-covariates need --method ob, "
                              f"got --method {method}")
    elif args.subcommand != "simulate" and args.family1 is None and args.family0 is not None:
        raise InvalidSpec("--family0 given without --family1")
    alpha = getattr(args, "alpha", 0.05)
    if args.subcommand != "simulate" and not (0.0 < alpha < 1.0):
        raise InvalidSpec(f"--alpha must lie in (0, 1), got {alpha}")
    if args.subcommand == "simulate":
        if args.threads is not None and args.threads < 1:
            raise InvalidSpec("--threads must be >= 1")
        if args.seed is not None and args.seed < 0:
            raise InvalidSpec("--seed must be nonnegative")
    return CliConfig(
        subcommand=args.subcommand, input=args.input, output=args.output,
        method=method, family1=getattr(args, "family1", None),
        family0=getattr(args, "family0", None), alpha=alpha,
        quantile=getattr(args, "quantile", "t"), hc=getattr(args, "hc", "hc3"),
        log_covariates=getattr(args, "log_covariates", False),
        seed=getattr(args, "seed", None), replications=getattr(args, "replications", None),
        threads=getattr(args, "threads", 1) or 1, pretty=args.pretty,
    )


def _clean(obj: Any) -> Any:
    """Make ``obj`` strict-JSON safe: non-finite floats become null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _dumps(obj: Any, pretty: bool) -> str:
    return json.dumps(_clean(obj), indent=2 if pretty else None, allow_nan=False) + "\n"


def _emit(obj: Any, cfg: CliConfig, stdout) -> None:
    text = _dumps(obj, cfg.pretty)
    if cfg.output:
        with open(cfg.output, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        stdout.write(text)


def cmd_estimate(args, cfg: CliConfig, stdout) -> int:
    ds = load_csv(args.input, args.outcome, args.treatment, _split(args.covariates),
                  add_intercept=not args.no_intercept)
    est = cfg.estimator().estimate(ds, cfg.alpha)
    out = est.to_dict()
    out["covariates"] = list(ds.covariate_names or [])
    _emit(out, cfg, stdout)
    return 0


def _load_plan(path: str) -> dict[str, Any]:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as err:
        raise PlanValidationError(f"plan is not valid JSON: {err}") from err
    if not isinstance(doc, dict):
        raise PlanValidationError("plan must be a JSON object")
    return doc


def cmd_simulate(args, cfg: CliConfig, stdout) -> int:
    doc = _load_plan(args.input)
    if cfg.seed is not None:
        doc["seed"] = cfg.seed
    if cfg.replications is not None:
        doc["replications"] = cfg.replications
    plan = plan_from_dict(doc, base_dir=os.path.dirname(os.path.abspath(args.input)))
    report = run(plan, threads=cfg.threads)
    if args.dump_replicates:
        names = [e.name for e in plan.estimators]
        with open(args.dump_replicates, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(names)
            cols = [report[nm].replicates for nm in names]
            for row in zip(*cols):
                w.writerow(["" if not math.isfinite(v) else repr(float(v)) for v in row])
    _emit(report.to_dict(timestamp=not args.no_timestamp), cfg, stdout)
    return 0


def _enum_population(args) -> SyntheticPopulation:
    if args.input:
        if not (args.y1 and args.y0):
            raise InvalidSpec("--input for enumerate needs --y1 and --y0")
        return load_population_csv(args.input, args.y1, args.y0, _split(args.covariates),
                                   add_intercept=not args.no_intercept)
    if args.n is None:
        raise InvalidSpec("enumerate needs --input or --n")
    return generate_population(args.population_kind, args.n, args.effect, args.seed)


def cmd_enumerate(args, cfg: CliConfig, stdout) -> int:
    cap = enumeration_cap()
    if args.n is not None and not args.input:
        # refuse before drawing anything
        n1 = args.n // 2 if args.n1 is None else args.n1
        if 1 <= n1 <= args.n - 1 and comb(args.n, n1) > cap:
            raise EnumerationTooLarge(
                f"C({args.n}, {n1}) = {comb(args.n, n1)} assignments exceeds the "
                f"enumeration cap {cap}", assignments=comb(args.n, n1), cap=cap)
    pop = _enum_population(args)
    n1 = pop.n // 2 if args.n1 is None else args.n1
    config = cfg.estimator()
    res = exhaustive_bias(pop, config, n1, cfg.alpha, cap)
    out = res.to_dict()
    out.update({"n": pop.n, "n1": n1, "tau": pop.tau, "estimator": config.to_dict()})
    _emit(out, cfg, stdout)
    return 0


_COMMANDS = {"estimate": cmd_estimate, "simulate": cmd_simulate, "enumerate": cmd_enumerate}


def _fail(err: RandAdjustError, stderr) -> int:
    stderr.write(_dumps(err.to_dict(), pretty=False))
    return err.exit_status


def main(argv: Sequence[str] | None = None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    if any(a in ("-h", "--help") for a in argv):
        try:
            parser.parse_args(argv)
        except SystemExit as ex:
            return int(ex.code or 0)
    try:
        args = parser.parse_args(argv)
        cfg = _config(args)
        return _COMMANDS[cfg.subcommand](args, cfg, stdout)
    except RandAdjustError as err:
        return _fail(err, stderr)
    except FileNotFoundError as err:
        return _fail(CliUsageError(f"file not found: {err.filename}", path=err.filename), stderr)
    except OSError as err:
        return _fail(CliUsageError(f"I/O error: {err}"), stderr)


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
