"""Command-line surface: simulate -> cv -> fit -> predict -> evaluate.

Every flag defaults to None so that a value from --config (TOML) survives
unless the flag is given; RunConfig.resolve applies flags > file > defaults.

Exit codes: 0 success, 2 for input/numerical errors raised on purpose and for
usage errors, 1 for anything unexpected. Errors are reported on stderr as a
single line `error=<ClassName> message="..."`.
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Any, Callable, Optional, Sequence

from pydantic import ValidationError

from conjnngp import __version__
from conjnngp.config import load_config_file
from conjnngp.exceptions import NNGPError
from conjnngp.logging_config import cli_level, setup_logging
from conjnngp.utils.timing import default_workers

logger = logging.getLogger(__name__)


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="TOML run file (flags override its values)")
    p.add_argument("--threads", type=int, help="worker threads; 0 means one per physical core")
    verbosity = p.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", action="store_true", help="DEBUG logging (per-solve diagnostics)")
    verbosity.add_argument("--quiet", action="store_true", help="WARNING logging only")
    return p


def _data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--project", choices=["sinusoidal"], help="read lon/lat columns and project them")
    p.add_argument("--no-intercept", dest="intercept", action="store_false", default=None,
                   help="do not prepend an intercept column to the cov_* covariates")


def _solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--rel-tol", type=float, help="CG relative residual tolerance")
    p.add_argument("--max-iter", type=int, help="CG iteration cap (default 10 * (n + p))")
    p.add_argument("--preconditioner", choices=["jacobi", "none"])


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="conj-nngp", description="Conjugate latent NNGP models")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="dense full-GP synthetic data")
    s.add_argument("--n", type=int)
    s.add_argument("--n-test", type=int, help="held-out sites marked split=test (default 200)")
    s.add_argument("--seed", type=int)
    s.add_argument("--beta0", type=float)
    s.add_argument("--beta1", type=float)
    s.add_argument("--sigma2", type=float)
    s.add_argument("--tau2", type=float)
    s.add_argument("--phi", type=float)
    s.add_argument("--out", required=True)

    c = sub.add_parser("cv", parents=[common], help="K-fold cross-validation over (phi, delta2)")
    c.add_argument("--data", required=True)
    c.add_argument("--m", type=int)
    c.add_argument("--K", type=int)
    grid = c.add_mutually_exclusive_group()
    grid.add_argument("--grid-default", action="store_true", default=None)
    grid.add_argument("--grid-file")
    c.add_argument("--phi-levels", type=int)
    c.add_argument("--delta2-levels", type=int)
    c.add_argument("--refine", type=int)
    c.add_argument("--shrink", type=float)
    c.add_argument("--model", choices=["latent", "response"])
    c.add_argument("--seed", type=int)
    c.add_argument("--ordering")
    c.add_argument("--a-sigma", type=float)
    c.add_argument("--b-sigma", type=float)
    c.add_argument("--out", required=True)
    _data_flags(c)
    _solver_flags(c)

    f = sub.add_parser("fit", parents=[common], help="conjugate latent NNGP fit and posterior draws")
    f.add_argument("--data", required=True)
    f.add_argument("--m", type=int)
    f.add_argument("--phi", type=float)
    f.add_argument("--delta2", type=float)
    f.add_argument("--a-sigma", type=float)
    f.add_argument("--b-sigma", type=float)
    f.add_argument("--L", type=int)
    f.add_argument("--seed", type=int)
    f.add_argument("--ordering")
    f.add_argument("--draws-out", help="binary container, or CSV when the name ends in .csv")
    f.add_argument("--draws-w-ids", type=lambda v: [int(x) for x in v.split(",") if x],
                   help="comma-separated ids: thin the w columns of a CSV draws file")
    f.add_argument("--summary-out")
    f.add_argument("--posterior-out", help="posterior bundle for `predict`")
    _data_flags(f)
    _solver_flags(f)

    pr = sub.add_parser("predict", parents=[common], help="posterior predictive summaries at new sites")
    pr.add_argument("--posterior", required=True)
    pr.add_argument("--sites", required=True)
    pr.add_argument("--m", type=int)
    pr.add_argument("--mode", choices=["auto", "exact", "sample"])
    pr.add_argument("--draws", help="posterior draws from `fit` (otherwise drawn afresh)")
    pr.add_argument("--L", type=int)
    pr.add_argument("--seed", type=int)
    pr.add_argument("--draws-out")
    pr.add_argument("--out", required=True)
    _data_flags(pr)

    e = sub.add_parser("evaluate", parents=[common], help="metrics report against simulated truth")
    e.add_argument("--truth", required=True)
    e.add_argument("--draws", required=True)
    e.add_argument("--pred")
    e.add_argument("--no-kl", dest="kl", action="store_false", default=None)
    e.add_argument("--no-intercept", dest="intercept", action="store_false", default=None)
    e.add_argument("--out", required=True)
    return parser


def _simulate(flags: dict[str, Any], file_values: dict[str, Any]) -> None:
    from conjnngp.modules.simulation.schemas import SimulateConfig
    from conjnngp.modules.simulation.service import run_simulation

    run_simulation(SimulateConfig.resolve(flags, file_values))


def _cv(flags: dict[str, Any], file_values: dict[str, Any]) -> None:
    from conjnngp.modules.model_selection.schemas import CVConfig
    from conjnngp.modules.model_selection.service import overall_best, run_cv

    best = overall_best(run_cv(CVConfig.resolve(flags, file_values)))
    print(f"{best.best_phi:.10g} {best.best_delta2:.10g}")


def _fit(flags: dict[str, Any], file_values: dict[str, Any]) -> None:
    from conjnngp.modules.fitting.schemas import FitConfig
    from conjnngp.modules.fitting.service import fit_dataset

    res = fit_dataset(FitConfig.resolve(flags, file_values))
    s = res.summary
    logger.info("fit n=%d p=%d a_star=%g b_star=%.6g beta_hat=%s L=%d failed=%d",
                s.n, s.p, s.a_star, s.b_star, [round(b, 6) for b in s.beta_hat], s.L, len(s.failed_draws))


def _predict(flags: dict[str, Any], file_values: dict[str, Any]) -> None:
    from conjnngp.modules.prediction.schemas import PredictConfig
    from conjnngp.modules.prediction.service import run_prediction

    run_prediction(PredictConfig.resolve(flags, file_values))


def _evaluate(flags: dict[str, Any], file_values: dict[str, Any]) -> None:
    from conjnngp.modules.evaluation.schemas import EvaluateConfig
    from conjnngp.modules.evaluation.service import run_evaluation

    report = run_evaluation(EvaluateConfig.resolve(flags, file_values))
    for r in report.rows:
        parts = [f"{r.metric:<12}", _fmt(r.value)]
        if r.lo95 is not None:
            parts.append(f"({_fmt(r.lo95)}, {_fmt(r.hi95)})")
        if r.truth is not None:
            parts.append(f"true={_fmt(r.truth)}")
        print(" ".join(parts))


def _fmt(v: Optional[float]) -> str:
    return "NA" if v is None else f"{v:.4g}"


COMMANDS: dict[str, Callable[[dict[str, Any], dict[str, Any]], None]] = {
    "simulate": _simulate,
    "cv": _cv,
    "fit": _fit,
    "predict": _predict,
    "evaluate": _evaluate,
}


def _report(exc: BaseException) -> None:
    msg = str(exc).replace('"', "'").replace("\n", " ")
    print(f'error={type(exc).__name__} message="{msg}"', file=sys.stderr)


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    setup_logging(cli_level(args.verbose, args.quiet))
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose", "quiet")}
    if flags.get("threads") == 0:
        flags["threads"] = default_workers()

    try:
        file_values = load_config_file(args.config) if args.config else {}
        COMMANDS[args.command](flags, file_values)
    except (NNGPError, ValidationError) as exc:
        _report(exc)
        return 2
    except Exception as exc:
        logger.debug("unexpected failure", exc_info=True)
        _report(exc)
        return 1
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
