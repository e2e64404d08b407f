"""
Point d'entrée de la CLI
Route les sous-commandes vers les modules de src/commands

    python -m src.cli <transform|estimate|pool|decompose|forecast|simulate> [options]

Codes de sortie: 0 succès, 1 échec numérique, 2 entrée invalide.
Les logs et les erreurs (JSON ErrorModel) vont sur stderr, les résumés sur stdout.
"""

import argparse
import logging
import sys
from typing import Any, Dict, List, Optional

from .commands.decompose import run_decompose
from .commands.estimate import run_estimate
from .commands.forecast import run_forecast
from .commands.pool import run_pool_command
from .commands.simulate import run_simulate
from .commands.transform import run_transform
from .config import config_hash, get_log_level, load_run_config
from .errors import EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION, MaiError
from .models import ErrorDetail, ErrorInfo, ErrorModel

logger = logging.getLogger(__name__)

COMMANDS = {
    'transform': run_transform,
    'estimate': run_estimate,
    'pool': run_pool_command,
    'decompose': run_decompose,
    'forecast': run_forecast,
    'simulate': run_simulate,
}

# Options propres à la CLI, absentes de RunConfig
CLI_ONLY = ('config', 'log_level', 'command')


def create_error_payload(code: int, message: str, details: List[ErrorDetail] = None) -> str:
    """
    Erreur formatée en JSON (écrite sur stderr)

    Args:
        code: Code de sortie
        message: Message d'erreur
        details: Détails (optionnel)
    """
    error_model = ErrorModel(
        error=ErrorInfo(
            code=code,
            message=message,
            details=details or []
        )
    )
    return error_model.model_dump_json()


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value configuration file")
    common.add_argument("--out", help="output directory")
    common.add_argument("--workers", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--log-level", dest="log_level")
    return common


def _input_options(parser: argparse.ArgumentParser):
    parser.add_argument("--input", help="raw CSV panel or normalized panel file")
    parser.add_argument("--date-column", dest="date_column")
    parser.add_argument("--no-standardize", dest="standardize", action="store_false", default=None)


def _model_options(parser: argparse.ArgumentParser):
    parser.add_argument("-q", "--q", dest="q_values", action="append", type=int, help="number of indexes (repeatable)")
    parser.add_argument("--lambda", dest="lambdas", action="append", type=float, help="forgetting factor (repeatable)")
    parser.add_argument("--kappa", dest="kappas", action="append", type=float, help="EWMA decay (repeatable)")
    parser.add_argument("-p", "--p", dest="p", type=int, help="number of lags")
    parser.add_argument("--h0-mode", dest="h0_mode", choices=["identity", "sample", "ols"])
    parser.add_argument("--tol", type=float)
    parser.add_argument("--max-iter", dest="max_iter", type=int)


def _pool_options(parser: argparse.ArgumentParser):
    parser.add_argument("--alpha", type=float, help="forgetting factor of the model probabilities")
    parser.add_argument("--mode", choices=["DMA", "DMS"])
    parser.add_argument("--h-max", dest="h_max", type=int)


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = argparse.ArgumentParser(prog="tvp-mai", description="TVP-MAI-SV estimation, pooling and forecasting")
    subparsers = parser.add_subparsers(dest="command", required=True)

    transform = subparsers.add_parser("transform", parents=[common], help="raw CSV -> normalized panel")
    _input_options(transform)
    transform.add_argument("--dry-run", dest="dry_run", action="store_true", default=None)
    transform.add_argument("--group", dest="group_sizes", action="append", type=int, help="block size (repeatable)")

    estimate = subparsers.add_parser("estimate", parents=[common], help="switching estimation of one model")
    _input_options(estimate)
    _model_options(estimate)
    estimate.add_argument("--group", dest="group_sizes", action="append", type=int)

    pool = subparsers.add_parser("pool", parents=[common], help="DMA/DMS over a (q, lambda, kappa) grid")
    _input_options(pool)
    _model_options(pool)
    _pool_options(pool)
    pool.add_argument("--group", dest="group_sizes", action="append", type=int, help="block size of the matching q (repeatable)")

    decompose = subparsers.add_parser("decompose", parents=[common], help="common/idiosyncratic volatility shares")
    _input_options(decompose)
    _model_options(decompose)
    decompose.add_argument("--group", dest="group_sizes", action="append", type=int)

    forecast = subparsers.add_parser("forecast", parents=[common], help="expanding-window forecast evaluation")
    _input_options(forecast)
    _model_options(forecast)
    _pool_options(forecast)
    forecast.add_argument("--group", dest="group_sizes", action="append", type=int)
    forecast.add_argument("--first-origin", dest="first_origin", type=int, help="1-based index of the first origin")
    forecast.add_argument("--target", dest="targets", action="append")
    forecast.add_argument("--model", dest="models", action="append", help="variant tag M1..M11 (repeatable)")
    forecast.add_argument("--benchmark")
    forecast.add_argument("--external", action="append", help="TAG=path of an external forecast CSV")
    forecast.add_argument("--rw-density", dest="rw_density", action="store_true", default=None)
    forecast.add_argument("--no-warm-start", dest="warm_start", action="store_false", default=None)

    simulate = subparsers.add_parser("simulate", parents=[common], help="simulated MAI panel and ground truth")
    simulate.add_argument("--N", dest="sim_N", type=int)
    simulate.add_argument("--q", dest="sim_q", type=int)
    simulate.add_argument("--T", dest="sim_T", type=int)
    simulate.add_argument("-p", "--p", dest="p", type=int)
    simulate.add_argument("--burn-in", dest="sim_burn_in", type=int)
    simulate.add_argument("--sigma-beta", dest="sigma_beta", type=float)
    simulate.add_argument("--h-mode", dest="sim_h_mode", choices=["constant", "ewma", "break"])

    return parser


def configure_logging(level: Optional[str] = None):
    logging.basicConfig(
        level=(level or get_log_level()).upper(),
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        force=True
    )


def main(argv: Optional[List[str]] = None) -> int:
    """
    Exécute une sous-commande

    Args:
        argv: Arguments (sys.argv[1:] par défaut)

    Returns:
        Code de sortie 0/1/2
    """
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)

    flags: Dict[str, Any] = {k: v for k, v in vars(args).items() if k not in CLI_ONLY}

    try:
        config = load_run_config(args.command, flags, args.config)
        digest = config_hash(config)
        logger.info(f"Running {args.command} (config {digest[:12]})")

        summary = COMMANDS[args.command](config, digest)
        print(summary)
        return EXIT_OK

    except MaiError as e:
        logger.error(f"{args.command} failed: {e}")
        details = [ErrorDetail(field=type(e).__name__, error=str(e))]
        print(create_error_payload(e.exit_code, str(e), details), file=sys.stderr)
        return e.exit_code

    except ValueError as e:
        # Validation pydantic d'un type du domaine
        logger.error(f"{args.command} rejected its input: {e}")
        print(create_error_payload(EXIT_VALIDATION, "Invalid input", [ErrorDetail(field="input", error=str(e))]),
              file=sys.stderr)
        return EXIT_VALIDATION

    except Exception as e:
        logger.error(f"Unexpected error: {str(e)}", exc_info=True)
        print(create_error_payload(EXIT_RUNTIME, "Internal error", [ErrorDetail(field="general", error=str(e))]),
              file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == '__main__':
    sys.exit(main())
