"""
Commande pool: grille (q, λ, κ), trajectoire des poids et classement
Sorties: weights.csv, selected.csv, ranking.csv, manifest.json
"""

import logging

from ..errors import SpecValidationError
from ..model_pool import build_grid, rank_specs, run_pool
from ..models import RunConfig
from ..serializers import ranking_frame, selected_frame, weights_frame, write_csv, write_manifest
from . import group_template, load_input_panel, output_dir

logger = logging.getLogger(__name__)


def run_pool_command(config: RunConfig, config_digest: str) -> str:
    panel = load_input_panel(config)
    too_large = [q for q in config.q_values if q > panel.N]
    if too_large:
        raise SpecValidationError(f"q values {too_large} exceed the number of series N={panel.N}")

    specs = build_grid(config.q_values, config.lambdas, config.kappas, config.p, config.h0_mode,
                       restriction=group_template(config, panel))
    logger.info(f"Running a pool of {len(specs)} specifications")
    run = run_pool(
        panel, specs,
        alpha=config.alpha,
        mode=config.mode,
        horizons=range(1, config.h_max + 1),
        tol=config.tol,
        max_iter=config.max_iter,
        workers=config.workers
    )
    rankings = rank_specs(run)

    out = output_dir(config)
    write_csv(weights_frame(run), out / "weights.csv")
    write_csv(selected_frame(run), out / "selected.csv")
    write_csv(ranking_frame(rankings), out / "ranking.csv")
    write_manifest(
        config, config_digest, out,
        ["weights.csv", "selected.csv", "ranking.csv"],
        {'grid': [spec.fingerprint for spec in specs]}
    )
    return f"K={len(specs)} best={rankings[0].fingerprint}"
