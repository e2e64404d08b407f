"""
Commande decompose: parts commune/idiosyncratique de la volatilité
Sorties: shares.csv, omega.json, manifest.json
"""

import logging

from ..decomposition import share_series
from ..mai_estimator import switching_estimate
from ..models import RunConfig
from ..serializers import omega_payload, shares_frame, write_csv, write_json, write_manifest
from . import group_template, load_input_panel, output_dir, single_spec

logger = logging.getLogger(__name__)


def run_decompose(config: RunConfig, config_digest: str) -> str:
    panel = load_input_panel(config)
    template = group_template(config, panel)
    spec = single_spec(config, template)

    fit = switching_estimate(panel, spec, tol=config.tol, max_iter=config.max_iter)
    shares = share_series(fit, template, workers=config.workers)
    logger.info(f"Volatility shares computed for {shares.shape[0]} periods")
    dates = [panel.dates[belief.t] for belief in fit.beliefs]

    out = output_dir(config)
    write_csv(shares_frame(shares, dates, panel.series_ids), out / "shares.csv")
    write_json(omega_payload(fit, panel), out / "omega.json")
    write_manifest(config, config_digest, out, ["shares.csv", "omega.json"],
                   {'converged': fit.converged, 'restricted': template is not None})
    return f"T={shares.shape[0]} N={shares.shape[1]} mean_common_share={shares.mean():.6g}"
