"""
Commande estimate: algorithme de switching sur un panel
Sorties: omega.json, indexes.csv, beliefs.csv, manifest.json
"""

import logging

from ..mai_estimator import switching_estimate
from ..models import RunConfig
from ..serializers import beliefs_frame, indexes_frame, omega_payload, sig6, write_csv, write_json, write_manifest
from . import group_template, load_input_panel, output_dir, single_spec

logger = logging.getLogger(__name__)


def run_estimate(config: RunConfig, config_digest: str) -> str:
    panel = load_input_panel(config)
    spec = single_spec(config, group_template(config, panel))

    logger.info(f"Estimating {spec.fingerprint} on N={panel.N} T={panel.T}")
    fit = switching_estimate(panel, spec, tol=config.tol, max_iter=config.max_iter, keep_covariances=True)

    out = output_dir(config)
    write_json(omega_payload(fit, panel), out / "omega.json")
    write_csv(indexes_frame(fit, panel), out / "indexes.csv")
    write_csv(beliefs_frame(fit.beliefs, panel), out / "beliefs.csv")
    write_manifest(
        config, config_digest, out,
        ["omega.json", "indexes.csv", "beliefs.csv"],
        {'converged': fit.converged, 'iterations': fit.iterations, 'log_pl': sig6(fit.log_pl)}
    )
    return f"converged={str(fit.converged).lower()} iterations={fit.iterations} log_pl={fit.log_pl:.6g}"
