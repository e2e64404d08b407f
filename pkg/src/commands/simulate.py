"""
Commande simulate: panel MAI simulé + vérité terrain
Sorties: panel.csv (format d'entrée, codes à 1), truth.json, manifest.json
"""

import logging

from ..models import DgpSpec, RunConfig
from ..panel import write_raw_panel
from ..serializers import write_manifest
from ..simulation import simulate_mai, write_truth
from . import output_dir

logger = logging.getLogger(__name__)


def run_simulate(config: RunConfig, config_digest: str) -> str:
    spec = DgpSpec(
        N=config.sim_N,
        q=config.sim_q,
        p=config.p,
        T=config.sim_T,
        burn_in=config.sim_burn_in,
        seed=config.seed,
        sigma_beta=config.sigma_beta,
        h_mode=config.sim_h_mode
    )
    panel, truth = simulate_mai(spec)
    logger.info(f"Writing simulated panel to {config.out}")

    out = output_dir(config)
    write_raw_panel(panel, out / "panel.csv")
    write_truth(truth, out / "truth.json")
    write_manifest(config, config_digest, out, ["panel.csv", "truth.json"], {'seed': config.seed})
    return f"N={panel.N} T={panel.T} seed={config.seed}"
