"""
Commande transform: CSV brut -> panel normalisé (panel.csv)
"""

import logging

from ..errors import ConfigError, SpecValidationError
from ..models import GROUP_TAGS, RunConfig
from ..panel import load_panel, standardize, transform_panel, write_normalized_panel
from ..serializers import write_manifest
from . import output_dir

logger = logging.getLogger(__name__)


def run_transform(config: RunConfig, config_digest: str) -> str:
    """
    Charge, transforme et standardise le panel

    Avec dry_run, seule la validation est faite et aucun fichier n'est écrit.
    """
    if config.input is None:
        raise ConfigError("--input is required for this command")
    raw = load_panel(config.input, config.date_column)
    panel = transform_panel(raw)
    if config.standardize:
        panel = standardize(panel)

    if config.group_sizes:
        if sum(config.group_sizes) != panel.N or len(config.group_sizes) > len(GROUP_TAGS):
            raise SpecValidationError(
                f"group sizes {config.group_sizes} do not describe {panel.N} series in at most {len(GROUP_TAGS)} groups"
            )
        labels = [tag for tag, size in zip(GROUP_TAGS, config.group_sizes) for _ in range(size)]
        panel = panel.model_copy(update={'group_labels': labels})

    summary = f"N={panel.N} T={panel.T}"
    if config.dry_run:
        logger.info(f"Dry run: {config.input} is valid, nothing written")
        return summary

    out = output_dir(config)
    write_normalized_panel(panel, out / "panel.csv")
    write_manifest(config, config_digest, out, ["panel.csv"], {'N': panel.N, 'T': panel.T})
    return summary
