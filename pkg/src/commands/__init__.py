"""
Sous-commandes de la CLI (une par module)

Chaque commande reçoit un RunConfig validé, écrit ses fichiers sous
config.out et retourne un résumé affiché sur la sortie standard.
"""

from pathlib import Path

from ..decomposition import template_from_labels
from ..errors import ConfigError, SpecValidationError
from ..models import GROUP_TAGS, GroupTemplate, ModelSpec, RunConfig, TimeSeriesPanel
from ..panel import panel_from_path


def load_input_panel(config: RunConfig) -> TimeSeriesPanel:
    """Panel d'entrée prêt pour l'estimation (CSV brut ou fichier normalisé)"""
    if config.input is None:
        raise ConfigError("--input is required for this command")
    return panel_from_path(config.input, config.date_column, config.standardize)


def output_dir(config: RunConfig) -> Path:
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def group_template(config: RunConfig, panel: TimeSeriesPanel = None):
    """Gabarit de restriction: tailles de groupes de la config, sinon étiquettes du panel"""
    if config.group_sizes:
        names = list(GROUP_TAGS[:len(config.group_sizes)]) if len(config.group_sizes) <= len(GROUP_TAGS) else None
        template = GroupTemplate(group_sizes=config.group_sizes, group_names=names)
        if panel is not None and template.N != panel.N:
            raise SpecValidationError(f"group sizes sum to {template.N} but the panel has {panel.N} series")
        return template
    if panel is not None and panel.group_labels is not None:
        return template_from_labels(panel.group_labels)
    return None


def single_spec(config: RunConfig, template: GroupTemplate = None) -> ModelSpec:
    """Spécification unique (estimate/decompose): une seule valeur par grille"""
    for name, grid in (('q', config.q_values), ('lambda', config.lambdas), ('kappa', config.kappas)):
        if len(grid) != 1 and not (name == 'q' and template is not None):
            raise ConfigError(f"{config.command} takes a single {name} value, got {grid}")
    q = template.q if template is not None else config.q_values[0]
    return ModelSpec(
        q=q,
        p=config.p,
        lam=config.lambdas[0],
        kappa=config.kappas[0],
        h0_mode=config.h0_mode,
        restriction=template
    )
