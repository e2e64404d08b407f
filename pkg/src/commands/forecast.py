"""
Commande forecast: évaluation en fenêtre croissante et tables relatives
Sorties: metrics_{rmsfe,mafe,alpl}.csv, records.csv, metrics_table.txt, manifest.json
"""

import logging

from ..config import expand_list
from ..errors import ConfigError
from ..evaluation import (
    ExternalForecastRunner,
    compute_metrics,
    expanding_window_forecast,
    relative_table,
    render_table,
    variant_runner
)
from ..models import RunConfig, TimeSeriesPanel
from ..serializers import metric_frame, records_frame, write_csv, write_manifest
from . import group_template, load_input_panel, output_dir

logger = logging.getLogger(__name__)


def build_runners(config: RunConfig, panel: TimeSeriesPanel):
    """Runners des variantes demandées puis des prévisions externes (TAG=chemin)"""
    restriction = group_template(config, panel)
    runners = []
    for tag in expand_list(config.models):
        runners.append(variant_runner(
            tag,
            [q for q in config.q_values if q <= panel.N],
            config.lambdas,
            config.kappas,
            p=config.p,
            alpha=config.alpha,
            tol=config.tol,
            max_iter=config.max_iter,
            workers=config.workers if config.warm_start else 1,
            rw_density=config.rw_density,
            restriction=restriction
        ))
    for entry in expand_list(config.external):
        tag, sep, path = entry.partition("=")
        if not sep or not tag or not path:
            raise ConfigError(f"External forecasts must be given as TAG=path, got {entry!r}")
        runners.append(ExternalForecastRunner(tag, path))
    if not runners:
        raise ConfigError("forecast needs at least one model")
    return runners


def run_forecast(config: RunConfig, config_digest: str) -> str:
    panel = load_input_panel(config)
    runners = build_runners(config, panel)
    first_origin = config.first_origin or panel.T // 2

    records = []
    for runner in runners:
        logger.info(f"Evaluating {runner.tag} from origin {first_origin}")
        records.extend(expanding_window_forecast(
            panel, runner,
            h_max=config.h_max,
            first_origin=first_origin,
            targets=expand_list(config.targets) or None,
            warm_start=config.warm_start,
            workers=config.workers
        ))
    records.sort(key=lambda r: (r.origin, r.model, r.variable, r.horizon))

    table = relative_table(compute_metrics(records), config.benchmark)

    out = output_dir(config)
    for metric in ('rmsfe', 'mafe', 'alpl'):
        write_csv(metric_frame(table, metric), out / f"metrics_{metric}.csv")
    write_csv(records_frame(records), out / "records.csv")
    (out / "metrics_table.txt").write_text(render_table(table) + "\n")

    outputs = ["metrics_rmsfe.csv", "metrics_mafe.csv", "metrics_alpl.csv", "records.csv", "metrics_table.txt"]
    write_manifest(config, config_digest, out, outputs,
                   {'first_origin': first_origin, 'models': [runner.tag for runner in runners]})
    diverged = sum(1 for r in records if r.diverged)
    return f"records={len(records)} diverged={diverged}"
