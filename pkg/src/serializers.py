"""
Sérialiseurs: objets du domaine -> tables CSV et payloads JSON

Toutes les sorties de rapport utilisent 6 chiffres significatifs; les
valeurs non finies deviennent null en JSON et restent vides en CSV.
Seul le panel normalisé (voir panel.py) garde la précision complète.
"""
import json
import math
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np
import pandas as pd

from .mai_estimator import orthonormal_omega
from .models import ForecastRecord, KalmanBelief, MaiFit, MetricTable, PoolRun, SpecRanking, TimeSeriesPanel

REPORT_FORMAT = "%.6g"


def sig6(value):
    """Arrondi à 6 chiffres significatifs (None si non fini)"""
    value = float(value)
    if not math.isfinite(value):
        return None
    return float(REPORT_FORMAT % value)


def matrix_payload(matrix: np.ndarray) -> list:
    return [[sig6(x) for x in row] for row in np.atleast_2d(matrix)]


def write_json(payload: Dict, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")
    return path


def write_csv(frame: pd.DataFrame, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=REPORT_FORMAT, lineterminator="\n")
    return path


# === Ajustement MAI ===
def omega_payload(fit: MaiFit, panel: TimeSeriesPanel) -> Dict:
    """
    Poids ω et diagnostics de convergence

    omega est l'estimation brute, omega_orthonormal la version normalisée pour la lecture
    """
    spec = fit.spec
    payload = {
        'series_ids': list(panel.series_ids),
        'spec': {
            'fingerprint': spec.fingerprint,
            'q': spec.q,
            'p': spec.p,
            'lambda': spec.lam,
            'kappa': spec.kappa,
            'h0_mode': spec.h0_mode
        },
        'omega': matrix_payload(fit.omega.omega),
        'omega_orthonormal': matrix_payload(orthonormal_omega(fit.omega)),
        'iterations': fit.iterations,
        'converged': fit.converged,
        'log_pl': sig6(fit.log_pl),
        'log_pl_trace': [sig6(x) for x in fit.log_pl_trace]
    }
    if spec.restriction is not None:
        payload['spec']['group_sizes'] = list(spec.restriction.group_sizes)
    return payload


def indexes_frame(fit: MaiFit, panel: TimeSeriesPanel) -> pd.DataFrame:
    frame = pd.DataFrame(fit.indexes, columns=[f"f{j + 1}" for j in range(fit.indexes.shape[1])])
    frame.insert(0, "date", panel.dates)
    return frame


def beliefs_frame(beliefs: List[KalmanBelief], panel: TimeSeriesPanel) -> pd.DataFrame:
    """
    Une ligne par instant filtré: t, date, β, diag Σ (si conservée), vech H, log densité
    """
    rows = []
    for belief in beliefs:
        row = {'t': belief.t, 'date': panel.dates[belief.t]}
        for i, value in enumerate(belief.beta_mean):
            row[f"beta_{i}"] = value
        if belief.beta_cov is not None:
            for i, value in enumerate(np.diag(belief.beta_cov)):
                row[f"sigma_{i}"] = value
        rows_idx, cols_idx = np.tril_indices(belief.H.shape[0])
        for i, j in zip(rows_idx, cols_idx):
            row[f"H_{i}_{j}"] = belief.H[i, j]
        row['logpdf'] = belief.log_pred_density
        rows.append(row)
    return pd.DataFrame(rows)


# === Pool ===
def weights_frame(run: PoolRun) -> pd.DataFrame:
    """Trajectoire des poids au format long (t, date, spec, π_pred, π_post)"""
    rows = []
    for i in range(run.pi_pred.shape[0]):
        t = run.start + i
        date = run.dates[i] if run.dates else ""
        for k, spec in enumerate(run.specs):
            rows.append({
                't': t,
                'date': date,
                'spec': spec.fingerprint,
                'pi_pred': run.pi_pred[i, k],
                'pi_post': run.pi_post[i, k]
            })
    return pd.DataFrame(rows)


def selected_frame(run: PoolRun) -> pd.DataFrame:
    """Modèle retenu par DMS à chaque instant (indice 0-based)"""
    return pd.DataFrame({
        't': [run.start + i for i in range(len(run.selected))],
        'date': run.dates if run.dates else [""] * len(run.selected),
        'selected': run.selected,
        'spec': [run.specs[k].fingerprint for k in run.selected]
    })


def ranking_frame(rankings: List[SpecRanking]) -> pd.DataFrame:
    return pd.DataFrame([
        {
            'rank': r.rank,
            'q': r.q,
            'p': r.p,
            'lambda': r.lam,
            'kappa': r.kappa,
            'log_pl': r.log_pl,
            'terminal_weight': r.terminal_weight,
            'spec': r.fingerprint
        }
        for r in rankings
    ])


# === Décomposition ===
def shares_frame(shares: np.ndarray, dates: Sequence[str], series_ids: Sequence[str]) -> pd.DataFrame:
    """Parts communes au format long (date, series_id, common_share)"""
    frame = pd.DataFrame(shares, columns=list(series_ids))
    frame.insert(0, "date", list(dates))
    return frame.melt(id_vars="date", var_name="series_id", value_name="common_share")


# === Évaluation ===
def records_frame(records: List[ForecastRecord]) -> pd.DataFrame:
    columns = list(ForecastRecord.model_fields)
    return pd.DataFrame([r.model_dump() for r in records], columns=columns)


def metric_frame(table: MetricTable, metric: str) -> pd.DataFrame:
    """Table d'une métrique: valeur absolue et ratio au benchmark"""
    return pd.DataFrame([
        {
            'model': row.model,
            'variable': row.variable,
            'horizon': row.horizon,
            'count': row.count,
            'value': getattr(row, metric),
            'ratio': getattr(row, f"{metric}_ratio"),
            'diverged': row.diverged
        }
        for row in table.rows
    ])


# === Manifest ===
def write_manifest(config, config_digest: str, out_dir, outputs: List[str], extra: Dict = None) -> Path:
    """manifest.json: configuration complète, son empreinte, fichiers produits"""
    payload = {
        'command': config.command,
        'config': config.model_dump(mode='json'),
        'config_hash': config_digest,
        'outputs': sorted(outputs)
    }
    if extra:
        payload.update(extra)
    return write_json(payload, Path(out_dir) / "manifest.json")
