"""
Chargement et préparation des panels macroéconomiques

Format d'entrée (convention FRED-QD):
- Ligne d'en-tête: colonne de dates + identifiants des séries
- Deuxième ligne optionnelle: codes de transformation (1..7)
- Une ligne par trimestre

Table des codes de transformation:
    1: x    2: Δx    3: Δ²x    4: ln x    5: Δln x    6: Δ²ln x    7: Δ(x_t/x_{t-1} - 1)
"""

import logging
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd

from .errors import (
    InsufficientSampleError,
    PanelParseError,
    PanelStructureError,
    TransformCodeError,
    TransformDomainError,
    ZeroVarianceError
)
from .models import TimeSeriesPanel

logger = logging.getLogger(__name__)

# Nombre d'observations perdues par code
LAG_LOSS = {1: 0, 2: 1, 3: 2, 4: 0, 5: 1, 6: 2, 7: 2}
LOG_CODES = (4, 5, 6, 7)

META_PREFIXES = ("#tcode:", "#mean:", "#std:", "#group:")
FULL_PRECISION = "%.17g"


def _parse_quarter(value: str) -> Optional[pd.Period]:
    """Convertit une cellule de date en trimestre (None si illisible)"""
    try:
        period = pd.Period(str(value).strip(), freq='Q')
    except (ValueError, TypeError):
        return None
    if pd.isna(period):
        return None
    return period


# ============================================================================
# Chargement
# ============================================================================

def load_panel(path, date_column: str = "date") -> TimeSeriesPanel:
    """
    Charge un CSV brut au format FRED-QD

    Args:
        path: Chemin du fichier CSV
        date_column: Nom de la colonne de dates

    Returns:
        Panel brut (non transformé) avec les codes de transformation

    Raises:
        PanelStructureError: fichier mal formé (lignes irrégulières, colonne manquante)
        PanelParseError: cellule non numérique (ligne de données 1-based, colonne)
        TransformCodeError: code hors de 1..7
    """
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError as e:
        raise PanelStructureError(f"Empty panel file {path}") from e
    except pd.errors.ParserError as e:
        raise PanelStructureError(f"Ragged rows in {path}: {e}") from e

    if date_column not in frame.columns:
        raise PanelStructureError(f"Date column {date_column!r} not found in {path}")
    if frame.isna().any().any():
        # Lignes trop courtes: pandas complète avec NaN
        bad_row = int(np.where(frame.isna().any(axis=1).to_numpy())[0][0]) + 1
        raise PanelStructureError(f"Ragged rows in {path}: row {bad_row} has missing fields")

    series_ids = [str(c) for c in frame.columns if c != date_column]
    if not series_ids:
        raise PanelStructureError(f"No series columns in {path}")

    # Ligne de codes: sa cellule de date n'est pas un trimestre
    tcodes = [1] * len(series_ids)
    if len(frame) > 0 and _parse_quarter(frame[date_column].iloc[0]) is None:
        tcode_row = frame.iloc[0]
        tcodes = [_parse_tcode(sid, tcode_row[sid]) for sid in series_ids]
        frame = frame.iloc[1:].reset_index(drop=True)

    if len(frame) == 0:
        raise InsufficientSampleError(f"Panel {path} has no observation rows")

    dates = []
    for row, cell in enumerate(frame[date_column], start=1):
        period = _parse_quarter(cell)
        if period is None:
            raise PanelParseError(row, date_column, cell)
        dates.append(period)
    _check_quarters(dates)

    values = np.empty((len(frame), len(series_ids)))
    for j, sid in enumerate(series_ids):
        numeric = pd.to_numeric(frame[sid].str.strip(), errors='coerce').to_numpy(dtype=float)
        bad = np.where(~np.isfinite(numeric))[0]
        if bad.size:
            raise PanelParseError(int(bad[0]) + 1, sid, frame[sid].iloc[bad[0]])
        values[:, j] = numeric

    logger.info(f"Loaded panel {path}: N={len(series_ids)} T={len(dates)}")

    return TimeSeriesPanel(
        dates=[str(p) for p in dates],
        series_ids=series_ids,
        values=values,
        tcodes=tcodes
    )


def _parse_tcode(series: str, cell: str) -> int:
    try:
        tcode = int(float(cell))
    except (TypeError, ValueError):
        raise TransformCodeError(series, cell)
    if float(cell) != tcode or tcode not in LAG_LOSS:
        raise TransformCodeError(series, cell)
    return tcode


def _check_quarters(dates: List[pd.Period]):
    """Dates strictement croissantes et espacées d'un trimestre"""
    for previous, current in zip(dates, dates[1:]):
        if current.ordinal - previous.ordinal != 1:
            raise PanelStructureError(
                f"Dates must be consecutive quarters: {previous} followed by {current}"
            )


# ============================================================================
# Transformations
# ============================================================================

def apply_transform(x, tcode: int, series: str = None) -> np.ndarray:
    """
    Applique un code de transformation à une série

    Returns:
        Série de longueur T, T-1 ou T-2 selon le code
    """
    x = np.asarray(x, dtype=float)
    if tcode not in LAG_LOSS:
        raise TransformCodeError(series or "<series>", tcode)

    if tcode in LOG_CODES:
        non_positive = np.where(x <= 0)[0]
        if non_positive.size:
            index = int(non_positive[0])
            raise TransformDomainError(index, float(x[index]), series)

    if tcode == 1:
        return x.copy()
    if tcode == 2:
        return np.diff(x)
    if tcode == 3:
        return np.diff(x, n=2)
    if tcode == 4:
        return np.log(x)
    if tcode == 5:
        return np.diff(np.log(x))
    if tcode == 6:
        return np.diff(np.log(x), n=2)
    return np.diff(x[1:] / x[:-1] - 1.0)


def transform_panel(raw: TimeSeriesPanel) -> TimeSeriesPanel:
    """
    Transforme chaque série selon son code puis aligne les lignes

    Toutes les séries perdent le même nombre de lignes initiales
    (la perte maximale parmi les codes présents).
    """
    loss = max(LAG_LOSS[code] for code in raw.tcodes)
    T_out = raw.T - loss
    if T_out < 1:
        raise InsufficientSampleError(
            f"Transforms drop {loss} rows but the panel has only {raw.T}"
        )

    columns = []
    for j, (sid, code) in enumerate(zip(raw.series_ids, raw.tcodes)):
        transformed = apply_transform(raw.values[:, j], code, series=sid)
        columns.append(transformed[len(transformed) - T_out:])

    return TimeSeriesPanel(
        dates=raw.dates[loss:],
        series_ids=raw.series_ids,
        values=np.column_stack(columns),
        tcodes=raw.tcodes,
        group_labels=raw.group_labels
    )


# ============================================================================
# Standardisation
# ============================================================================

def standardize(panel: TimeSeriesPanel) -> TimeSeriesPanel:
    """
    Centre et réduit chaque colonne (écart-type avec dénominateur T-1)

    Si le panel est déjà standardisé, les statistiques sont composées afin
    que destandardize revienne toujours au panel transformé d'origine.
    """
    if panel.T < 2:
        raise InsufficientSampleError("Standardization needs at least 2 observations")

    values = panel.values
    means = values.mean(axis=0)
    stds = values.std(axis=0, ddof=1)
    for j, sid in enumerate(panel.series_ids):
        scale = max(1.0, abs(means[j]))
        if not stds[j] > 1e-12 * scale:
            raise ZeroVarianceError(sid)

    standardized = (values - means) / stds
    if panel.is_standardized:
        means = panel.means + panel.stds * means
        stds = panel.stds * stds

    return panel.model_copy(update={'values': standardized, 'means': means, 'stds': stds})


def destandardize(panel: TimeSeriesPanel) -> TimeSeriesPanel:
    """Inverse de standardize (retourne le panel transformé)"""
    if not panel.is_standardized:
        return panel
    values = panel.values * panel.stds + panel.means
    return panel.model_copy(update={'values': values, 'means': None, 'stds': None})


def window(panel: TimeSeriesPanel, end: int) -> TimeSeriesPanel:
    """Sous-panel des `end` premières observations (statistiques conservées)"""
    if not 1 <= end <= panel.T:
        raise InsufficientSampleError(f"Window end {end} outside 1..{panel.T}")
    return panel.model_copy(update={
        'dates': panel.dates[:end],
        'values': panel.values[:end].copy()
    })


# ============================================================================
# Fichier normalisé
# ============================================================================

def write_normalized_panel(panel: TimeSeriesPanel, path) -> Path:
    """
    Écrit le panel transformé avec ses métadonnées

    Les lignes #tcode/#mean/#std/#group précèdent un CSV classique;
    les réels sont écrits en précision complète pour un aller-retour exact.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    frame = pd.DataFrame(panel.values, columns=panel.series_ids)
    frame.insert(0, "date", panel.dates)

    with open(path, "w", newline="") as handle:
        handle.write("#tcode:" + ",".join(str(c) for c in panel.tcodes) + "\n")
        if panel.is_standardized:
            handle.write("#mean:" + ",".join(FULL_PRECISION % m for m in panel.means) + "\n")
            handle.write("#std:" + ",".join(FULL_PRECISION % s for s in panel.stds) + "\n")
        if panel.group_labels is not None:
            handle.write("#group:" + ",".join(panel.group_labels) + "\n")
        frame.to_csv(handle, index=False, float_format=FULL_PRECISION, lineterminator="\n")

    logger.info(f"Wrote normalized panel {path}: N={panel.N} T={panel.T}")
    return path


def is_normalized_file(path) -> bool:
    with open(path, "r") as handle:
        return handle.readline().startswith("#tcode:")


def read_normalized_panel(path) -> TimeSeriesPanel:
    """Relit un fichier écrit par write_normalized_panel"""
    meta = {}
    skip = 0
    with open(path, "r") as handle:
        for line in handle:
            if not line.startswith(META_PREFIXES):
                break
            key, _, payload = line.strip().partition(":")
            meta[key[1:]] = payload.split(",") if payload else []
            skip += 1

    if "tcode" not in meta:
        raise PanelStructureError(f"{path} is not a normalized panel file (missing #tcode line)")

    try:
        frame = pd.read_csv(path, skiprows=skip, dtype=str, keep_default_na=False)
    except pd.errors.ParserError as e:
        raise PanelStructureError(f"Ragged rows in {path}: {e}") from e

    if "date" not in frame.columns:
        raise PanelStructureError(f"Date column 'date' not found in {path}")
    series_ids = [c for c in frame.columns if c != "date"]
    if len(meta["tcode"]) != len(series_ids):
        raise PanelStructureError("#tcode line does not match the number of series")

    values = np.empty((len(frame), len(series_ids)))
    for j, sid in enumerate(series_ids):
        numeric = pd.to_numeric(frame[sid], errors='coerce').to_numpy(dtype=float)
        bad = np.where(~np.isfinite(numeric))[0]
        if bad.size:
            raise PanelParseError(int(bad[0]) + 1, sid, frame[sid].iloc[bad[0]])
        values[:, j] = numeric

    tcodes = [_parse_tcode(sid, code) for sid, code in zip(series_ids, meta["tcode"])]
    means = np.array(meta["mean"], dtype=float) if "mean" in meta else None
    stds = np.array(meta["std"], dtype=float) if "std" in meta else None

    try:
        return TimeSeriesPanel(
            dates=list(frame["date"]),
            series_ids=series_ids,
            values=values,
            tcodes=tcodes,
            means=means,
            stds=stds,
            group_labels=meta.get("group")
        )
    except ValueError as e:
        raise PanelStructureError(f"Invalid normalized panel {path}: {e}") from e


def panel_from_path(path, date_column: str = "date", standardize_panel: bool = True) -> TimeSeriesPanel:
    """
    Charge un panel prêt pour l'estimation

    Fichier normalisé: relu tel quel. CSV brut: chargé, transformé et
    (si demandé) standardisé.
    """
    if is_normalized_file(path):
        return read_normalized_panel(path)
    panel = transform_panel(load_panel(path, date_column))
    if standardize_panel:
        panel = standardize(panel)
    return panel


def write_raw_panel(panel: TimeSeriesPanel, path, date_column: str = "date") -> Path:
    """Écrit un panel au format d'entrée (ligne de codes comprise), relisible par load_panel"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    frame = pd.DataFrame(panel.values, columns=panel.series_ids)
    frame.insert(0, date_column, panel.dates)
    codes = pd.DataFrame([["tcode"] + [str(c) for c in panel.tcodes]], columns=frame.columns)

    with open(path, "w", newline="") as handle:
        frame.head(0).to_csv(handle, index=False, lineterminator="\n")
        codes.to_csv(handle, index=False, header=False, lineterminator="\n")
        frame.to_csv(handle, index=False, header=False, float_format=FULL_PRECISION, lineterminator="\n")
    return path
