"""
Configuration pytest commune

Fixtures partagées:
- générateur aléatoire à graine fixe
- fabrique de panels et panels MAI simulés
- écriture de CSV au format d'entrée dans tmp_path
"""

import numpy as np
import pandas as pd
import pytest

from src.models import DgpSpec, TimeSeriesPanel
from src.panel import standardize
from src.simulation import simulate_mai


@pytest.fixture
def rng():
    """Générateur numpy reproductible"""
    return np.random.default_rng(20240101)


@pytest.fixture
def make_panel():
    """
    Fabrique de TimeSeriesPanel à partir d'une matrice

    Les dates sont des trimestres consécutifs à partir de 2000Q1.
    """
    def _make(values, series_ids=None, tcodes=None, start="2000Q1", **extra):
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        T, N = values.shape
        return TimeSeriesPanel(
            dates=[str(p) for p in pd.period_range(start, periods=T, freq="Q")],
            series_ids=series_ids or [f"s{i + 1}" for i in range(N)],
            values=values,
            tcodes=tcodes or [1] * N,
            **extra
        )
    return _make


@pytest.fixture
def simulated_panel():
    """Panel MAI standardisé: N=3, q=1, T=120, paramètres constants"""
    panel, _ = simulate_mai(DgpSpec(N=3, q=1, T=120, burn_in=50, seed=11))
    return standardize(panel)


@pytest.fixture
def simulated_two_index():
    """(panel brut, vérité) pour N=4, q=2, T=200"""
    return simulate_mai(DgpSpec(N=4, q=2, T=200, burn_in=50, seed=3))


@pytest.fixture
def write_csv(tmp_path):
    """
    Écrit un texte CSV dans tmp_path

    Returns:
        Fonction (texte, nom) -> chemin
    """
    def _write(text, name="panel.csv"):
        path = tmp_path / name
        path.write_text(text)
        return path
    return _write


@pytest.fixture
def small_csv_text():
    """Panel FRED-QD minimal: 2 séries, 5 trimestres, ligne de codes 1,5"""
    return (
        "date,GDP,CPI\n"
        "tcode,1,5\n"
        "2000Q1,1.0,100.0\n"
        "2000Q2,2.0,101.0\n"
        "2000Q3,1.5,103.0\n"
        "2000Q4,3.0,102.5\n"
        "2001Q1,2.5,104.0\n"
    )
