"""
Générateurs de données MAI simulées

    y_t = Σ_h β_{h,t} ω' y_{t-h} + ε_t,   ε_t ~ N(0, H_t)

β_t constant ou en marche aléatoire, H_t constant, EWMA ou avec rupture de variance.
"""

import json
import logging
from pathlib import Path
from typing import Tuple

import numpy as np
import pandas as pd

from .errors import DgpRejectedError
from .mai_estimator import fix_signs
from .models import DgpSpec, GroundTruth, TimeSeriesPanel

logger = logging.getLogger(__name__)

MAX_REDRAWS = 100


def companion_radius(beta: np.ndarray, omega: np.ndarray) -> float:
    """
    Rayon spectral de la matrice compagnon du VAR des indexes α_h = ω' β_h

    Args:
        beta: Coefficients p×N×q
        omega: Poids N×q
    """
    p, _, q = beta.shape
    companion = np.zeros((p * q, p * q))
    for h in range(p):
        companion[:q, h * q:(h + 1) * q] = omega.T @ beta[h]
    if p > 1:
        companion[q:, :-q] = np.eye((p - 1) * q)
    return float(np.max(np.abs(np.linalg.eigvals(companion))))


def default_volatility(N: int, rng: np.random.Generator) -> np.ndarray:
    A = rng.standard_normal((N, N))
    return 0.5 * np.eye(N) + 0.5 * A @ A.T / N


def simulate_mai(spec: DgpSpec) -> Tuple[TimeSeriesPanel, GroundTruth]:
    """
    Simule un MAI selon spec (burn-in écarté, reproductible par la graine)

    Returns:
        (panel brut, vérité terrain)

    Raises:
        DgpRejectedError: rayon spectral initial ≥ radius_limit
    """
    rng = np.random.default_rng(spec.seed)
    N, q, p = spec.N, spec.q, spec.p

    if spec.omega_true is not None:
        omega = np.asarray(spec.omega_true, dtype=float)
    else:
        omega = fix_signs(np.linalg.qr(rng.standard_normal((N, q)))[0])

    if spec.beta is not None:
        beta = np.asarray(spec.beta, dtype=float)
    else:
        beta = rng.normal(0.0, 0.5, size=(p, N, q))
        radius = companion_radius(beta, omega)
        if radius > spec.target_radius:
            beta *= spec.target_radius / radius

    radius = companion_radius(beta, omega)
    if radius >= spec.radius_limit:
        raise DgpRejectedError(radius, spec.radius_limit)

    H_bar = spec.h_matrix if spec.h_matrix is not None else default_volatility(N, rng)
    chol_bar = np.linalg.cholesky(H_bar)
    total = spec.burn_in + spec.T
    break_at = spec.burn_in + int(np.floor(spec.break_fraction * spec.T))

    y = np.zeros((total + p, N))
    beta_path = np.empty((total, p, N, q))
    H_path = np.empty((total, N, N))
    H = H_bar.copy()

    for s in range(total):
        if spec.sigma_beta > 0:
            beta = _random_walk_step(beta, omega, spec, rng)

        if spec.h_mode == "ewma":
            u = chol_bar @ rng.standard_normal(N)
            H = spec.h_kappa * H + (1.0 - spec.h_kappa) * np.outer(u, u)
        elif spec.h_mode == "break":
            H = spec.break_factor * H_bar if s >= break_at else H_bar

        t = s + p
        mean = sum(beta[h] @ (omega.T @ y[t - h - 1]) for h in range(p))
        y[t] = mean + np.linalg.cholesky(H) @ rng.standard_normal(N)
        beta_path[s] = beta
        H_path[s] = H

    keep = slice(spec.burn_in, total)
    dates = [str(period) for period in pd.period_range("1960Q1", periods=spec.T, freq="Q")]
    panel = TimeSeriesPanel(
        dates=dates,
        series_ids=[f"y{i + 1}" for i in range(N)],
        values=y[p:][keep],
        tcodes=[1] * N
    )
    truth = GroundTruth(omega=omega, beta_path=beta_path[keep], H_path=H_path[keep], seed=spec.seed)

    logger.info(f"Simulated MAI: N={N} q={q} p={p} T={spec.T} seed={spec.seed} radius={radius:.4g}")
    return panel, truth


def _random_walk_step(beta, omega, spec, rng):
    """Pas de marche aléatoire, retiré tant que le garde de stationnarité est violé"""
    for _ in range(MAX_REDRAWS):
        proposal = beta + spec.sigma_beta * rng.standard_normal(beta.shape)
        if companion_radius(proposal, omega) < spec.radius_limit:
            return proposal
    logger.warning("Random-walk step rejected repeatedly, keeping the previous coefficients")
    return beta


def write_truth(truth: GroundTruth, path) -> Path:
    """Fichier JSON de vérité terrain à côté du panel simulé"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        'seed': truth.seed,
        'omega': truth.omega.tolist(),
        'beta_path': truth.beta_path.tolist(),
        'H_path': truth.H_path.tolist()
    }
    with open(path, "w") as handle:
        json.dump(payload, handle)
    return path

