"""
Filtre de Kalman à facteur d'oubli avec covariance EWMA

Modèle d'état:
    y_t = Z_t β_t + ε_t,    ε_t ~ N(0, H_t)
    β_t = β_{t-1} + η_t     (Q_t remplacé par le facteur d'oubli λ)

Une passe enchaîne pour chaque t:
    prédiction -> densité prédictive -> mise à jour -> EWMA de H
La densité prédictive et la mise à jour de t utilisent Ĥ_{t-1}.
"""

import logging
from typing import List, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import FilterFailureError, InsufficientSampleError
from .models import FilterConfig, KalmanBelief

logger = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)
MIN_PIVOT = 1e-12


def symmetrize(matrix: np.ndarray) -> np.ndarray:
    return 0.5 * (matrix + matrix.T)


def safe_cholesky(S: np.ndarray, jitter: float, t: int = -1):
    """
    Factorisation de Cholesky avec politique de jitter

    Si la factorisation échoue ou si le plus petit pivot est < 1e-12,
    on ajoute jitter·I et on réessaie une fois.

    Returns:
        Facteur (c, lower) utilisable par cho_solve

    Raises:
        FilterFailureError: matrice singulière même après jitter
    """
    try:
        factor = cho_factor(S, lower=True)
        if np.min(np.diag(factor[0])) ** 2 >= MIN_PIVOT:
            return factor
    except (LinAlgError, ValueError):
        pass

    logger.warning(f"Innovation covariance ill-conditioned at t={t}, adding jitter {jitter:g}")
    try:
        factor = cho_factor(S + jitter * np.eye(S.shape[0]), lower=True)
    except (LinAlgError, ValueError) as e:
        raise FilterFailureError(t) from e
    if not np.all(np.isfinite(factor[0])) or np.min(np.diag(factor[0])) ** 2 < MIN_PIVOT:
        raise FilterFailureError(t)
    return factor


def gaussian_logpdf(resid: np.ndarray, factor) -> float:
    """Log densité N(0, S) en e, à partir du facteur de Cholesky de S"""
    L = factor[0]
    N = resid.shape[0]
    log_det = 2.0 * np.sum(np.log(np.diag(L)))
    quad = float(resid @ cho_solve(factor, resid))
    return -0.5 * (N * LOG_2PI + log_det + quad)


# ============================================================================
# Étapes élémentaires
# ============================================================================

def predict_state(prev: KalmanBelief, lam: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Prédiction avec facteur d'oubli: Σ_{t|t-1} = Σ_{t-1|t-1} / λ

    La moyenne suit une marche aléatoire (β̂_{t|t-1} = β̂_{t-1|t-1}).
    """
    if prev.beta_cov is None:
        raise ValueError("predict_state needs a belief that kept its covariance")
    return prev.beta_mean.copy(), prev.beta_cov / lam


def predictive_density(
    pred_mean: np.ndarray,
    pred_cov: np.ndarray,
    y_t: np.ndarray,
    Z_t: np.ndarray,
    H_t: np.ndarray,
    jitter: float = 1e-8,
    t: int = -1
) -> Tuple[np.ndarray, np.ndarray, float]:
    """
    Densité prédictive y_t | Y_{t-1} ~ N(Z_t β̂_{t|t-1}, H_t + Z_t Σ_{t|t-1} Z_t')

    Returns:
        (moyenne, covariance, log densité en y_t)
    """
    mean = Z_t @ pred_mean
    cov = symmetrize(H_t + Z_t @ pred_cov @ Z_t.T)
    factor = safe_cholesky(cov, jitter, t)
    return mean, cov, gaussian_logpdf(y_t - mean, factor)


def update_state(
    pred_mean: np.ndarray,
    pred_cov: np.ndarray,
    y_t: np.ndarray,
    Z_t: np.ndarray,
    H_t: np.ndarray,
    jitter: float = 1e-8,
    t: int = 0
) -> KalmanBelief:
    """
    Mise à jour de Kalman standard

    Le belief retourné porte H_t (la covariance utilisée), le résidu
    y_t - Z_t β̂_{t|t-1} et la log densité prédictive.
    """
    mean = Z_t @ pred_mean
    S = symmetrize(H_t + Z_t @ pred_cov @ Z_t.T)
    factor = safe_cholesky(S, jitter, t)
    resid = y_t - mean

    ZP = Z_t @ pred_cov
    post_mean = pred_mean + ZP.T @ cho_solve(factor, resid)
    post_cov = symmetrize(pred_cov - ZP.T @ cho_solve(factor, ZP))

    return KalmanBelief(
        t=t,
        beta_mean=post_mean,
        beta_cov=post_cov,
        H=H_t,
        resid=resid,
        log_pred_density=gaussian_logpdf(resid, factor),
        pred_mean=mean,
        pred_cov=S
    )


def ewma_update(H_prev: np.ndarray, resid: np.ndarray, kappa: float) -> np.ndarray:
    """H_t = κ H_{t-1} + (1-κ) ε ε'"""
    return symmetrize(kappa * H_prev + (1.0 - kappa) * np.outer(resid, resid))


# ============================================================================
# Initialisation de H
# ============================================================================

def initial_H(y: np.ndarray, Z: np.ndarray, config: FilterConfig) -> np.ndarray:
    """
    Covariance initiale H_0 selon config.h0_mode

    - identity: I_N
    - sample: covariance empirique des observations filtrées
    - ols: covariance des résidus de la régression des y_t sur Z_t à coefficients constants
    """
    N = y.shape[1]
    if config.H0 is not None:
        return np.asarray(config.H0, dtype=float)
    if config.h0_mode == "identity":
        return np.eye(N)
    if y.shape[0] < 2:
        raise InsufficientSampleError(f"h0_mode={config.h0_mode} needs at least 2 observations")
    if config.h0_mode == "sample":
        return np.atleast_2d(np.cov(y, rowvar=False, ddof=1))

    X = Z.reshape(-1, Z.shape[2])
    coef, *_ = np.linalg.lstsq(X, y.reshape(-1), rcond=None)
    resid = y - np.einsum('tnk,k->tn', Z, coef)
    return symmetrize(resid.T @ resid / y.shape[0])


# ============================================================================
# Passe complète
# ============================================================================

def filter_pass(
    y: np.ndarray,
    Z: np.ndarray,
    config: FilterConfig,
    t_offset: int = 0,
    keep_covariances: bool = False
) -> Tuple[List[KalmanBelief], float]:
    """
    Une passe avant du filtre

    Args:
        y: Observations utilisables, T_u × N
        Z: Matrices de mesure alignées, T_u × N × k
        config: Hyperparamètres (λ, κ, priors, jitter)
        t_offset: Indice temporel de la première ligne (les p premières lignes du panel servent de retards)
        keep_covariances: Conserver Σ_{t|t} à chaque t (sinon seulement au dernier)

    Returns:
        (beliefs, somme des log densités prédictives)

    Raises:
        InsufficientSampleError: aucune observation utilisable
        FilterFailureError: covariance d'innovation singulière à l'instant t
    """
    y = np.asarray(y, dtype=float)
    Z = np.asarray(Z, dtype=float)
    if y.ndim != 2 or y.shape[0] == 0:
        raise InsufficientSampleError("insufficient observations")
    if Z.shape[:2] != y.shape:
        raise ValueError(f"Z has shape {Z.shape}, expected {y.shape} × k")

    k = Z.shape[2]
    mean = np.zeros(k) if config.beta0_mean is None else np.asarray(config.beta0_mean, dtype=float)
    cov = config.beta0_var_scale * np.eye(k)
    H = initial_H(y, Z, config)

    beliefs = []
    total_log_pl = 0.0
    last = y.shape[0] - 1

    for i in range(y.shape[0]):
        t = t_offset + i
        pred_cov = cov / config.lam
        belief = update_state(mean, pred_cov, y[i], Z[i], H, config.jitter, t)
        H = ewma_update(H, belief.resid, config.kappa)
        mean, cov = belief.beta_mean, belief.beta_cov
        total_log_pl += belief.log_pred_density

        beliefs.append(belief.model_copy(update={
            'H': H,
            'beta_cov': cov if (keep_covariances or i == last) else None
        }))

    logger.debug(f"Filter pass done: T={len(beliefs)} k={k} log PL={total_log_pl:.6g}")
    return beliefs, total_log_pl
