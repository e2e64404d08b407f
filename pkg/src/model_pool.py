"""
Pool de modèles: moyenne (DMA) et sélection (DMS) dynamiques

Récursion des probabilités, en log:
    π_{t|t-1,k} ∝ π_{t-1|t-1,k}^α
    π_{t|t,k}   ∝ π_{t|t-1,k} · p_k(y_t | Y_{t-1})
avec π_{0|0,k} = 1/K. α = 1 correspond à la moyenne bayésienne (BMA).
"""

import itertools
import logging
from typing import List, Optional, Sequence

import numpy as np
from joblib import Parallel, delayed
from scipy.special import logsumexp

from .errors import DegeneratePoolError, MaiError, PoolCollapseError
from .kalman_filter import LOG_2PI
from .mai_estimator import iterate_mean, switching_estimate
from .models import ArrayModel, GroupTemplate, IndexWeights, ModelSpec, PoolRun, SpecRanking, TimeSeriesPanel

logger = logging.getLogger(__name__)


def _renormalize(log_weights: np.ndarray) -> np.ndarray:
    weights = np.exp(log_weights - logsumexp(log_weights))
    return weights / weights.sum()


# ============================================================================
# Récursion des poids
# ============================================================================

def pool_predict_weights(pi_post_prev: np.ndarray, alpha: float) -> np.ndarray:
    """
    π_{t|t-1} = π^α / Σ π^α (α = 1: identité)

    Raises:
        DegeneratePoolError: poids tous nuls
    """
    weights = np.asarray(pi_post_prev, dtype=float)
    if not np.any(weights > 0):
        raise DegeneratePoolError("every model weight is zero: the pool is degenerate")
    with np.errstate(divide='ignore'):
        log_weights = alpha * np.log(weights)
    return _renormalize(log_weights)


def pool_update_weights(pi_pred: np.ndarray, log_pred_likelihoods: np.ndarray, t: int = 0) -> np.ndarray:
    """
    π_{t|t} ∝ π_{t|t-1} · p_k(y_t | Y_{t-1}), calculé en log

    Raises:
        PoolCollapseError: toutes les densités sont nulles
    """
    with np.errstate(divide='ignore'):
        log_weights = np.log(np.asarray(pi_pred, dtype=float)) + np.asarray(log_pred_likelihoods, dtype=float)
    if not np.any(np.isfinite(log_weights)):
        raise PoolCollapseError(t)
    return _renormalize(log_weights)


def dms_select(pi_pred: np.ndarray) -> int:
    """Indice (0-based) du modèle le plus probable; égalité -> plus petit indice"""
    return int(np.argmax(pi_pred))


# ============================================================================
# Prévision combinée
# ============================================================================

class MixtureForecast(ArrayModel):
    """Mélange gaussien fini des prédictives des modèles"""
    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    @property
    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    @property
    def covariance(self) -> np.ndarray:
        """Variance du mélange: Σ w_k (C_k + m_k m_k') - m m'"""
        center = self.mean
        second = np.einsum('k,kij->ij', self.weights, self.covs + np.einsum('ki,kj->kij', self.means, self.means))
        return second - np.outer(center, center)

    def component_logpdfs(self, y: np.ndarray) -> np.ndarray:
        result = np.empty(len(self.weights))
        for k in range(len(self.weights)):
            resid = y - self.means[k]
            sign, log_det = np.linalg.slogdet(self.covs[k])
            quad = resid @ np.linalg.solve(self.covs[k], resid)
            result[k] = -0.5 * (len(y) * LOG_2PI + log_det + quad)
        return result

    def logpdf(self, y: np.ndarray) -> float:
        with np.errstate(divide='ignore'):
            return float(logsumexp(np.log(self.weights) + self.component_logpdfs(np.asarray(y, dtype=float))))

    def marginal_variance(self, i: int) -> float:
        return float(self.covariance[i, i])

    def marginal_logpdf(self, value: float, i: int) -> float:
        """Log densité de la marginale de la coordonnée i (mélange de gaussiennes univariées)"""
        variances = self.covs[:, i, i]
        component = -0.5 * (LOG_2PI + np.log(variances) + (value - self.means[:, i]) ** 2 / variances)
        with np.errstate(divide='ignore'):
            return float(logsumexp(np.log(self.weights) + component))


def dma_forecast(pi_pred: np.ndarray, means: np.ndarray, covs: np.ndarray) -> MixtureForecast:
    """
    Prévision DMA: moyenne pondérée par π_{t|t-1} et mélange gaussien

    Les modèles sans prévision (moyenne non finie) sont exclus et les
    poids restants renormalisés.
    """
    weights = np.asarray(pi_pred, dtype=float)
    means = np.atleast_2d(means)
    alive = np.all(np.isfinite(means), axis=1) & (weights > 0)
    if not np.any(alive):
        raise DegeneratePoolError("no model in the pool produced a forecast")
    kept = weights[alive] / weights[alive].sum()
    return MixtureForecast(weights=kept, means=means[alive], covs=np.asarray(covs)[alive])


# ============================================================================
# Grille et pool complet
# ============================================================================

def build_grid(
    q_values: Sequence[int],
    lambdas: Sequence[float],
    kappas: Sequence[float],
    p: int = 1,
    h0_mode: str = "identity",
    restriction: Optional[GroupTemplate] = None
) -> List[ModelSpec]:
    """Produit cartésien (q, λ, κ), dans l'ordre lexicographique"""
    return [
        ModelSpec(q=q, p=p, lam=lam, kappa=kappa, h0_mode=h0_mode,
                  restriction=restriction if restriction is not None and restriction.q == q else None)
        for q, lam, kappa in itertools.product(q_values, lambdas, kappas)
    ]


def _estimate(values, spec, tol, max_iter, init, keep_covariances):
    try:
        return switching_estimate(values, spec, tol=tol, max_iter=max_iter, init=init,
                                  keep_covariances=keep_covariances), None
    except MaiError as e:
        return None, str(e)


def estimate_specs(
    values: np.ndarray,
    specs: List[ModelSpec],
    tol: float = 1e-6,
    max_iter: int = 100,
    inits: Optional[List[Optional[IndexWeights]]] = None,
    workers: int = 1
):
    """Estime chaque membre du pool (en parallèle si workers > 1); None pour un échec"""
    inits = inits or [None] * len(specs)
    if workers > 1:
        results = Parallel(n_jobs=workers)(
            delayed(_estimate)(values, spec, tol, max_iter, init, False) for spec, init in zip(specs, inits)
        )
    else:
        results = [_estimate(values, spec, tol, max_iter, init, False) for spec, init in zip(specs, inits)]

    fits = []
    for spec, (fit, error) in zip(specs, results):
        if fit is None:
            logger.warning(f"Model {spec.fingerprint} failed and gets zero predictive density: {error}")
        fits.append(fit)
    return fits


def run_pool(
    panel,
    specs: List[ModelSpec],
    alpha: float = 0.99,
    mode: str = "DMA",
    horizons: Sequence[int] = (1,),
    tol: float = 1e-6,
    max_iter: int = 100,
    workers: int = 1,
    fits: Optional[list] = None
) -> PoolRun:
    """
    Pool complet sur un panel

    À chaque instant commun t: prédiction des poids, densités prédictives
    des modèles, prévision DMA/DMS faite en t-1, mise à jour des poids.
    Un modèle en échec reçoit une densité -inf.

    Args:
        panel: Panel standardisé (ou matrice T×N)
        specs: Membres du pool
        alpha: Facteur d'oubli des probabilités
        mode: DMA ou DMS pour les prévisions ponctuelles
        horizons: Horizons des prévisions ponctuelles (β̂_{t-1|t-1} itéré)
        fits: Ajustements déjà calculés (sinon estimés ici)
    """
    if not specs:
        raise ValueError("a pool needs at least one model")
    values = panel.values if isinstance(panel, TimeSeriesPanel) else np.asarray(panel, dtype=float)
    T, N = values.shape
    K = len(specs)
    horizons = list(horizons)

    if fits is None:
        fits = estimate_specs(values, specs, tol, max_iter, workers=workers)

    start = max(spec.p for spec in specs)
    steps = T - start
    log_densities = np.full((steps, K), -np.inf)
    pred_means = np.full((steps, K, N), np.nan)
    for k, fit in enumerate(fits):
        if fit is None:
            continue
        offset = start - fit.start
        for i in range(steps):
            belief = fit.beliefs[offset + i]
            log_densities[i, k] = belief.log_pred_density
            pred_means[i, k] = belief.pred_mean

    pi_post = np.full(K, 1.0 / K)
    pi_pred_path = np.empty((steps, K))
    pi_post_path = np.empty((steps, K))
    selected = np.empty(steps, dtype=int)
    forecasts = np.full((steps, len(horizons), N), np.nan)
    combined = np.empty(steps)

    for i in range(steps):
        t = start + i
        pi_pred = pool_predict_weights(pi_post, alpha)
        selected[i] = dms_select(pi_pred)

        model_paths = _model_paths(fits, values, t, horizons, pred_means[i])
        forecasts[i] = _combine(pi_pred, model_paths, mode, selected[i])

        with np.errstate(divide='ignore'):
            combined[i] = logsumexp(np.log(pi_pred) + log_densities[i])
        pi_post = pool_update_weights(pi_pred, log_densities[i], t)

        pi_pred_path[i] = pi_pred
        pi_post_path[i] = pi_post

    logger.info(f"Pool of {K} models run over {steps} steps (alpha={alpha:g}, mode={mode})")

    return PoolRun(
        specs=specs,
        fits=fits,
        alpha=alpha,
        mode=mode,
        start=start,
        dates=list(panel.dates[start:]) if isinstance(panel, TimeSeriesPanel) else [],
        horizons=horizons,
        log_densities=log_densities,
        pi_pred=pi_pred_path,
        pi_post=pi_post_path,
        selected=selected,
        point_forecasts=forecasts,
        combined_log_density=combined
    )


def _model_paths(fits, values, t, horizons, one_step_means):
    """Prévisions de chaque modèle faites en t-1 pour y_{t-1+h}"""
    h_max = max(horizons)
    K = len(fits)
    paths = np.full((K, len(horizons), values.shape[1]), np.nan)
    for k, fit in enumerate(fits):
        if fit is None:
            continue
        p = fit.spec.p
        origin = t - 1 - fit.start
        if origin >= 0:
            beta = fit.beliefs[origin].beta_mean
        else:
            beta = np.zeros(fit.beliefs[0].beta_mean.shape[0])
        path = iterate_mean(beta, fit.omega, values[t - p:t], h_max)
        for j, h in enumerate(horizons):
            paths[k, j] = one_step_means[k] if h == 1 else path[h - 1]
    return paths


def _combine(pi_pred, model_paths, mode, chosen):
    if mode == "DMS":
        return model_paths[chosen]
    alive = np.all(np.isfinite(model_paths.reshape(len(pi_pred), -1)), axis=1)
    if not np.any(alive):
        return np.full(model_paths.shape[1:], np.nan)
    weights = pi_pred[alive] / pi_pred[alive].sum()
    return np.einsum('k,khn->hn', weights, model_paths[alive])


def rank_specs(run: PoolRun) -> List[SpecRanking]:
    """
    Classement des spécifications par log PL totale (décroissante)

    Le poids terminal π_{T|T} est reporté à côté.
    """
    totals = run.total_log_pl
    terminal = run.pi_post[-1]
    order = sorted(range(len(run.specs)), key=lambda k: (-totals[k], k))
    return [
        SpecRanking(
            rank=rank,
            fingerprint=run.specs[k].fingerprint,
            q=run.specs[k].q,
            p=run.specs[k].p,
            lam=run.specs[k].lam,
            kappa=run.specs[k].kappa,
            log_pl=float(totals[k]),
            terminal_weight=float(terminal[k])
        )
        for rank, k in enumerate(order, start=1)
    ]
