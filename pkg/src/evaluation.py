"""
Évaluation hors échantillon en fenêtre croissante

À chaque origine t0 (1-based: la fenêtre d'estimation contient t0 observations):
- le panel transformé est tronqué à t0 puis restandardisé sur la fenêtre
- le modèle est réestimé (ou repart du ω précédent) et prévoit h = 1..h_max
- les prévisions sont ramenées dans les unités du panel transformé
- un enregistrement est émis par (variable, h) dès que t0 + h ≤ T

Modèles:
    M1/M2   TVP-MAI-SV      DMA/DMS sur (q, λ, κ)
    M3/M4   MAI-SV (λ=1)    DMA/DMS sur (q, κ)
    M5/M6   TVP-MAI (κ=1)   DMA/DMS sur (q, λ), H initial par OLS
    M7/M8   MAI (λ=κ=1)     DMA/DMS sur q, H initial par OLS
    M9      Marche aléatoire
    M10     VAR(1) par OLS
    M11     VAR(4) par OLS
Les modèles calculés ailleurs passent par ExternalForecastRunner.
"""

import logging
import math
from abc import ABC, abstractmethod
from collections import defaultdict
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from .errors import EmptyRecordSetError, InsufficientSampleError, MaiError, RankDeficiencyError, SpecValidationError
from .mai_estimator import fit_fixed_omega, forecast_from_fit, switching_estimate
from .model_pool import (
    MixtureForecast,
    build_grid,
    dma_forecast,
    dms_select,
    estimate_specs,
    pool_predict_weights,
    run_pool
)
from .models import ForecastRecord, GroupTemplate, MetricRow, MetricTable, ModelSpec, TimeSeriesPanel
from .panel import destandardize, standardize, window

logger = logging.getLogger(__name__)

DIVERGED_MARK = "---"
NO_DENSITY_MARK = "n/a"


def gaussian_forecast(mean: np.ndarray, cov: np.ndarray) -> MixtureForecast:
    """Prédictive gaussienne vue comme un mélange à une composante"""
    return MixtureForecast(weights=np.ones(1), means=np.atleast_2d(mean), covs=np.asarray(cov)[None, :, :])


# ============================================================================
# Modèles évalués
# ============================================================================

class ModelRunner(ABC):
    """Un modèle évaluable: estime sur une fenêtre standardisée et prévoit h = 1..h_max"""

    tag: str = "model"
    has_density: bool = True

    @abstractmethod
    def forecast(self, train: TimeSeriesPanel, h_max: int, state: Any = None) -> Tuple[List[MixtureForecast], Any]:
        """
        Returns:
            (une prédictive par horizon, état réutilisable à l'origine suivante)
        """


class RandomWalkRunner(ModelRunner):
    """Marche aléatoire: dernière valeur observée, variance des premières différences"""

    def __init__(self, tag: str = "M9", density: bool = False):
        self.tag = tag
        self.has_density = density

    def forecast(self, train, h_max, state=None):
        values = train.values
        last = values[-1]
        if values.shape[0] > 2:
            variances = np.var(np.diff(values, axis=0), axis=0, ddof=1)
        else:
            variances = np.ones(values.shape[1])
        cov = np.diag(variances)
        return [gaussian_forecast(last, cov) for _ in range(h_max)], None


def fit_var_ols(values: np.ndarray, p: int, intercept: bool = False):
    """
    VAR(p) par OLS

    Returns:
        (liste des A_h N×N, constante ou None, covariance des résidus)

    Raises:
        RankDeficiencyError: pas assez d'observations ou régresseurs colinéaires
    """
    T, N = values.shape
    Y = values[p:]
    X = np.hstack([values[p - 1 - h:T - 1 - h] for h in range(p)])
    if intercept:
        X = np.hstack([X, np.ones((X.shape[0], 1))])
    k = X.shape[1]
    if X.shape[0] <= k or np.linalg.matrix_rank(X) < k:
        raise RankDeficiencyError(f"VAR({p}) regressors are rank deficient with T={T}, N={N}")

    coef, *_ = np.linalg.lstsq(X, Y, rcond=None)
    resid = Y - X @ coef
    sigma = resid.T @ resid / (X.shape[0] - k)
    lags = [coef[h * N:(h + 1) * N].T for h in range(p)]
    const = coef[-1] if intercept else None
    return lags, const, sigma


def var_forecast(values: np.ndarray, lags, const, sigma, h_max: int):
    """Prévisions itérées et covariances Σ_{j<h} Ψ_j Σ Ψ_j'"""
    N = values.shape[1]
    p = len(lags)
    path = list(values[-p:])
    means = []
    for _ in range(h_max):
        y_next = sum(lags[h] @ path[-1 - h] for h in range(p))
        if const is not None:
            y_next = y_next + const
        means.append(y_next)
        path.append(y_next)

    psis = [np.eye(N)]
    for j in range(1, h_max):
        psis.append(sum(lags[h - 1] @ psis[j - h] for h in range(1, min(j, p) + 1)))
    covs = []
    total = np.zeros((N, N))
    for h in range(h_max):
        total = total + psis[h] @ sigma @ psis[h].T
        covs.append(total.copy())
    return np.array(means), np.array(covs)


class VarOlsRunner(ModelRunner):
    """VAR(p) estimé par OLS, prévisions itérées"""

    def __init__(self, p: int = 1, tag: str = None, intercept: bool = False):
        self.p = p
        self.intercept = intercept
        self.tag = tag or f"VAR{p}"

    def forecast(self, train, h_max, state=None):
        lags, const, sigma = fit_var_ols(train.values, self.p, self.intercept)
        means, covs = var_forecast(train.values, lags, const, sigma, h_max)
        return [gaussian_forecast(means[h], covs[h]) for h in range(h_max)], None


class MaiRunner(ModelRunner):
    """Un seul modèle TVP-MAI-SV (ω estimé par switching, ou fixé)"""

    def __init__(self, spec: ModelSpec, tag: str = "MAI", tol: float = 1e-6, max_iter: int = 100,
                 fixed_omega: Optional[np.ndarray] = None):
        self.spec = spec
        self.tag = tag
        self.tol = tol
        self.max_iter = max_iter
        self.fixed_omega = fixed_omega

    def forecast(self, train, h_max, state=None):
        if self.fixed_omega is not None:
            fit = fit_fixed_omega(train, self.spec, self.fixed_omega)
        else:
            fit = switching_estimate(train, self.spec, tol=self.tol, max_iter=self.max_iter, init=state)
        means, covs = forecast_from_fit(fit, train.values, h_max)
        return [gaussian_forecast(means[h], covs[h]) for h in range(h_max)], fit.omega


class PoolRunner(ModelRunner):
    """Pool DMA/DMS de modèles TVP-MAI-SV"""

    def __init__(self, specs: List[ModelSpec], tag: str = "M1", alpha: float = 0.99, mode: str = "DMA",
                 tol: float = 1e-6, max_iter: int = 100, workers: int = 1):
        if not specs:
            raise SpecValidationError("a pool needs at least one model")
        self.specs = specs
        self.tag = tag
        self.alpha = alpha
        self.mode = mode
        self.tol = tol
        self.max_iter = max_iter
        self.workers = workers

    def forecast(self, train, h_max, state=None):
        N = train.N
        specs = [spec for spec in self.specs if spec.q <= N]
        fits = estimate_specs(train.values, specs, self.tol, self.max_iter, inits=state, workers=self.workers)
        run = run_pool(train, specs, alpha=self.alpha, mode=self.mode, fits=fits)
        pi_next = pool_predict_weights(run.pi_post[-1], self.alpha)

        means = np.full((len(specs), h_max, N), np.nan)
        covs = np.full((len(specs), h_max, N, N), np.nan)
        for k, fit in enumerate(fits):
            if fit is None:
                continue
            try:
                means[k], covs[k] = forecast_from_fit(fit, train.values, h_max)
            except MaiError as e:
                logger.warning(f"[{self.tag}] model {specs[k].fingerprint} cannot forecast: {e}")

        if self.mode == "DMS":
            chosen = dms_select(np.where(np.all(np.isfinite(means[:, 0]), axis=1), pi_next, -1.0))
            forecasts = [gaussian_forecast(means[chosen, h], covs[chosen, h]) for h in range(h_max)]
        else:
            forecasts = [dma_forecast(pi_next, means[:, h], covs[:, h]) for h in range(h_max)]

        next_state = [fit.omega if fit is not None else None for fit in fits]
        return forecasts, next_state


class ExternalForecastRunner(ModelRunner):
    """
    Prévisions calculées ailleurs (DFM, TVP-VAR...)

    CSV attendu: origin, variable, h, point[, pred_var] dans les unités du panel transformé.
    """

    external = True

    def __init__(self, tag: str, path):
        self.tag = tag
        frame = pd.read_csv(path, dtype={'origin': str, 'variable': str})
        missing = {'origin', 'variable', 'h', 'point'} - set(frame.columns)
        if missing:
            raise SpecValidationError(f"External forecasts {path} lack columns {sorted(missing)}")
        self.has_density = 'pred_var' in frame.columns
        self.table = {
            (row.origin, row.variable, int(row.h)): (float(row.point),
                                                     float(row.pred_var) if self.has_density else math.nan)
            for row in frame.itertuples(index=False)
        }

    def forecast(self, train, h_max, state=None):
        raise NotImplementedError("external forecasts are looked up, not estimated")

    def lookup(self, origin: str, variable: str, h: int):
        return self.table.get((origin, variable, h))


VARIANT_TAGS = ("M1", "M2", "M3", "M4", "M5", "M6", "M7", "M8", "M9", "M10", "M11")


def variant_runner(
    tag: str,
    q_values: Sequence[int],
    lambdas: Sequence[float],
    kappas: Sequence[float],
    p: int = 1,
    alpha: float = 0.99,
    tol: float = 1e-6,
    max_iter: int = 100,
    workers: int = 1,
    rw_density: bool = False,
    restriction: Optional[GroupTemplate] = None
) -> ModelRunner:
    """Construit le runner d'une variante M1..M11

    restriction s'applique aux spécifications de la grille dont q vaut
    restriction.q; les autres restent non restreintes.
    """
    if tag == "M9":
        return RandomWalkRunner(tag, density=rw_density)
    if tag == "M10":
        return VarOlsRunner(1, tag)
    if tag == "M11":
        return VarOlsRunner(4, tag)
    if tag not in VARIANT_TAGS:
        raise SpecValidationError(f"Unknown model variant {tag!r}, expected one of {VARIANT_TAGS}")

    number = int(tag[1:])
    mode = "DMA" if number % 2 == 1 else "DMS"
    if number in (1, 2):
        grid = build_grid(q_values, lambdas, kappas, p, restriction=restriction)
    elif number in (3, 4):
        grid = build_grid(q_values, [1.0], kappas, p, restriction=restriction)
    elif number in (5, 6):
        grid = build_grid(q_values, lambdas, [1.0], p, h0_mode="ols", restriction=restriction)
    else:
        grid = build_grid(q_values, [1.0], [1.0], p, h0_mode="ols", restriction=restriction)
    return PoolRunner(grid, tag=tag, alpha=alpha, mode=mode, tol=tol, max_iter=max_iter, workers=workers)


# ============================================================================
# Fenêtre croissante
# ============================================================================

def _origin_forecasts(base: TimeSeriesPanel, runner: ModelRunner, origin: int, h_max: int, state):
    train = standardize(window(base, origin + 1))
    try:
        forecasts, new_state = runner.forecast(train, h_max, state)
        return train, forecasts, new_state, None
    except (MaiError, np.linalg.LinAlgError) as e:
        return train, None, state, str(e)


def _records_for_origin(base, runner, origin, h_max, targets, train, forecasts, error):
    records = []
    T = base.T
    for h in range(1, h_max + 1):
        if origin + h > T - 1:
            break
        for i in targets:
            actual = float(base.values[origin + h, i])
            common = dict(origin=base.dates[origin], horizon=h, variable=base.series_ids[i],
                          model=runner.tag, actual=actual, has_density=runner.has_density)
            if forecasts is None:
                records.append(ForecastRecord(point=math.nan, pred_var=math.nan, log_score=math.nan,
                                              diverged=True, **common))
                continue
            mean, std = train.means[i], train.stds[i]
            mixture = forecasts[h - 1]
            point = float(mixture.mean[i] * std + mean)
            pred_var = float(mixture.marginal_variance(i) * std ** 2)
            log_score = math.nan
            if runner.has_density:
                log_score = mixture.marginal_logpdf((actual - mean) / std, i) - math.log(std)
            diverged = not (math.isfinite(point) and pred_var > 0
                            and (not runner.has_density or math.isfinite(log_score)))
            if diverged:
                logger.warning(f"[{runner.tag}] forecast diverged at origin {base.dates[origin]} h={h}")
            records.append(ForecastRecord(point=point, pred_var=pred_var, log_score=log_score,
                                          diverged=diverged, **common))
    if error is not None:
        logger.warning(f"[{runner.tag}] model failure at origin {base.dates[origin]}: {error}")
    return records


def _external_records(base, runner, origins, h_max, targets):
    records = []
    for origin in origins:
        for h in range(1, h_max + 1):
            if origin + h > base.T - 1:
                break
            for i in targets:
                found = runner.lookup(base.dates[origin], base.series_ids[i], h)
                common = dict(origin=base.dates[origin], horizon=h, variable=base.series_ids[i],
                              model=runner.tag, actual=float(base.values[origin + h, i]),
                              has_density=runner.has_density)
                if found is None or not math.isfinite(found[0]):
                    records.append(ForecastRecord(point=math.nan, pred_var=math.nan, log_score=math.nan,
                                                  diverged=True, **common))
                    continue
                point, pred_var = found
                log_score = math.nan
                if runner.has_density:
                    log_score = -0.5 * (math.log(2 * math.pi * pred_var)
                                        + (common['actual'] - point) ** 2 / pred_var)
                records.append(ForecastRecord(point=point, pred_var=pred_var,
                                              log_score=log_score, **common))
    return records


def expanding_window_forecast(
    panel: TimeSeriesPanel,
    runner: ModelRunner,
    h_max: int,
    first_origin: int,
    targets: Optional[Sequence[str]] = None,
    warm_start: bool = True,
    workers: int = 1
) -> List[ForecastRecord]:
    """
    Prévisions en fenêtre croissante pour un modèle

    Args:
        panel: Panel transformé (standardisé ou non)
        runner: Modèle évalué
        h_max: Horizon maximal
        first_origin: Taille (1-based) de la première fenêtre d'estimation
        targets: Identifiants des variables évaluées (toutes par défaut)
        warm_start: Réutiliser le ω de l'origine précédente (origines alors séquentielles)
        workers: Origines en parallèle quand warm_start est désactivé

    Returns:
        Enregistrements triés par (origine, modèle, variable, horizon)
    """
    base = destandardize(panel)
    if not 2 <= first_origin <= base.T - 1:
        raise InsufficientSampleError(
            f"first origin {first_origin} leaves no estimation sample or no evaluation point (T={base.T})"
        )
    target_ids = list(targets) if targets else list(base.series_ids)
    unknown = [sid for sid in target_ids if sid not in base.series_ids]
    if unknown:
        raise SpecValidationError(f"Unknown target series {unknown}")
    target_index = [base.series_ids.index(sid) for sid in target_ids]
    origins = list(range(first_origin - 1, base.T - 1))

    if getattr(runner, 'external', False):
        records = _external_records(base, runner, origins, h_max, target_index)
        return sort_records(records)

    records = []
    if warm_start or workers <= 1:
        state = None
        for origin in origins:
            train, forecasts, new_state, error = _origin_forecasts(base, runner, origin, h_max,
                                                                  state if warm_start else None)
            state = new_state
            records.extend(_records_for_origin(base, runner, origin, h_max, target_index, train, forecasts, error))
            logger.info(f"[{runner.tag}] origin {base.dates[origin]} done")
    else:
        results = Parallel(n_jobs=workers)(
            delayed(_origin_forecasts)(base, runner, origin, h_max, None) for origin in origins
        )
        for origin, (train, forecasts, _, error) in zip(origins, results):
            records.extend(_records_for_origin(base, runner, origin, h_max, target_index, train, forecasts, error))

    return sort_records(records)


def sort_records(records: List[ForecastRecord]) -> List[ForecastRecord]:
    return sorted(records, key=lambda r: (r.origin, r.model, r.variable, r.horizon))


# ============================================================================
# Métriques
# ============================================================================

def _check(records: List[ForecastRecord]):
    if not records:
        raise EmptyRecordSetError("cannot compute a metric on an empty record set")


def rmsfe(records: List[ForecastRecord]) -> float:
    """Racine de l'erreur quadratique moyenne (nan si une prévision a divergé)"""
    _check(records)
    if any(r.diverged for r in records):
        return math.nan
    errors = np.array([r.actual - r.point for r in records])
    return float(np.sqrt(np.mean(errors ** 2)))


def mafe(records: List[ForecastRecord]) -> float:
    """Erreur absolue moyenne (nan si une prévision a divergé)"""
    _check(records)
    if any(r.diverged for r in records):
        return math.nan
    return float(np.mean(np.abs([r.actual - r.point for r in records])))


def alpl(records: List[ForecastRecord]) -> float:
    """Moyenne des log densités prédictives (nan si divergence ou densité absente)"""
    _check(records)
    if any(r.diverged or not r.has_density for r in records):
        return math.nan
    return float(np.mean([r.log_score for r in records]))


def _finite_or_none(value: float) -> Optional[float]:
    return value if math.isfinite(value) else None


def compute_metrics(records: List[ForecastRecord]) -> List[MetricRow]:
    """Une ligne par (modèle, variable, horizon)"""
    groups: Dict[tuple, List[ForecastRecord]] = defaultdict(list)
    for record in records:
        groups[(record.model, record.variable, record.horizon)].append(record)

    rows = []
    for (model, variable, horizon), group in sorted(groups.items()):
        diverged = any(r.diverged for r in group)
        density = all(r.has_density for r in group)
        rows.append(MetricRow(
            model=model,
            variable=variable,
            horizon=horizon,
            count=len(group),
            rmsfe=_finite_or_none(rmsfe(group)),
            mafe=_finite_or_none(mafe(group)),
            alpl=_finite_or_none(alpl(group)),
            diverged=diverged,
            density_available=density
        ))
    return rows


def relative_table(rows: List[MetricRow], benchmark: Optional[str] = None) -> MetricTable:
    """
    Ratios au benchmark (RMSFE, MAFE, ALPL); les cellules du benchmark valent exactement 1

    Une cellule dont le benchmark a divergé (ou n'a pas de densité pour l'ALPL) reste indéfinie.
    """
    if benchmark is None:
        return MetricTable(benchmark=None, rows=rows)
    reference = {(r.variable, r.horizon): r for r in rows if r.model == benchmark}
    if not reference:
        raise SpecValidationError(f"Benchmark model {benchmark!r} has no forecasts")

    def ratio(value, base):
        if value is None or base is None or base == 0:
            return None
        return value / base

    updated = []
    for row in rows:
        base = reference.get((row.variable, row.horizon))
        if base is None:
            updated.append(row)
            continue
        if row.model == benchmark:
            ratios = {
                'rmsfe_ratio': 1.0 if row.rmsfe is not None else None,
                'mafe_ratio': 1.0 if row.mafe is not None else None,
                'alpl_ratio': 1.0 if row.alpl is not None else None
            }
        else:
            ratios = {
                'rmsfe_ratio': ratio(row.rmsfe, base.rmsfe),
                'mafe_ratio': ratio(row.mafe, base.mafe),
                'alpl_ratio': ratio(row.alpl, base.alpl)
            }
        updated.append(row.model_copy(update=ratios))
    return MetricTable(benchmark=benchmark, rows=updated)


def format_cell(row: MetricRow, metric: str, relative: bool) -> str:
    """Cellule formatée à 6 chiffres significatifs, '---' si divergence, 'n/a' sans densité"""
    if metric == 'alpl' and not row.density_available:
        return NO_DENSITY_MARK
    value = getattr(row, f"{metric}_ratio" if relative else metric)
    if value is None:
        return DIVERGED_MARK
    return f"{value:.6g}"


def render_table(table: MetricTable) -> str:
    """
    Tableaux texte: pour chaque variable, trois panneaux RMSFE / MAFE / ALPL
    (lignes = modèles, colonnes = horizons)
    """
    relative = table.benchmark is not None
    blocks = []
    variables = sorted({row.variable for row in table.rows})
    for variable in variables:
        rows = [row for row in table.rows if row.variable == variable]
        models = list(dict.fromkeys(row.model for row in rows))
        horizons = sorted({row.horizon for row in rows})
        header = f"Variable: {variable}"
        if relative:
            header += f" (relative to {table.benchmark})"
        blocks.append(header)
        for metric in ('rmsfe', 'mafe', 'alpl'):
            cells = {(row.model, row.horizon): format_cell(row, metric, relative) for row in rows}
            frame = pd.DataFrame(
                [[cells.get((model, h), "") for h in horizons] for model in models],
                index=models,
                columns=[f"h={h}" for h in horizons]
            )
            blocks.append(metric.upper())
            blocks.append(frame.to_string())
        blocks.append("")
    return "\n".join(blocks)
