"""
Modèles de données du projet (pydantic)
Utilisés pour valider les entrées, transporter les résultats et sérialiser les sorties

Les matrices sont des np.ndarray, d'où arbitrary_types_allowed.
"""

import math
from pathlib import Path
from typing import List, Literal, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


GROUP_TAGS = ("RI", "NI", "LMI", "PI", "FI")
H0_MODES = ("identity", "sample", "ols")


class ArrayModel(BaseModel):
    """Base commune: tableaux numpy autorisés, objets immuables"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)


def _check_factor(value: float, name: str) -> float:
    if not (0.0 < value <= 1.0):
        raise ValueError(f"{name} must be in (0, 1], got {value}")
    return value


# ============================================================================
# Panel (data-ingest)
# ============================================================================

class TimeSeriesPanel(ArrayModel):
    """Panel T×N de séries trimestrielles"""
    dates: List[str] = Field(description="Trimestres au format 1960Q1, strictement croissants")
    series_ids: List[str]
    values: np.ndarray = Field(description="Matrice T×N")
    tcodes: List[int]
    means: Optional[np.ndarray] = Field(None, description="Moyennes avant standardisation")
    stds: Optional[np.ndarray] = Field(None, description="Écarts-types (T-1) avant standardisation")
    group_labels: Optional[List[str]] = None

    @model_validator(mode='after')
    def check_shapes(self):
        values = self.values
        if values.ndim != 2:
            raise ValueError("values must be a T×N matrix")
        T, N = values.shape
        if len(self.dates) != T:
            raise ValueError(f"{len(self.dates)} dates for {T} rows")
        if len(self.series_ids) != N or len(self.tcodes) != N:
            raise ValueError("series_ids and tcodes must have one entry per column")
        if len(set(self.series_ids)) != N:
            raise ValueError("series_ids must be unique")
        if not np.all(np.isfinite(values)):
            raise ValueError("panel contains missing or non-finite values")
        for stats in (self.means, self.stds):
            if stats is not None and stats.shape != (N,):
                raise ValueError("means/stds must have one entry per column")
        if self.stds is not None and np.any(self.stds <= 0):
            raise ValueError("stds must be strictly positive")
        if self.group_labels is not None:
            if len(self.group_labels) != N:
                raise ValueError("group_labels must have one entry per column")
            unknown = sorted(set(self.group_labels) - set(GROUP_TAGS))
            if unknown:
                raise ValueError(f"unknown group labels {unknown}, expected {GROUP_TAGS}")
        if T > 1:
            periods = pd.PeriodIndex(self.dates, freq='Q')
            steps = np.diff(np.asarray([p.ordinal for p in periods]))
            if np.any(steps != 1):
                raise ValueError("dates must be consecutive quarters")
        return self

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def N(self) -> int:
        return self.values.shape[1]

    @property
    def is_standardized(self) -> bool:
        return self.means is not None and self.stds is not None


# ============================================================================
# Filtre de Kalman (statespace-filter)
# ============================================================================

class FilterConfig(ArrayModel):
    """Hyperparamètres d'une passe de filtre"""
    lam: float = Field(1.0, description="Facteur d'oubli lambda")
    kappa: float = Field(1.0, description="Facteur de décroissance EWMA")
    beta0_mean: Optional[np.ndarray] = None
    beta0_var_scale: float = 4.0
    H0: Optional[np.ndarray] = None
    h0_mode: Literal["identity", "sample", "ols"] = "identity"
    jitter: float = 1e-8

    @field_validator('lam')
    @classmethod
    def check_lam(cls, value):
        return _check_factor(value, "lambda")

    @field_validator('kappa')
    @classmethod
    def check_kappa(cls, value):
        return _check_factor(value, "kappa")

    @field_validator('beta0_var_scale', 'jitter')
    @classmethod
    def check_positive(cls, value):
        if value <= 0:
            raise ValueError("must be strictly positive")
        return value


class KalmanBelief(ArrayModel):
    """État filtré à l'instant t"""
    t: int
    beta_mean: np.ndarray = Field(description="beta_{t|t}")
    beta_cov: Optional[np.ndarray] = Field(None, description="Sigma_{t|t} (None si non conservée)")
    H: np.ndarray = Field(description="H_t après mise à jour EWMA")
    resid: np.ndarray = Field(description="y_t - Z_t beta_{t|t-1}")
    log_pred_density: float
    pred_mean: np.ndarray = Field(description="Z_t beta_{t|t-1}")
    pred_cov: np.ndarray = Field(description="H_{t-1} + Z_t Sigma_{t|t-1} Z_t'")


# ============================================================================
# Estimateur MAI
# ============================================================================

class GroupTemplate(ArrayModel):
    """Structure en blocs des poids (une colonne par groupe, leader = 1)"""
    group_sizes: List[int]
    group_names: Optional[List[str]] = None

    @field_validator('group_sizes')
    @classmethod
    def check_sizes(cls, value):
        if not value:
            raise ValueError("at least one group is required")
        for size in value:
            if size < 1:
                raise ValueError(f"group size {size} is invalid: every group must be nonempty")
        return value

    @model_validator(mode='after')
    def check_names(self):
        if self.group_names is not None and len(self.group_names) != len(self.group_sizes):
            raise ValueError("group_names must match group_sizes")
        return self

    @property
    def N(self) -> int:
        return sum(self.group_sizes)

    @property
    def q(self) -> int:
        return len(self.group_sizes)


class ModelSpec(ArrayModel):
    """Un membre du pool: (q, p, lambda, kappa, restriction)"""
    q: int
    p: int = 1
    lam: float = 1.0
    kappa: float = 1.0
    restriction: Optional[GroupTemplate] = None
    h0_mode: Literal["identity", "sample", "ols"] = "identity"
    beta0_var_scale: float = 4.0

    @field_validator('q')
    @classmethod
    def check_q(cls, value):
        if value < 1:
            raise ValueError("q must be ≥ 1")
        return value

    @field_validator('p')
    @classmethod
    def check_p(cls, value):
        if value < 1:
            raise ValueError("p must be ≥ 1")
        return value

    @field_validator('lam')
    @classmethod
    def check_lam(cls, value):
        return _check_factor(value, "lambda")

    @field_validator('kappa')
    @classmethod
    def check_kappa(cls, value):
        return _check_factor(value, "kappa")

    @model_validator(mode='after')
    def check_restriction(self):
        if self.restriction is not None and self.restriction.q != self.q:
            raise ValueError("restriction must define exactly q groups")
        return self

    @property
    def fingerprint(self) -> str:
        text = f"q={self.q};p={self.p};lambda={self.lam:g};kappa={self.kappa:g};h0={self.h0_mode}"
        if self.restriction is not None:
            text += ";groups=" + "-".join(str(s) for s in self.restriction.group_sizes)
        return text

    def filter_config(self, H0: np.ndarray = None) -> FilterConfig:
        return FilterConfig(
            lam=self.lam,
            kappa=self.kappa,
            beta0_var_scale=self.beta0_var_scale,
            H0=H0,
            h0_mode=self.h0_mode
        )


class IndexWeights(ArrayModel):
    """Matrice omega N×q (éventuellement restreinte en blocs)"""
    omega: np.ndarray
    template: Optional[GroupTemplate] = None
    normalized: bool = False

    @field_validator('omega')
    @classmethod
    def check_omega(cls, value):
        if value.ndim != 2:
            raise ValueError("omega must be an N×q matrix")
        return value

    @property
    def N(self) -> int:
        return self.omega.shape[0]

    @property
    def q(self) -> int:
        return self.omega.shape[1]


class MaiFit(ArrayModel):
    """Résultat de l'algorithme de switching"""
    spec: ModelSpec
    omega: IndexWeights
    beliefs: List[KalmanBelief]
    indexes: np.ndarray = Field(description="f_t = omega' y_t, T×q")
    iterations: int
    converged: bool
    log_pl: float
    log_pl_trace: List[float]
    start: int = Field(description="Premier instant filtré (= p)")

    @property
    def H_path(self) -> np.ndarray:
        return np.stack([belief.H for belief in self.beliefs])


# ============================================================================
# Pool de modèles (DMA / DMS)
# ============================================================================

class PoolState(ArrayModel):
    """Probabilités des modèles à l'instant courant"""
    specs: List[ModelSpec]
    pi_pred: np.ndarray
    pi_post: np.ndarray
    alpha: float
    per_model: List[Optional[MaiFit]] = Field(default_factory=list)

    @field_validator('alpha')
    @classmethod
    def check_alpha(cls, value):
        return _check_factor(value, "alpha")

    @model_validator(mode='after')
    def check_simplex(self):
        K = len(self.specs)
        if K < 1:
            raise ValueError("a pool needs at least one model")
        for weights in (self.pi_pred, self.pi_post):
            if weights.shape != (K,):
                raise ValueError("weights must have one entry per model")
            if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
                raise ValueError("weights must lie on the simplex")
        return self


class PoolRun(ArrayModel):
    """Trajectoire complète d'un pool (poids, densités, prévisions)"""
    specs: List[ModelSpec]
    fits: List[Optional[MaiFit]]
    alpha: float
    mode: Literal["DMA", "DMS"] = "DMA"
    start: int = Field(description="Premier instant commun (max des p)")
    dates: List[str] = Field(default_factory=list)
    horizons: List[int] = Field(default_factory=lambda: [1])
    log_densities: np.ndarray = Field(description="T_c × K, -inf pour un modèle en échec")
    pi_pred: np.ndarray = Field(description="T_c × K, π_{t|t-1}")
    pi_post: np.ndarray = Field(description="T_c × K, π_{t|t}")
    selected: np.ndarray = Field(description="Modèle DMS (0-based) à chaque instant")
    point_forecasts: np.ndarray = Field(description="T_c × H × N, prévisions faites en t-1")
    combined_log_density: np.ndarray = Field(description="Log densité prédictive du pool à chaque instant")

    @property
    def total_log_pl(self) -> np.ndarray:
        return self.log_densities.sum(axis=0)

    @property
    def state(self) -> PoolState:
        return PoolState(
            specs=self.specs,
            pi_pred=self.pi_pred[-1],
            pi_post=self.pi_post[-1],
            alpha=self.alpha,
            per_model=self.fits
        )


class SpecRanking(BaseModel):
    """Une ligne du classement des spécifications"""
    rank: int
    fingerprint: str
    q: int
    p: int
    lam: float
    kappa: float
    log_pl: float
    terminal_weight: float

# ============================================================================
# Décomposition de la volatilité
# ============================================================================

class VolShares(ArrayModel):
    """Décomposition H_t = H_com + H_idio"""
    t: int
    H_com: np.ndarray
    H_idio: np.ndarray
    share_common: np.ndarray


# ============================================================================
# Simulation
# ============================================================================

class DgpSpec(ArrayModel):
    """Processus générateur d'un MAI simulé"""
    N: int
    q: int
    p: int = 1
    T: int
    burn_in: int = 100
    seed: int = 0
    omega_true: Optional[np.ndarray] = None
    beta: Optional[np.ndarray] = Field(None, description="Coefficients initiaux p×N×q")
    sigma_beta: float = Field(0.0, description="Écart-type du pas de marche aléatoire de beta")
    h_mode: Literal["constant", "ewma", "break"] = "constant"
    h_matrix: Optional[np.ndarray] = None
    h_kappa: float = 0.97
    break_fraction: float = 0.5
    break_factor: float = 2.0
    radius_limit: float = 0.98
    target_radius: float = 0.6

    @model_validator(mode='after')
    def check_dimensions(self):
        if self.N < 1 or self.q < 1 or self.p < 1 or self.T < 1 or self.burn_in < 0:
            raise ValueError("N, q, p, T must be ≥ 1 and burn_in ≥ 0")
        if self.q > self.N:
            raise ValueError("q must not exceed N")
        if self.omega_true is not None and self.omega_true.shape != (self.N, self.q):
            raise ValueError("omega_true must be N×q")
        if self.beta is not None and self.beta.shape != (self.p, self.N, self.q):
            raise ValueError("beta must be p×N×q")
        if self.h_matrix is not None and self.h_matrix.shape != (self.N, self.N):
            raise ValueError("h_matrix must be N×N")
        if self.sigma_beta < 0:
            raise ValueError("sigma_beta must be ≥ 0")
        _check_factor(self.h_kappa, "h_kappa")
        return self


class GroundTruth(ArrayModel):
    """Vrais paramètres d'une simulation"""
    omega: np.ndarray
    beta_path: np.ndarray = Field(description="T×p×N×q")
    H_path: np.ndarray = Field(description="T×N×N")
    seed: int


# ============================================================================
# Évaluation
# ============================================================================

class ForecastRecord(BaseModel):
    """Une prévision (origine, horizon, variable, modèle)"""
    origin: str
    horizon: int
    variable: str
    model: str
    point: float
    pred_var: float
    log_score: float
    actual: float
    diverged: bool = False
    has_density: bool = True

    @model_validator(mode='after')
    def check_record(self):
        if self.horizon < 1:
            raise ValueError("horizon must be ≥ 1")
        if not self.diverged:
            # Sans densité (prévision externe ponctuelle), la variance peut manquer
            if not self.pred_var > 0 and (self.has_density or not math.isnan(self.pred_var)):
                raise ValueError("pred_var must be > 0 unless diverged")
            if self.has_density and not math.isfinite(self.log_score):
                raise ValueError("log_score must be finite unless diverged")
        return self

    @property
    def error(self) -> float:
        return self.actual - self.point


class MetricRow(BaseModel):
    """Une cellule (modèle, variable, horizon) des tables de résultats"""
    model: str
    variable: str
    horizon: int
    count: int
    rmsfe: Optional[float] = None
    mafe: Optional[float] = None
    alpl: Optional[float] = None
    rmsfe_ratio: Optional[float] = None
    mafe_ratio: Optional[float] = None
    alpl_ratio: Optional[float] = None
    diverged: bool = False
    density_available: bool = True


class MetricTable(BaseModel):
    """Tables RMSFE / MAFE / ALPL relatives au benchmark"""
    benchmark: Optional[str] = None
    rows: List[MetricRow]


# ============================================================================
# Configuration de la CLI
# ============================================================================

class RunConfig(BaseModel):
    """Configuration d'une commande (flags > fichier > défauts)"""
    command: str
    input: Optional[Path] = None
    out: Path = Path("out")
    date_column: str = "date"
    standardize: bool = True
    dry_run: bool = False
    seed: int = 0
    workers: int = 1
    warm_start: bool = True

    # Grilles et hyperparamètres
    p: int = 1
    q_values: List[int] = Field(default_factory=lambda: [1])
    lambdas: List[float] = Field(default_factory=lambda: [1.0])
    kappas: List[float] = Field(default_factory=lambda: [1.0])
    alpha: float = 0.99
    h0_mode: Literal["identity", "sample", "ols"] = "identity"
    mode: Literal["DMA", "DMS"] = "DMA"
    tol: float = 1e-6
    max_iter: int = 100
    group_sizes: List[int] = Field(default_factory=list)

    # Prévision
    h_max: int = 1
    first_origin: Optional[int] = None
    targets: List[str] = Field(default_factory=list)
    models: List[str] = Field(default_factory=lambda: ["M1", "M9"])
    benchmark: Optional[str] = None
    external: List[str] = Field(default_factory=list)
    rw_density: bool = False

    # Simulation
    sim_N: int = 6
    sim_q: int = 2
    sim_T: int = 200
    sim_burn_in: int = 100
    sigma_beta: float = 0.0
    sim_h_mode: Literal["constant", "ewma", "break"] = "constant"

    @field_validator('q_values', 'lambdas', 'kappas')
    @classmethod
    def check_grid(cls, value):
        if not value:
            raise ValueError("grids must be non-empty")
        return value

    @field_validator('lambdas', 'kappas')
    @classmethod
    def check_factors(cls, value):
        for item in value:
            _check_factor(item, "forgetting/decay factor")
        return value

    @field_validator('alpha')
    @classmethod
    def check_alpha(cls, value):
        return _check_factor(value, "alpha")

    @field_validator('workers', 'p', 'h_max', 'max_iter')
    @classmethod
    def check_positive_int(cls, value):
        if value < 1:
            raise ValueError("must be ≥ 1")
        return value

    @field_validator('input')
    @classmethod
    def check_input(cls, value):
        if value is not None and not Path(value).exists():
            raise ValueError(f"input path {value} does not exist")
        return value


# ============================================================================
# Modèles d'erreur
# ============================================================================

class ErrorDetail(BaseModel):
    """Détail d'une erreur"""
    field: str
    error: str


class ErrorInfo(BaseModel):
    """Information d'erreur"""
    code: int
    message: str
    details: List[ErrorDetail]


class ErrorModel(BaseModel):
    """Modèle d'erreur standard (écrit en JSON sur stderr)"""
    error: ErrorInfo
