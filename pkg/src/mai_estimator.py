"""
Estimateur MAI à paramètres variables (algorithme de switching)

Conventions:
- f_t = ω' y_t (indexes, T×q)
- x_t = (f'_{t-1}, ..., f'_{t-p})' empilé retard par retard
- Z_t = I_N ⊗ x_t'
- β_t empilé équation par équation: β[i·pq + h·q + j] est le coefficient de
  l'équation i sur l'index j au retard h+1, donc B = β.reshape(N, p, q)
  et β_h = B[:, h, :] (N×q)
- vec(ω) colonne par colonne: ω[i, j] est à l'indice j·N + i
"""

import logging
from typing import Optional, Tuple

import numpy as np
from numpy.linalg import LinAlgError
from scipy.linalg import cholesky, eigh, solve_triangular

from .decomposition import build_restriction
from .errors import InsufficientSampleError, RankDeficiencyError, SpecValidationError
from .kalman_filter import filter_pass
from .models import GroupTemplate, IndexWeights, MaiFit, ModelSpec, TimeSeriesPanel

logger = logging.getLogger(__name__)

EIGEN_FLOOR = 1e-10
RANK_TOL = 1e-10


def _values(data) -> np.ndarray:
    if isinstance(data, TimeSeriesPanel):
        return data.values
    return np.asarray(data, dtype=float)


def _omega(omega) -> np.ndarray:
    if isinstance(omega, IndexWeights):
        return omega.omega
    return np.asarray(omega, dtype=float)


def fix_signs(omega: np.ndarray) -> np.ndarray:
    """Chaque colonne a son plus grand coefficient (en valeur absolue) positif"""
    omega = omega.copy()
    for j in range(omega.shape[1]):
        if omega[np.argmax(np.abs(omega[:, j])), j] < 0:
            omega[:, j] = -omega[:, j]
    return omega


def canonical_basis(omega: np.ndarray, data) -> np.ndarray:
    """
    Représentant canonique de l'espace engendré par ω

    ω n'est identifié qu'à une matrice q×q inversible près. On orthonormalise
    par Cholesky (ω = Q R), on tourne Q vers les axes propres du second moment
    des indexes (valeurs propres décroissantes), puis on fixe les signes.
    Deux ω de même espace donnent le même résultat.

    Raises:
        RankDeficiencyError: colonnes de ω liées
    """
    values = _values(data)
    try:
        R = cholesky(omega.T @ omega, lower=False)
    except LinAlgError:
        raise RankDeficiencyError("index weights lost full column rank: use fewer indexes or more data")
    if np.min(np.abs(np.diag(R))) <= RANK_TOL:
        raise RankDeficiencyError("index weights lost full column rank: use fewer indexes or more data")

    basis = solve_triangular(R, omega.T, trans='T', lower=False).T
    indexes = values @ basis
    _, rotation = eigh(indexes.T @ indexes / values.shape[0])
    return fix_signs(basis @ rotation[:, ::-1])


def orthonormal_omega(omega) -> np.ndarray:
    """Base orthonormée de l'espace engendré par ω (pour le reporting)"""
    q_factor, _ = np.linalg.qr(_omega(omega))
    return fix_signs(q_factor)


# ============================================================================
# Indexes et régresseurs
# ============================================================================

def build_indexes(data, omega) -> np.ndarray:
    """f_t = ω' y_t pour chaque ligne"""
    values = _values(data)
    weights = _omega(omega)
    if values.shape[1] != weights.shape[0]:
        raise SpecValidationError(
            f"omega has {weights.shape[0]} rows but the panel has {values.shape[1]} series"
        )
    return values @ weights


def lag_matrix(indexes: np.ndarray, p: int) -> np.ndarray:
    """Lignes x_t = (f_{t-1}, ..., f_{t-p}) pour t = p..T-1"""
    T = indexes.shape[0]
    return np.hstack([indexes[p - 1 - h:T - 1 - h] for h in range(p)])


def build_regressors(indexes: np.ndarray, p: int, N: int) -> np.ndarray:
    """
    Matrices de mesure Z_t = I_N ⊗ x_t' pour t = p..T-1

    Returns:
        Tableau (T-p) × N × (N·p·q)
    """
    X = lag_matrix(np.atleast_2d(indexes), p)
    Z = np.einsum('ij,tk->tijk', np.eye(N), X)
    return Z.reshape(X.shape[0], N, N * X.shape[1])


def iterate_mean(beta: np.ndarray, omega, history: np.ndarray, h_max: int) -> np.ndarray:
    """
    Prévisions ponctuelles itérées à β figé

    Args:
        beta: Vecteur d'état β̂ (N·p·q)
        omega: Poids N×q
        history: Les p dernières observations, dans l'ordre chronologique (p×N)
        h_max: Horizon maximal

    Returns:
        Matrice h_max × N
    """
    weights = _omega(omega)
    N, q = weights.shape
    p = history.shape[0]
    B = beta.reshape(N, p, q)
    phis = [B[:, h, :] @ weights.T for h in range(p)]

    path = list(np.asarray(history, dtype=float))
    forecasts = []
    for _ in range(h_max):
        y_next = sum(phis[h] @ path[-1 - h] for h in range(p))
        forecasts.append(y_next)
        path.append(y_next)
    return np.array(forecasts)


# ============================================================================
# Initialisation de ω
# ============================================================================

def init_omega_pca(data, q: int) -> IndexWeights:
    """Vecteurs propres de la covariance empirique pour les q plus grandes valeurs propres"""
    values = _values(data)
    cov = np.atleast_2d(np.cov(values, rowvar=False))
    eigenvalues, eigenvectors = eigh(cov)
    order = np.argsort(eigenvalues)[::-1][:q]
    return IndexWeights(omega=fix_signs(eigenvectors[:, order]))


def init_omega_restricted(data, template: GroupTemplate) -> IndexWeights:
    """
    Initialisation par blocs: vecteur propre principal de chaque sous-covariance,
    mis à l'échelle pour que la série de tête vaille 1
    """
    values = _values(data)
    omega = np.zeros((template.N, template.q))
    row = 0
    for j, size in enumerate(template.group_sizes):
        block = values[:, row:row + size]
        if size == 1:
            omega[row, j] = 1.0
        else:
            _, vectors = eigh(np.cov(block, rowvar=False))
            leading = vectors[:, -1]
            if abs(leading[0]) > 1e-8:
                omega[row:row + size, j] = leading / leading[0]
            else:
                omega[row:row + size, j] = 1.0
            omega[row, j] = 1.0
        row += size
    return IndexWeights(omega=omega, template=template, normalized=False)


# ============================================================================
# Étape OLS/GLS pour ω
# ============================================================================

def _inverse_sqrt(H: np.ndarray) -> np.ndarray:
    """H^{-1/2} pour une pile de matrices (n×N×N), valeurs propres planchers à EIGEN_FLOOR"""
    eigenvalues, eigenvectors = np.linalg.eigh(H)
    eigenvalues = np.maximum(eigenvalues, EIGEN_FLOOR)
    return (eigenvectors / np.sqrt(eigenvalues)[:, None, :]) @ np.swapaxes(eigenvectors, 1, 2)


def omega_ols_step(
    data,
    beta_path: np.ndarray,
    H_path: np.ndarray,
    p: int,
    q: int,
    template: GroupTemplate = None
) -> IndexWeights:
    """
    Régression GLS de vec(ω) sachant les chemins de β et H

    Pour chaque t filtré:
        X_t = H_t^{-1/2} Σ_h (β_{h,t} ⊗ y'_{t-h-1}),   Y*_t = H_t^{-1/2} y_t
    puis résolution des équations normales, restreintes par M si un gabarit est fourni
    (les 1 fixés passent à droite avant la résolution).

    Args:
        data: Panel ou matrice T×N
        beta_path: (T-p) × (N·p·q), β̂_{t|t} pour t = p..T-1
        H_path: (T-p) × N × N
        p, q: Retards et nombre d'indexes
        template: Gabarit de restriction (None = ω libre)

    Raises:
        RankDeficiencyError: matrice normale singulière
    """
    values = _values(data)
    T, N = values.shape
    n = T - p

    lagged = np.stack([values[p - 1 - h:T - 1 - h] for h in range(p)], axis=1)
    B = beta_path.reshape(n, N, p, q)
    # X_t[i, j·N + k] = Σ_h β_{h,t}[i, j] · y_{t-h-1}[k]
    X = np.einsum('tihj,thk->tijk', B, lagged).reshape(n, N, q * N)
    W = _inverse_sqrt(H_path)
    X_star = W @ X
    y_star = np.einsum('tij,tj->ti', W, values[p:])
    A = np.einsum('tia,tib->ab', X_star, X_star)
    b = np.einsum('tia,ti->a', X_star, y_star)

    if template is None:
        vec = _solve_normal(A, b)
        return IndexWeights(omega=vec.reshape(q, N).T)

    pattern, M = build_restriction(template)
    offset = pattern.reshape(-1, order='F')
    if M.shape[1] == 0:
        return IndexWeights(omega=pattern, template=template)
    free = _solve_normal(M.T @ A @ M, M.T @ (b - A @ offset))
    # Les lignes nulles de M laissent les 0 et les 1 du gabarit exacts
    vec = M @ free + offset
    return IndexWeights(omega=vec.reshape(q, N).T, template=template)


def _solve_normal(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    eigenvalues = np.linalg.eigvalsh(A)
    if eigenvalues.size and eigenvalues.min() <= RANK_TOL * max(1.0, eigenvalues.max()):
        raise RankDeficiencyError(
            "normal matrix for the index weights is rank deficient: use fewer indexes or more data"
        )
    return np.linalg.solve(A, b)


# ============================================================================
# Switching
# ============================================================================

def filter_with_omega(panel: TimeSeriesPanel, spec: ModelSpec, omega, keep_covariances: bool = False):
    """
    Passe de filtre à ω fixé

    Returns:
        (beliefs, log PL)
    """
    values = _values(panel)
    indexes = build_indexes(values, omega)
    Z = build_regressors(indexes, spec.p, values.shape[1])
    return filter_pass(values[spec.p:], Z, spec.filter_config(), t_offset=spec.p,
                       keep_covariances=keep_covariances)


def check_spec(values: np.ndarray, spec: ModelSpec):
    T, N = values.shape
    if spec.q > N:
        raise SpecValidationError(f"q={spec.q} exceeds the number of series N={N}")
    if spec.restriction is not None and spec.restriction.N != N:
        raise SpecValidationError(
            f"group sizes sum to {spec.restriction.N} but the panel has {N} series"
        )
    if T < spec.p + N * spec.q:
        raise InsufficientSampleError(
            f"T={T} is too short for p={spec.p}, N={N}, q={spec.q} (need T >= p + N·q)"
        )


def switching_estimate(
    panel,
    spec: ModelSpec,
    tol: float = 1e-6,
    max_iter: int = 100,
    init: Optional[IndexWeights] = None,
    keep_covariances: bool = False
) -> MaiFit:
    """
    Algorithme de switching

    Alterne filtre de Kalman (β_t, EWMA de H_t) et GLS pour ω jusqu'à ce que
    ‖ω_new - ω_old‖_F / ‖ω_old‖_F < tol ou max_iter mises à jour de ω.
    Sans restriction, ω est ramené à sa base canonique (canonical_basis) avant
    chaque mesure de l'écart, sinon ω tourne dans un espace déjà fixé.
    Une dernière passe de filtre est faite avec le ω final.

    Sans convergence, l'itéré de meilleure log PL est retourné avec converged=False.
    """
    values = _values(panel)
    check_spec(values, spec)
    template = spec.restriction

    if init is not None:
        omega = _omega(init).copy()
    elif template is not None:
        omega = init_omega_restricted(values, template).omega
    else:
        omega = init_omega_pca(values, spec.q).omega

    if template is None:
        omega = canonical_basis(omega, values)

    trace = []
    best = None
    converged = False
    iterations = 0

    for iteration in range(1, max_iter + 1):
        beliefs, log_pl = filter_with_omega(values, spec, omega)
        trace.append(log_pl)
        if best is None or log_pl > best[0]:
            best = (log_pl, omega, beliefs)

        beta_path = np.array([b.beta_mean for b in beliefs])
        H_path = np.array([b.H for b in beliefs])
        new_omega = omega_ols_step(values, beta_path, H_path, spec.p, spec.q, template).omega
        if template is None:
            new_omega = canonical_basis(new_omega, values)

        change = np.linalg.norm(new_omega - omega) / np.linalg.norm(omega)
        omega = new_omega
        iterations = iteration
        logger.debug(f"[{spec.fingerprint}] iteration {iteration}: log PL={log_pl:.6g} change={change:.3g}")

        if change < tol:
            converged = True
            break

    beliefs, log_pl = filter_with_omega(values, spec, omega, keep_covariances)
    trace.append(log_pl)

    if not converged:
        logger.warning(f"[{spec.fingerprint}] no convergence after {max_iter} iterations")
        if best[0] > log_pl:
            _, omega, _ = best
            beliefs, log_pl = filter_with_omega(values, spec, omega, keep_covariances)

    logger.info(
        f"[{spec.fingerprint}] switching done: iterations={iterations} "
        f"converged={converged} log PL={log_pl:.6g}"
    )

    return MaiFit(
        spec=spec,
        omega=IndexWeights(omega=omega, template=template, normalized=template is None),
        beliefs=beliefs,
        indexes=build_indexes(values, omega),
        iterations=iterations,
        converged=converged,
        log_pl=log_pl,
        log_pl_trace=trace,
        start=spec.p
    )


def fit_fixed_omega(panel, spec: ModelSpec, omega, keep_covariances: bool = False) -> MaiFit:
    """Ajustement sans switching (ω donné), utile pour les variantes à ω connu"""
    values = _values(panel)
    check_spec(values, spec)
    weights = _omega(omega)
    beliefs, log_pl = filter_with_omega(values, spec, weights, keep_covariances)
    return MaiFit(
        spec=spec,
        omega=IndexWeights(omega=weights, template=spec.restriction),
        beliefs=beliefs,
        indexes=build_indexes(values, weights),
        iterations=0,
        converged=True,
        log_pl=log_pl,
        log_pl_trace=[log_pl],
        start=spec.p
    )


# ============================================================================
# Prévision à partir d'un ajustement
# ============================================================================

def forecast_from_fit(fit: MaiFit, data, h_max: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Densités prédictives itérées à l'horizon 1..h_max

    β figé à β̂_{T|T}, H figé à Ĥ_T. La variance accumule les chocs via les
    coefficients MA Ψ_j du VAR implicite:
        cov_h = Σ_{j=1..h} Ψ_{h-j} V_j Ψ'_{h-j}
    avec V_1 = Ĥ_T + Z_{T+1} (Σ_{T|T}/λ) Z'_{T+1} et V_j = Ĥ_T pour j > 1.

    Args:
        fit: Ajustement (le dernier belief doit porter Σ_{T|T})
        data: Les observations sur lesquelles le modèle a été ajusté
        h_max: Horizon maximal

    Returns:
        (moyennes h_max×N, covariances h_max×N×N)
    """
    values = _values(data)
    last = fit.beliefs[-1]
    if last.beta_cov is None:
        raise ValueError("the last belief must keep its covariance")

    spec = fit.spec
    omega = fit.omega.omega
    N, q = omega.shape
    p = spec.p
    B = last.beta_mean.reshape(N, p, q)
    phis = [B[:, h, :] @ omega.T for h in range(p)]

    means = iterate_mean(last.beta_mean, omega, values[-p:], h_max)

    # Z_{T+1} à partir des indexes f_T, ..., f_{T-p+1}
    indexes = values[-p:] @ omega
    x_next = np.concatenate([indexes[-1 - h] for h in range(p)])
    Z_next = np.kron(np.eye(N), x_next[None, :])
    H = last.H
    V1 = H + Z_next @ (last.beta_cov / spec.lam) @ Z_next.T
    V1 = 0.5 * (V1 + V1.T)

    psis = [np.eye(N)]
    for j in range(1, h_max):
        psis.append(sum(phis[h - 1] @ psis[j - h] for h in range(1, min(j, p) + 1)))

    covs = np.empty((h_max, N, N))
    for h in range(1, h_max + 1):
        total = psis[h - 1] @ V1 @ psis[h - 1].T
        for j in range(2, h + 1):
            total += psis[h - j] @ H @ psis[h - j].T
        covs[h - 1] = 0.5 * (total + total.T)
    return means, covs
