"""
Restrictions d'identification et décomposition de la volatilité

Avec W = ω_*' (q×N):
    ξ_t     = W H_t W'
    H_com   = H_t W' ξ_t^{-1} W H_t
    H_idio  = W⊥' (W⊥ H_t^{-1} W⊥')^{-1} W⊥
et H_com + H_idio = H_t.
"""

import logging
from typing import List, Tuple

import numpy as np
from joblib import Parallel, delayed
from scipy.linalg import LinAlgError, null_space

from .errors import FilterFailureError, RankDeficiencyError, SpecValidationError
from .models import GroupTemplate, MaiFit, VolShares

logger = logging.getLogger(__name__)

RANK_TOL = 1e-10


# ============================================================================
# Restrictions sur ω
# ============================================================================

def build_restriction(template: GroupTemplate) -> Tuple[np.ndarray, np.ndarray]:
    """
    Construit le motif de ω_* et la matrice de restriction M

    Chaque groupe occupe un bloc diagonal; sa première série est fixée à 1.
    Les chargements libres w vérifient vec(ω) = M w + vec(motif)
    (vec colonne par colonne: ω[i, j] est à l'indice j·N + i).

    Returns:
        (motif N×q avec les 1 fixés et des 0 ailleurs, M de taille Nq × nombre de chargements libres)
    """
    N, q = template.N, template.q
    pattern = np.zeros((N, q))
    free_positions = []

    row = 0
    for j, size in enumerate(template.group_sizes):
        pattern[row, j] = 1.0
        free_positions.extend(j * N + i for i in range(row + 1, row + size))
        row += size

    M = np.zeros((N * q, len(free_positions)))
    for column, position in enumerate(free_positions):
        M[position, column] = 1.0
    return pattern, M


def template_from_labels(labels: List[str]) -> GroupTemplate:
    """
    Déduit le gabarit à partir des étiquettes de groupe d'un panel

    Les séries d'un même groupe doivent être contiguës.
    """
    sizes, names = [], []
    for label in labels:
        if names and names[-1] == label:
            sizes[-1] += 1
        elif label in names:
            raise SpecValidationError(f"Series of group {label!r} are not contiguous")
        else:
            names.append(label)
            sizes.append(1)
    return GroupTemplate(group_sizes=sizes, group_names=names)


# ============================================================================
# Décomposition
# ============================================================================

def orthogonal_complement(omega_star: np.ndarray) -> np.ndarray:
    """
    Complément orthogonal W⊥ ((N-q)×N, lignes orthonormées, W⊥ ω_* = 0)
    """
    omega_star = np.atleast_2d(omega_star)
    singular = np.linalg.svd(omega_star, compute_uv=False)
    if singular.size == 0 or singular.min() <= RANK_TOL * max(1.0, singular.max()):
        raise RankDeficiencyError("index weights are rank deficient: the complement is undefined")
    return null_space(omega_star.T).T


def variance_decompose(H: np.ndarray, omega_star: np.ndarray, t: int = 0) -> VolShares:
    """
    Sépare H_t en composantes commune et idiosyncratique

    Raises:
        FilterFailureError: H_t singulière
    """
    W = np.atleast_2d(omega_star).T
    W_perp = orthogonal_complement(omega_star)

    try:
        xi = W @ H @ W.T
        H_com = H @ W.T @ np.linalg.solve(xi, W @ H)
        if W_perp.shape[0] > 0:
            inner = W_perp @ np.linalg.solve(H, W_perp.T)
            H_idio = W_perp.T @ np.linalg.solve(inner, W_perp)
        else:
            H_idio = np.zeros_like(H)
    except LinAlgError as e:
        raise FilterFailureError(t, "volatility matrix is singular") from e

    H_com = 0.5 * (H_com + H_com.T)
    H_idio = 0.5 * (H_idio + H_idio.T)
    share = np.clip(np.diag(H_com) / np.diag(H), 0.0, 1.0)

    return VolShares(t=t, H_com=H_com, H_idio=H_idio, share_common=share)


def share_series(fit: MaiFit, template: GroupTemplate = None, workers: int = 1) -> np.ndarray:
    """
    Parts communes de volatilité pour chaque instant filtré

    ω_* est celui de l'ajustement. Les parts ne dépendent que de l'espace
    engendré par ω_* (H_com et H_idio sont inchangés si ω_* devient ω_* G),
    le gabarit sert donc à vérifier que l'ajustement est bien celui du modèle
    restreint attendu: mêmes N et q, et mêmes groupes si l'ajustement est restreint.

    Args:
        fit: Ajustement MAI
        template: Gabarit attendu (None = celui de l'ajustement, s'il existe)
        workers: Nombre de workers joblib

    Returns:
        Matrice (nombre d'instants filtrés) × N

    Raises:
        SpecValidationError: gabarit incompatible avec l'ajustement
    """
    omega_star = fit.omega.omega
    fitted = fit.omega.template
    if template is not None:
        if (template.N, template.q) != omega_star.shape:
            raise SpecValidationError(
                f"group template (N={template.N}, q={template.q}) does not match "
                f"the fitted weights {omega_star.shape[0]}×{omega_star.shape[1]}"
            )
        if fitted is not None and list(fitted.group_sizes) != list(template.group_sizes):
            raise SpecValidationError(
                f"weights were estimated with groups {fitted.group_sizes}, not {template.group_sizes}"
            )

    if workers > 1:
        shares = Parallel(n_jobs=workers)(
            delayed(variance_decompose)(belief.H, omega_star, belief.t) for belief in fit.beliefs
        )
    else:
        shares = [variance_decompose(belief.H, omega_star, belief.t) for belief in fit.beliefs]

    logger.info(f"Decomposed {len(shares)} volatility matrices")
    return np.vstack([s.share_common for s in shares])
