"""
Hiérarchie d'exceptions du projet

Deux familles:
- InputValidationError: entrée invalide (fichier, config, spécification) -> code de sortie 2
- NumericalError: échec numérique pendant un calcul -> code de sortie 1
"""

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_VALIDATION = 2


class MaiError(Exception):
    """Erreur de base du projet"""
    exit_code = EXIT_RUNTIME


# ============================================================================
# Erreurs de validation (exit 2)
# ============================================================================

class InputValidationError(MaiError):
    """Entrée invalide"""
    exit_code = EXIT_VALIDATION


class ConfigError(InputValidationError):
    """Fichier de configuration ou option invalide"""
    pass


class PanelStructureError(InputValidationError):
    """CSV mal formé (lignes de longueur différente, colonne manquante...)"""
    pass


class PanelParseError(InputValidationError):
    """Cellule non numérique dans le panel"""

    def __init__(self, row: int, column: str, value: str):
        self.row = row
        self.column = column
        self.value = value
        super().__init__(f"Non-numeric value {value!r} at row {row}, column {column!r}")


class TransformCodeError(InputValidationError):
    """Code de transformation hors de 1..7"""

    def __init__(self, series: str, tcode):
        self.series = series
        self.tcode = tcode
        super().__init__(f"Invalid transform code {tcode!r} for series {series!r} (expected 1..7)")


class TransformDomainError(InputValidationError):
    """Valeur non positive sous une transformation logarithmique"""

    def __init__(self, index: int, value: float, series: str = None):
        self.index = index
        self.value = value
        self.series = series
        where = f" in series {series!r}" if series else ""
        super().__init__(f"Non-positive value {value!r} at index {index}{where} under a log transform")


class ZeroVarianceError(InputValidationError):
    """Colonne de variance nulle, impossible à standardiser"""

    def __init__(self, series: str):
        self.series = series
        super().__init__(f"Series {series!r} has zero variance and cannot be standardized")


class SpecValidationError(InputValidationError):
    """Spécification de modèle incompatible avec les données"""
    pass


class InsufficientSampleError(InputValidationError):
    """Pas assez d'observations pour estimer"""
    pass


class DgpRejectedError(InputValidationError):
    """DGP non stationnaire (rayon spectral trop grand)"""

    def __init__(self, radius: float, limit: float):
        self.radius = radius
        self.limit = limit
        super().__init__(f"Index VAR companion spectral radius {radius:.6g} violates the guard (< {limit})")


# ============================================================================
# Erreurs numériques (exit 1)
# ============================================================================

class NumericalError(MaiError):
    """Échec numérique"""
    exit_code = EXIT_RUNTIME


class FilterFailureError(NumericalError):
    """Covariance d'innovation singulière même après jitter"""

    def __init__(self, t: int, message: str = "innovation covariance is numerically singular"):
        self.t = t
        super().__init__(f"Kalman filter failure at t={t}: {message}")


class RankDeficiencyError(NumericalError):
    """Matrice normale ou poids d'index de rang insuffisant"""
    pass


class DegeneratePoolError(NumericalError):
    """Poids du pool tous nuls"""
    pass


class PoolCollapseError(NumericalError):
    """Toutes les vraisemblances prédictives valent -inf au même instant"""

    def __init__(self, t: int):
        self.t = t
        super().__init__(f"pool collapse at t={t}: every model has zero predictive density")


class EmptyRecordSetError(NumericalError):
    """Métrique demandée sur un ensemble de prévisions vide"""
    pass
