"""
Exceptions du laboratoire CDAL.
Chaque famille porte le code de sortie renvoye par la CLI.
"""


class CDALError(RuntimeError):
    """Erreur de base ; `kind` et `exit_code` servent a la ligne d'erreur de la CLI."""

    kind = "numeric"
    exit_code = 4


class ConfigError(CDALError):
    """Configuration invalide (cle inconnue, type incorrect, JSON malforme)."""

    kind = "config"
    exit_code = 2


class DataError(CDALError):
    """Fichiers manquants, jeu de donnees incoherent, checkpoint incompatible."""

    kind = "data"
    exit_code = 3


class NumericError(CDALError):
    """Perte non finie, distribution degeneree."""

    kind = "numeric"
    exit_code = 4


class ShapeError(CDALError, ValueError):
    """Dimensions incompatibles entre tenseurs."""

    kind = "numeric"
    exit_code = 4
