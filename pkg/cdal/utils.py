"""
Fonctions utilitaires communes.
"""

import hashlib
from pathlib import Path

import numpy as np

from config import VERBOSE


def write_file(filepath: str, content: str):
    """Écrit du contenu dans un fichier (crée le dossier si besoin)."""
    path = Path(filepath)
    if path.parent and str(path.parent) != '.':
        path.parent.mkdir(parents=True, exist_ok=True)
    with open(filepath, 'w', encoding='utf-8') as f:
        f.write(content)


def ensure_dir(path) -> Path:
    """Crée un dossier s'il n'existe pas."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def log(tag: str, message: str):
    """Affiche une ligne de progression `[TAG] message` (muette si CDAL_VERBOSE=0)."""
    if VERBOSE:
        print(f"[{tag}] {message}")


def _part_to_int(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part)
    digest = hashlib.sha256(str(part).encode('utf-8')).digest()
    return int.from_bytes(digest[:4], 'little')


def derive_seed(seed: int, *parts) -> np.random.SeedSequence:
    """
    Derive une sous-graine adressee par un chemin (nom de module, indices).

    Le chemin, et non l'ordre des appels, determine le flux : ajouter un
    consommateur ne perturbe jamais les tirages des autres.

    Args:
        seed: Graine globale du run
        parts: Composantes du chemin (chaines ou entiers)

    Returns:
        SeedSequence numpy
    """
    return np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_part_to_int(p) for p in parts))


def derive_rng(seed: int, *parts) -> np.random.Generator:
    """Generateur numpy pour le chemin (seed, *parts)."""
    return np.random.default_rng(derive_seed(seed, *parts))
