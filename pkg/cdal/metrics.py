"""
Metriques du monde ouvert : precision alignee (Hongrois), NMI, ARI, purete,
K-Means, AUC connu/inconnu et OSCR.
"""

import numpy as np
from scipy.integrate import trapezoid
from scipy.optimize import linear_sum_assignment
from sklearn.cluster import KMeans
from sklearn.metrics import adjusted_rand_score, normalized_mutual_info_score, roc_auc_score
from sklearn.metrics.cluster import contingency_matrix

from errors import ShapeError


def _labels(values, name: str) -> np.ndarray:
    array = np.asarray(values, dtype=np.int64).reshape(-1)
    if array.size == 0:
        raise ShapeError(f"{name}: entree vide")
    return array


def _paired(a, b, name: str) -> tuple:
    a, b = _labels(a, name), _labels(b, name)
    if a.size != b.size:
        raise ShapeError(f"{name}: longueurs differentes ({a.size} et {b.size})")
    return a, b


def hungarian_match(pred, gt, k: int) -> tuple:
    """
    Aligne les identifiants predits sur les classes par affectation optimale.

    La matrice de contingence est completee de zeros jusqu'a une taille carree
    quand les nombres de groupes different.

    Returns:
        (dict identifiant predit -> classe, precision alignee)
    """
    pred, gt = _paired(pred, gt, "hungarian_match")
    if pred.min() < 0 or gt.min() < 0:
        raise ShapeError("hungarian_match: etiquettes negatives")
    size = max(int(k), int(pred.max()) + 1, int(gt.max()) + 1)
    counts = np.zeros((size, size), dtype=np.int64)
    np.add.at(counts, (pred, gt), 1)
    rows, cols = linear_sum_assignment(-counts)
    mapping = {int(r): int(c) for r, c in zip(rows, cols)}
    return mapping, float(counts[rows, cols].sum()) / pred.size


def nmi(a, b) -> float:
    """Information mutuelle normalisee par la moyenne arithmetique des entropies."""
    a, b = _paired(a, b, "nmi")
    return float(normalized_mutual_info_score(a, b, average_method='arithmetic'))


def ari(a, b) -> float:
    a, b = _paired(a, b, "ari")
    return float(adjusted_rand_score(a, b))


def purity(pred, gt) -> float:
    """Σ_groupes (effectif de la classe majoritaire) / total."""
    pred, gt = _paired(pred, gt, "purity")
    counts = contingency_matrix(gt, pred)
    return float(counts.max(axis=0).sum()) / pred.size


def kmeans(features, k: int, restarts: int, rng: np.random.Generator) -> np.ndarray:
    """
    K-Means (Lloyd, initialisation k-means++), meilleure inertie sur `restarts` essais.

    Args:
        features: Matrice [n, d]
        k: Nombre de groupes
        restarts: Nombre d'initialisations
        rng: Generateur dont on tire la graine de sklearn

    Returns:
        Affectations entieres [n]
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ShapeError(f"kmeans: matrice [n, d] attendue, recu {list(features.shape)}")
    n = features.shape[0]
    if k < 1 or k > n:
        raise ShapeError(f"kmeans: k={k} pour {n} points")
    model = KMeans(n_clusters=k, init='k-means++', n_init=restarts, max_iter=200, tol=1e-8,
                   algorithm='lloyd', random_state=int(rng.integers(0, 2**31 - 1)))
    return model.fit_predict(features).astype(np.int64)


def inertia(features, assignments) -> float:
    """Somme des distances carrees de chaque point au centre de son groupe."""
    features = np.asarray(features, dtype=np.float64)
    assignments = np.asarray(assignments)
    total = 0.0
    for label in np.unique(assignments):
        members = features[assignments == label]
        total += float(((members - members.mean(axis=0)) ** 2).sum())
    return total


def auc_known_unknown(scores, is_known) -> float:
    """AUC du score separant connus (positifs) et inconnus ; les ex aequo comptent pour 1/2."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    is_known = np.asarray(is_known, dtype=bool).reshape(-1)
    if scores.size != is_known.size or scores.size == 0:
        raise ShapeError("auc_known_unknown: entrees vides ou de longueurs differentes")
    if is_known.all() or not is_known.any():
        raise ShapeError("auc_known_unknown: il faut des echantillons connus et inconnus")
    return float(roc_auc_score(is_known, scores))


def oscr_curve(known_scores, known_correct, unknown_scores) -> tuple:
    """
    Points (FPR, CCR) pour chaque seuil observe, plus le point (0, 0).

    CCR(t) = part des connus correctement classes avec score >= t ;
    FPR(t) = part des inconnus avec score >= t.
    """
    known_scores = np.asarray(known_scores, dtype=np.float64).reshape(-1)
    known_correct = np.asarray(known_correct, dtype=bool).reshape(-1)
    unknown_scores = np.asarray(unknown_scores, dtype=np.float64).reshape(-1)
    if known_scores.size == 0 or unknown_scores.size == 0:
        raise ShapeError("oscr: il faut des echantillons connus et inconnus")
    if known_scores.size != known_correct.size:
        raise ShapeError("oscr: scores et correction de longueurs differentes")
    thresholds = np.unique(np.concatenate([known_scores, unknown_scores]))
    ccr = ((known_scores[None, :] >= thresholds[:, None]) & known_correct[None, :]).mean(axis=1)
    fpr = (unknown_scores[None, :] >= thresholds[:, None]).mean(axis=1)
    fpr = np.concatenate([[0.0], fpr])
    ccr = np.concatenate([[0.0], ccr])
    order = np.lexsort((ccr, fpr))
    return fpr[order], ccr[order]


def oscr(known_scores, known_correct, unknown_scores) -> float:
    """Aire sous la courbe CCR/FPR (trapezes)."""
    fpr, ccr = oscr_curve(known_scores, known_correct, unknown_scores)
    return float(trapezoid(ccr, fpr))


def ccr_at_fpr(known_scores, known_correct, unknown_scores, target: float = 0.05) -> float:
    """Meilleur CCR parmi les seuils dont le FPR ne depasse pas `target`."""
    fpr, ccr = oscr_curve(known_scores, known_correct, unknown_scores)
    return float(ccr[fpr <= target].max())
