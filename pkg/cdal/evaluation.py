"""
Evaluation en monde ouvert sur la partition non etiquetee.

Les echantillons des generateurs connus servent a la precision fermee et au
score de nouveaute (AUC, OSCR) ; les nouveaux sont regroupes par K-Means avec
le nombre exact de generateurs nouveaux, puis alignes par l'algorithme hongrois.
"""

import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy import special

import metrics
from benchmark import Dataset
from config import config_digest
from errors import DataError
from utils import log


@dataclass
class EvalReport:
    known_acc: float
    novel_acc: float
    novel_nmi: float
    novel_ari: float
    novel_purity: float
    all_acc: float
    all_nmi: float
    all_ari: float
    auc: float
    oscr: float
    ccr_at_fpr5: float
    seed: int
    config_digest: str
    n_known: int = 0
    n_novel: int = 0

    METRICS = ("known_acc", "novel_acc", "novel_nmi", "novel_ari", "novel_purity",
               "all_acc", "all_nmi", "all_ari", "auc", "oscr", "ccr_at_fpr5")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _unit(value: float) -> float:
    # ARI peut passer sous 0 par hasard ; le rapport reste dans [0,1]
    return float(min(1.0, max(0.0, value)))


def _relabel(values: np.ndarray) -> np.ndarray:
    _, inverse = np.unique(values, return_inverse=True)
    return inverse.astype(np.int64)


def _cluster_metrics(features: np.ndarray, truth: np.ndarray, k: int, restarts: int, rng) -> dict:
    assignments = metrics.kmeans(features, k, restarts, rng)
    truth = _relabel(truth)
    _, acc = metrics.hungarian_match(assignments, truth, k)
    return {
        "acc": acc,
        "nmi": metrics.nmi(truth, assignments),
        "ari": metrics.ari(truth, assignments),
        "purity": metrics.purity(assignments, truth),
    }


def embed(model, dataset: Dataset, indices) -> tuple:
    """Plongements et logits pour les indices donnes."""
    embeddings, logits = [], []
    for i in indices:
        e, z = model.infer(dataset.images[i])
        embeddings.append(np.asarray(e, dtype=np.float64).reshape(-1))
        logits.append(np.asarray(z, dtype=np.float64).reshape(-1))
    return np.stack(embeddings), np.stack(logits)


def evaluate(model, dataset: Dataset, cfg: dict, rng: np.random.Generator) -> EvalReport:
    """
    Evalue un modele exposant `infer(image) -> (plongement, logits)`.

    Args:
        model: Modele entraine (ou tout objet respectant le protocole)
        dataset: Jeu synthetique
        cfg: Configuration du run (graine, redemarrages K-Means)
        rng: Generateur des initialisations K-Means

    Returns:
        EvalReport
    """
    known_ids, novel_ids = dataset.known_ids, dataset.novel_ids
    unlabeled = dataset.unlabeled_indices()
    gens = dataset.gen_ids[unlabeled]
    is_known = np.isin(gens, known_ids)
    if not is_known.any() or is_known.all():
        raise DataError("Evaluation impossible : partition connue ou nouvelle vide")

    log("EVAL", f"{is_known.sum()} connus, {(~is_known).sum()} nouveaux a evaluer")
    embeddings, logits = embed(model, dataset, unlabeled)
    if logits.shape[1] != len(known_ids):
        raise DataError(f"Le modele predit {logits.shape[1]} classes pour {len(known_ids)} generateurs connus")

    class_of = {g: c for c, g in enumerate(known_ids)}
    known_truth = np.array([class_of[g] for g in gens[is_known]])
    known_pred = logits[is_known].argmax(axis=1)
    correct = known_pred == known_truth
    scores = special.softmax(logits, axis=1).max(axis=1)

    restarts = cfg["eval.kmeans_restarts"]
    novel = _cluster_metrics(embeddings[~is_known], gens[~is_known], len(novel_ids), restarts, rng)
    everything = _cluster_metrics(embeddings, gens, len(known_ids) + len(novel_ids), restarts, rng)

    report = EvalReport(
        known_acc=float(correct.mean()),
        novel_acc=novel["acc"],
        novel_nmi=novel["nmi"],
        novel_ari=_unit(novel["ari"]),
        novel_purity=novel["purity"],
        all_acc=everything["acc"],
        all_nmi=everything["nmi"],
        all_ari=_unit(everything["ari"]),
        auc=metrics.auc_known_unknown(scores, is_known),
        oscr=metrics.oscr(scores[is_known], correct, scores[~is_known]),
        ccr_at_fpr5=metrics.ccr_at_fpr(scores[is_known], correct, scores[~is_known], 0.05),
        seed=cfg["seed"],
        config_digest=config_digest(cfg),
        n_known=int(is_known.sum()),
        n_novel=int((~is_known).sum()),
    )
    log("EVAL", f"known_acc={report.known_acc:.4f} novel_ari={report.novel_ari:.4f} "
                f"auc={report.auc:.4f} oscr={report.oscr:.4f}")
    return report
