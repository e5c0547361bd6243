"""
Boucle d'entrainement : extracteur -> attentions -> augmentation -> pertes -> SGD avec momentum.
"""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

import tensor as T
from attention import extract, static_counterfactual
from augmentation import AugChainConfig, augment_pass
from benchmark import Dataset
from config import config_digest
from errors import DataError, NumericError
from losses import (PART_NAMES, LossWeights, causal_effect, cross_entropy, l_aug, l_causal, l_decor,
                    l_original, l_total, predict)
from model import CDALModel
from tensor_io import load_checkpoint, save_checkpoint
from utils import derive_rng, ensure_dir, log

CHECKPOINT_NAME = "checkpoint.cdck"
TRACE_NAME = "loss_trace.csv"
TRACE_HEADER = ["step", *PART_NAMES, "l_total"]


def global_norm(grads: dict) -> float:
    return float(np.sqrt(sum(float(np.sum(np.square(g))) for g in grads.values())))


class SGD:
    """
    Descente de gradient avec momentum : v = mu v + g ; p = p - lr v.

    Si `clip_norm` > 0, le gradient est d'abord ramene a une norme globale
    (toutes couches confondues) au plus egale a `clip_norm`.
    """

    def __init__(self, params: dict, learning_rate: float, momentum: float, clip_norm: float = 0.0):
        self.params = params
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.clip_norm = clip_norm
        self.velocity = {name: np.zeros(p.shape) for name, p in params.items()}

    def step(self, grads: dict) -> float:
        """Applique une mise a jour ; renvoie la norme globale du gradient avant ecretage."""
        norm = global_norm(grads)
        factor = 1.0
        if self.clip_norm > 0 and norm > self.clip_norm:
            factor = self.clip_norm / norm
        for name, p in self.params.items():
            v = self.momentum * self.velocity[name] + factor * grads[name]
            self.velocity[name] = v
            p.data = p.data - self.learning_rate * v
        return norm


@dataclass
class TrainState:
    model: CDALModel
    optimizer: SGD
    cfg: dict
    step: int = 0
    out_dir: Path = None


@dataclass
class TrainResult:
    model: CDALModel
    trace: list = field(default_factory=list)
    checkpoint: Path = None


def sample_losses(model: CDALModel, image, label: int, cfg: dict, rng: np.random.Generator) -> dict:
    """
    Termes de perte d'un echantillon.

    Les termes inactifs dans le mode courant valent 0. En mode "vanilla", seule
    l_vanilla (classification par attention factuelle, poids 1) s'ajoute a l_original.
    """
    zero = T.tensor(0.0)
    x = model.features(T.as_tensor(image))
    parts = dict.fromkeys(PART_NAMES, zero)
    parts["l_original"] = l_original(model.base_head, x, label)
    if model.kind == "baseline":
        return parts

    f = extract(model.factual, x, "factual")
    if model.kind == "vanilla":
        parts["l_vanilla"] = cross_entropy(predict(model.head, x, f), label)
        return parts

    mode = model.counterfactual_mode
    if mode == "learned":
        c = extract(model.counterfactual, x, "counterfactual")
    else:
        c = static_counterfactual(mode, f, rng)
    if cfg["train.augment_enabled"]:
        x_aug, f_aug, c_aug, s = augment_pass(x, f, c, model.branches, AugChainConfig.from_config(cfg), rng, mode)
        parts["l_aug"] = l_aug(x, x_aug, f, f_aug, s)
    else:
        x_aug, f_aug, c_aug = x, f, c
    y_f = predict(model.head, x_aug, f_aug)
    y_c = predict(model.head, x_aug, c_aug)
    parts["l_causal"] = l_causal(causal_effect(y_f, y_c), label)
    parts["l_decor"] = l_decor(y_c)
    return parts


def compute_batch_loss(model: CDALModel, batch: list, cfg: dict, rng: np.random.Generator) -> tuple:
    """
    Perte moyenne d'un batch [(image, etiquette), ...].

    Chaque echantillon recoit son propre generateur, engendre depuis `rng`.

    Returns:
        (perte totale Tensor, dict terme -> moyenne float)
    """
    weights = LossWeights.from_config(cfg)
    sums = dict.fromkeys(PART_NAMES, 0.0)
    total = T.tensor(0.0)
    for (image, label), sample_rng in zip(batch, rng.spawn(len(batch))):
        parts = sample_losses(model, image, label, cfg, sample_rng)
        for name in PART_NAMES:
            sums[name] += parts[name].item()
        total = T.elem_add(total, l_total(parts, weights))
    n = len(batch)
    means = {name: sums[name] / n for name in PART_NAMES}
    means["l_total"] = total.item() / n
    return T.scale(total, 1.0 / n), means


def _grad_norms(params: dict, grads: dict) -> dict:
    return {name: float(np.linalg.norm(grads[name])) for name in params}


def _dump_diagnostics(state: TrainState, parts: dict, norms: dict):
    if state.out_dir is None:
        return
    path = ensure_dir(state.out_dir) / "diagnostics.json"
    with open(path, 'w', encoding='utf-8') as f:
        json.dump({"step": state.step, "loss_parts": parts, "grad_norms": norms}, f, indent=2)
    log("TRAIN", f"Diagnostic ecrit dans {path}")


def train_step(state: TrainState, batch: list, rng: np.random.Generator) -> tuple:
    """
    Une etape : passe avant sur le batch, retropropagation, mise a jour SGD.

    Returns:
        (state, dict des termes de perte moyens)
    """
    params = state.model.parameters()
    with T.Tape():
        loss, parts = compute_batch_loss(state.model, batch, state.cfg, rng)
        T.backward(loss)
    grads = {name: p.grad if p.grad is not None else np.zeros(p.shape) for name, p in params.items()}
    for p in params.values():
        p.grad = None

    finite = all(np.isfinite(v) for v in parts.values()) and all(np.all(np.isfinite(g)) for g in grads.values())
    if not finite:
        norms = _grad_norms(params, grads)
        _dump_diagnostics(state, parts, norms)
        raise NumericError(f"Perte ou gradient non fini a l'etape {state.step}: {parts}")

    state.optimizer.step(grads)
    state.step += 1
    return state, parts


def _check_dataset(cfg: dict, dataset: Dataset):
    manifest = dataset.manifest
    if manifest["height"] != cfg["data.height"] or manifest["width"] != cfg["data.width"]:
        raise DataError(f"Images {manifest['height']}x{manifest['width']} mais configuration "
                        f"{cfg['data.height']}x{cfg['data.width']}")
    if len(dataset.known_ids) != cfg["data.known_generators"]:
        raise DataError(f"{len(dataset.known_ids)} generateurs connus dans le jeu, "
                        f"{cfg['data.known_generators']} dans la configuration")
    if cfg["data.height"] % 4 or cfg["data.width"] % 4:
        raise DataError("Hauteur et largeur doivent etre multiples de 4 (deux poolings 2x2)")
    if len(dataset.labeled_indices()) == 0:
        raise DataError("Aucun echantillon etiquete pour l'entrainement")


def write_trace(path, trace: list):
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.DictWriter(f, fieldnames=TRACE_HEADER)
        writer.writeheader()
        for row in trace:
            writer.writerow({key: row[key] for key in TRACE_HEADER})


def save_model(path, model: CDALModel, cfg: dict, step: int):
    metadata = {"config": cfg, "config_digest": config_digest(cfg), "n_classes": model.n_classes,
                "kind": model.kind, "step": step}
    save_checkpoint(path, model.state_dict(), metadata)


def load_model(path) -> tuple:
    """Reconstruit le modele d'un checkpoint ; retourne (modele, metadonnees)."""
    tensors, metadata = load_checkpoint(path)
    if "config" not in metadata or "n_classes" not in metadata:
        raise DataError(f"Metadonnees de checkpoint incompletes: {path}")
    model = CDALModel(metadata["config"], metadata["n_classes"])
    model.load_state_dict(tensors)
    return model, metadata


def train(cfg: dict, dataset: Dataset, out_dir=None) -> TrainResult:
    """
    Entraine sur la partition etiquetee (generateurs connus seulement).

    Args:
        cfg: Configuration validee
        dataset: Jeu synthetique
        out_dir: Dossier de sortie (checkpoint.cdck, loss_trace.csv) ; rien n'est ecrit si None

    Returns:
        TrainResult
    """
    _check_dataset(cfg, dataset)
    seed = cfg["seed"]
    class_of = {g: c for c, g in enumerate(dataset.known_ids)}
    labeled = dataset.labeled_indices()
    model = CDALModel(cfg, len(class_of))
    state = TrainState(model=model, optimizer=SGD(model.parameters(), cfg["train.learning_rate"],
                                                  cfg["train.momentum"], cfg["train.grad_clip"]),
                       cfg=cfg, out_dir=Path(out_dir) if out_dir else None)
    batch_size = cfg["train.batch_size"]
    log("TRAIN", f"Mode {model.kind} ({model.counterfactual_mode}), {len(labeled)} echantillons, "
                 f"{cfg['train.epochs']} epoques")

    trace = []
    for epoch in range(cfg["train.epochs"]):
        order = derive_rng(seed, "epoch", epoch).permutation(labeled)
        epoch_totals = []
        for start in range(0, len(order), batch_size):
            batch = [(dataset.images[i], class_of[int(dataset.gen_ids[i])]) for i in order[start:start + batch_size]]
            state, parts = train_step(state, batch, derive_rng(seed, "step", state.step))
            trace.append({"step": state.step, **parts})
            epoch_totals.append(parts["l_total"])
        log("TRAIN", f"Epoque {epoch + 1}/{cfg['train.epochs']} l_total={np.mean(epoch_totals):.4f}")

    result = TrainResult(model=model, trace=trace)
    if out_dir:
        out = ensure_dir(out_dir)
        result.checkpoint = out / CHECKPOINT_NAME
        save_model(result.checkpoint, model, cfg, state.step)
        write_trace(out / TRACE_NAME, trace)
        log("TRAIN", f"Checkpoint ecrit dans {result.checkpoint}")
    return result
