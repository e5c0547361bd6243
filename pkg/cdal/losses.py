"""
Tete de classification partagee et termes de la perte totale :
L_original + eta1 L_causal + eta2 L_decor + eta3 L_aug.

Le controle "vanilla" ajoute sa perte de classification par attention
factuelle avec un poids 1, dans sa propre colonne l_vanilla.
"""

from dataclasses import dataclass

import numpy as np

import tensor as T
from attention import AttentionSet
from errors import ConfigError, ShapeError
from utils import derive_rng

PART_NAMES = ("l_original", "l_vanilla", "l_causal", "l_decor", "l_aug")


@dataclass
class ClassifierHead:
    """Application lineaire C -> K, partagee par les predictions factuelle et contrefactuelle."""

    w: T.Tensor
    b: T.Tensor
    name: str = "head"

    @property
    def n_classes(self) -> int:
        return self.w.shape[0]

    def parameters(self) -> dict:
        return {f"{self.name}.w": self.w, f"{self.name}.b": self.b}


@dataclass(frozen=True)
class LossWeights:
    eta1: float = 1.0
    eta2: float = 0.5
    eta3: float = 0.5

    def __post_init__(self):
        for key, value in (("eta1", self.eta1), ("eta2", self.eta2), ("eta3", self.eta3)):
            if not np.isfinite(value) or value < 0:
                raise ConfigError(f"{key} doit etre fini et >= 0, recu {value}")

    @classmethod
    def from_config(cls, cfg: dict) -> "LossWeights":
        return cls(cfg["loss.eta1"], cfg["loss.eta2"], cfg["loss.eta3"])


def make_head(seed: int, name: str, in_features: int, n_classes: int) -> ClassifierHead:
    w = T.he_normal(derive_rng(seed, "init", name, "w"), (n_classes, in_features), in_features, f"{name}.w")
    return ClassifierHead(w=w, b=T.parameter(np.zeros(n_classes), f"{name}.b"), name=name)


def weighted_features(x: T.Tensor, a: AttentionSet) -> T.Tensor:
    """Σ_i X * A_i, soit X * (Σ_i A_i) par distributivite."""
    if a.maps.shape[1:] != x.shape[1:]:
        raise ShapeError(f"Cartes {list(a.maps.shape)} incompatibles avec x {list(x.shape)}")
    return T.elem_mul(x, T.channel_sum(a.maps))


def predict(head: ClassifierHead, x: T.Tensor, a: AttentionSet) -> T.Tensor:
    """logits = head(gap(Σ_i X * A_i))."""
    return T.linear(T.gap(weighted_features(x, a)), head.w, head.b)


def causal_effect(y_f: T.Tensor, y_c: T.Tensor) -> T.Tensor:
    return T.elem_sub(y_f, y_c)


def cross_entropy(logits: T.Tensor, label: int) -> T.Tensor:
    """-log_softmax(logits)[label]."""
    if not 0 <= label < logits.shape[0]:
        raise ShapeError(f"Etiquette {label} hors de [0, {logits.shape[0]})")
    return T.scale(T.take(T.log_softmax(logits), label), -1.0)


def l_causal(y_effect: T.Tensor, label: int) -> T.Tensor:
    return cross_entropy(y_effect, label)


def l_decor(y_c: T.Tensor) -> T.Tensor:
    """Oppose de l'entropie de softmax(y_c) : minimiser ce terme maximise l'entropie."""
    return T.sum_all(T.elem_mul(T.softmax(y_c), T.log_softmax(y_c)))


def l_aug(x: T.Tensor, x_aug: T.Tensor, f: AttentionSet, f_aug: AttentionSet, s: int) -> T.Tensor:
    """
    (1/M) Σ_{i != s} mean_abs(X * F_i - X_aug * F_aug_i).

    Args:
        s: Indice tire, 1-based, exclu de la somme
    """
    m = f.n_maps
    if f_aug.n_maps != m:
        raise ShapeError("l_aug: nombres de cartes differents")
    if not 1 <= s <= m:
        raise ShapeError(f"l_aug: s={s} hors de [1, {m}]")
    total = T.tensor(0.0)
    for i in range(m):
        if i == s - 1:
            continue
        diff = T.elem_sub(T.elem_mul(x, f.map(i)), T.elem_mul(x_aug, f_aug.map(i)))
        total = T.elem_add(total, T.mean_abs(diff))
    return T.scale(total, 1.0 / m)


def l_original(head_base: ClassifierHead, x: T.Tensor, label: int) -> T.Tensor:
    """Entropie croisee du classifieur pool simple : CE(head_base(gap(x)), label)."""
    return cross_entropy(T.linear(T.gap(x), head_base.w, head_base.b), label)


def l_total(parts: dict, w: LossWeights) -> T.Tensor:
    """
    L_original + L_vanilla + eta1 L_causal + eta2 L_decor + eta3 L_aug.

    Args:
        parts: nom -> Tensor scalaire ; les termes absents comptent pour 0
    """
    total = parts["l_original"]
    if "l_vanilla" in parts:
        total = T.elem_add(total, parts["l_vanilla"])
    for key, eta in (("l_causal", w.eta1), ("l_decor", w.eta2), ("l_aug", w.eta3)):
        if key in parts and eta != 0:
            total = T.elem_add(total, T.scale(parts[key], eta))
    return total
