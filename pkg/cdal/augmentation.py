"""
Augmentation causale des attentions.

Chaine standard (bruit -> flou -> echelle) sur la carte de caracteristiques,
tirage d'un indice d'attention proportionnel a l'energie des cartes factuelles,
melange selectif factuel/contrefactuel, puis re-extraction par les branches.
"""

from dataclasses import dataclass

import numpy as np

import tensor as T
from attention import AttentionBranch, AttentionSet, extract, static_counterfactual
from errors import ConfigError, NumericError, ShapeError


@dataclass(frozen=True)
class AugChainConfig:
    """
    Chaine d'augmentation, appliquee dans l'ordre bruit -> flou -> echelle.

    Attributes:
        noise_sigma: Ecart-type du bruit gaussien additif
        blur_passes: Nombre de flous boite 3x3
        scale_lo, scale_hi: Intervalle du facteur multiplicatif global
    """

    noise_sigma: float = 0.05
    blur_passes: int = 1
    scale_lo: float = 0.9
    scale_hi: float = 1.1

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma doit etre >= 0")
        if self.blur_passes < 0:
            raise ConfigError("blur_passes doit etre >= 0")
        if not 0 < self.scale_lo <= self.scale_hi:
            raise ConfigError("0 < scale_lo <= scale_hi requis")

    @classmethod
    def disabled(cls) -> "AugChainConfig":
        return cls(noise_sigma=0.0, blur_passes=0, scale_lo=1.0, scale_hi=1.0)

    @classmethod
    def from_config(cls, cfg: dict) -> "AugChainConfig":
        return cls(noise_sigma=cfg["aug.noise_sigma"], blur_passes=cfg["aug.blur_passes"],
                   scale_lo=cfg["aug.scale_lo"], scale_hi=cfg["aug.scale_hi"])


def standard_aug(x: T.Tensor, cfg: AugChainConfig, rng: np.random.Generator) -> T.Tensor:
    """
    Applique la chaine d'augmentation, enregistree sur la bande : x + bruit, flou, echelle.

    Seuls le bruit tire et le facteur sont constants ; le gradient traverse le flou jusqu'a x.
    Tirages dans l'ordre : bruit (si sigma > 0), puis facteur d'echelle (si lo < hi).
    Une chaine entierement desactivee renvoie x tel quel.
    """
    out = x
    if cfg.noise_sigma > 0:
        out = T.elem_add(out, T.tensor(rng.normal(0.0, cfg.noise_sigma, size=x.shape)))
    if cfg.blur_passes > 0:
        out = T.box_blur(out, cfg.blur_passes)
    if cfg.scale_hi > cfg.scale_lo:
        out = T.scale(out, rng.uniform(cfg.scale_lo, cfg.scale_hi))
    elif cfg.scale_lo != 1.0:
        out = T.scale(out, cfg.scale_lo)
    return out


def energy_weights(f: AttentionSet) -> np.ndarray:
    """w_i = energie L1 de F_i / energie totale."""
    energy = f.maps.data.sum(axis=(1, 2))
    total = energy.sum()
    if not np.isfinite(total) or total <= 0:
        raise NumericError("Distribution d'energie degeneree : attention factuelle nulle")
    return energy / total


def sample_index(f: AttentionSet, rng: np.random.Generator) -> int:
    """Tire s dans [1..M] avec p(i) = w_i."""
    weights = energy_weights(f)
    return int(rng.choice(len(weights), p=weights)) + 1


def counterfactual_mask(c: AttentionSet) -> T.Tensor:
    """c_bar : moyenne des cartes contrefactuelles ramenee dans [0,1] par son maximum."""
    mean = T.channel_mean(c.maps)
    if mean.data.max() <= 0:
        return T.tensor(np.zeros(mean.shape))
    return T.elem_div(mean, T.max_all(mean))


def selective_augment(x: T.Tensor, x_aug: T.Tensor, f_s: T.Tensor, c: AttentionSet) -> T.Tensor:
    """X * F_s + X_aug * c_bar, cartes spatiales diffusees sur les canaux."""
    if x.shape != x_aug.shape:
        raise ShapeError(f"selective_augment: x {list(x.shape)} et x_aug {list(x_aug.shape)} differents")
    if f_s.shape != x.shape[1:] or c.maps.shape[1:] != x.shape[1:]:
        raise ShapeError("selective_augment: cartes et caracteristiques de tailles spatiales differentes")
    return T.elem_add(T.elem_mul(x, f_s), T.elem_mul(x_aug, counterfactual_mask(c)))


def augment_pass(x: T.Tensor, f: AttentionSet, c: AttentionSet, branches: tuple, cfg: AugChainConfig,
                 rng: np.random.Generator, counterfactual_mode: str = "learned") -> tuple:
    """
    Passe d'augmentation complete.

    Args:
        x: Carte de caracteristiques [C,H,W]
        f, c: Attentions extraites de x
        branches: (branche factuelle, branche contrefactuelle)
        cfg: Chaine d'augmentation
        rng: Generateur de l'echantillon
        counterfactual_mode: "learned" ou un contrefactuel statique pour c_aug

    Returns:
        (x_aug_final, f_aug, c_aug, s) avec s 1-based
    """
    factual, counterfactual = branches
    if not isinstance(factual, AttentionBranch):
        raise ShapeError("augment_pass: branche factuelle attendue")
    x_aug = standard_aug(x, cfg, rng)
    s = sample_index(f, rng)
    x_aug_final = selective_augment(x, x_aug, f.map(s - 1), c)
    f_aug = extract(factual, x_aug_final, "factual", "augmented")
    if counterfactual_mode == "learned":
        c_aug = extract(counterfactual, x_aug_final, "counterfactual", "augmented")
    else:
        c_aug = static_counterfactual(counterfactual_mode, f_aug, rng)
    return x_aug_final, f_aug, c_aug, s
