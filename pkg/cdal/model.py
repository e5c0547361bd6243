"""
Reseau complet : extracteur convolutif, branches d'attention et tetes de classification.
"""

from dataclasses import dataclass

import numpy as np

import tensor as T
from attention import extract, make_branch
from errors import DataError, ShapeError
from losses import make_head, weighted_features
from utils import derive_rng

FEATURE_CHANNELS = 16


@dataclass
class Backbone:
    """conv 3->8 (3x3) + relu + pool 2x2 ; conv 8->16 (3x3) + relu + pool 2x2, sans biais."""

    conv1: T.Tensor
    conv2: T.Tensor

    def forward(self, image: T.Tensor) -> T.Tensor:
        h = T.avg_pool2x2(T.relu(T.conv2d(image, self.conv1)))
        return T.avg_pool2x2(T.relu(T.conv2d(h, self.conv2)))

    def parameters(self) -> dict:
        return {"backbone.conv1": self.conv1, "backbone.conv2": self.conv2}


def make_backbone(seed: int) -> Backbone:
    return Backbone(
        conv1=T.he_normal(derive_rng(seed, "init", "backbone", "conv1"), (8, 3, 3, 3), 27, "backbone.conv1"),
        conv2=T.he_normal(derive_rng(seed, "init", "backbone", "conv2"), (FEATURE_CHANNELS, 8, 3, 3), 72,
                          "backbone.conv2"),
    )


class CDALModel:
    """
    Modele entraine par le laboratoire.

    Selon la configuration :
      - "baseline" : extracteur + tete de base (L_original seule) ;
      - "vanilla" : attention factuelle appliquee directement, sans chemin contrefactuel ;
      - "cdal" : branches factuelle et contrefactuelle (cette derniere absente si le
        contrefactuel est statique), tete partagee et tete de base.
    """

    def __init__(self, cfg: dict, n_classes: int):
        seed = cfg["seed"]
        self.cfg = cfg
        self.n_classes = n_classes
        self.counterfactual_mode = cfg["train.counterfactual_mode"]
        if cfg["train.vanilla_attention"]:
            self.kind = "vanilla"
        elif cfg["train.cdal_enabled"]:
            self.kind = "cdal"
        else:
            self.kind = "baseline"

        branch_args = dict(in_channels=FEATURE_CHANNELS, n_maps=cfg["model.n_maps"],
                           n_experts=cfg["model.n_experts"], reduction=cfg["model.reduction"])
        self.backbone = make_backbone(seed)
        self.base_head = make_head(seed, "base_head", FEATURE_CHANNELS, n_classes)
        self.factual = None
        self.counterfactual = None
        self.head = None
        if self.kind != "baseline":
            self.factual = make_branch(seed, "factual", **branch_args)
            self.head = make_head(seed, "head", FEATURE_CHANNELS, n_classes)
        if self.kind == "cdal" and self.counterfactual_mode == "learned":
            self.counterfactual = make_branch(seed, "counterfactual", **branch_args)

    @property
    def branches(self) -> tuple:
        return self.factual, self.counterfactual

    def modules(self) -> dict:
        """Sous-ensembles de parametres par role (pour le decompte de surcout)."""
        groups = {"backbone": self.backbone.parameters(), "base_head": self.base_head.parameters()}
        for name, part in (("factual", self.factual), ("counterfactual", self.counterfactual), ("head", self.head)):
            if part is not None:
                groups[name] = part.parameters()
        return groups

    def parameters(self) -> dict:
        """nom -> Tensor, ordre stable."""
        params = {}
        for group in self.modules().values():
            params.update(group)
        return params

    def features(self, image: T.Tensor) -> T.Tensor:
        if image.data.ndim != 3 or image.shape[0] != 3:
            raise ShapeError(f"Image [3,H,W] attendue, recu {list(image.shape)}")
        return self.backbone.forward(image)

    def infer(self, image) -> tuple:
        """
        Passe d'inference sans augmentation.

        Returns:
            (plongement gap(Σ_i X * F_i) ou gap(X) sans attention, logits de la tete de base)
        """
        x = self.features(T.as_tensor(image))
        logits = T.linear(T.gap(x), self.base_head.w, self.base_head.b)
        if self.factual is None:
            embedding = T.gap(x)
        else:
            embedding = T.gap(weighted_features(x, extract(self.factual, x)))
        return embedding.numpy(), logits.numpy()

    def state_dict(self) -> dict:
        return {name: p.data.copy() for name, p in self.parameters().items()}

    def load_state_dict(self, tensors: dict):
        params = self.parameters()
        missing = sorted(set(params) - set(tensors))
        if missing:
            raise DataError(f"Checkpoint incompatible, parametres manquants: {', '.join(missing[:5])}")
        for name, p in params.items():
            array = np.asarray(tensors[name], dtype=np.float64)
            if array.shape != p.shape:
                raise DataError(f"Checkpoint incompatible pour {name}: {list(array.shape)} au lieu de {list(p.shape)}")
            p.data = array.copy()

