"""
Extraction des attentions factuelles F et contrefactuelles C.

Chaque branche enchaine une convolution CE 1x1 (X_cross) puis une convolution
CE depthwise 3x3 suivie d'un melange pointwise 1x1 (X_depth) ; les deux
moities sont concatenees puis passees dans softplus pour rester positives.
"""

from dataclasses import dataclass

import numpy as np

import tensor as T
from ce_conv import CEConvLayer, ce_forward, make_ce_conv
from errors import ShapeError
from utils import derive_rng

KINDS = ("factual", "counterfactual")
PROVENANCES = ("original", "augmented")
STATIC_KINDS = ("random", "uniform", "reversed", "shuffle")


@dataclass
class AttentionBranch:
    """
    Branche d'attention a deux chemins.

    Attributes:
        ce_1x1: CE standard C_in -> M/2, noyau 1x1
        ce_dw: CE depthwise sur M/2 canaux, noyau 3x3
        pointwise: Melange 1x1 [M/2, M/2, 1, 1] (moitie "separable")
    """

    ce_1x1: CEConvLayer
    ce_dw: CEConvLayer
    pointwise: T.Tensor
    name: str = "branch"

    @property
    def in_channels(self) -> int:
        return self.ce_1x1.in_channels

    @property
    def n_maps(self) -> int:
        return 2 * self.pointwise.shape[0]

    def parameters(self) -> dict:
        params = dict(self.ce_1x1.parameters())
        params.update(self.ce_dw.parameters())
        params[f"{self.name}.pointwise"] = self.pointwise
        return params


@dataclass
class AttentionSet:
    """M cartes positives H x W, avec leur nature et leur provenance."""

    maps: T.Tensor
    kind: str = "factual"
    provenance: str = "original"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ShapeError(f"Nature d'attention inconnue: {self.kind}")
        if self.provenance not in PROVENANCES:
            raise ShapeError(f"Provenance d'attention inconnue: {self.provenance}")
        if self.maps.data.ndim != 3:
            raise ShapeError(f"Cartes [M,H,W] attendues, recu {list(self.maps.shape)}")

    @property
    def n_maps(self) -> int:
        return self.maps.shape[0]

    def map(self, i: int) -> T.Tensor:
        """Carte i (0-based), differentiable."""
        return T.take(self.maps, i)


def make_branch(seed: int, name: str, in_channels: int, n_maps: int = 8,
                n_experts: int = 4, reduction: int = 4) -> AttentionBranch:
    """
    Construit une branche ; `name` separe les parametres et les graines
    des branches factuelle et contrefactuelle.
    """
    if n_maps < 2 or n_maps % 2:
        raise ShapeError(f"n_maps doit etre pair et >= 2, recu {n_maps}")
    half = n_maps // 2
    ce_1x1 = make_ce_conv(seed, f"{name}.ce_1x1", in_channels, half, 1, n_experts, "standard", reduction)
    ce_dw = make_ce_conv(seed, f"{name}.ce_dw", half, half, 3, n_experts, "depthwise", reduction)
    pointwise = T.he_normal(derive_rng(seed, "init", name, "pointwise"), (half, half, 1, 1), half,
                            f"{name}.pointwise")
    return AttentionBranch(ce_1x1=ce_1x1, ce_dw=ce_dw, pointwise=pointwise, name=name)


def extract(branch: AttentionBranch, x: T.Tensor, kind: str = "factual",
            provenance: str = "original") -> AttentionSet:
    """
    Calcule les M cartes d'une branche.

    Args:
        branch: Branche factuelle ou contrefactuelle
        x: Carte de caracteristiques [C,H,W]
        kind: "factual" ou "counterfactual" (etiquette du resultat)
        provenance: "original" ou "augmented"

    Returns:
        AttentionSet, M/2 premiers canaux du chemin 1x1, M/2 suivants du chemin depthwise
    """
    if x.data.ndim != 3 or x.shape[0] != branch.in_channels:
        raise ShapeError(f"extract: {branch.in_channels} canaux attendus, recu {list(x.shape)}")
    x_cross = ce_forward(branch.ce_1x1, x)
    x_depth = T.conv2d(ce_forward(branch.ce_dw, x_cross), branch.pointwise)
    maps = T.softplus(T.concat_channels(x_cross, x_depth))
    return AttentionSet(maps=maps, kind=kind, provenance=provenance)


def attention_pool(x: T.Tensor, a: T.Tensor) -> T.Tensor:
    """h[c] = moyenne spatiale de x[c] * a."""
    if x.data.ndim != 3 or a.data.ndim != 2 or x.shape[1:] != a.shape:
        raise ShapeError(f"attention_pool: x {list(x.shape)} et carte {list(a.shape)} incompatibles")
    return T.gap(T.elem_mul(x, a))


def static_counterfactual(kind: str, f: AttentionSet, rng: np.random.Generator) -> AttentionSet:
    """
    Attention contrefactuelle figee, calculee sans la branche contrefactuelle.

    random: uniformes i.i.d. dans [0,1) ; uniform: 1/(HW) partout ;
    reversed: max(F_i) - F_i par carte ; shuffle: positions de chaque carte permutees.
    Le resultat est detache de la bande.
    """
    if kind not in STATIC_KINDS:
        raise ShapeError(f"Contrefactuel statique inconnu: {kind}")
    data = f.maps.data
    m, h, w = data.shape
    if kind == "random":
        out = rng.uniform(0.0, 1.0, size=data.shape)
    elif kind == "uniform":
        out = np.full(data.shape, 1.0 / (h * w))
    elif kind == "reversed":
        out = data.max(axis=(1, 2), keepdims=True) - data
    else:
        perm = rng.permutation(h * w)
        out = data.reshape(m, h * w)[:, perm].reshape(m, h, w)
    return AttentionSet(maps=T.tensor(out), kind="counterfactual", provenance=f.provenance)
