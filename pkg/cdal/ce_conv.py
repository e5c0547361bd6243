"""
Convolution CE (Causal Expert) : noyau dynamique, melange de noyaux experts
pondere par une porte alpha = sigmoid(MLP(Pool(X))).
"""

from dataclasses import dataclass, field

import numpy as np

import tensor as T
from errors import ShapeError
from utils import derive_rng

MODES = ("standard", "depthwise")


@dataclass
class CEConvLayer:
    """
    Couche CE.

    Attributes:
        experts: N_exp noyaux [C_out,C_in,kH,kW] (standard) ou [C,kH,kW] (depthwise)
        gate_w1, gate_b1: Premiere couche du MLP de porte (C_in -> C_in/r)
        gate_w2, gate_b2: Seconde couche (C_in/r -> N_exp)
        mode: "standard" ou "depthwise"
    """

    experts: list
    gate_w1: T.Tensor
    gate_b1: T.Tensor
    gate_w2: T.Tensor
    gate_b2: T.Tensor
    mode: str = "standard"
    name: str = field(default="ce")

    def __post_init__(self):
        if self.mode not in MODES:
            raise ShapeError(f"Mode CE inconnu: {self.mode}")
        if not self.experts:
            raise ShapeError("Une couche CE demande au moins un expert")
        shape = self.experts[0].shape
        if any(w.shape != shape for w in self.experts):
            raise ShapeError("Tous les experts doivent partager la meme forme")

    @property
    def n_experts(self) -> int:
        return len(self.experts)

    @property
    def in_channels(self) -> int:
        return self.gate_w1.shape[1]

    def parameters(self) -> dict:
        params = {f"{self.name}.expert{i}": w for i, w in enumerate(self.experts)}
        params.update({
            f"{self.name}.gate_w1": self.gate_w1,
            f"{self.name}.gate_b1": self.gate_b1,
            f"{self.name}.gate_w2": self.gate_w2,
            f"{self.name}.gate_b2": self.gate_b2,
        })
        return params


def make_ce_conv(seed: int, name: str, in_channels: int, out_channels: int, kernel: int,
                 n_experts: int = 4, mode: str = "standard", reduction: int = 4) -> CEConvLayer:
    """
    Construit une couche CE initialisee (He, graine distincte par expert, biais nuls).

    Args:
        seed: Graine du run
        name: Prefixe des parametres (adresse aussi les sous-graines)
        in_channels: Canaux d'entree
        out_channels: Canaux de sortie (ignore en depthwise, egal a in_channels)
        kernel: Taille impaire du noyau
        n_experts: Nombre de noyaux experts
        mode: "standard" ou "depthwise"
        reduction: Ratio r du MLP de porte

    Returns:
        CEConvLayer
    """
    if n_experts < 1:
        raise ShapeError("n_experts doit etre >= 1")
    if mode == "depthwise":
        shape, fan_in = (in_channels, kernel, kernel), kernel * kernel
    else:
        shape, fan_in = (out_channels, in_channels, kernel, kernel), in_channels * kernel * kernel
    experts = [T.he_normal(derive_rng(seed, "init", name, "expert", i), shape, fan_in, f"{name}.expert{i}")
               for i in range(n_experts)]
    hidden = max(1, in_channels // reduction)
    return CEConvLayer(
        experts=experts,
        gate_w1=T.he_normal(derive_rng(seed, "init", name, "gate_w1"), (hidden, in_channels), in_channels,
                            f"{name}.gate_w1"),
        gate_b1=T.parameter(np.zeros(hidden), f"{name}.gate_b1"),
        gate_w2=T.he_normal(derive_rng(seed, "init", name, "gate_w2"), (n_experts, hidden), hidden,
                            f"{name}.gate_w2"),
        gate_b2=T.parameter(np.zeros(n_experts), f"{name}.gate_b2"),
        mode=mode,
        name=name,
    )


def gate(layer: CEConvLayer, x: T.Tensor) -> T.Tensor:
    """alpha = sigmoid(W2 relu(W1 gap(x) + b1) + b2), dans (0,1)^N_exp."""
    if x.data.ndim != 3 or x.shape[0] != layer.in_channels:
        raise ShapeError(f"gate: {layer.in_channels} canaux attendus, recu {list(x.shape)}")
    hidden = T.relu(T.linear(T.gap(x), layer.gate_w1, layer.gate_b1))
    return T.sigmoid(T.linear(hidden, layer.gate_w2, layer.gate_b2))


def mixed_kernel(layer: CEConvLayer, alpha: T.Tensor) -> T.Tensor:
    """W' = Σ_i alpha_i W_i."""
    return T.weighted_sum(alpha, layer.experts)


def ce_forward(layer: CEConvLayer, x: T.Tensor) -> T.Tensor:
    """Applique la convolution au noyau dynamique W' construit pour cette entree."""
    kernel = mixed_kernel(layer, gate(layer, x))
    if layer.mode == "depthwise":
        return T.depthwise_conv2d(x, kernel)
    return T.conv2d(x, kernel)
