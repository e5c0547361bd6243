"""
Moteur de tenseurs denses (float64) avec differentiation automatique en mode inverse.

Les operations enregistrees sur la bande (`Tape`) active portent chacune leur
regle locale de retropropagation. Hors d'un bloc `with Tape():` les operations
calculent sans rien enregistrer (mode inference).
"""

import contextvars

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage, special

from errors import ShapeError

_ACTIVE_TAPE = contextvars.ContextVar("cdal_active_tape", default=None)


class Tensor:
    """
    Tableau dense float64 ligne-majeure avec emplacement de gradient.

    Attributes:
        data: Tableau numpy float64
        grad: Gradient de meme forme (rempli par `backward` pour les feuilles)
        requires_grad: Vrai pour les parametres et les resultats qui en dependent
        node_id: Identifiant sur la bande courante (None hors bande)
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str = None):
        self.data = np.asarray(data, dtype=np.float64, order='C')
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self.node_id = None
        self.tape = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() sur un tenseur de forme {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self):
        label = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={list(self.shape)}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return elem_add(self, other)

    def __radd__(self, other):
        return elem_add(other, self)

    def __sub__(self, other):
        return elem_sub(self, other)

    def __rsub__(self, other):
        return elem_sub(other, self)

    def __mul__(self, other):
        return elem_mul(self, other)

    def __rmul__(self, other):
        return elem_mul(other, self)

    def __truediv__(self, other):
        return elem_div(self, other)

    def __neg__(self):
        return scale(self, -1.0)


class Tape:
    """
    Bande d'enregistrement : liste ordonnee (entrees, sortie, regle inverse).

    L'ordre d'enregistrement est topologique par construction : une sortie
    ne peut etre consommee qu'apres avoir ete produite. Une bande est
    confinee a un seul fil d'execution.
    """

    def __init__(self):
        self.records = []
        self.tensors = []
        self._token = None

    def __enter__(self):
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE_TAPE.reset(self._token)
        self._token = None
        return False

    def register(self, t: Tensor) -> int:
        if t.tape is not self:
            t.tape = self
            t.node_id = len(self.tensors)
            self.tensors.append(t)
        return t.node_id

    def record(self, inputs, output: Tensor, backward_fn):
        input_ids = [self.register(t) for t in inputs]
        output_id = self.register(output)
        self.records.append((input_ids, output_id, backward_fn))

    def leaves(self) -> list:
        produced = {output_id for _, output_id, _ in self.records}
        return [t for t in self.tensors if t.node_id not in produced]


def tensor(data, requires_grad: bool = False, name: str = None) -> Tensor:
    """Construit un tenseur feuille."""
    return Tensor(data, requires_grad=requires_grad, name=name)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _make(data, inputs, backward_fn) -> Tensor:
    out = Tensor(data)
    tape = _ACTIVE_TAPE.get()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(inputs, out, backward_fn)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: formes incompatibles {list(a.shape)} et {list(b.shape)}")


# ---------------------------------------------------------------------------
# Operations element par element
# ---------------------------------------------------------------------------

def elem_add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "elem_add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
    return _make(a.data + b.data, [a, b], backward)


def elem_sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "elem_sub")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)
    return _make(a.data - b.data, [a, b], backward)


def elem_mul(a, b) -> Tensor:
    """Produit de Hadamard avec diffusion numpy (ex. [C,H,W] * [H,W])."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "elem_mul")

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)
    return _make(a.data * b.data, [a, b], backward)


def elem_div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "elem_div")
    out = a.data / b.data

    def backward(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)
    return _make(out, [a, b], backward)


def scale(x: Tensor, c: float) -> Tensor:
    """Multiplication par une constante."""
    c = float(c)

    def backward(g):
        return (g * c,)
    return _make(x.data * c, [x], backward)


def sigmoid(x: Tensor) -> Tensor:
    out = special.expit(x.data)

    def backward(g):
        return (g * out * (1.0 - out),)
    return _make(out, [x], backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g):
        return (g * mask,)
    return _make(np.where(mask, x.data, 0.0), [x], backward)


def softplus(x: Tensor) -> Tensor:
    """ln(1 + e^z), branche stable pour z grand."""
    out = np.logaddexp(0.0, x.data)

    def backward(g):
        return (g * special.expit(x.data),)
    return _make(out, [x], backward)


def softmax(x: Tensor) -> Tensor:
    """Softmax sur le dernier axe."""
    p = special.softmax(x.data, axis=-1)

    def backward(g):
        return (p * (g - np.sum(g * p, axis=-1, keepdims=True)),)
    return _make(p, [x], backward)


def log_softmax(x: Tensor) -> Tensor:
    """Log-softmax sur le dernier axe."""
    out = special.log_softmax(x.data, axis=-1)
    p = np.exp(out)

    def backward(g):
        return (g - p * np.sum(g, axis=-1, keepdims=True),)
    return _make(out, [x], backward)


# ---------------------------------------------------------------------------
# Reductions, selection, assemblage
# ---------------------------------------------------------------------------

def sum_all(x: Tensor) -> Tensor:
    def backward(g):
        return (np.broadcast_to(g, x.shape).copy(),)
    return _make(np.sum(x.data), [x], backward)


def mean_abs(x: Tensor) -> Tensor:
    """Moyenne des valeurs absolues sur toutes les entrees."""
    n = x.size

    def backward(g):
        return (np.sign(x.data) * (float(g) / n),)
    return _make(np.mean(np.abs(x.data)), [x], backward)


def max_all(x: Tensor) -> Tensor:
    """Maximum global ; le gradient va a la premiere position maximale."""
    flat_index = int(np.argmax(x.data))

    def backward(g):
        grad = np.zeros(x.size)
        grad[flat_index] = float(g)
        return (grad.reshape(x.shape),)
    return _make(x.data.reshape(-1)[flat_index], [x], backward)


def take(x: Tensor, index: int) -> Tensor:
    """Selectionne x[index] selon le premier axe."""
    if not 0 <= index < x.shape[0]:
        raise ShapeError(f"take: indice {index} hors de [0, {x.shape[0]})")

    def backward(g):
        grad = np.zeros(x.shape)
        grad[index] = g
        return (grad,)
    return _make(x.data[index], [x], backward)


def channel_mean(x: Tensor) -> Tensor:
    """Moyenne sur le premier axe : [M,H,W] -> [H,W]."""
    m = x.shape[0]

    def backward(g):
        return (np.broadcast_to(g / m, x.shape).copy(),)
    return _make(np.mean(x.data, axis=0), [x], backward)


def channel_sum(x: Tensor) -> Tensor:
    """Somme sur le premier axe : [M,H,W] -> [H,W]."""
    def backward(g):
        return (np.broadcast_to(g, x.shape).copy(),)
    return _make(np.sum(x.data, axis=0), [x], backward)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatene [Ca,H,W] et [Cb,H,W] en [Ca+Cb,H,W], blocs preserves."""
    if a.data.ndim != 3 or b.data.ndim != 3 or a.shape[1:] != b.shape[1:]:
        raise ShapeError(f"concat_channels: formes incompatibles {list(a.shape)} et {list(b.shape)}")
    ca = a.shape[0]

    def backward(g):
        return g[:ca], g[ca:]
    return _make(np.concatenate([a.data, b.data], axis=0), [a, b], backward)


def weighted_sum(alpha: Tensor, items: list) -> Tensor:
    """Σ_i alpha_i * items_i ; differentiable par rapport a alpha et a chaque item."""
    if alpha.data.ndim != 1 or alpha.shape[0] != len(items):
        raise ShapeError(f"weighted_sum: {alpha.shape} poids pour {len(items)} termes")
    shape = items[0].shape
    if any(t.shape != shape for t in items):
        raise ShapeError("weighted_sum: tous les termes doivent partager une forme")
    stacked = np.stack([t.data for t in items])
    out = np.tensordot(alpha.data, stacked, axes=1)

    def backward(g):
        grad_alpha = np.tensordot(stacked, g, axes=g.ndim).reshape(alpha.shape)
        return (grad_alpha,) + tuple(alpha.data[i] * g for i in range(len(items)))
    return _make(out, [alpha] + list(items), backward)


def linear(x: Tensor, w: Tensor, b: Tensor = None) -> Tensor:
    """y = W x + b pour x de forme [d_in], W de forme [d_out, d_in]."""
    if x.data.ndim != 1 or w.data.ndim != 2 or w.shape[1] != x.shape[0]:
        raise ShapeError(f"linear: x {list(x.shape)} incompatible avec W {list(w.shape)}")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError(f"linear: biais {list(b.shape)} pour {w.shape[0]} sorties")
    out = w.data @ x.data
    if b is not None:
        out = out + b.data
    inputs = [x, w] if b is None else [x, w, b]

    def backward(g):
        grads = (w.data.T @ g, np.outer(g, x.data))
        return grads if b is None else grads + (g,)
    return _make(out, inputs, backward)


# ---------------------------------------------------------------------------
# Convolutions (padding "same" par zeros, pas de 1) et pooling
# ---------------------------------------------------------------------------

def _windows(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """Fenetres glissantes [C,H,W,kh,kw] sur x complete de zeros."""
    ph, pw = kh // 2, kw // 2
    padded = np.pad(x, ((0, 0), (ph, ph), (pw, pw)))
    return sliding_window_view(padded, (kh, kw), axis=(1, 2))


def _check_kernel(kh: int, kw: int, op: str):
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"{op}: noyau {kh}x{kw} ; tailles impaires requises")


def conv2d(x: Tensor, w: Tensor) -> Tensor:
    """
    Correlation croisee standard.

    Args:
        x: Entree [C_in,H,W]
        w: Noyau [C_out,C_in,kH,kW] (kH, kW impairs)

    Returns:
        Sortie [C_out,H,W]
    """
    if x.data.ndim != 3 or w.data.ndim != 4 or w.shape[1] != x.shape[0]:
        raise ShapeError(f"conv2d: x {list(x.shape)} incompatible avec w {list(w.shape)}")
    kh, kw = w.shape[2], w.shape[3]
    _check_kernel(kh, kw, "conv2d")
    win = _windows(x.data, kh, kw)
    out = np.tensordot(w.data, win, axes=([1, 2, 3], [0, 3, 4]))

    def backward(g):
        grad_w = np.tensordot(g, win, axes=([1, 2], [1, 2]))
        flipped = np.ascontiguousarray(w.data[:, :, ::-1, ::-1])
        grad_x = np.tensordot(flipped, _windows(g, kh, kw), axes=([0, 2, 3], [0, 3, 4]))
        return grad_x, grad_w
    return _make(out, [x, w], backward)


def depthwise_conv2d(x: Tensor, w: Tensor) -> Tensor:
    """
    Convolution par canal.

    Args:
        x: Entree [C,H,W]
        w: Noyaux [C,kH,kW]

    Returns:
        Sortie [C,H,W]
    """
    if x.data.ndim != 3 or w.data.ndim != 3 or w.shape[0] != x.shape[0]:
        raise ShapeError(f"depthwise_conv2d: x {list(x.shape)} incompatible avec w {list(w.shape)}")
    kh, kw = w.shape[1], w.shape[2]
    _check_kernel(kh, kw, "depthwise_conv2d")
    win = _windows(x.data, kh, kw)
    out = np.einsum('chwij,cij->chw', win, w.data)

    def backward(g):
        grad_w = np.einsum('chw,chwij->cij', g, win)
        flipped = w.data[:, ::-1, ::-1]
        grad_x = np.einsum('chwij,cij->chw', _windows(g, kh, kw), flipped)
        return grad_x, grad_w
    return _make(out, [x, w], backward)


def gap(x: Tensor) -> Tensor:
    """Pooling moyen global : [C,H,W] -> [C]."""
    if x.data.ndim != 3:
        raise ShapeError(f"gap: tenseur [C,H,W] attendu, recu {list(x.shape)}")
    _, h, w = x.shape

    def backward(g):
        return (np.broadcast_to(g[:, None, None] / (h * w), x.shape).copy(),)
    return _make(np.mean(x.data, axis=(1, 2)), [x], backward)


def avg_pool2x2(x: Tensor) -> Tensor:
    """Pooling moyen 2x2 de pas 2 : [C,H,W] -> [C,H/2,W/2]."""
    c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avg_pool2x2: dimensions spatiales paires requises, recu {list(x.shape)}")
    out = x.data.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4))

    def backward(g):
        return (np.repeat(np.repeat(g, 2, axis=1), 2, axis=2) / 4.0,)
    return _make(out, [x], backward)


def _box_adjoint(g: np.ndarray, axis: int) -> np.ndarray:
    # transposee du filtre 3 a bords repliques : zeros au bord, puis les bords recoivent leur propre tiers
    out = ndimage.uniform_filter1d(g, 3, axis=axis, mode='constant')
    first = [slice(None)] * g.ndim
    last = [slice(None)] * g.ndim
    first[axis], last[axis] = 0, -1
    out[tuple(first)] += g[tuple(first)] / 3.0
    out[tuple(last)] += g[tuple(last)] / 3.0
    return out


def box_blur(x: Tensor, passes: int = 1) -> Tensor:
    """Flou boite 3x3 par canal, bords repliques : [C,H,W] -> [C,H,W] ; un champ constant reste constant."""
    if x.data.ndim != 3:
        raise ShapeError(f"box_blur: tenseur [C,H,W] attendu, recu {list(x.shape)}")
    out = x.data
    for _ in range(passes):
        out = ndimage.uniform_filter(out, size=(1, 3, 3), mode='nearest')

    def backward(g):
        for _ in range(passes):
            g = _box_adjoint(_box_adjoint(g, 2), 1)
        return (g,)
    return _make(out, [x], backward)


# ---------------------------------------------------------------------------
# Retropropagation
# ---------------------------------------------------------------------------

def backward(loss: Tensor):
    """
    Retropropage depuis une perte scalaire.

    Remplit `grad` pour chaque feuille de la bande qui requiert un gradient
    (zeros si la feuille n'est pas atteinte).

    Args:
        loss: Tenseur scalaire enregistre sur une bande
    """
    if loss.size != 1:
        raise ShapeError(f"backward: perte scalaire attendue, recu {list(loss.shape)}")
    tape = loss.tape
    if tape is None or not loss.requires_grad:
        raise ShapeError("backward: la perte n'est pas enregistree sur une bande")

    grads = {loss.node_id: np.ones(loss.shape)}
    for input_ids, output_id, backward_fn in reversed(tape.records):
        g = grads.pop(output_id, None)
        if g is None:
            continue
        for node_id, input_grad in zip(input_ids, backward_fn(g)):
            if input_grad is None:
                continue
            if node_id in grads:
                grads[node_id] = grads[node_id] + input_grad
            else:
                grads[node_id] = input_grad

    for leaf in tape.leaves():
        if leaf.requires_grad:
            grad = grads.get(leaf.node_id)
            leaf.grad = np.zeros(leaf.shape) if grad is None else np.asarray(grad, dtype=np.float64).reshape(leaf.shape)


# ---------------------------------------------------------------------------
# Parametres
# ---------------------------------------------------------------------------

def parameter(data, name: str = None) -> Tensor:
    """Feuille entrainable."""
    return Tensor(data, requires_grad=True, name=name)


def he_normal(rng: np.random.Generator, shape: tuple, fan_in: int, name: str = None) -> Tensor:
    """Initialisation de He : N(0, 2 / fan_in)."""
    return parameter(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape), name)
