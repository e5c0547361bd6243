"""
Verification des gradients par differences finies centrees.
Contient aussi le registre des operations differentiables verifiees par `gradcheck`.
"""

import numpy as np

import tensor as T
from config import default_config, merge
from errors import ShapeError
from model import CDALModel
from trainer import compute_batch_loss
from utils import derive_rng


def finite_diff_check(f, x: T.Tensor, eps: float = 1e-5) -> float:
    """
    Compare le gradient de `backward` aux differences centrees, coordonnee par coordonnee.

    Args:
        f: Fonction Tensor -> Tensor scalaire (reconstruit son graphe a chaque appel)
        x: Tenseur par rapport auquel deriver (ses donnees sont perturbees puis restaurees)
        eps: Pas des differences finies

    Returns:
        Pire erreur relative, denominateur max(|analytique|, |numerique|, 1e-8)
    """
    original = x.data.copy()
    saved_flag = x.requires_grad
    x.requires_grad = True
    try:
        with T.Tape():
            loss = f(x)
            if loss.size != 1:
                raise ShapeError(f"finite_diff_check: f doit etre scalaire, recu {list(loss.shape)}")
            T.backward(loss)
        analytic = x.grad.reshape(-1).copy()

        numeric = np.zeros(x.size)
        flat = original.reshape(-1)
        for i in range(x.size):
            bumped = flat.copy()
            bumped[i] += eps
            x.data = bumped.reshape(original.shape)
            plus = f(x).item()
            bumped[i] -= 2 * eps
            x.data = bumped.reshape(original.shape)
            minus = f(x).item()
            numeric[i] = (plus - minus) / (2 * eps)
    finally:
        x.data = original
        x.requires_grad = saved_flag

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom)) if x.size else 0.0


def _weights(rng, size: int) -> np.ndarray:
    return rng.normal(size=size)


def _case_conv2d(rng):
    cin, cout, h, k = rng.integers(1, 3), rng.integers(1, 3), rng.integers(2, 5), int(rng.choice([1, 3]))
    w = T.tensor(rng.normal(size=(cout, cin, k, k)))
    proj = _weights(rng, (cout, h, h))
    return rng.normal(size=(cin, h, h)), lambda x: T.sum_all(T.elem_mul(T.conv2d(x, w), proj))


def _case_conv2d_kernel(rng):
    cin, cout, h = rng.integers(1, 3), rng.integers(1, 3), rng.integers(2, 5)
    x = T.tensor(rng.normal(size=(cin, h, h)))
    proj = _weights(rng, (cout, h, h))
    return rng.normal(size=(cout, cin, 3, 3)), lambda w: T.sum_all(T.elem_mul(T.conv2d(x, w), proj))


def _case_depthwise(rng):
    c, h = rng.integers(1, 4), rng.integers(2, 5)
    w = T.tensor(rng.normal(size=(c, 3, 3)))
    proj = _weights(rng, (c, h, h))
    return rng.normal(size=(c, h, h)), lambda x: T.sum_all(T.elem_mul(T.depthwise_conv2d(x, w), proj))


def _case_depthwise_kernel(rng):
    c, h = rng.integers(1, 4), rng.integers(2, 5)
    x = T.tensor(rng.normal(size=(c, h, h)))
    proj = _weights(rng, (c, h, h))
    return rng.normal(size=(c, 3, 3)), lambda w: T.sum_all(T.elem_mul(T.depthwise_conv2d(x, w), proj))


def _case_gap(rng):
    c, h = rng.integers(1, 4), rng.integers(1, 4)
    proj = _weights(rng, c)
    return rng.normal(size=(c, h, h)), lambda x: T.sum_all(T.elem_mul(T.gap(x), proj))


def _case_avg_pool(rng):
    c, h = rng.integers(1, 3), 2 * rng.integers(1, 3)
    proj = _weights(rng, (c, h // 2, h // 2))
    return rng.normal(size=(c, h, h)), lambda x: T.sum_all(T.elem_mul(T.avg_pool2x2(x), proj))


def _case_linear(rng):
    din, dout = rng.integers(1, 5), rng.integers(1, 5)
    w = T.tensor(rng.normal(size=(dout, din)))
    b = T.tensor(rng.normal(size=dout))
    proj = _weights(rng, dout)
    return rng.normal(size=din), lambda x: T.sum_all(T.elem_mul(T.linear(x, w, b), proj))


def _case_linear_weight(rng):
    din, dout = rng.integers(1, 5), rng.integers(1, 5)
    x = T.tensor(rng.normal(size=din))
    proj = _weights(rng, dout)
    return rng.normal(size=(dout, din)), lambda w: T.sum_all(T.elem_mul(T.linear(x, w), proj))


def _unary(op, low=-2.0, high=2.0, avoid_zero=False):
    def case(rng):
        shape = tuple(rng.integers(1, 4, size=rng.integers(1, 3)))
        x = rng.uniform(low, high, size=shape)
        if avoid_zero:
            x = np.where(np.abs(x) < 0.1, 0.5, x)
        proj = _weights(rng, shape)
        return x, lambda t: T.sum_all(T.elem_mul(op(t), proj))
    return case


def _binary(op, positive_other=False):
    def case(rng):
        shape = (rng.integers(1, 4), rng.integers(1, 4))
        other = rng.uniform(0.5, 2.0, size=shape) if positive_other else rng.normal(size=shape)
        other_t = T.tensor(other)
        proj = _weights(rng, shape)
        return rng.normal(size=shape), lambda t: T.sum_all(T.elem_mul(op(other_t, t), proj))
    return case


def _case_softmax_ce(rng):
    k = rng.integers(2, 6)
    label = int(rng.integers(0, k))
    return rng.normal(size=k), lambda t: T.scale(T.take(T.log_softmax(t), label), -1.0)


def _case_concat(rng):
    h = rng.integers(1, 4)
    other = T.tensor(rng.normal(size=(2, h, h)))
    proj = _weights(rng, (3, h, h))
    return rng.normal(size=(1, h, h)), lambda t: T.sum_all(T.elem_mul(T.concat_channels(t, other), proj))


def _case_weighted_sum(rng):
    n = rng.integers(1, 4)
    items = [T.tensor(rng.normal(size=(2, 3))) for _ in range(n)]
    proj = _weights(rng, (2, 3))
    return rng.normal(size=n), lambda a: T.sum_all(T.elem_mul(T.weighted_sum(a, items), proj))


def _case_mean_abs(rng):
    shape = (rng.integers(1, 4), rng.integers(1, 4))
    x = rng.uniform(0.2, 2.0, size=shape) * rng.choice([-1.0, 1.0], size=shape)
    return x, T.mean_abs


def _case_channel_mean(rng):
    m, h = rng.integers(1, 4), rng.integers(1, 4)
    proj = _weights(rng, (h, h))
    return rng.normal(size=(m, h, h)), lambda t: T.sum_all(T.elem_mul(T.channel_mean(t), proj))


def _case_box_blur(rng):
    c, h, w = rng.integers(1, 3), rng.integers(1, 5), rng.integers(1, 5)
    passes = int(rng.integers(1, 3))
    proj = _weights(rng, (c, h, w))
    return rng.normal(size=(c, h, w)), lambda x: T.sum_all(T.elem_mul(T.box_blur(x, passes), proj))


def _case_max_all(rng):
    shape = (rng.integers(2, 5),)
    x = np.arange(shape[0], dtype=float) + rng.uniform(0, 0.5, size=shape)
    return rng.permutation(x), lambda t: T.scale(T.max_all(t), 3.0)


# nom -> constructeur (rng) -> (donnees x, fonction scalaire de x)
OP_CHECKS = {
    "conv2d": _case_conv2d,
    "conv2d[w]": _case_conv2d_kernel,
    "depthwise_conv2d": _case_depthwise,
    "depthwise_conv2d[w]": _case_depthwise_kernel,
    "gap": _case_gap,
    "avg_pool2x2": _case_avg_pool,
    "box_blur": _case_box_blur,
    "linear": _case_linear,
    "linear[w]": _case_linear_weight,
    "sigmoid": _unary(T.sigmoid),
    "relu": _unary(T.relu, avoid_zero=True),
    "softplus": _unary(T.softplus, low=-5.0, high=5.0),
    "softmax": _unary(T.softmax),
    "log_softmax": _unary(T.log_softmax),
    "softmax_ce": _case_softmax_ce,
    "elem_mul": _binary(T.elem_mul),
    "elem_add": _binary(T.elem_add),
    "elem_sub": _binary(T.elem_sub),
    "elem_div": _binary(lambda other, t: T.elem_div(t, other), positive_other=True),
    "concat_channels": _case_concat,
    "weighted_sum": _case_weighted_sum,
    "mean_abs": _case_mean_abs,
    "channel_mean": _case_channel_mean,
    "max_all": _case_max_all,
}


def run_op_checks(seed: int = 0, shapes: int = 5, eps: float = 1e-5, tolerance: float = 1e-5) -> list:
    """
    Verifie chaque operation enregistree sur `shapes` formes aleatoires.

    Returns:
        Liste de dicts {op, max_rel_error, passed}
    """
    rows = []
    for name, build in OP_CHECKS.items():
        worst = 0.0
        for trial in range(shapes):
            rng = derive_rng(seed, "gradcheck", name, trial)
            data, fn = build(rng)
            worst = max(worst, finite_diff_check(fn, T.tensor(data), eps))
        rows.append({"op": name, "max_rel_error": worst, "passed": worst < tolerance})
    return rows


def miniature_config(seed: int = 0) -> dict:
    """Configuration reduite pour la verification de bout en bout (images 8x8, batch 2)."""
    return merge(default_config(), {
        "seed": seed,
        "data.height": 8,
        "data.width": 8,
        "data.known_generators": 2,
        "model.n_maps": 4,
        "model.n_experts": 2,
        "train.batch_size": 2,
    })


def check_pipeline(seed: int = 0, eps: float = 1e-5, tolerance: float = 1e-4, cfg: dict = None) -> list:
    """
    Verifie le gradient de la perte totale d'un batch par rapport a chaque parametre du modele.

    Le generateur du batch est recree a chaque evaluation, de sorte que bruit
    d'augmentation et indices tires restent identiques d'une evaluation a l'autre.
    Un tenseur en echec est reverifie avec un pas dix fois plus petit : un coude
    de relu franchi dans [-eps, eps] fausse la difference centree.

    Returns:
        Liste de dicts {op: "pipeline[nom]", max_rel_error, passed}
    """
    cfg = cfg or miniature_config(seed)
    model = CDALModel(cfg, cfg["data.known_generators"])
    rng = derive_rng(seed, "gradcheck", "pipeline", "batch")
    shape = (3, cfg["data.height"], cfg["data.width"])
    batch = [(rng.uniform(0.0, 1.0, size=shape), i % model.n_classes) for i in range(cfg["train.batch_size"])]

    def loss(_param):
        total, _ = compute_batch_loss(model, batch, cfg, derive_rng(seed, "gradcheck", "pipeline", "step"))
        return total

    rows = []
    for name, param in model.parameters().items():
        error = finite_diff_check(loss, param, eps)
        if error >= tolerance:
            error = min(error, finite_diff_check(loss, param, eps / 10))
        rows.append({"op": f"pipeline[{name}]", "max_rel_error": error, "passed": error < tolerance})
    return rows
