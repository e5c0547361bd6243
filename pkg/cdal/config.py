"""
Configuration du laboratoire : variables d'environnement (.env) + configuration de run.

La configuration de run est un dictionnaire plat a cles pointees
(`train.epochs`, `aug.noise_sigma`, ...). Precedence :
valeurs par defaut < fichier JSON < options `--set cle=valeur` < `--seed`.
"""

import hashlib
import json
import os
from pathlib import Path

from dotenv import load_dotenv

from errors import ConfigError

# Charger .env depuis le dossier parent (racine du projet)
env_path = Path(__file__).parent.parent / ".env"
load_dotenv(env_path)


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name, "").strip()
    if not raw:
        return default
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"Variable d'environnement {name} invalide: {raw!r}")


CDAL_THREADS = max(1, _env_int("CDAL_THREADS", 1))
VERBOSE = _env_int("CDAL_VERBOSE", 1) != 0


COUNTERFACTUAL_MODES = ("learned", "random", "uniform", "reversed", "shuffle")

# cle -> (valeur par defaut, description)
DEFAULTS = {
    "seed": (0, "graine unique dont derivent toutes les sous-graines"),

    "data.height": (32, "hauteur des images synthetiques"),
    "data.width": (32, "largeur des images synthetiques"),
    "data.known_generators": (4, "nombre de generateurs connus (etiquetes)"),
    "data.novel_generators": (4, "nombre de generateurs nouveaux (non etiquetes)"),
    "data.samples_per_class": (200, "echantillons par generateur et par partition"),
    "data.identities": (32, "taille du pool d'identites sources partagees"),
    "data.sensor_noise": (0.01, "ecart-type du bruit capteur i.i.d."),
    "data.amplitude_min": (0.06, "amplitude minimale de l'artefact sinusoidal"),
    "data.amplitude_max": (0.12, "amplitude maximale de l'artefact sinusoidal"),

    "model.n_experts": (4, "nombre de noyaux experts par convolution CE"),
    "model.n_maps": (8, "nombre M de cartes d'attention (pair)"),
    "model.reduction": (4, "ratio de reduction r du MLP de porte"),

    "train.epochs": (30, "nombre d'epoques"),
    "train.batch_size": (32, "taille de batch"),
    "train.learning_rate": (0.01, "pas de la SGD"),
    "train.momentum": (0.9, "momentum de la SGD"),
    "train.grad_clip": (1.0, "norme globale maximale du gradient (0 desactive)"),
    "train.cdal_enabled": (True, "active les pertes CDAL (causal, decor, aug)"),
    "train.counterfactual_mode": ("learned", "learned | random | uniform | reversed | shuffle"),
    "train.vanilla_attention": (False, "controle : attention factuelle seule, sans CDAL"),
    "train.augment_enabled": (True, "active l'augmentation causale des attentions"),

    "loss.eta1": (1.0, "poids de L_causal"),
    "loss.eta2": (0.5, "poids de L_decor"),
    "loss.eta3": (0.5, "poids de L_aug"),

    "aug.noise_sigma": (0.05, "ecart-type du bruit additif"),
    "aug.blur_passes": (1, "nombre de flous boite 3x3"),
    "aug.scale_lo": (0.9, "borne basse du facteur d'echelle global"),
    "aug.scale_hi": (1.1, "borne haute du facteur d'echelle global"),

    "eval.kmeans_restarts": (10, "redemarrages K-Means (meilleure inertie)"),
}


def default_config() -> dict:
    """Retourne une copie de la configuration par defaut."""
    return {key: value for key, (value, _) in DEFAULTS.items()}


def describe_keys() -> str:
    """Texte listant chaque cle avec sa valeur par defaut (pour --help)."""
    lines = ["cles de configuration (defaut) :"]
    for key, (value, description) in DEFAULTS.items():
        lines.append(f"  {key} = {json.dumps(value)}  -- {description}")
    return "\n".join(lines)


def _coerce(key: str, value):
    default = DEFAULTS[key][0]
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{key}: booleen attendu, recu {value!r}")
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: entier attendu, recu {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: nombre attendu, recu {value!r}")
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"{key}: chaine attendue, recu {value!r}")
    return value


def merge(base: dict, updates: dict) -> dict:
    """Fusionne des valeurs dans une configuration, en rejetant les cles inconnues."""
    merged = dict(base)
    for key, value in updates.items():
        if key not in DEFAULTS:
            raise ConfigError(f"Cle de configuration inconnue: {key}")
        merged[key] = _coerce(key, value)
    return merged


def parse_override(text: str) -> tuple:
    """Decoupe `cle=valeur` ; la valeur est lue en JSON, sinon gardee comme chaine."""
    if "=" not in text:
        raise ConfigError(f"Option --set invalide (cle=valeur attendu): {text}")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def load_config(path=None, overrides=None, seed=None) -> dict:
    """
    Construit la configuration de run.

    Args:
        path: Fichier JSON a cles pointees (optionnel)
        overrides: Liste de chaines `cle=valeur`
        seed: Graine prioritaire (option --seed)

    Returns:
        Configuration validee
    """
    cfg = default_config()
    if path:
        try:
            with open(path, 'r', encoding='utf-8') as f:
                from_file = json.load(f)
        except FileNotFoundError:
            raise ConfigError(f"Fichier de configuration introuvable: {path}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"Configuration JSON malformee: {e}")
        if not isinstance(from_file, dict):
            raise ConfigError("La configuration JSON doit etre un objet")
        cfg = merge(cfg, from_file)
    if overrides:
        cfg = merge(cfg, dict(parse_override(o) for o in overrides))
    if seed is not None:
        cfg = merge(cfg, {"seed": seed})
    validate(cfg)
    return cfg


def validate(cfg: dict):
    """Verifie les invariants croises de la configuration."""
    positive = ["data.height", "data.width", "data.samples_per_class", "data.identities",
                "model.n_experts", "model.n_maps", "model.reduction", "train.batch_size",
                "train.learning_rate", "eval.kmeans_restarts"]
    for key in positive:
        if cfg[key] <= 0:
            raise ConfigError(f"{key} doit etre strictement positif")
    for key in ["data.known_generators", "data.novel_generators", "train.epochs", "aug.blur_passes"]:
        if cfg[key] < 0:
            raise ConfigError(f"{key} doit etre positif ou nul")
    if cfg["model.n_maps"] % 2:
        raise ConfigError("model.n_maps doit etre pair")
    if cfg["train.counterfactual_mode"] not in COUNTERFACTUAL_MODES:
        raise ConfigError(f"train.counterfactual_mode inconnu: {cfg['train.counterfactual_mode']}")
    for key in ["loss.eta1", "loss.eta2", "loss.eta3", "aug.noise_sigma", "data.sensor_noise", "train.grad_clip"]:
        if cfg[key] < 0:
            raise ConfigError(f"{key} doit etre positif ou nul")
    if not 0 < cfg["aug.scale_lo"] <= cfg["aug.scale_hi"]:
        raise ConfigError("aug.scale_lo/scale_hi : 0 < lo <= hi requis")
    if not 0 < cfg["data.amplitude_min"] <= cfg["data.amplitude_max"]:
        raise ConfigError("data.amplitude_min/max : 0 < min <= max requis")
    if not 0 <= cfg["train.momentum"] < 1:
        raise ConfigError("train.momentum doit etre dans [0, 1)")


def config_digest(cfg: dict) -> str:
    """Empreinte SHA-256 (16 hex) de la configuration canonique."""
    canonical = json.dumps(cfg, sort_keys=True)
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()[:16]
