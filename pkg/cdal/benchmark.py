"""
Banc d'essai synthetique d'attribution en monde ouvert.

Chaque identite source fournit un contenu basse frequence partage par tous les
generateurs (le biais de source) ; chaque generateur ajoute un artefact
sinusoidal discret, localise par un masque. Les generateurs connus fournissent
la partition etiquetee, les connus et les nouveaux la partition non etiquetee.
"""

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

import tensor as T
from config import config_digest
from errors import ConfigError, DataError
from tensor_io import read_tensor_stream, write_tensor_stream
from utils import derive_rng, ensure_dir, log

MASKS = ("quadrant", "full", "border")
ODD_FREQUENCIES = (1, 3, 5, 7)
CONTENT_TERMS = 3
CONTENT_LOW, CONTENT_HIGH = 0.2, 0.8
MAX_AMPLITUDE_RATIO = 0.3
DATA_KEYS = ("seed", "data.height", "data.width", "data.known_generators", "data.novel_generators",
             "data.samples_per_class", "data.identities", "data.sensor_noise",
             "data.amplitude_min", "data.amplitude_max")


@dataclass(frozen=True)
class GeneratorSpec:
    """Empreinte d'un generateur : sinusoide (fx, fy) d'amplitude donnee, restreinte a un masque."""

    gen_id: int
    fx: int
    fy: int
    amplitude: float
    mask: str
    phase_seed: int

    def __post_init__(self):
        if self.mask not in MASKS:
            raise ConfigError(f"Masque inconnu: {self.mask}")
        if not 0 < self.amplitude <= MAX_AMPLITUDE_RATIO * (CONTENT_HIGH - CONTENT_LOW):
            raise ConfigError(f"Amplitude {self.amplitude} nulle ou trop forte (artefact discret exige)")

    @property
    def phase(self) -> float:
        return float(np.random.default_rng(self.phase_seed).uniform(0.0, 2 * np.pi))

    def mask_array(self, height: int, width: int) -> np.ndarray:
        """Masque booleen [H,W] ou vit l'artefact."""
        mask = np.zeros((height, width), dtype=bool)
        if self.mask == "full":
            mask[:] = True
        elif self.mask == "border":
            band = max(1, height // 8)
            mask[:band, :] = mask[-band:, :] = True
            mask[:, :band] = mask[:, -band:] = True
        else:
            quadrant = self.gen_id % 4
            rows = slice(0, height // 2) if quadrant < 2 else slice(height // 2, height)
            cols = slice(0, width // 2) if quadrant % 2 == 0 else slice(width // 2, width)
            mask[rows, cols] = True
        return mask

    def pattern(self, height: int, width: int) -> np.ndarray:
        """amplitude * sin(2 pi (fx x / W + fy y / H) + phase), nul hors du masque."""
        y, x = np.mgrid[0:height, 0:width]
        wave = np.sin(2 * np.pi * (self.fx * x / width + self.fy * y / height) + self.phase)
        return self.amplitude * wave * self.mask_array(height, width)


@dataclass(frozen=True)
class SourceSpec:
    """Identite source : coefficients [3, termes, termes] et phases d'un champ cosinus basse frequence."""

    identity_id: int
    coefficients: np.ndarray
    phases: np.ndarray

    def content(self, height: int, width: int) -> np.ndarray:
        """Champ [3,H,W] normalise par canal dans [0.2, 0.8]."""
        y, x = np.mgrid[0:height, 0:width]
        field = np.zeros((3, height, width))
        for c in range(3):
            for u in range(CONTENT_TERMS):
                for v in range(CONTENT_TERMS):
                    field[c] += self.coefficients[c, u, v] * np.cos(
                        np.pi * (u * (y + 0.5) / height + v * (x + 0.5) / width) + self.phases[c, u, v])
        low = field.min(axis=(1, 2), keepdims=True)
        span = field.max(axis=(1, 2), keepdims=True) - low
        span = np.where(span > 0, span, 1.0)
        return CONTENT_LOW + (CONTENT_HIGH - CONTENT_LOW) * (field - low) / span


@dataclass
class SyntheticSample:
    image: T.Tensor
    gen_id: int
    identity_id: int
    labeled: bool


def make_source(seed: int, identity_id: int) -> SourceSpec:
    rng = derive_rng(seed, "source", identity_id)
    shape = (3, CONTENT_TERMS, CONTENT_TERMS)
    return SourceSpec(identity_id=identity_id, coefficients=rng.normal(size=shape),
                      phases=rng.uniform(0.0, 2 * np.pi, size=shape))


def make_generators(seed: int, count: int, amplitude_min: float, amplitude_max: float) -> list:
    """Generateurs aux paires de frequences impaires distinctes ; les masques alternent."""
    pairs = [(fx, fy) for fx in ODD_FREQUENCIES for fy in ODD_FREQUENCIES]
    if count > len(pairs):
        raise ConfigError(f"Au plus {len(pairs)} generateurs distincts, {count} demandes")
    order = derive_rng(seed, "generators").permutation(len(pairs))
    generators = []
    for gen_id in range(count):
        fx, fy = pairs[order[gen_id]]
        rng = derive_rng(seed, "generator", gen_id)
        generators.append(GeneratorSpec(
            gen_id=gen_id, fx=fx, fy=fy,
            amplitude=float(rng.uniform(amplitude_min, amplitude_max)),
            mask=MASKS[gen_id % len(MASKS)],
            phase_seed=int(rng.integers(0, 2**31 - 1)),
        ))
    return generators


def synthesize(source: SourceSpec, gen: GeneratorSpec, rng: np.random.Generator,
               height: int = 32, width: int = 32, sensor_noise: float = 0.01) -> T.Tensor:
    """Contenu de la source + artefact du generateur + bruit capteur, borne a [0,1]."""
    image = source.content(height, width) + gen.pattern(height, width)[None, :, :]
    if sensor_noise > 0:
        image = image + rng.normal(0.0, sensor_noise, size=image.shape)
    return T.tensor(np.clip(image, 0.0, 1.0))


class Dataset:
    """
    Jeu de donnees charge en memoire.

    Attributes:
        images: [N,3,H,W]
        gen_ids, identity_ids: [N] entiers
        labeled: [N] booleens
        manifest: dict (graine, tailles, generateurs connus/nouveaux, effectifs, offsets)
    """

    def __init__(self, images: np.ndarray, gen_ids, identity_ids, labeled, manifest: dict):
        self.images = np.asarray(images, dtype=np.float64)
        self.gen_ids = np.asarray(gen_ids, dtype=np.int64)
        self.identity_ids = np.asarray(identity_ids, dtype=np.int64)
        self.labeled = np.asarray(labeled, dtype=bool)
        self.manifest = manifest
        if not (len(self.images) == len(self.gen_ids) == len(self.identity_ids) == len(self.labeled)):
            raise DataError("Nombre d'images et d'etiquettes incoherent")

    def __len__(self):
        return len(self.images)

    @property
    def known_ids(self) -> list:
        return list(self.manifest["known_generators"])

    @property
    def novel_ids(self) -> list:
        return list(self.manifest["novel_generators"])

    def sample(self, i: int) -> SyntheticSample:
        return SyntheticSample(image=T.tensor(self.images[i]), gen_id=int(self.gen_ids[i]),
                               identity_id=int(self.identity_ids[i]), labeled=bool(self.labeled[i]))

    def labeled_indices(self) -> np.ndarray:
        return np.flatnonzero(self.labeled)

    def unlabeled_indices(self) -> np.ndarray:
        return np.flatnonzero(~self.labeled)


def _identity_for(sample: int, gen_id: int, n_identities: int, offset: int) -> int:
    # decalage par generateur : chaque identite passe par plusieurs generateurs
    return (sample + 7 * gen_id + offset) % n_identities


def build_dataset(cfg: dict) -> Dataset:
    """
    Genere le jeu complet en memoire.

    Partition etiquetee : generateurs connus, `samples_per_class` chacun.
    Partition non etiquetee : connus et nouveaux, `samples_per_class` chacun.
    """
    seed = cfg["seed"]
    height, width = cfg["data.height"], cfg["data.width"]
    n_known, n_novel = cfg["data.known_generators"], cfg["data.novel_generators"]
    per_class, n_identities = cfg["data.samples_per_class"], cfg["data.identities"]
    if n_known <= 0 or n_novel <= 0 or per_class <= 0 or n_identities <= 0:
        raise ConfigError("Effectifs nuls : generateurs connus, nouveaux, echantillons et identites doivent etre > 0")
    known = list(range(n_known))
    novel = list(range(n_known, n_known + n_novel))
    if set(known) & set(novel):
        raise ConfigError("Generateurs connus et nouveaux se recouvrent")

    generators = make_generators(seed, n_known + n_novel, cfg["data.amplitude_min"], cfg["data.amplitude_max"])
    sources = [make_source(seed, i) for i in range(n_identities)]

    plan = [(g, j, True, 0) for g in known for j in range(per_class)]
    plan += [(g, j, False, 3) for g in known + novel for j in range(per_class)]
    images = np.empty((len(plan), 3, height, width))
    gen_ids, identity_ids, labeled = [], [], []
    for index, (g, j, is_labeled, offset) in enumerate(plan):
        identity = _identity_for(j, g, n_identities, offset)
        images[index] = synthesize(sources[identity], generators[g], derive_rng(seed, "sample", index),
                                   height, width, cfg["data.sensor_noise"]).data
        gen_ids.append(g)
        identity_ids.append(identity)
        labeled.append(is_labeled)

    counts = {str(g): {"labeled": per_class if g in known else 0, "unlabeled": per_class} for g in known + novel}
    manifest = {
        "seed": seed,
        "height": height,
        "width": width,
        "known_generators": known,
        "novel_generators": novel,
        "identities": n_identities,
        "counts": counts,
        "n_labeled": n_known * per_class,
        "n_unlabeled": (n_known + n_novel) * per_class,
        "generators": [{"gen_id": g.gen_id, "fx": g.fx, "fy": g.fy, "amplitude": g.amplitude,
                        "mask": g.mask, "phase_seed": g.phase_seed} for g in generators],
        "data_digest": config_digest({k: cfg[k] for k in DATA_KEYS}),
    }
    log("DATA", f"{manifest['n_labeled']} etiquetes + {manifest['n_unlabeled']} non etiquetes "
                f"({n_known} connus, {n_novel} nouveaux, {height}x{width})")
    return Dataset(images, gen_ids, identity_ids, labeled, manifest)


def save_dataset(dataset: Dataset, out_dir) -> Path:
    """Ecrit manifest.json, images.bin (blobs CDT1 concatenes) et labels.csv."""
    out = ensure_dir(out_dir)
    offsets = write_tensor_stream(out / "images.bin", dataset.images)
    manifest = dict(dataset.manifest, offsets=offsets)
    with open(out / "manifest.json", 'w', encoding='utf-8') as f:
        json.dump(manifest, f, indent=2)
    with open(out / "labels.csv", 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(["sample_index", "gen_id", "identity_id", "labeled"])
        for i in range(len(dataset)):
            writer.writerow([i, int(dataset.gen_ids[i]), int(dataset.identity_ids[i]), int(dataset.labeled[i])])
    log("DATA", f"Jeu ecrit dans {out}")
    return out


def load_dataset(data_dir) -> Dataset:
    """Relit un jeu ecrit par `save_dataset` et verifie la coherence avec le manifest."""
    data_dir = Path(data_dir)
    for name in ("manifest.json", "images.bin", "labels.csv"):
        if not (data_dir / name).exists():
            raise DataError(f"Fichier manquant dans le jeu de donnees: {data_dir / name}")
    try:
        with open(data_dir / "manifest.json", 'r', encoding='utf-8') as f:
            manifest = json.load(f)
    except json.JSONDecodeError as e:
        raise DataError(f"Manifest illisible: {e}")
    images = read_tensor_stream(data_dir / "images.bin")
    with open(data_dir / "labels.csv", 'r', encoding='utf-8', newline='') as f:
        rows = list(csv.DictReader(f))
    expected = manifest["n_labeled"] + manifest["n_unlabeled"]
    if len(images) != expected or len(rows) != expected:
        raise DataError(f"Jeu incoherent : {len(images)} images, {len(rows)} lignes, {expected} attendues")
    return Dataset(
        images=np.stack(images),
        gen_ids=[int(r["gen_id"]) for r in rows],
        identity_ids=[int(r["identity_id"]) for r in rows],
        labeled=[r["labeled"] == "1" for r in rows],
        manifest={k: v for k, v in manifest.items() if k != "offsets"},
    )
