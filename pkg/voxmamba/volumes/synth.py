"""Générateur de volumes synthétiques (image, étiquettes).

Tâches :
  - ``blobs`` : champ de gaussiennes seuillé, résoluble localement ;
  - ``directional-pair`` : objets vifs et pâles dans la première moitié de
    l'axe H, chacun doublé d'un marqueur sur les dernières lignes de H. Les
    marqueurs d'un volume portent tous le même signe : positif, les objets vifs
    sont de classe 1 et les pâles de classe 2 ; négatif, c'est l'inverse. Les
    marqueurs restent du fond ;
  - ``gallbladder`` : un grand ellipsoïde et une petite sphère accolée, à
    position et taille variables.
"""

import logging
from dataclasses import asdict, dataclass

import numpy as np

from voxmamba.errors import ConfigurationError

logger = logging.getLogger(__name__)

TASKS = ("blobs", "directional-pair", "gallbladder")
MIN_DIM = 8
MIN_CLASS_FRACTION = 0.01
MAX_ATTEMPTS = 64

MARKER_ROWS = 2
MARKER_AMPLITUDE = 2.0
# aspect 0 (vif) et aspect 1 (pâle) ; le signe du marqueur décide de leur classe
OBJECT_INTENSITIES = (1.0, 0.5)
DIRECTION_CLASSES = (1, 2)


@dataclass(frozen=True)
class SynthTaskSpec:
    task: str = "blobs"
    dims: tuple = (32, 32, 32)
    classes: int = 3
    noise: float = 0.1
    seed: int = 0

    def validate(self) -> "SynthTaskSpec":
        problems = []
        if self.task not in TASKS:
            problems.append(f"tâche inconnue '{self.task}', attendues: {list(TASKS)}")
        if len(self.dims) != 3 or any(int(d) < MIN_DIM for d in self.dims):
            problems.append(f"dimensions ≥ {MIN_DIM} sur chaque axe: {tuple(self.dims)}")
        if self.classes < 2:
            problems.append(f"classes ≥ 2 (reçu {self.classes})")
        if self.task in ("directional-pair", "gallbladder") and self.classes != 3:
            problems.append(f"la tâche {self.task} produit exactement 3 classes (reçu {self.classes})")
        if self.noise < 0:
            problems.append(f"niveau de bruit ≥ 0 (reçu {self.noise})")
        if problems:
            raise ConfigurationError("spécification synthétique invalide: " + "; ".join(problems))
        return self

    def to_dict(self) -> dict:
        data = asdict(self)
        data["dims"] = [int(d) for d in self.dims]
        return data


def blob_thresholds(classes: int) -> np.ndarray:
    return np.arange(1, classes, dtype=np.float64) / classes


def _grid(dims):
    return np.meshgrid(*(np.arange(n, dtype=np.float64) for n in dims), indexing="ij")


def _blobs(rng, spec):
    dims = tuple(spec.dims)
    coords = _grid(dims)
    field = np.zeros(dims)
    for _ in range(rng.integers(2, 6)):
        center = [rng.uniform(0, n) for n in dims]
        sigma = rng.uniform(0.12, 0.25) * min(dims)
        dist2 = sum((c - m) ** 2 for c, m in zip(coords, center))
        field += np.exp(-dist2 / (2.0 * sigma ** 2))
    field = (field / field.max()).astype(np.float32)
    labels = np.digitize(field, blob_thresholds(spec.classes)).astype(np.uint8)
    return field, labels, None


def _directional_pair(rng, spec):
    h, w, d = (int(n) for n in spec.dims)
    clean = np.zeros((h, w, d), dtype=np.float32)
    labels = np.zeros((h, w, d), dtype=np.uint8)
    marker_mask = np.zeros((h, w, d), dtype=bool)
    # Objets sur h ∈ [1, H/2 − 2) ; marqueurs sur les MARKER_ROWS dernières lignes
    rows = slice(1, max(2, h // 2 - 2))
    cell_w, cell_d = w // 2, d // 2
    cells = [(i, j) for i in range(2) for j in range(2)]
    chosen = rng.permutation(len(cells))[: rng.integers(2, 5)]
    # un seul signe par volume ; les deux aspects sont toujours présents
    sign = 1 if rng.random() < 0.5 else -1
    kinds = np.concatenate([[0, 1], rng.integers(0, 2, size=len(chosen) - 2)])
    for index, kind in zip(chosen, kinds):
        ci, cj = cells[index]
        size_w = int(rng.integers(max(3, cell_w // 2), cell_w + 1))
        size_d = int(rng.integers(max(3, cell_d // 2), cell_d + 1))
        w0 = ci * cell_w + int(rng.integers(0, cell_w - size_w + 1))
        d0 = cj * cell_d + int(rng.integers(0, cell_d - size_d + 1))
        footprint = (slice(w0, w0 + size_w), slice(d0, d0 + size_d))
        clean[(rows,) + footprint] = OBJECT_INTENSITIES[kind]
        labels[(rows,) + footprint] = DIRECTION_CLASSES[kind if sign > 0 else 1 - kind]
        clean[(slice(h - MARKER_ROWS, h),) + footprint] = sign * MARKER_AMPLITUDE
        marker_mask[(slice(h - MARKER_ROWS, h),) + footprint] = True
    return clean, labels, marker_mask


def _gallbladder(rng, spec):
    dims = tuple(int(n) for n in spec.dims)
    coords = _grid(dims)
    size = np.asarray(dims, dtype=np.float64)
    center = size / 2.0 + rng.uniform(-0.05, 0.05, size=3) * size
    radii = rng.uniform(0.22, 0.3, size=3) * size
    large = sum(((c - m) / r) ** 2 for c, m, r in zip(coords, center, radii)) <= 1.0

    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    small_radius = max(1.5, rng.uniform(0.12, 0.16) * min(dims))
    # Point de l'ellipsoïde dans cette direction, puis décalage d'un rayon
    surface = center + direction / np.sqrt(np.sum((direction / radii) ** 2))
    small_center = surface + direction * small_radius * rng.uniform(0.6, 1.0)
    small_center += rng.uniform(-1.0, 1.0, size=3)
    small = sum((c - m) ** 2 for c, m in zip(coords, small_center)) <= small_radius ** 2

    labels = np.zeros(dims, dtype=np.uint8)
    labels[large] = 1
    labels[small] = 2
    clean = np.select([labels == 2, labels == 1], [1.0, 0.6], 0.0).astype(np.float32)
    return clean, labels, None


_BUILDERS = {
    "blobs": _blobs,
    "directional-pair": _directional_pair,
    "gallbladder": _gallbladder,
}


def class_fractions(labels: np.ndarray, classes: int) -> np.ndarray:
    return np.bincount(labels.ravel(), minlength=classes)[:classes] / labels.size


def generate_sample(spec: SynthTaskSpec, seed_sequence: np.random.SeedSequence):
    """Une paire (image f32, étiquettes u8) ; géométrie et bruit ont des flux séparés"""
    geometry_seq, noise_seq = seed_sequence.spawn(2)
    geometry_rng = np.random.default_rng(geometry_seq)
    build = _BUILDERS[spec.task]
    for attempt in range(MAX_ATTEMPTS):
        clean, labels, _ = build(geometry_rng, spec)
        if np.all(class_fractions(labels, spec.classes) >= MIN_CLASS_FRACTION):
            break
        logger.debug("Tirage %d rejeté (classe sous %.0f%%)", attempt, 100 * MIN_CLASS_FRACTION)
    else:
        raise ConfigurationError(
            f"impossible d'équilibrer les classes pour {spec.task} en {MAX_ATTEMPTS} tirages (dims {spec.dims})"
        )
    noise_rng = np.random.default_rng(noise_seq)
    image = clean
    if spec.noise > 0:
        image = (clean + spec.noise * noise_rng.standard_normal(clean.shape)).astype(np.float32)
    return image, labels


def generate(spec: SynthTaskSpec, count: int = 1) -> list:
    spec.validate()
    children = np.random.SeedSequence(spec.seed).spawn(count)
    samples = [generate_sample(spec, child) for child in children]
    logger.info("Généré %d volumes '%s' %s", count, spec.task, tuple(spec.dims))
    return samples


def marker_mask(spec: SynthTaskSpec, index: int = 0) -> np.ndarray:
    """Masque des marqueurs du ``index``-ième échantillon d'une tâche directional-pair"""
    if spec.task != "directional-pair":
        raise ConfigurationError(f"pas de marqueurs pour la tâche {spec.task}")
    child = np.random.SeedSequence(spec.seed).spawn(index + 1)[index]
    geometry_rng = np.random.default_rng(child.spawn(2)[0])
    for _ in range(MAX_ATTEMPTS):
        _, labels, markers = _directional_pair(geometry_rng, spec)
        if np.all(class_fractions(labels, spec.classes) >= MIN_CLASS_FRACTION):
            return markers
    raise ConfigurationError("impossible de reproduire le tirage")


def flip_markers(image: np.ndarray, labels: np.ndarray, markers: np.ndarray):
    """Jumeau d'un volume directional-pair : marqueurs de signe opposé, classes 1 et 2 échangées.

    Le reste de l'image est inchangé, voxel pour voxel. Un modèle qui ne voit pas
    les marqueurs prédit la même chose sur les deux jumeaux et se trompe sur l'un.
    """
    if markers.shape != image.shape or labels.shape != image.shape:
        raise ConfigurationError(f"formes incompatibles: {image.shape}, {labels.shape}, {markers.shape}")
    twin = np.where(markers, -image, image).astype(image.dtype)
    first, second = DIRECTION_CLASSES
    swapped = labels.copy()
    swapped[labels == first] = second
    swapped[labels == second] = first
    return twin, swapped
