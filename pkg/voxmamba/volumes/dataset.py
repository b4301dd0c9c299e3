"""Jeux de données sur disque : écriture des splits + manifeste, et chargeur"""

import hashlib
import json
import logging
from pathlib import Path

import numpy as np

from voxmamba.errors import ConfigurationError, FormatError
from voxmamba.volumes.fileformat import EXTENSION, read_image, read_labels, read_volume, write_volume
from voxmamba.volumes.synth import SynthTaskSpec, generate

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
SPLITS = ("train", "val", "test")
SPLIT_FRACTIONS = (0.7, 0.15, 0.15)


def split_sizes(count: int) -> dict:
    if count < 1:
        raise ConfigurationError(f"au moins un volume attendu, reçu {count}")
    n_val = max(1, round(count * SPLIT_FRACTIONS[1])) if count >= 3 else 0
    n_test = max(1, round(count * SPLIT_FRACTIONS[2])) if count >= 3 else 0
    return {"train": count - n_val - n_test, "val": n_val, "test": n_test}


def file_checksum(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_dataset(root, spec: SynthTaskSpec, count: int, spacing=None) -> Path:
    """Génère ``count`` paires, les répartit en train/val/test et écrit le manifeste"""
    spec.validate()
    sizes = split_sizes(count)
    root = Path(root)
    samples = generate(spec, count)
    root.mkdir(parents=True, exist_ok=True)

    manifest = {"spec": spec.to_dict(), "spacing": list(spacing) if spacing else None, "splits": {}, "checksums": {}}
    index = 0
    for split in SPLITS:
        (root / split).mkdir(exist_ok=True)
        entries = []
        for _ in range(sizes[split]):
            image, labels = samples[index]
            image_rel = f"{split}/{index:04d}_image{EXTENSION}"
            labels_rel = f"{split}/{index:04d}_labels{EXTENSION}"
            write_volume(root / image_rel, image, spacing)
            write_volume(root / labels_rel, labels, spacing)
            manifest["checksums"][image_rel] = file_checksum(root / image_rel)
            manifest["checksums"][labels_rel] = file_checksum(root / labels_rel)
            entries.append({"image": image_rel, "labels": labels_rel})
            index += 1
        manifest["splits"][split] = entries

    path = root / MANIFEST
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info("Jeu de données écrit dans %s: %s", root, sizes)
    return path


class DatasetLoader:
    """Chargeur de jeux de données voxmamba (manifeste + volumes .vxm)"""

    def __init__(self, data_dir):
        self.data_dir = Path(data_dir)
        if not self.data_dir.is_dir():
            raise ConfigurationError(f"répertoire de données introuvable: {self.data_dir}")

        # Types de fichiers reconnus
        self.supported_extensions = {
            EXTENSION: read_volume,
            ".json": self._load_manifest,
        }
        self.manifest = self._load_manifest(self.data_dir / MANIFEST)

    def _load_manifest(self, file_path):
        """Charge le manifeste JSON"""
        try:
            manifest = json.loads(Path(file_path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigurationError(f"manifeste absent: {file_path}") from None
        except json.JSONDecodeError as e:
            raise FormatError(f"manifeste illisible: {e.msg}", offset=e.pos) from None
        if not isinstance(manifest, dict):
            raise FormatError("manifeste invalide", expected="objet JSON", actual=type(manifest).__name__)
        if "splits" not in manifest or "spec" not in manifest:
            raise FormatError("manifeste incomplet", expected=["spec", "splits"], actual=sorted(manifest))
        return manifest

    @property
    def spec(self) -> SynthTaskSpec:
        data = dict(self.manifest["spec"])
        data["dims"] = tuple(data["dims"])
        return SynthTaskSpec(**data)

    @property
    def classes(self) -> int:
        return int(self.manifest["spec"]["classes"])

    @property
    def spacing(self):
        spacing = self.manifest.get("spacing")
        return tuple(spacing) if spacing else None

    def load_file(self, file_path):
        """Charge un fichier selon son extension"""
        file_path = Path(file_path)
        loader = self.supported_extensions.get(file_path.suffix.lower())
        if loader is None:
            logger.warning(f"Format non supporté: {file_path.suffix}")
            return None
        return loader(file_path)

    def scan_volumes(self) -> dict:
        """Compte les volumes par split et vérifie leur présence"""
        counts = {}
        for split in SPLITS:
            entries = self.manifest["splits"].get(split, [])
            missing = [
                e[key] for e in entries for key in ("image", "labels")
                if not (self.data_dir / e[key]).exists()
            ]
            if missing:
                raise ConfigurationError(f"volumes manquants dans {split}: {missing[:3]}")
            counts[split] = len(entries)
        return counts

    def load_split(self, split: str) -> list:
        """Liste de paires (image (H, W, D), étiquettes LabelVolume)"""
        if split not in SPLITS:
            raise ConfigurationError(f"split inconnu '{split}', attendus: {list(SPLITS)}")
        pairs = []
        for entry in self.manifest["splits"].get(split, []):
            image = read_image(self.data_dir / entry["image"]).data
            labels = read_labels(self.data_dir / entry["labels"], classes=self.classes)
            pairs.append((image, labels))
        logger.debug("Split %s: %d paires chargées", split, len(pairs))
        return pairs

    def verify_checksums(self) -> list:
        """Fichiers dont l'empreinte diffère du manifeste"""
        return [
            rel for rel, digest in sorted(self.manifest.get("checksums", {}).items())
            if file_checksum(self.data_dir / rel) != digest
        ]


def stack_batch(pairs) -> tuple:
    """(images (B, H, W, D, 1), étiquettes (B, H, W, D))"""
    images = np.stack([np.asarray(image, dtype=np.float32)[..., None] for image, _ in pairs])
    labels = np.stack([lv.labels for _, lv in pairs])
    return images, labels
