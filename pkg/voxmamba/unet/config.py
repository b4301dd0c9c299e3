"""Configuration déclarative des variantes U-Net et préréglages de jeux de données"""

import enum
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from voxmamba.errors import ConfigurationError
from voxmamba.layers.layout import DEFAULT_DIRECTIONS, DirectionalLayout, validate_direction_set


class Variant(str, enum.Enum):
    BASELINE = "baseline"
    SEGMAMBA = "segmamba"
    SEGMAMBA_SKIP = "segmambaskip"
    PANSEGMAMBA = "pansegmamba"
    MULTISEGMAMBA = "multisegmamba"

    @classmethod
    def parse(cls, value) -> "Variant":
        if isinstance(value, cls):
            return value
        key = str(value).lower().replace("-", "").replace("_", "")
        for variant in cls:
            if variant.value == key:
                return variant
        raise ConfigurationError(
            f"variante inconnue '{value}', attendues: {[v.value for v in cls]}"
        )


@dataclass
class VariantConfig:
    variant: Variant = Variant.BASELINE
    stages: int = 4
    widths: tuple = (16, 32, 64, 128)
    crop: tuple = (32, 32, 32)
    in_channels: int = 1
    classes: int = 3
    direction_set: tuple = tuple(d.name for d in DEFAULT_DIRECTIONS)
    expand: int = 2
    conv_width: int = 4
    mlp_ratio: int = 4
    chunk: int = 64
    workers: int = 1

    def __post_init__(self):
        self.variant = Variant.parse(self.variant)
        self.widths = tuple(int(w) for w in self.widths)
        self.crop = tuple(int(c) for c in self.crop)
        self.direction_set = tuple(
            d.name if isinstance(d, DirectionalLayout) else str(d) for d in self.direction_set
        )

    @property
    def layouts(self) -> tuple:
        return tuple(DirectionalLayout.parse(name) for name in self.direction_set)

    def expected_mamba_modules(self) -> int:
        if self.variant is Variant.BASELINE:
            return 0
        if self.variant is Variant.SEGMAMBA_SKIP:
            return self.stages - 1
        return self.stages

    def validate(self) -> "VariantConfig":
        problems = []
        if self.stages < 1:
            problems.append(f"stages ≥ 1 (reçu {self.stages})")
        if len(self.widths) != self.stages:
            problems.append(f"une largeur par niveau: {len(self.widths)} largeurs pour {self.stages} niveaux")
        if any(b <= a for a, b in zip(self.widths, self.widths[1:])):
            problems.append(f"largeurs strictement croissantes: {self.widths}")
        if any(w < 1 for w in self.widths):
            problems.append(f"largeurs positives: {self.widths}")
        if len(self.crop) != 3:
            problems.append(f"crop 3-D attendu: {self.crop}")
        factor = 2 ** max(self.stages - 1, 0)
        if any(c % factor or c < 1 for c in self.crop):
            problems.append(f"chaque axe du crop divisible par 2^(S−1) = {factor}: {self.crop}")
        if self.classes < 2:
            problems.append(f"classes ≥ 2 (reçu {self.classes})")
        if self.in_channels < 1:
            problems.append(f"in_channels ≥ 1 (reçu {self.in_channels})")
        if self.expand < 1:
            problems.append(f"expand ≥ 1 (reçu {self.expand})")
        if self.chunk is not None and self.chunk < 1:
            problems.append(f"chunk ≥ 1 (reçu {self.chunk})")
        if problems:
            raise ConfigurationError("configuration de variante invalide: " + "; ".join(problems))
        if self.variant is Variant.MULTISEGMAMBA:
            validate_direction_set(self.layouts)
        return self

    def to_dict(self) -> dict:
        data = asdict(self)
        data["variant"] = self.variant.value
        data["widths"] = list(self.widths)
        data["crop"] = list(self.crop)
        data["direction_set"] = list(self.direction_set)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "VariantConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigurationError(f"clés de variante inconnues: {unknown}")
        return cls(**data)


@dataclass(frozen=True)
class DatasetPreset:
    name: str
    spacing: tuple
    median_shape: tuple
    crop: tuple
    batch_size: int
    stages: int = None
    widths: tuple = None


# Configurations d'origine ; seul « desk » est entraîné ici
PRESETS = {
    "brain-tumour": DatasetPreset("brain-tumour", (1.0, 1.0, 1.0), (138, 170, 138), (128, 128, 128), 2),
    "synapse": DatasetPreset("synapse", (3.0, 0.76, 0.76), (148, 512, 512), (48, 192, 192), 2),
    "acdc": DatasetPreset("acdc", (6.35, 1.52, 1.52), (13, 246, 213), (14, 256, 224), 4),
    "desk": DatasetPreset("desk", (1.0, 1.0, 1.0), (32, 32, 32), (32, 32, 32), 2, 4, (16, 32, 64, 128)),
}


OPTIMIZER_DEFAULTS = {"name": "radam", "lr": 3e-4, "betas": [0.9, 0.999], "eps": 1e-8}
RUN_KEYS = ("optimizer", "epochs", "batch_size", "seed", "dataset", "output_dir", "threads")


@dataclass
class RunConfig:
    """Configuration d'entraînement : variante + optimiseur + chemins"""

    model: VariantConfig = field(default_factory=VariantConfig)
    optimizer: dict = field(default_factory=lambda: dict(OPTIMIZER_DEFAULTS))
    epochs: int = 30
    batch_size: int = 2
    seed: int = 0
    dataset: str = None
    output_dir: str = None
    threads: int = 1

    def validate(self, check_paths: bool = True) -> "RunConfig":
        problems = []
        unknown = sorted(set(self.optimizer) - set(OPTIMIZER_DEFAULTS))
        if unknown:
            problems.append(f"clés d'optimiseur inconnues: {unknown}")
        if self.optimizer.get("lr", 0) < 0:
            problems.append(f"lr ≥ 0 (reçu {self.optimizer.get('lr')})")
        if self.epochs < 1:
            problems.append(f"epochs ≥ 1 (reçu {self.epochs})")
        if self.batch_size < 1:
            problems.append(f"batch_size ≥ 1 (reçu {self.batch_size})")
        if self.threads < 1:
            problems.append(f"threads ≥ 1 (reçu {self.threads})")
        if check_paths:
            if not self.dataset:
                problems.append("chemin 'dataset' requis")
            elif not Path(self.dataset).is_dir():
                problems.append(f"dataset introuvable: {self.dataset}")
        if problems:
            raise ConfigurationError("configuration d'entraînement invalide: " + "; ".join(problems))
        self.model.validate()
        return self

    def to_dict(self) -> dict:
        data = self.model.to_dict()
        data.update({
            "optimizer": dict(self.optimizer),
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "dataset": self.dataset,
            "output_dir": self.output_dir,
            "threads": self.threads,
        })
        data["optimizer"]["betas"] = list(data["optimizer"]["betas"])
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        model_keys = {f.name for f in fields(VariantConfig)}
        unknown = sorted(set(data) - model_keys - set(RUN_KEYS))
        if unknown:
            raise ConfigurationError(f"clés de configuration inconnues: {unknown}")
        optimizer = dict(OPTIMIZER_DEFAULTS)
        optimizer.update(data.get("optimizer") or {})
        run = {k: data[k] for k in RUN_KEYS if k in data and k != "optimizer"}
        model = VariantConfig.from_dict({k: v for k, v in data.items() if k in model_keys})
        return cls(model=model, optimizer=optimizer, **run)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"configuration JSON illisible ({path}): {e.msg} ligne {e.lineno}") from None
        if not isinstance(data, dict):
            raise ConfigurationError(f"objet JSON attendu dans {path}")
        return cls.from_dict(data)

    @classmethod
    def from_preset(cls, preset: DatasetPreset, variant="baseline", **overrides) -> "RunConfig":
        if preset.stages is None:
            raise ConfigurationError(f"le préréglage {preset.name} est descriptif, il ne peut pas être entraîné ici")
        model = VariantConfig(variant=variant, stages=preset.stages, widths=preset.widths, crop=preset.crop)
        return cls(model=model, batch_size=preset.batch_size, **overrides)
