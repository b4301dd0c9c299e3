"""Métriques volumiques : Dice, IoU et distance de Hausdorff au 95e centile.

Conventions :
  - deux masques vides → Dice 1, HD95 0 ;
  - un seul masque vide → HD95 = diagonale du volume, marquée non définie ;
  - frontière = voxel d'avant-plan 6-connexe au fond ou au bord du volume ;
  - centile au rang le plus proche (ceil(0.95·n)-ième statistique d'ordre).
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from voxmamba.errors import ConfigurationError, DimensionError

logger = logging.getLogger(__name__)

PERCENTILE = 95.0
_FACE_CONNECTIVITY = ndimage.generate_binary_structure(3, 1)


@dataclass
class LabelVolume:
    labels: np.ndarray
    spacing: tuple = None
    classes: int = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        if self.labels.ndim != 3:
            raise DimensionError(f"volume d'étiquettes 3-D attendu, reçu {self.labels.shape}")
        if self.labels.dtype.kind not in "iub":
            raise ConfigurationError(f"étiquettes entières attendues, reçu {self.labels.dtype}")
        if self.spacing is not None:
            self.spacing = tuple(float(s) for s in self.spacing)
            if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
                raise ConfigurationError(f"espacement strictement positif (3 axes) attendu: {self.spacing}")
        if self.classes is None:
            self.classes = int(self.labels.max()) + 1 if self.labels.size else 1
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.classes):
            raise ConfigurationError(
                f"étiquettes hors de [0, {self.classes}): [{self.labels.min()}, {self.labels.max()}]"
            )

    @property
    def dims(self) -> tuple:
        return self.labels.shape


@dataclass
class ClassMetrics:
    label: int
    dice: float
    iou: float
    hd95: float
    hd95_defined: bool
    present: bool


@dataclass
class MetricsReport:
    per_class: list = field(default_factory=list)
    mean_dice: float = 1.0
    mean_iou: float = 1.0
    mean_hd95: float = 0.0
    spacing: tuple = None

    def to_dict(self) -> dict:
        return {
            "per_class": [asdict(c) for c in self.per_class],
            "mean_dice": self.mean_dice,
            "mean_iou": self.mean_iou,
            "mean_hd95": self.mean_hd95,
            "spacing": list(self.spacing) if self.spacing else None,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MetricsReport":
        return cls(
            per_class=[ClassMetrics(**c) for c in data["per_class"]],
            mean_dice=data["mean_dice"],
            mean_iou=data["mean_iou"],
            mean_hd95=data["mean_hd95"],
            spacing=tuple(data["spacing"]) if data.get("spacing") else None,
        )


def _check_pair(p, gt):
    p = np.asarray(p, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if p.shape != gt.shape:
        raise DimensionError(f"masques de formes différentes: {p.shape} et {gt.shape}")
    return p, gt


def dice(p, gt) -> float:
    p, gt = _check_pair(p, gt)
    total = int(p.sum()) + int(gt.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(p, gt).sum()) / total


def iou(p, gt) -> float:
    p, gt = _check_pair(p, gt)
    union = int(np.logical_or(p, gt).sum())
    if union == 0:
        return 1.0
    return int(np.logical_and(p, gt).sum()) / union


def boundary(mask) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    interior = ndimage.binary_erosion(mask, structure=_FACE_CONNECTIVITY, border_value=0)
    return mask & ~interior


def _scaled_points(mask, spacing) -> np.ndarray:
    points = np.argwhere(boundary(mask)).astype(np.float64)
    if spacing is not None:
        points *= np.asarray(spacing, dtype=np.float64)
    return points


def directed_percentile_distance(source: np.ndarray, target: np.ndarray, q: float = PERCENTILE) -> float:
    """Centile (rang le plus proche) des distances de chaque point source au plus proche point cible"""
    distances, _ = cKDTree(target).query(source)
    return float(np.percentile(distances, q, method="inverted_cdf"))


def volume_diagonal(dims, spacing=None) -> float:
    extent = np.asarray(dims, dtype=np.float64)
    if spacing is not None:
        extent = extent * np.asarray(spacing, dtype=np.float64)
    return float(math.sqrt(float(np.sum(extent ** 2))))


def hd95(p, gt, spacing=None) -> float:
    p, gt = _check_pair(p, gt)
    p_empty, gt_empty = not p.any(), not gt.any()
    if p_empty and gt_empty:
        return 0.0
    if p_empty or gt_empty:
        return volume_diagonal(p.shape, spacing)
    p_points = _scaled_points(p, spacing)
    gt_points = _scaled_points(gt, spacing)
    return max(
        directed_percentile_distance(p_points, gt_points),
        directed_percentile_distance(gt_points, p_points),
    )


def labels_from_logits(logits) -> np.ndarray:
    """argmax sur le dernier axe ; en cas d'égalité, la classe d'indice le plus bas"""
    data = getattr(logits, "data", logits)
    return np.argmax(np.asarray(data), axis=-1).astype(np.uint8)


def evaluate(pred: LabelVolume, gt: LabelVolume) -> MetricsReport:
    if pred.dims != gt.dims:
        raise DimensionError(f"volumes de formes différentes: {pred.dims} et {gt.dims}")
    if pred.classes != gt.classes:
        raise ConfigurationError(
            f"ensembles de classes différents: prédiction {pred.classes}, vérité terrain {gt.classes}"
        )
    spacing = gt.spacing or pred.spacing
    per_class = []
    for label in range(1, gt.classes):
        p = pred.labels == label
        g = gt.labels == label
        present = bool(p.any() or g.any())
        per_class.append(ClassMetrics(
            label=label,
            dice=dice(p, g),
            iou=iou(p, g),
            hd95=hd95(p, g, spacing),
            hd95_defined=bool(p.any() == g.any()),
            present=present,
        ))
    counted = [c for c in per_class if c.present]
    report = MetricsReport(per_class=per_class, spacing=spacing)
    if counted:
        report.mean_dice = float(np.mean([c.dice for c in counted]))
        report.mean_iou = float(np.mean([c.iou for c in counted]))
        report.mean_hd95 = float(np.mean([c.hd95 for c in counted]))
    logger.debug("Évaluation: Dice moyen %.4f sur %d classes présentes", report.mean_dice, len(counted))
    return report


def average_reports(reports) -> MetricsReport:
    """Moyenne classe par classe sur plusieurs volumes (classes présentes uniquement)"""
    reports = list(reports)
    if not reports:
        return MetricsReport()
    per_class = []
    for label_rows in zip(*(r.per_class for r in reports)):
        counted = [c for c in label_rows if c.present] or list(label_rows)
        per_class.append(ClassMetrics(
            label=label_rows[0].label,
            dice=float(np.mean([c.dice for c in counted])),
            iou=float(np.mean([c.iou for c in counted])),
            hd95=float(np.mean([c.hd95 for c in counted])),
            hd95_defined=all(c.hd95_defined for c in counted),
            present=any(c.present for c in label_rows),
        ))
    counted = [c for c in per_class if c.present]
    summary = MetricsReport(per_class=per_class, spacing=reports[0].spacing)
    if counted:
        summary.mean_dice = float(np.mean([c.dice for c in counted]))
        summary.mean_iou = float(np.mean([c.iou for c in counted]))
        summary.mean_hd95 = float(np.mean([c.hd95 for c in counted]))
    return summary


def write_report(path, report: MetricsReport) -> Path:
    path = Path(path)
    path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_report(path) -> MetricsReport:
    return MetricsReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
