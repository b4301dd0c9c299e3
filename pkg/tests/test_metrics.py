import math

import numpy as np
import pytest
from scipy import ndimage

from voxmamba.errors import ConfigurationError, DimensionError
from voxmamba.metrics.seg import (
    LabelVolume,
    MetricsReport,
    average_reports,
    boundary,
    dice,
    evaluate,
    hd95,
    iou,
    labels_from_logits,
    read_report,
    volume_diagonal,
    write_report,
)


def cube(dims, start, size):
    mask = np.zeros(dims, dtype=bool)
    mask[tuple(slice(s, s + size) for s in start)] = True
    return mask


def brute_boundary(mask):
    padded = np.pad(mask, 1, constant_values=False)
    points = []
    for idx in np.argwhere(mask):
        i, j, k = idx + 1
        neighbours = [
            padded[i - 1, j, k], padded[i + 1, j, k],
            padded[i, j - 1, k], padded[i, j + 1, k],
            padded[i, j, k - 1], padded[i, j, k + 1],
        ]
        if not all(neighbours):
            points.append(idx)
    return np.asarray(points, dtype=np.float64)


def brute_hd95(p, gt):
    a, b = brute_boundary(p), brute_boundary(gt)
    pairwise = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1))

    def nearest_rank(values):
        ordered = np.sort(values)
        return ordered[math.ceil(0.95 * len(ordered)) - 1]

    return max(nearest_rank(pairwise.min(axis=1)), nearest_rank(pairwise.min(axis=0)))


# Dice / IoU

def test_dice_and_iou_small_example():
    p = np.zeros((2, 2, 2), dtype=bool)
    gt = np.zeros((2, 2, 2), dtype=bool)
    p[0, 0, :] = True
    gt[0, :, 0] = True
    assert dice(p, gt) == 0.5
    assert iou(p, gt) == pytest.approx(1 / 3)


def test_empty_masks_are_a_perfect_match():
    empty = np.zeros((3, 3, 3), dtype=bool)
    assert dice(empty, empty) == 1.0
    assert hd95(empty, empty) == 0.0


def test_dice_iou_identity_on_random_masks():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        density = rng.uniform(0.05, 0.9)
        p = rng.random((6, 6, 6)) < density
        gt = rng.random((6, 6, 6)) < rng.uniform(0.05, 0.9)
        d, j = dice(p, gt), iou(p, gt)
        assert 0.0 <= d <= 1.0
        assert abs(d - 2 * j / (1 + j)) < 1e-12


def test_shape_mismatch():
    with pytest.raises(DimensionError):
        dice(np.zeros((2, 2, 2)), np.zeros((2, 2, 3)))


# HD95

def test_hd95_golden_case():
    p = np.zeros((4, 4, 4), dtype=bool)
    gt = np.zeros((4, 4, 4), dtype=bool)
    p[0, 0, 0] = True
    gt[0, 0, 3] = True
    assert hd95(p, gt) == 3.0
    assert hd95(p, gt, spacing=(1.0, 1.0, 2.0)) == 6.0


def test_hd95_is_symmetric(rng):
    for _ in range(20):
        p = ndimage.binary_dilation(rng.random((10, 10, 10)) < 0.02)
        gt = ndimage.binary_dilation(rng.random((10, 10, 10)) < 0.02)
        if p.any() and gt.any():
            assert hd95(p, gt) == hd95(gt, p)


def test_one_empty_mask_gives_the_diagonal():
    p = cube((4, 6, 8), (0, 0, 0), 2)
    empty = np.zeros_like(p)
    assert hd95(p, empty) == pytest.approx(math.sqrt(16 + 36 + 64))
    assert hd95(empty, p, spacing=(2.0, 1.0, 1.0)) == volume_diagonal((4, 6, 8), (2.0, 1.0, 1.0))


def test_boundary_of_a_cube():
    mask = cube((8, 8, 8), (1, 1, 1), 4)
    assert boundary(mask).sum() == 4 ** 3 - 2 ** 3
    full = np.ones((3, 3, 3), dtype=bool)
    # Le bord du volume compte comme du fond
    assert boundary(full).sum() == 26


def test_matches_brute_force_on_phantoms():
    rng = np.random.default_rng(3)
    for _ in range(5):
        seeds_p = rng.random((16, 16, 16)) < 0.004
        seeds_gt = rng.random((16, 16, 16)) < 0.004
        seeds_p[8, 8, 8] = seeds_gt[7, 9, 8] = True
        p = ndimage.binary_dilation(seeds_p, iterations=2)
        gt = ndimage.binary_dilation(seeds_gt, iterations=2)
        np.testing.assert_array_equal(np.argwhere(boundary(p)), brute_boundary(p).astype(int))
        assert hd95(p, gt) == brute_hd95(p, gt)
        overlap = np.logical_and(p, gt).sum()
        assert dice(p, gt) == 2 * overlap / (p.sum() + gt.sum())


def test_few_far_outliers_leave_hd95_unchanged():
    gt = cube((16, 16, 16), (2, 2, 2), 6)
    p = gt.copy()
    assert hd95(p, gt) == 0.0
    for corner in [(15, 15, 15), (15, 0, 15), (0, 15, 15), (15, 15, 0)]:
        p[corner] = True
    assert hd95(p, gt) == 0.0


def test_dilating_toward_ground_truth_never_lowers_dice():
    gt = cube((12, 12, 12), (2, 2, 2), 8)
    p = cube((12, 12, 12), (5, 5, 5), 2)
    previous = dice(p, gt)
    for _ in range(10):
        p = ndimage.binary_dilation(p) & gt
        current = dice(p, gt)
        assert current >= previous
        previous = current
    assert previous == 1.0


# Rapports

def three_class_volume():
    labels = np.zeros((8, 8, 8), dtype=np.uint8)
    labels[1:4, 1:4, 1:4] = 1
    labels[5:7, 5:7, 5:7] = 2
    return labels


def test_evaluating_ground_truth_against_itself():
    gt = LabelVolume(three_class_volume(), classes=3)
    report = evaluate(gt, gt)
    assert [c.label for c in report.per_class] == [1, 2]
    assert all(c.dice == 1.0 and c.hd95 == 0.0 and c.hd95_defined for c in report.per_class)
    assert report.mean_dice == 1.0 and report.mean_hd95 == 0.0


def test_absent_classes_are_excluded_from_means():
    labels = three_class_volume()
    labels[labels == 2] = 0
    pred = labels.copy()
    pred[1, 1, 1] = 0
    report = evaluate(LabelVolume(pred, classes=3), LabelVolume(labels, classes=3))
    absent = report.per_class[1]
    assert not absent.present
    assert report.mean_dice == report.per_class[0].dice < 1.0


def test_missing_class_flags_undefined_hd95():
    gt = three_class_volume()
    pred = gt.copy()
    pred[pred == 2] = 0
    report = evaluate(LabelVolume(pred, classes=3), LabelVolume(gt, classes=3, spacing=(6.35, 1.52, 1.52)))
    missing = report.per_class[1]
    assert missing.dice == 0.0
    assert not missing.hd95_defined
    assert missing.hd95 == volume_diagonal((8, 8, 8), (6.35, 1.52, 1.52))


def test_evaluate_rejects_mismatched_volumes():
    a = LabelVolume(three_class_volume(), classes=3)
    with pytest.raises(ConfigurationError):
        evaluate(LabelVolume(three_class_volume(), classes=4), a)
    with pytest.raises(DimensionError):
        evaluate(LabelVolume(np.zeros((8, 8, 4), dtype=np.uint8), classes=3), a)


def test_label_volume_validation():
    with pytest.raises(DimensionError):
        LabelVolume(np.zeros((4, 4), dtype=np.uint8))
    with pytest.raises(ConfigurationError):
        LabelVolume(np.zeros((2, 2, 2)))
    with pytest.raises(ConfigurationError):
        LabelVolume(np.full((2, 2, 2), 3, dtype=np.uint8), classes=3)
    with pytest.raises(ConfigurationError):
        LabelVolume(np.zeros((2, 2, 2), dtype=np.uint8), spacing=(1.0, 0.0, 1.0))


def test_argmax_ties_pick_the_lowest_class():
    logits = np.zeros((2, 2, 2, 3))
    logits[0, 0, 0] = [1.0, 3.0, 3.0]
    labels = labels_from_logits(logits)
    assert labels.dtype == np.uint8
    assert labels[0, 0, 0] == 1
    assert labels[1, 1, 1] == 0


def test_average_reports_per_class():
    gt = LabelVolume(three_class_volume(), classes=3)
    perfect = evaluate(gt, gt)
    pred = three_class_volume()
    pred[pred == 1] = 0
    worse = evaluate(LabelVolume(pred, classes=3), gt)
    summary = average_reports([perfect, worse])
    assert summary.per_class[0].dice == 0.5
    assert summary.per_class[1].dice == 1.0
    assert summary.mean_dice == 0.75
    assert average_reports([]).mean_dice == 1.0


def test_report_file_round_trip(tmp_path):
    gt = LabelVolume(three_class_volume(), classes=3, spacing=(1.0, 2.0, 3.0))
    report = evaluate(gt, gt)
    path = write_report(tmp_path / "report.json", report)
    assert read_report(path) == report
    assert MetricsReport.from_dict(report.to_dict()).spacing == (1.0, 2.0, 3.0)
