"""Boucle d'entraînement : pas d'optimisation, validation, checkpoints et reprise"""

import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from voxmamba.autodiff import tensor as T
from voxmamba.autodiff.tensor import Tensor
from voxmamba.errors import DivergenceError, NumericError
from voxmamba.metrics.seg import LabelVolume, average_reports, evaluate, labels_from_logits
from voxmamba.tracking.manager import RunLog
from voxmamba.unet.checkpoint import load_checkpoint, save_checkpoint
from voxmamba.unet.config import RunConfig
from voxmamba.unet.loss import dice_ce_loss
from voxmamba.unet.model import UNet, forward
from voxmamba.unet.optim import LinearSchedule, OptimizerState, optimizer_step
from voxmamba.volumes.dataset import stack_batch

logger = logging.getLogger(__name__)

BEST_CHECKPOINT = "best.ckpt"
LAST_CHECKPOINT = "last.ckpt"


def train_step(model: UNet, batch, state: OptimizerState, lr: float = None):
    """Une mise à jour sur ``batch = (images (B,H,W,D,C), labels (B,H,W,D))``"""
    images, labels = batch
    step = state.step + 1
    model.zero_grad()
    try:
        logits = model(Tensor(images, dtype=T.get_default_dtype()))
        loss = dice_ce_loss(logits, labels)
        value = loss.item()
        if not math.isfinite(value):
            raise DivergenceError(step, value)
        T.backward(loss)
    except DivergenceError:
        raise
    except NumericError as e:
        logger.error("Valeur non finie à l'étape %d: %s", step, e)
        raise DivergenceError(step, float("nan")) from e
    optimizer_step(model, state, lr)
    return value, state


def predict(model: UNet, image) -> np.ndarray:
    """Étiquettes (H, W, D) pour une image (H, W, D) ou (H, W, D, C)"""
    image = np.asarray(image, dtype=T.get_default_dtype())
    if image.ndim == 3:
        image = image[..., None]
    with T.no_grad():
        logits = forward(model, image)
    return labels_from_logits(logits)


def evaluate_model(model: UNet, pairs, spacing=None):
    """Rapport moyen et durée moyenne d'inférence (s) sur des paires (image, LabelVolume)"""
    reports = []
    durations = []
    for image, gt in pairs:
        start = time.perf_counter()
        labels = predict(model, image)
        durations.append(time.perf_counter() - start)
        pred = LabelVolume(labels, spacing=spacing or gt.spacing, classes=gt.classes)
        reports.append(evaluate(pred, gt))
    mean_time = float(np.mean(durations)) if durations else 0.0
    return average_reports(reports), mean_time


@dataclass
class FitResult:
    epochs_run: int
    final_loss: float
    best_val_dice: float
    run_dir: Path


def _batches(pairs, batch_size: int, seed: int, epoch: int):
    order = np.random.default_rng([seed, epoch]).permutation(len(pairs))
    for start in range(0, len(order), batch_size):
        yield stack_batch([pairs[i] for i in order[start:start + batch_size]])


def fit(cfg: RunConfig, model: UNet, train_pairs, val_pairs, run_dir, resume: bool = False) -> FitResult:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    run_log = RunLog(run_dir)
    opt = cfg.optimizer
    state = OptimizerState(name=opt["name"], lr=opt["lr"], betas=opt["betas"], eps=opt["eps"])
    schedule = LinearSchedule(opt["lr"], cfg.epochs)
    start_epoch = 0
    best = -1.0

    if resume and (run_dir / LAST_CHECKPOINT).exists():
        weights, meta, saved_state = load_checkpoint(run_dir / LAST_CHECKPOINT)
        model.load_state_dict(weights)
        state = saved_state or state
        start_epoch = int(meta["epoch"]) + 1
        best = float(meta.get("best_val_dice", -1.0))
        run_log.truncate(int(meta["epoch"]))
        logger.info("Reprise à l'époque %d (étape %d)", start_epoch, state.step)
    elif run_log.log_file.exists():
        run_log.log_file.unlink()

    loss = float("nan")
    for epoch in range(start_epoch, cfg.epochs):
        lr = schedule(epoch)
        losses = []
        for batch in _batches(train_pairs, cfg.batch_size, cfg.seed, epoch):
            loss, state = train_step(model, batch, state, lr)
            losses.append(loss)
        loss = float(np.mean(losses))

        val_dice = None
        if val_pairs:
            report, _ = evaluate_model(model, val_pairs)
            val_dice = report.mean_dice
        run_log.add_epoch(epoch, state.step, lr, loss, val_dice)
        logger.info("Époque %d/%d: lr %.2e, perte %.4f, Dice val. %s", epoch + 1, cfg.epochs, lr, loss, val_dice)

        score = val_dice if val_dice is not None else -loss
        meta = {"config": cfg.to_dict(), "epoch": epoch, "step": state.step, "best_val_dice": max(best, score)}
        if score > best:
            best = score
            save_checkpoint(run_dir / BEST_CHECKPOINT, model, meta=meta)
        save_checkpoint(run_dir / LAST_CHECKPOINT, model, state, meta=meta)

    return FitResult(cfg.epochs - start_epoch, loss, best, run_dir)
