import json
import os
from pathlib import Path

from voxmamba.errors import ConfigurationError

LOG_FIELDS = ("epoch", "step", "lr", "train_loss", "val_dice")


class RunLog:
    """Journal d'entraînement en JSON lines, une entrée par époque"""

    def __init__(self, run_dir="data/runs", filename="train_log.jsonl"):
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)

        # Vérifie que le répertoire est accessible en écriture
        if not os.access(self.run_dir, os.W_OK):
            raise PermissionError(f"Impossible d'écrire dans le répertoire: {self.run_dir}")

        self.log_file = self.run_dir / filename

    def add_epoch(self, epoch: int, step: int, lr: float, train_loss: float, val_dice: float = None, metadata: dict = None):
        entry = {
            "epoch": epoch,
            "step": step,
            "lr": lr,
            "train_loss": train_loss,
            "val_dice": val_dice,
        }
        if metadata:
            entry["metadata"] = metadata

        with open(self.log_file, "a", encoding="utf-8") as f:
            f.write(json.dumps(entry, sort_keys=True) + "\n")
        return entry

    def entries(self) -> list:
        try:
            with open(self.log_file, "r", encoding="utf-8") as f:
                return [json.loads(line) for line in f if line.strip()]
        except FileNotFoundError:
            return []

    def recent(self, limit: int = 5) -> list:
        return self.entries()[-limit:]

    def truncate(self, epoch: int):
        """Conserve les entrées jusqu'à ``epoch`` inclus (reprise d'un run)"""
        if epoch < 0:
            raise ConfigurationError(f"époque négative: {epoch}")
        kept = [e for e in self.entries() if e["epoch"] <= epoch]
        with open(self.log_file, "w", encoding="utf-8") as f:
            for entry in kept:
                f.write(json.dumps(entry, sort_keys=True) + "\n")
        return kept

    def losses(self) -> list:
        return [e["train_loss"] for e in self.entries()]
