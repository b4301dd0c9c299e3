from tabulate import tabulate

from voxmamba.tracking.manager import RunLog


def _fmt(value, digits=4):
    if value is None:
        return "—"
    return f"{value:.{digits}f}"


class RunVisualizer:
    def __init__(self, run_dir="data/runs"):
        self.run_log = RunLog(run_dir)

    def loss_table(self, limit=10) -> str:
        entries = self.run_log.recent(limit)
        if not entries:
            return "Aucune époque enregistrée"

        table = []
        for entry in entries:
            table.append([
                entry["epoch"],
                entry["step"],
                f"{entry['lr']:.2e}",
                _fmt(entry["train_loss"]),
                _fmt(entry["val_dice"]),
            ])

        return tabulate(
            table,
            headers=["Époque", "Étape", "LR", "Perte", "Dice val."],
            tablefmt="pretty"
        )

    def loss_summary(self) -> str:
        losses = self.run_log.losses()
        if not losses:
            return "Aucune perte enregistrée"
        first, last = losses[0], losses[-1]
        ratio = last / first if first else float("nan")
        return f"Perte : {first:.4f} → {last:.4f} ({ratio:.2f}× en {len(losses)} époques)"


def metrics_table(report) -> str:
    table = []
    for c in report.per_class:
        table.append([
            c.label,
            _fmt(c.dice),
            _fmt(c.iou),
            _fmt(c.hd95, 2) + ("" if c.hd95_defined else " *"),
            "oui" if c.present else "non",
        ])
    table.append(["moyenne", _fmt(report.mean_dice), _fmt(report.mean_iou), _fmt(report.mean_hd95, 2), ""])
    return tabulate(table, headers=["Classe", "DSC", "IoU", "HD95", "Présente"], tablefmt="pretty")


def bench_table(rows) -> str:
    table = [
        [r["length"], f"{r['sequential_s'] * 1e3:.2f}", f"{r['chunked_s'] * 1e3:.2f}", f"{r['max_abs_diff']:.1e}"]
        for r in rows
    ]
    return tabulate(
        table,
        headers=["L", "Séquentiel (ms)", "Par blocs (ms)", "max |Δ|"],
        tablefmt="pretty"
    )


def params_table(rows) -> str:
    return tabulate(
        [[name, f"{total:,}", f"{mamba:,}", f"{gflops:.3f}"] for name, total, mamba, gflops in rows],
        headers=["Variante", "Paramètres", "dont Mamba", "GFLOPs"],
        tablefmt="pretty"
    )


def presets_table(presets) -> str:
    table = [
        [p.name, " × ".join(f"{s:g}" for s in p.spacing), " × ".join(map(str, p.median_shape)),
         " × ".join(map(str, p.crop)), p.batch_size]
        for p in presets.values()
    ]
    return tabulate(
        table,
        headers=["Jeu", "Espacement (mm)", "Forme médiane", "Crop", "Batch"],
        tablefmt="pretty"
    )
