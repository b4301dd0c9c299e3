"""Interface en ligne de commande voxmamba : gen, train, eval, bench, params, presets, show.

Codes de sortie : 0 succès, 2 configuration/contrat/dimensions, 3 divergence
numérique, 4 format de fichier ou entrée/sortie.
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from dotenv import load_dotenv

from voxmamba import __version__
from voxmamba.autodiff import tensor as T
from voxmamba.errors import ConfigurationError, VoxMambaError
from voxmamba.metrics.seg import write_report
from voxmamba.ssm.bench import benchmark_scans
from voxmamba.tracking.visualizer import (
    RunVisualizer,
    bench_table,
    metrics_table,
    params_table,
    presets_table,
)
from voxmamba.unet.checkpoint import load_checkpoint
from voxmamba.unet.config import PRESETS, RunConfig, Variant, VariantConfig
from voxmamba.unet.model import UNet, build_variant, parameter_table
from voxmamba.unet.train import fit, evaluate_model
from voxmamba.volumes.dataset import DatasetLoader, split_sizes, write_dataset
from voxmamba.volumes.synth import SynthTaskSpec

logger = logging.getLogger("voxmamba")

EXIT_OK = 0
EXIT_IO = 4


def print_section(title):
    print(f"\n{'='*60}")
    print(f"  {title}")
    print(f"{'='*60}")


def print_status(message, status="INFO"):
    symbols = {"INFO": "ℹ️", "OK": "✅", "ERROR": "❌", "WARNING": "⚠️"}
    print(f"{symbols.get(status, 'ℹ️')} {message}")


def env_settings() -> dict:
    """Variables d'environnement (éventuellement chargées depuis .env)"""
    try:
        return {
            "output_dir": os.getenv("VOXMAMBA_OUTPUT_DIR", "data/runs"),
            "threads": int(os.getenv("VOXMAMBA_THREADS", "1")),
            "chunk": int(os.getenv("VOXMAMBA_SCAN_CHUNK", "64")),
        }
    except ValueError as e:
        raise ConfigurationError(f"variable d'environnement invalide: {e}") from None


def _triple(values, name):
    if len(values) == 1:
        return tuple(values) * 3
    if len(values) != 3:
        raise ConfigurationError(f"--{name} attend 1 ou 3 valeurs, reçu {values}")
    return tuple(values)


def cmd_gen(args, env) -> int:
    print_section(f"GÉNÉRATION ({args.task})")
    spec = SynthTaskSpec(
        task=args.task,
        dims=_triple(args.dims, "dims"),
        classes=args.classes,
        noise=args.noise,
        seed=args.seed,
    ).validate()
    sizes = split_sizes(args.n)
    spacing = _triple(args.spacing, "spacing") if args.spacing else None
    out = Path(args.out or Path(env["output_dir"]) / "datasets" / args.task)

    manifest = write_dataset(out, spec, args.n, spacing)
    print_status(f"Répartition: {sizes}", "INFO")
    print_status(f"Manifeste écrit: {manifest}", "OK")
    return EXIT_OK


def load_run_config(path, env, threads=None) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"configuration JSON illisible ({path}): {e.msg} ligne {e.lineno}") from None
    if not isinstance(data, dict):
        raise ConfigurationError(f"objet JSON attendu dans {path}")
    data.setdefault("chunk", env["chunk"])
    data.setdefault("threads", env["threads"])
    if threads is not None:
        data["threads"] = threads
    cfg = RunConfig.from_dict(data)
    cfg.model.workers = cfg.threads
    return cfg


def _check_dataset(cfg_model: VariantConfig, loader: DatasetLoader):
    spec = loader.spec
    if tuple(spec.dims) != tuple(cfg_model.crop):
        raise ConfigurationError(f"crop {cfg_model.crop} différent des volumes du jeu {tuple(spec.dims)}")
    if spec.classes != cfg_model.classes:
        raise ConfigurationError(f"classes du modèle {cfg_model.classes} ≠ classes du jeu {spec.classes}")


def cmd_train(args, env) -> int:
    print_section("ENTRAÎNEMENT")
    cfg = load_run_config(args.config, env, args.threads).validate()
    loader = DatasetLoader(cfg.dataset)
    counts = loader.scan_volumes()
    _check_dataset(cfg.model, loader)
    if counts["train"] < 1:
        raise ConfigurationError("aucun volume d'entraînement dans le jeu de données")
    run_dir = Path(args.out or cfg.output_dir or Path(env["output_dir"]) / cfg.model.variant.value)
    print_status(f"Variante {cfg.model.variant.value}, {cfg.epochs} époques, jeu {counts}", "INFO")

    model = build_variant(cfg.model, seed=cfg.seed)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    result = fit(cfg, model, loader.load_split("train"), loader.load_split("val"), run_dir, resume=args.resume)

    print_status(f"{result.epochs_run} époques, perte finale {result.final_loss:.4f}", "OK")
    print_status(f"Meilleur score de validation: {result.best_val_dice:.4f}", "OK")
    print(RunVisualizer(run_dir).loss_table(limit=args.limit))
    return EXIT_OK


def cmd_eval(args, env) -> int:
    print_section("ÉVALUATION")
    weights, meta, _ = load_checkpoint(args.checkpoint)
    if "config" not in meta:
        raise ConfigurationError(f"checkpoint sans configuration: {args.checkpoint}")
    cfg = RunConfig.from_dict(meta["config"])
    dataset = args.dataset or cfg.dataset
    loader = DatasetLoader(dataset)
    loader.scan_volumes()
    _check_dataset(cfg.model, loader)

    model = UNet(cfg.model.validate())
    model.load_state_dict(weights)
    pairs = loader.load_split(args.split)
    if not pairs:
        raise ConfigurationError(f"split '{args.split}' vide dans {dataset}")
    report, mean_time = evaluate_model(model, pairs, loader.spacing)

    out = Path(args.report or Path(args.checkpoint).with_name(f"report_{args.split}.json"))
    write_report(out, report)
    print(metrics_table(report))
    print_status(f"Temps d'inférence moyen: {mean_time * 1e3:.1f} ms sur {len(pairs)} volumes", "INFO")
    print_status(f"Rapport écrit: {out}", "OK")
    return EXIT_OK


def cmd_bench(args, env) -> int:
    print_section("BANC D'ESSAI DU BALAYAGE")
    if args.min_exp > args.max_exp:
        raise ConfigurationError(f"--min-exp {args.min_exp} > --max-exp {args.max_exp}")
    lengths = [2 ** e for e in range(args.min_exp, args.max_exp + 1)]
    report = benchmark_scans(
        lengths,
        repeats=args.repeats,
        channels=args.channels,
        n_state=args.state,
        chunk=args.chunk or env["chunk"],
        workers=args.threads or env["threads"],
        seed=args.seed,
    )
    print(bench_table(report.rows))
    print_status(f"Séquentiel: pente {report.slope:.3e} s/token, R² = {report.r_squared:.4f}", "INFO")
    print_status(f"Par blocs: pente {report.chunked_slope:.3e} s/token, R² = {report.chunked_r_squared:.4f}", "INFO")
    if args.out:
        Path(args.out).write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
        print_status(f"Rapport écrit: {args.out}", "OK")
    return EXIT_OK


def cmd_params(args, env) -> int:
    print_section("PARAMÈTRES PAR VARIANTE")
    widths = tuple(args.widths)
    configs = [
        VariantConfig(variant=v, stages=len(widths), widths=widths, crop=_triple(args.crop, "crop"))
        for v in Variant
    ]
    print(params_table(parameter_table(configs)))
    return EXIT_OK


def cmd_presets(args, env) -> int:
    print_section("PRÉRÉGLAGES")
    print(presets_table(PRESETS))
    return EXIT_OK


def cmd_show(args, env) -> int:
    print_section(f"JOURNAL: {args.run_dir}")
    if not Path(args.run_dir).is_dir():
        raise ConfigurationError(f"répertoire de run introuvable: {args.run_dir}")
    visualizer = RunVisualizer(args.run_dir)
    print(visualizer.loss_table(limit=args.limit))
    print_status(visualizer.loss_summary())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="voxmamba", description="U-Net 3D et couches Mamba multi-directionnelles")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--verbose", "-v", action="store_true", help="journalisation DEBUG")
    parser.add_argument("--threads", type=int, default=None, help="nombre maximal de threads de balayage")
    parser.add_argument("--float64", action="store_true", help="calcul en double précision")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="génère un jeu de données synthétique")
    gen.add_argument("--task", default="blobs", help="blobs | directional-pair | gallbladder")
    gen.add_argument("--dims", type=int, nargs="+", default=[32])
    gen.add_argument("--n", type=int, default=16)
    gen.add_argument("--classes", type=int, default=3)
    gen.add_argument("--noise", type=float, default=0.1)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--spacing", type=float, nargs="+", default=None)
    gen.add_argument("--out", default=None)
    gen.set_defaults(handler=cmd_gen)

    train = sub.add_parser("train", help="entraîne une variante depuis un fichier de configuration JSON")
    train.add_argument("config")
    train.add_argument("--out", default=None)
    train.add_argument("--resume", action="store_true", help="reprend depuis last.ckpt")
    train.add_argument("--limit", type=int, default=10)
    train.set_defaults(handler=cmd_train)

    evaluate = sub.add_parser("eval", help="évalue un checkpoint sur un split")
    evaluate.add_argument("checkpoint")
    evaluate.add_argument("--dataset", default=None)
    evaluate.add_argument("--split", default="test")
    evaluate.add_argument("--report", default=None)
    evaluate.set_defaults(handler=cmd_eval)

    bench = sub.add_parser("bench", help="chronomètre les balayages séquentiel et par blocs")
    bench.add_argument("--min-exp", type=int, default=10)
    bench.add_argument("--max-exp", type=int, default=20)
    bench.add_argument("--repeats", type=int, default=10)
    bench.add_argument("--channels", type=int, default=4)
    bench.add_argument("--state", type=int, default=4)
    bench.add_argument("--chunk", type=int, default=None)
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--out", default=None)
    bench.set_defaults(handler=cmd_bench)

    params = sub.add_parser("params", help="compte les paramètres et les FLOPs de chaque variante")
    params.add_argument("--widths", type=int, nargs="+", default=[16, 32, 64, 128])
    params.add_argument("--crop", type=int, nargs="+", default=[32])
    params.set_defaults(handler=cmd_params)

    presets = sub.add_parser("presets", help="liste les préréglages de jeux de données")
    presets.set_defaults(handler=cmd_presets)

    show = sub.add_parser("show", help="affiche le journal d'un run")
    show.add_argument("run_dir")
    show.add_argument("--limit", type=int, default=10)
    show.set_defaults(handler=cmd_show)
    return parser


def main(argv=None) -> int:
    load_dotenv()
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.float64:
        T.set_default_dtype("float64")

    try:
        env = env_settings()
        return args.handler(args, env)
    except VoxMambaError as e:
        logger.debug("Échec de la commande %s", args.command, exc_info=True)
        print_status(f"{type(e).__name__}: {e}", "ERROR")
        return e.exit_code
    except OSError as e:
        print_status(f"Erreur d'entrée/sortie: {e}", "ERROR")
        return EXIT_IO
    finally:
        if args.float64:
            T.set_default_dtype("float32")


if __name__ == "__main__":
    sys.exit(main())
