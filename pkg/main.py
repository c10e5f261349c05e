"""Ponto de entrada da CLI do PSP-NS."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence
import argparse
import logging

from modules.config import TrainConfig, load_config
from modules.dataset import (
    dataset_statistics,
    load_ground_truth,
    load_interactions,
    load_split,
    save_split,
    split_dataset,
)
from modules.graph import export_graph
from modules.model import save_model
from modules.pipeline import parse_grid, parse_seeds, run_ablation, run_training
from modules.psp import export_psp
from modules.reporter import Reporter
from modules.synth import SyntheticSpec, generate, noisy_fraction, write_synthetic
from modules.utils import (
    ConfigError,
    PspnsError,
    StageError,
    ValidationStatus,
    compute_status,
    configure_logging,
    setup_logger,
    write_json,
)

SPLIT_FILE = "split.bin"

# flags curtas que apontam para chaves pontuadas da configuração
CONFIG_ALIASES = {"sampler.kind": ["--sampler"]}


def _ratios(text: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"proporções inválidas {text!r}") from None


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("sobrescritas de configuração (flags têm precedência sobre --config)")
    for key in TrainConfig.config_keys():
        flags = [f"--{key}", *CONFIG_ALIASES.get(key, [])]
        group.add_argument(*flags, dest=f"cfg:{key}", default=None, metavar="VALUE")


def _config_overrides(args: argparse.Namespace) -> dict[str, str]:
    return {
        dest[len("cfg:") :]: value
        for dest, value in vars(args).items()
        if dest.startswith("cfg:") and value is not None
    }


def parse_args(argv: Sequence[str] | None = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="PSP-NS: amostragem negativa para filtragem colaborativa implícita")
    parser.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"],
        help="Nível de log",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    prepare = commands.add_parser("prepare", help="Lê as interações, divide e grava o cache do split")
    prepare.add_argument("--input", type=Path, required=True, help="Arquivo de interações (usuário, item por linha)")
    prepare.add_argument("--format", choices=["tsv", "csv"], default="tsv", help="Formato do arquivo (default: tsv)")
    prepare.add_argument("--ratios", type=_ratios, default=[0.8, 0.1, 0.1], help="treino,validação,teste (default: 0.8,0.1,0.1)")
    prepare.add_argument("--seed", type=int, default=0, help="Seed do split")
    prepare.add_argument("--out", type=Path, required=True, help="Diretório de saída")

    synth = commands.add_parser("synth", help="Gera dados sintéticos em blocos com ground truth")
    defaults = SyntheticSpec()
    synth.add_argument("--users", type=int, default=defaults.n_users, help="Número de usuários")
    synth.add_argument("--items", type=int, default=defaults.n_items, help="Número de itens")
    synth.add_argument("--blocks", type=int, default=defaults.n_blocks, help="Número de blocos de preferência")
    synth.add_argument("--density-in", type=float, default=defaults.density_in, help="Taxa base de observação dos itens curtidos")
    synth.add_argument("--density-out", type=float, default=defaults.density_out, help="Probabilidade de curtir um item de outro bloco")
    synth.add_argument("--noise", type=float, default=defaults.noise_rate, help="Fração de interações trocadas por ruído")
    synth.add_argument("--skew", type=float, default=defaults.activity_skew, help="Parâmetro Pareto da atividade por usuário")
    synth.add_argument(
        "--block-activity-ratio",
        type=float,
        default=defaults.block_activity_ratio,
        help="Razão de atividade entre o bloco mais ativo e o menos ativo (1 desliga)",
    )
    synth.add_argument("--seed", type=int, default=defaults.seed, help="Seed do gerador")
    synth.add_argument("--out", type=Path, required=True, help="Diretório de saída")

    for name, help_text in (("train", "Constrói o PSP, treina e avalia uma configuração"), ("ablate", "Roda uma grade de configurações sobre várias seeds")):
        sub = commands.add_parser(name, help=help_text)
        sub.add_argument("--data", type=Path, required=True, help=f"Diretório com {SPLIT_FILE}")
        sub.add_argument("--config", type=Path, help="Configuração JSON plana")
        sub.add_argument("--out", type=Path, required=True, help="Diretório de relatórios")
        sub.add_argument("--ground-truth", type=Path, help="Preferências limpas para medir Acc/Cov")
        sub.add_argument("--gt-format", choices=["tsv", "csv"], default="tsv", help="Formato do ground truth")
        if name == "train":
            sub.add_argument("--export-psp", action="store_true", help="Grava também graph.tsv e psp.tsv")
        else:
            sub.add_argument("--grid", help='Eixos como "mode=w_ew,w_hop;scheme=log,none"')
            sub.add_argument("--seeds", default="0..4", help='"0..4" ou "0,1,2"')
        _add_config_flags(sub)

    return parser.parse_args(argv)


def cmd_prepare(args: argparse.Namespace, logger: logging.Logger) -> int:
    dataset = load_interactions(args.input, format=args.format)
    split = split_dataset(dataset, args.ratios, args.seed)
    save_split(split, args.out / SPLIT_FILE)

    stats = dataset_statistics(dataset)
    write_json(args.out / "stats.json", stats)
    n_train, n_val, n_test = split.sizes()
    print(f"Usuários: {stats['users']}")
    print(f"Itens: {stats['items']}")
    print(f"Interações: {stats['interactions']}")
    print(f"Densidade: {stats['density'] * 100:.3f}%")
    print(f"Split (treino/validação/teste): {n_train}/{n_val}/{n_test}")
    logger.info("Split gravado em %s", args.out / SPLIT_FILE)
    return 0


def cmd_synth(args: argparse.Namespace, logger: logging.Logger) -> int:
    spec = SyntheticSpec(
        n_users=args.users,
        n_items=args.items,
        n_blocks=args.blocks,
        density_in=args.density_in,
        density_out=args.density_out,
        noise_rate=args.noise,
        activity_skew=args.skew,
        block_activity_ratio=args.block_activity_ratio,
        seed=args.seed,
    )
    data = generate(spec)
    interactions_path, truth_path = write_synthetic(data, args.out)
    fraction = noisy_fraction(data)
    print(f"Interações: {data.n_interactions} -> {interactions_path}")
    print(f"Ground truth: {truth_path}")
    print(f"Pares com ruído: {data.noisy_pairs} ({(fraction or 0.0) * 100:.2f}%)")
    return 0


def _load_run_inputs(args: argparse.Namespace):
    config = load_config(args.config).with_overrides(_config_overrides(args))
    try:
        split = load_split(args.data / SPLIT_FILE)
        ground_truth = None
        if args.ground_truth is not None:
            ground_truth = load_ground_truth(args.ground_truth, split.train, format=args.gt_format)
    except (PspnsError, OSError) as exc:
        raise StageError("prepare", exc) from exc
    return split, config, ground_truth


def cmd_train(args: argparse.Namespace, logger: logging.Logger) -> int:
    split, config, ground_truth = _load_run_inputs(args)
    result = run_training(split, config, ground_truth=ground_truth)
    try:
        paths = Reporter().render_train(result, args.out)
        save_model(result.model, args.out / "model.bin")
        if args.export_psp:
            export_graph(result.artifacts.g_hat, args.out / "graph.tsv")
            export_psp(result.artifacts.psp, args.out / "psp.tsv")
    except OSError as exc:
        raise StageError("report", exc) from exc

    print("Relatórios gerados:")
    print(f"- JSON: {paths.json_path}")
    print(f"- TXT: {paths.txt_path}")
    k = config.ks[0]
    print(f"Teste Recall@{k}: {result.test.recall[k]:.5f}  Precision@{k}: {result.test.precision[k]:.5f}")
    return 0


def cmd_ablate(args: argparse.Namespace, logger: logging.Logger) -> int:
    split, config, ground_truth = _load_run_inputs(args)
    grid = parse_grid(args.grid)
    seeds = parse_seeds(args.seeds)
    logger.info("Ablação com %d células x %d seeds", len(grid), len(seeds))
    table = run_ablation(split, config, grid, seeds, ground_truth=ground_truth)
    try:
        paths = Reporter().render_ablation(table, args.out)
    except OSError as exc:
        raise StageError("report", exc) from exc

    print("Relatórios gerados:")
    print(f"- JSON: {paths.json_path}")
    print(f"- TXT: {paths.txt_path}")
    if compute_status(table.issues) is ValidationStatus.WARN:
        for issue in table.issues:
            print(f"AVISO {issue.message}")
        return 1
    return 0


COMMANDS = {
    "prepare": cmd_prepare,
    "synth": cmd_synth,
    "train": cmd_train,
    "ablate": cmd_ablate,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = parse_args(argv)
    configure_logging(getattr(logging, args.log_level.upper(), logging.INFO))
    if args.command in ("train", "ablate"):
        logger = setup_logger(args.out / "logs")
    else:
        logger = logging.getLogger(__name__)

    try:
        return COMMANDS[args.command](args, logger)
    except StageError as exc:
        logger.error("%s", exc)
        return 2
    except ConfigError as exc:
        logger.error("[config] %s", exc)
        return 2
    except (PspnsError, ValueError, OSError) as exc:
        logger.error("[%s] %s", "prepare" if args.command in ("prepare", "synth") else "config", exc)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
