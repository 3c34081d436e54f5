import argparse
import json
import logging
import sys
from typing import Any, Dict, List, Optional

from config.pipeline import load_pipeline_config
from services.pipeline import run_all, run_analysis, run_detection, run_evaluation, run_synth
from utils.exceptions import PipelineError
from utils.logger import setup_logging

logger = logging.getLogger(__name__)

KERNEL_FLAGS = ("sigma_km", "convergence_tol_km", "max_iterations", "mode_merge_km")


def _add_common(parser: argparse.ArgumentParser, default) -> None:
    parser.add_argument("--config", default=default, help="JSON-файл конфигурации")
    parser.add_argument("--workers", type=int, default=default, help="число процессов")
    parser.add_argument("--seed", type=int, default=default, help="зерно генератора и K-means")
    parser.add_argument("--out-dir", dest="out_dir", default=default, help="каталог результатов")
    parser.add_argument("--log-level", dest="log_level", default=default, help="уровень логирования")


def build_parser() -> argparse.ArgumentParser:
    # после имени команды флаг заменяет значение, заданное до неё
    common = argparse.ArgumentParser(add_help=False)
    _add_common(common, argparse.SUPPRESS)

    kernel = argparse.ArgumentParser(add_help=False)
    kernel.add_argument("--sigma-km", dest="sigma_km", type=float, help="полоса ядра, км")
    kernel.add_argument("--convergence-tol-km", dest="convergence_tol_km", type=float, help="порог сдвига, км")
    kernel.add_argument("--max-iter", dest="max_iterations", type=int, help="предел итераций mean shift")
    kernel.add_argument("--mode-merge-km", dest="mode_merge_km", type=float, help="радиус слияния мод, км")

    parser = argparse.ArgumentParser(
        prog="dining-hub-mobility",
        description="Хабы питания, дом/работа и переезды по журналу доставок",
    )
    _add_common(parser, None)
    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("synth", parents=[common], help="сгенерировать синтетический город")
    commands.add_parser("detect", parents=[common, kernel], help="найти хабы, метки и переезды")
    commands.add_parser("analyze", parents=[common], help="построить агрегированные отчёты")
    evaluate = commands.add_parser("evaluate", parents=[common], help="сверить результат с эталоном")
    evaluate.add_argument("--match-radius-km", dest="match_radius_km", type=float)
    evaluate.add_argument("--month-slack", dest="month_slack", type=int)
    commands.add_parser("run-all", parents=[common, kernel], help="все стадии подряд")
    return parser


def cli_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    """Значения флагов для load_pipeline_config; None - флаг не задан"""
    overrides: Dict[str, Any] = {"workers": args.workers, "seed": args.seed, "out_dir": args.out_dir}
    for name in KERNEL_FLAGS:
        overrides[f"kernel.{name}"] = getattr(args, name, None)
    return overrides


def _summary_line(command: str, result: dict) -> str:
    if command == "synth":
        return (
            f"synth: {result['users']} users, {result['orders']} orders, "
            f"{result['moves']} moves, {result['transactions']} transactions"
        )
    if command == "detect":
        labels = result["labels"]
        return (
            f"detect: {result['users_after_filter']} users, {result['hubs']} hubs "
            f"(H={labels['H']} W={labels['W']} O={labels['O']}), moves {json.dumps(result['moves'])}"
        )
    if command == "analyze":
        return f"analyze: {len(result.get('notices', []))} reports skipped"
    if command == "evaluate":
        return (
            f"evaluate: precision {json.dumps(result['move_precision'])}, "
            f"recall {json.dumps(result['move_recall'])}, label accuracy {result['label_accuracy']}"
        )
    return "run-all: " + "; ".join(_summary_line(name, part) for name, part in result.items())


def main(argv: Optional[List[str]] = None) -> int:
    """Точка входа CLI; возвращает код выхода 0/2/3/4"""
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)

    try:
        config = load_pipeline_config(args.config, cli_overrides(args))
        if args.command == "synth":
            result = run_synth(config)
        elif args.command == "detect":
            result = run_detection(config)
        elif args.command == "analyze":
            result = run_analysis(config)
        elif args.command == "evaluate":
            result = run_evaluation(config, args.match_radius_km, args.month_slack)
        else:
            result = run_all(config)
    except PipelineError as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except Exception as e:
        logger.critical(f"{args.command} stopped with an internal error: {e}", exc_info=True)
        print(f"internal error: {e}", file=sys.stderr)
        return 4

    print(_summary_line(args.command, result))
    return 0


if __name__ == "__main__":
    sys.exit(main())
