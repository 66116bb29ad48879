import argparse
import os
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Any, Dict, List, Optional

from dotenv import load_dotenv

from ..application.data_generation_usecase import GenerationRequest
from ..application.errors import (
    ConfigValidationError,
    DataPreparationError,
    InvalidInputError,
    MissingDataError,
)
from ..application.gradcheck_usecase import PRESETS
from ..application.interfaces import Command, IToolkitUseCase
from ..application.pipeline import ToolkitPipeline
from ..config import ToolkitConfig, load_config_file, resolve_config, unknown_keys
from ..domain.errors import UnsupportedConfigurationError, ValidationError
from ..domain.gradcheck import GradcheckReport
from ..domain.metrics import MetricsReport
from ..domain.training import TrainConfig
from ..domain.types import LossKind, ModelMode
from .checkpoint_store import FileCheckpointStore
from .dataset_repository import DirectoryDatasetRepository
from .file_writer import FileResultWriter, dump_json
from .logging_config import configure_logging, layer_logger, verbosity_level
from .tensor_io import atomic_write_bytes

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

USAGE_ERRORS = (
    ConfigValidationError,
    InvalidInputError,
    ValidationError,
    UnsupportedConfigurationError,
)

DEFAULT_OUTPUT_DIR = "outputs"


def _env_output() -> str:
    return os.environ.get("TREESEG_OUTPUT_DIR", DEFAULT_OUTPUT_DIR)


def _env_dataset() -> Optional[str]:
    return os.environ.get("TREESEG_DATASET_DIR") or None


def _train_defaults() -> Dict[str, Any]:
    values = TrainConfig().to_dict()
    values.pop("dataset_path")
    values.pop("output_dir")
    return values


def command_defaults(command: Command) -> Dict[str, Any]:
    """Valori di partenza per ogni sottocomando, prima di file, flag e override."""
    if command == Command.GEN_DATA:
        return {"out": None, **asdict(GenerationRequest())}
    if command == Command.SPLIT:
        request = GenerationRequest()
        return {"dataset": _env_dataset(), "out": None, "ratios": list(request.ratios), "buffer": request.buffer}
    if command == Command.TRAIN:
        return {"dataset": _env_dataset(), "out": _env_output(), **_train_defaults()}
    if command == Command.EVAL:
        return {
            "dataset": _env_dataset(),
            "out": _env_output(),
            "checkpoint": None,
            "split": "test",
            "mode": None,
            "oracle": False,
            "batch_size": 4,
        }
    if command == Command.GRADCHECK:
        return {"out": _env_output(), "model": "time_series", "size": 16, "tolerance": None, "seed": 0, "samples": 20}
    if command == Command.PREDICT:
        return {
            "dataset": _env_dataset(),
            "out": _env_output(),
            "checkpoint": None,
            "split": "test",
            "limit": 4,
            "samples": None,
        }
    if command == Command.PLOT:
        return {"out": _env_output(), "metrics": None, "output": None}
    if command == Command.COMPARE:
        return {
            "dataset": _env_dataset(),
            "out": _env_output(),
            "axis": "modes",
            "seeds": [0, 1, 2],
            "train": _train_defaults(),
        }
    raise InvalidInputError(f"Comando '{command}' non supportato.")


def _flag(parser: argparse.ArgumentParser, *names: str, **kwargs: Any) -> None:
    kwargs.setdefault("default", None)
    parser.add_argument(*names, **kwargs)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="File JSON di configurazione (anche un resolved_config.json).")
    common.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="PERCORSO=VALORE",
        help="Override puntuale, ad esempio --set weights.lambda2=0.5 (ripetibile).",
    )
    common.add_argument("--out", default=None, help="Directory di output.")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="Log di debug.")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="Solo avvisi ed errori.")

    parser = argparse.ArgumentParser(
        prog="treeseg",
        description=(
            "Toolkit di segmentazione delle specie arboree.\n"
            "  gen-data   - Genera un dataset sintetico di serie temporali con suddivisione spaziale\n"
            "  split      - Ricalcola la suddivisione spaziale di un dataset esistente\n"
            "  train      - Addestra un modello (time_series o single_image)\n"
            "  eval       - Valuta un checkpoint su uno split (IoU per classe, mIoU)\n"
            "  gradcheck  - Confronta i gradienti con le differenze finite\n"
            "  predict    - Scrive le sovrapposizioni PPM di input, verità e predizione\n"
            "  plot       - Disegna le curve di addestramento in SVG\n"
            "  compare    - Confronta modalità o loss su più semi"
        ),
        formatter_class=argparse.RawTextHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMANDO")

    gen = sub.add_parser(Command.GEN_DATA.value, parents=[common], help="Genera il dataset sintetico.")
    _flag(gen, "--seed", type=int)
    _flag(gen, "--tiles", type=int)
    _flag(gen, "--height", type=int)
    _flag(gen, "--width", type=int)
    _flag(gen, "--species", nargs="+")
    _flag(gen, "--min-count", dest="min_count", type=int)
    _flag(gen, "--buffer", type=int)
    _flag(gen, "--ratios", type=float, nargs=3)
    _flag(gen, "--no-split", dest="split", action="store_const", const=False)
    _flag(gen, "--taxonomy", dest="taxonomy_path")
    _flag(gen, "--workers", type=int)

    split = sub.add_parser(Command.SPLIT.value, parents=[common], help="Ricalcola la suddivisione spaziale.")
    _flag(split, "--dataset")
    _flag(split, "--ratios", type=float, nargs=3)
    _flag(split, "--buffer", type=int)

    train = sub.add_parser(Command.TRAIN.value, parents=[common], help="Addestra un modello.")
    _flag(train, "--dataset")
    _flag(train, "--mode", choices=[m.value for m in ModelMode])
    _flag(train, "--loss", choices=[k.value for k in LossKind])
    _flag(train, "--epochs", type=int)
    _flag(train, "--batch-size", dest="batch_size", type=int)
    _flag(train, "--lr", type=float)
    _flag(train, "--seed", type=int)
    _flag(train, "--workers", type=int)
    _flag(train, "--resume", action="store_const", const=True)

    evaluate = sub.add_parser(Command.EVAL.value, parents=[common], help="Valuta un checkpoint.")
    _flag(evaluate, "--dataset")
    _flag(evaluate, "--checkpoint")
    _flag(evaluate, "--split")
    _flag(evaluate, "--mode", choices=[m.value for m in ModelMode])
    _flag(evaluate, "--oracle", action="store_const", const=True, help="Valuta la verità come predizione.")

    grad = sub.add_parser(Command.GRADCHECK.value, parents=[common], help="Verifica dei gradienti.")
    _flag(grad, "--model", choices=sorted(PRESETS))
    _flag(grad, "--size", type=int)
    _flag(grad, "--tolerance", type=float)
    _flag(grad, "--seed", type=int)
    _flag(grad, "--samples", type=int)

    predict = sub.add_parser(Command.PREDICT.value, parents=[common], help="Sovrapposizioni PPM.")
    _flag(predict, "--dataset")
    _flag(predict, "--checkpoint")
    _flag(predict, "--split")
    _flag(predict, "--limit", type=int)
    _flag(predict, "--sample", dest="samples", action="append")

    plot = sub.add_parser(Command.PLOT.value, parents=[common], help="Grafico SVG delle curve.")
    _flag(plot, "--metrics")
    _flag(plot, "--output")

    compare = sub.add_parser(Command.COMPARE.value, parents=[common], help="Confronto su più semi.")
    _flag(compare, "--dataset")
    _flag(compare, "--axis", choices=["modes", "losses"])
    _flag(compare, "--seeds", type=int, nargs="+")

    return parser


def resolve_settings(args: argparse.Namespace, command: Command) -> Dict[str, Any]:
    defaults = command_defaults(command)
    flags = {
        k: v
        for k, v in vars(args).items()
        if k not in ("command", "config", "overrides", "verbose", "quiet")
    }
    settings = resolve_config(defaults, load_config_file(args.config), flags, args.overrides)
    if command == Command.SPLIT and not settings.get("out"):
        settings["out"] = settings.get("dataset")
    problems = [f"{k}: campo sconosciuto" for k in unknown_keys(settings, defaults)]
    if command == Command.COMPARE and isinstance(settings.get("train"), dict):
        problems += [f"train.{k}: campo sconosciuto" for k in unknown_keys(settings["train"], defaults["train"])]
    if not settings.get("out"):
        problems.append("out: directory di output obbligatoria (--out)")
    if problems:
        raise ConfigValidationError(problems)
    return settings


def _report_outcome(result: Any) -> int:
    if isinstance(result, GradcheckReport):
        print(result.summary())
        return EXIT_OK if result.passed else EXIT_FAILURE
    if isinstance(result, MetricsReport):
        print(f"mIoU {result.miou:.4f}")
    return EXIT_OK


def run(argv: Optional[List[str]] = None) -> int:
    """
    Adattatore di ingresso dell'architettura esagonale: interpreta il sottocomando,
    risolve la configurazione e delega l'esecuzione al layer applicativo tramite la
    porta IToolkitUseCase. Restituisce il codice di uscita.
    """
    if os.environ.get("TESTING_MODE") != "1":
        load_dotenv()

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK

    configure_logging(verbosity_level(args.verbose, args.quiet))
    cli_logger = layer_logger("CLI", "Presentation")
    app_logger = layer_logger("Pipeline", "Application")
    infra_logger = layer_logger("Storage", "Infrastructure")
    command = Command(args.command)

    try:
        settings = resolve_settings(args, command)
        toolkit = ToolkitConfig(
            output_directory=str(settings["out"]),
            dataset_directory=str(settings.get("dataset") or settings["out"]),
        )
        atomic_write_bytes(toolkit.resolved_config_file, dump_json({"command": command.value, **settings}))
        cli_logger.info(f"Configurazione risolta salvata in {toolkit.resolved_config_file}")
    except USAGE_ERRORS as e:
        cli_logger.error(f"ERRORE DI CONFIGURAZIONE: {e}")
        return EXIT_USAGE
    except Exception as e:
        cli_logger.error(f"Errore durante la configurazione: {e}")
        return EXIT_FAILURE

    try:
        pipeline: IToolkitUseCase = ToolkitPipeline(
            repository_factory=lambda root: DirectoryDatasetRepository(Path(root), logger=infra_logger),
            store=FileCheckpointStore(logger=infra_logger),
            writer=FileResultWriter(toolkit, logger=infra_logger),
            config=toolkit,
            logger=app_logger,
        )
        cli_logger.info(f"Esecuzione del comando '{command.value}' avviata...")
        result = pipeline.run(command, settings)
        code = _report_outcome(result)
        if code == EXIT_OK:
            cli_logger.info("Comando completato con successo.")
        return code

    except USAGE_ERRORS as e:
        cli_logger.error(f"ERRORE DI INPUT: {e}")
        cli_logger.info("Operazione annullata. Controlla i parametri e riprova.")
        return EXIT_USAGE

    except (DataPreparationError, MissingDataError) as e:
        cli_logger.error(f"ERRORE NEI DATI: {e}", exc_info=False)
        return EXIT_FAILURE

    except Exception as e:
        cli_logger.critical(f"Errore fatale durante l'esecuzione: {e}", exc_info=True)
        return EXIT_FAILURE


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
