import logging
from typing import Any, Callable, Dict, Mapping, Optional, Union

from ..config import ToolkitConfig
from ..domain.errors import ValidationError
from ..domain.interfaces import ICheckpointStore, IDatasetRepository, IResultWriter
from ..domain.training import TrainConfig
from .comparison_usecase import execute_compare_losses, execute_compare_modes
from .data_generation_usecase import GenerationRequest, execute_generate_dataset, execute_spatial_split
from .errors import ConfigValidationError, InvalidInputError
from .evaluation_usecase import execute_evaluate, execute_predict
from .gradcheck_usecase import execute_gradcheck
from .interfaces import Command, IToolkitUseCase
from .training_usecase import execute_plot, execute_train

RepositoryFactory = Callable[[str], IDatasetRepository]

GENERATION_KEYS = tuple(GenerationRequest.__dataclass_fields__)


def _required(settings: Mapping[str, Any], key: str, command: Command) -> Any:
    value = settings.get(key)
    if value in (None, ""):
        raise InvalidInputError(f"'{key}' obbligatorio per il comando {command.value}.")
    return value


def train_config_from(
    settings: Mapping[str, Any], toolkit: ToolkitConfig, dataset: Optional[str] = None
) -> TrainConfig:
    """Le chiavi ``dataset`` e ``out`` della CLI diventano ``dataset_path`` e ``output_dir``."""
    values: Dict[str, Any] = {k: v for k, v in settings.items() if k not in ("dataset", "out")}
    values["dataset_path"] = dataset or settings.get("dataset") or values.get("dataset_path") or ""
    values["output_dir"] = toolkit.output_directory
    try:
        return TrainConfig.from_dict(values)
    except ValidationError as e:
        raise ConfigValidationError(e.problems) from e


class ToolkitPipeline(IToolkitUseCase):
    def __init__(
        self,
        repository_factory: RepositoryFactory,
        store: ICheckpointStore,
        writer: IResultWriter,
        config: ToolkitConfig,
        logger: Optional[Union[logging.Logger, logging.LoggerAdapter]] = None,
    ):
        self.repository_factory = repository_factory
        self.store = store
        self.writer = writer
        self.config = config
        self.logger = logger or logging.getLogger(self.__class__.__name__)

    def _repository(self, settings: Mapping[str, Any], command: Command, key: str = "dataset") -> IDatasetRepository:
        return self.repository_factory(str(_required(settings, key, command)))

    def run(self, command: Command, settings: Mapping[str, Any]) -> Any:
        "Punto di ingresso unico, smista l'esecuzione dei casi d'uso."
        self.logger.info(f"Avvio pipeline per il comando: {command.value}")

        if command == Command.GEN_DATA:
            request = GenerationRequest(**{k: settings[k] for k in GENERATION_KEYS if k in settings})
            result = execute_generate_dataset(self._repository(settings, command, "out"), request, self.logger)

        elif command == Command.SPLIT:
            result = execute_spatial_split(
                self._repository(settings, command),
                settings["ratios"],
                int(settings["buffer"]),
                self.logger,
            )

        elif command == Command.TRAIN:
            config = train_config_from(settings, self.config)
            result = execute_train(
                self.repository_factory(config.dataset_path),
                self.store,
                self.writer,
                config,
                self.config,
                self.logger,
            )

        elif command == Command.EVAL:
            oracle = bool(settings.get("oracle"))
            result = execute_evaluate(
                self._repository(settings, command),
                self.store,
                self.writer,
                self.config,
                None if oracle else _required(settings, "checkpoint", command),
                settings["split"],
                self.logger,
                mode=settings.get("mode"),
                oracle=oracle,
                batch_size=int(settings.get("batch_size", 4)),
            )

        elif command == Command.GRADCHECK:
            result = execute_gradcheck(
                self.writer,
                self.config,
                str(settings["model"]),
                int(settings["size"]),
                self.logger,
                tolerance=settings.get("tolerance"),
                seed=int(settings.get("seed", 0)),
                samples=int(settings.get("samples", 20)),
            )

        elif command == Command.PREDICT:
            limit = settings.get("limit")
            result = execute_predict(
                self._repository(settings, command),
                self.store,
                self.writer,
                self.config,
                _required(settings, "checkpoint", command),
                settings["split"],
                self.logger,
                limit=None if limit is None else int(limit),
                sample_ids=settings.get("samples") or None,
            )

        elif command == Command.PLOT:
            result = execute_plot(
                self.writer,
                settings.get("metrics") or self.config.metrics_csv_file,
                settings.get("output") or self.config.training_plot_file,
                self.logger,
            )

        elif command == Command.COMPARE:
            base = train_config_from(settings.get("train") or {}, self.config, settings.get("dataset"))
            seeds = [int(s) for s in settings.get("seeds") or [base.seed]]
            harness = {"modes": execute_compare_modes, "losses": execute_compare_losses}.get(settings.get("axis"))
            if harness is None:
                raise InvalidInputError(f"Asse di confronto '{settings.get('axis')}' non supportato (modes|losses).")
            result = harness(
                self.repository_factory(base.dataset_path),
                self.store,
                self.writer,
                base,
                self.config,
                seeds,
                self.logger,
            )

        else:
            raise InvalidInputError(f"Comando '{command}' non supportato.")

        self.logger.info(f"Pipeline completata ({command.value}).")
        return result
