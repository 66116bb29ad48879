import logging
import statistics
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

from ..config import ToolkitConfig
from ..domain.errors import DomainError
from ..domain.interfaces import ICheckpointStore, IDatasetRepository, IResultWriter
from ..domain.metrics import MetricsReport, mean_defined
from ..domain.training import TrainConfig
from ..domain.types import LossKind, ModelMode
from .evaluation_usecase import execute_evaluate
from .errors import PipelineError
from .training_usecase import execute_train

Logger = Union[logging.Logger, logging.LoggerAdapter]
SUMMARY_LABEL = "mIoU"


def _evaluation_split(repository: IDatasetRepository) -> str:
    for split in ("test", "val", "train"):
        if repository.records(split):
            return split
    raise PipelineError("Il dataset non contiene campioni assegnati a nessuno split.")


def _train_and_evaluate(
    repository: IDatasetRepository,
    store: ICheckpointStore,
    writer: IResultWriter,
    config: TrainConfig,
    run: ToolkitConfig,
    split: str,
    logger: Logger,
) -> MetricsReport:
    config = replace(config, output_dir=run.output_directory, resume=False)
    result = execute_train(repository, store, writer, config, run, logger)
    return execute_evaluate(
        repository,
        store,
        writer,
        run,
        result.best_checkpoint,
        split,
        logger,
        batch_size=config.batch_size,
    )


def _round(value: Optional[float]) -> Optional[float]:
    return None if value is None else round(float(value), 6)


def execute_compare_modes(
    repository: IDatasetRepository,
    store: ICheckpointStore,
    writer: IResultWriter,
    base_config: TrainConfig,
    toolkit: ToolkitConfig,
    seeds: Sequence[int],
    logger: Logger,
) -> List[Dict[str, Any]]:
    """
    Addestra le due modalità con gli stessi semi e le stesse epoche, poi confronta le IoU
    per classe (media sui semi) sullo split di test. Una riga per classe più la riga mIoU.
    """
    try:
        manifest = repository.load_manifest()
        taxonomy = repository.load_taxonomy()
        confusable = {name for pair in manifest.get("confusable_pairs", []) for name in pair}
        split = _evaluation_split(repository)
        logger.info(f"Confronto tra modalità su {len(seeds)} semi, valutazione sullo split '{split}'.")

        per_mode: Dict[str, List[MetricsReport]] = {m.value: [] for m in ModelMode}
        for seed in seeds:
            for mode in (ModelMode.TIME_SERIES, ModelMode.SINGLE_IMAGE):
                run = toolkit.run_directory("compare_modes", mode.value, f"seed_{seed}")
                config = replace(base_config, mode=mode.value, seed=int(seed))
                report = _train_and_evaluate(repository, store, writer, config, run, split, logger)
                per_mode[mode.value].append(report)
                logger.info(f"Modalità {mode.value}, seme {seed}: mIoU {report.miou:.4f}")

        def mean_iou(mode: ModelMode, name: str) -> Optional[float]:
            return mean_defined(r.per_class_iou.get(name) for r in per_mode[mode.value])

        rows: List[Dict[str, Any]] = []
        for name in taxonomy.species:
            ts = mean_iou(ModelMode.TIME_SERIES, name)
            si = mean_iou(ModelMode.SINGLE_IMAGE, name)
            rows.append(
                {
                    "class": name,
                    "time_series_iou": _round(ts),
                    "single_image_iou": _round(si),
                    "delta": _round(ts - si) if ts is not None and si is not None else None,
                    "confusable": name in confusable,
                }
            )
        ts_miou = statistics.fmean(r.miou for r in per_mode[ModelMode.TIME_SERIES.value])
        si_miou = statistics.fmean(r.miou for r in per_mode[ModelMode.SINGLE_IMAGE.value])
        rows.append(
            {
                "class": SUMMARY_LABEL,
                "time_series_iou": _round(ts_miou),
                "single_image_iou": _round(si_miou),
                "delta": _round(ts_miou - si_miou),
                "confusable": False,
            }
        )

        Path(toolkit.comparison_directory).mkdir(parents=True, exist_ok=True)
        writer.write_comparison_csv(rows, toolkit.mode_comparison_file)
        pair_rows = [r for r in rows if r["confusable"]]
        if pair_rows:
            logger.info(
                "Coppia confondibile: "
                + ", ".join(f"{r['class']} delta {r['delta']}" for r in pair_rows)
            )
        return rows

    except (PipelineError, DomainError) as e:
        logger.error(f"Errore nel confronto tra modalità: {e}", exc_info=True)
        raise
    except Exception as e:
        logger.critical(f"Errore imprevisto nel confronto tra modalità: {e}", exc_info=True)
        raise PipelineError("Errore critico nel confronto tra modalità.") from e


def execute_compare_losses(
    repository: IDatasetRepository,
    store: ICheckpointStore,
    writer: IResultWriter,
    base_config: TrainConfig,
    toolkit: ToolkitConfig,
    seeds: Sequence[int],
    logger: Logger,
) -> List[Dict[str, Any]]:
    """HLoss contro Dice+CE a parità di semi; righe per seme più ``mean`` e ``std`` per loss."""
    try:
        split = _evaluation_split(repository)
        logger.info(f"Confronto tra loss su {len(seeds)} semi, valutazione sullo split '{split}'.")
        rows: List[Dict[str, Any]] = []
        for loss in LossKind:
            per_seed: List[Dict[str, Any]] = []
            for seed in seeds:
                run = toolkit.run_directory("compare_losses", loss.value, f"seed_{seed}")
                config = replace(base_config, loss=loss.value, seed=int(seed))
                report = _train_and_evaluate(repository, store, writer, config, run, split, logger)
                per_seed.append(
                    {
                        "loss": loss.value,
                        "seed": str(seed),
                        "miou": _round(report.miou),
                        "genus_miou": _round(report.genus_miou),
                        "taxon_miou": _round(report.taxon_miou),
                    }
                )
            rows += per_seed
            for label, reducer in (("mean", statistics.fmean), ("std", statistics.pstdev)):
                summary: Dict[str, Any] = {"loss": loss.value, "seed": label}
                for column in ("miou", "genus_miou", "taxon_miou"):
                    values = [r[column] for r in per_seed if r[column] is not None]
                    summary[column] = _round(reducer(values)) if values else None
                rows.append(summary)

        Path(toolkit.comparison_directory).mkdir(parents=True, exist_ok=True)
        writer.write_comparison_csv(rows, toolkit.loss_comparison_file)
        return rows

    except (PipelineError, DomainError) as e:
        logger.error(f"Errore nel confronto tra loss: {e}", exc_info=True)
        raise
    except Exception as e:
        logger.critical(f"Errore imprevisto nel confronto tra loss: {e}", exc_info=True)
        raise PipelineError("Errore critico nel confronto tra loss.") from e
