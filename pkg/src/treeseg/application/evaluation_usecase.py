import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Union

from ..config import ToolkitConfig
from ..domain.constants import DEFAULT_REFERENCE_INDEX
from ..domain.errors import DomainError
from ..domain.interfaces import ICheckpointStore, IDatasetRepository, IResultWriter, PathLike
from ..domain.metrics import MetricsReport, evaluate, evaluate_predictions, predict_labels
from ..domain.models import BuiltModel, ModelSpec, build_model, resolve_mode
from ..domain.taxonomy import Taxonomy
from ..domain.tensor import no_grad
from ..domain.training import NormalizationStats, iter_batches, prepare_inputs
from ..domain.types import JsonDict
from .checkpoint_compat import check_compatibility, load_params_into
from .errors import MissingDataError, PipelineError

Logger = Union[logging.Logger, logging.LoggerAdapter]


@dataclass
class TrainedModel:
    model: BuiltModel
    spec: ModelSpec
    stats: Optional[NormalizationStats]
    meta: JsonDict


def load_trained_model(
    store: ICheckpointStore,
    checkpoint_path: PathLike,
    taxonomy: Taxonomy,
    mode: Optional[str] = None,
) -> TrainedModel:
    """Ricostruisce il modello dal sidecar; con ``mode`` esplicito la spec attesa è quella della modalità richiesta."""
    checkpoint = store.load(checkpoint_path)
    stored = ModelSpec.from_dict(checkpoint.meta["model"])
    expected = stored if mode is None else stored.with_mode(resolve_mode(mode))
    check_compatibility(checkpoint.meta, expected.to_dict(), list(taxonomy.species))

    model = build_model(expected.mode, expected, seed=0)
    load_params_into(model, checkpoint.params)
    stats = checkpoint.meta.get("normalization")
    return TrainedModel(
        model=model,
        spec=expected,
        stats=NormalizationStats.from_dict(stats) if stats else None,
        meta=checkpoint.meta,
    )


def _write_report(
    writer: IResultWriter, report: MetricsReport, toolkit: ToolkitConfig, split: str
) -> None:
    Path(toolkit.reports_directory).mkdir(parents=True, exist_ok=True)
    writer.export_report(report, toolkit.report_file(split, "csv"), "csv")
    writer.export_report(report, toolkit.report_file(split, "json"), "json")
    writer.write_confusion_csv(report, toolkit.confusion_file(split))


def execute_evaluate(
    repository: IDatasetRepository,
    store: ICheckpointStore,
    writer: IResultWriter,
    toolkit: ToolkitConfig,
    checkpoint_path: Optional[PathLike],
    split: str,
    logger: Logger,
    mode: Optional[str] = None,
    oracle: bool = False,
    batch_size: int = 4,
) -> MetricsReport:
    logger.info(f"Avvio valutazione sullo split '{split}'{' (oracolo)' if oracle else ''}.")
    try:
        taxonomy = repository.load_taxonomy()
        samples = repository.load_split(split)
        if not samples:
            raise MissingDataError(f"Split di valutazione '{split}' vuoto.")

        if oracle:
            report = evaluate_predictions(((s.mask, s.mask) for s in samples), taxonomy)
        else:
            if checkpoint_path is None:
                raise MissingDataError("Checkpoint obbligatorio per valutare un modello.")
            trained = load_trained_model(store, checkpoint_path, taxonomy, mode)
            report = evaluate(
                trained.model.forward,
                iter_batches(
                    samples,
                    trained.spec.mode.value,
                    trained.stats,
                    trained.spec.reference_index,
                    batch_size,
                ),
                taxonomy,
            )

        _write_report(writer, report, toolkit, split)
        if report.undefined_classes:
            logger.info(f"Classi con IoU non definita (assenti dallo split): {report.undefined_classes}")
        logger.info(
            f"mIoU {report.miou:.4f} - genere {report.genus_miou} - taxon {report.taxon_miou} "
            f"- accuratezza {report.pixel_accuracy}"
        )
        return report

    except (PipelineError, DomainError) as e:
        logger.error(f"Errore durante la valutazione: {e}", exc_info=True)
        raise
    except Exception as e:
        logger.critical(f"Errore imprevisto durante la valutazione: {e}", exc_info=True)
        raise PipelineError("Errore critico durante la valutazione.") from e


def execute_predict(
    repository: IDatasetRepository,
    store: ICheckpointStore,
    writer: IResultWriter,
    toolkit: ToolkitConfig,
    checkpoint_path: PathLike,
    split: str,
    logger: Logger,
    limit: Optional[int] = None,
    sample_ids: Optional[List[str]] = None,
) -> List[Path]:
    """Per ogni campione: fotogramma di riferimento, verità e predizione colorate (PPM)."""
    try:
        taxonomy = repository.load_taxonomy()
        trained = load_trained_model(store, checkpoint_path, taxonomy)
        records = repository.records(split)
        if sample_ids:
            records = [r for r in records if r.sample_id in set(sample_ids)]
        if limit is not None:
            records = records[:limit]
        if not records:
            raise MissingDataError(f"Nessun campione da visualizzare nello split '{split}'.")

        reference_index = int(trained.meta.get("model", {}).get("reference_index", DEFAULT_REFERENCE_INDEX))
        written: List[Path] = []
        for record in records:
            sample = repository.load_sample(record)
            inputs = prepare_inputs(
                sample.images[None], trained.spec.mode.value, trained.stats, reference_index
            )
            with no_grad():
                predicted = predict_labels(trained.model.forward(inputs))[0]
            written += writer.write_overlays(
                record.sample_id,
                sample.images[reference_index],
                sample.mask,
                predicted,
                taxonomy,
                toolkit.predictions_directory,
            )
        logger.info(f"{len(written)} immagini scritte in {toolkit.predictions_directory}.")
        return written

    except (PipelineError, DomainError) as e:
        logger.error(f"Errore durante la predizione: {e}", exc_info=True)
        raise
    except Exception as e:
        logger.critical(f"Errore imprevisto durante la predizione: {e}", exc_info=True)
        raise PipelineError("Errore critico durante la predizione.") from e
