import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..config import ToolkitConfig
from ..domain.constants import DEFAULT_REFERENCE_INDEX
from ..domain.errors import DomainError, LossUndefinedError, TrainingDivergedError, ValidationError
from ..domain.interfaces import ICheckpointStore, IDatasetRepository, IResultWriter
from ..domain.metrics import evaluate
from ..domain.models import ModelSpec, build_model
from ..domain.optim import AdamState, learning_rate
from ..domain.synthesis import LabeledSequence, augment
from ..domain.taxonomy import Taxonomy
from ..domain.training import (
    NormalizationStats,
    TrainConfig,
    assemble_batches,
    compute_normalization_stats,
    epoch_order,
    iter_batches,
    prepare_inputs,
    sample_rng,
    train_step,
)
from ..domain.types import JsonDict
from .checkpoint_compat import check_compatibility, load_params_into
from .errors import CheckpointMismatchError, ConfigValidationError, MissingDataError, PipelineError

Logger = Union[logging.Logger, logging.LoggerAdapter]
LOSS_COMPONENTS = ("species", "genus", "taxon", "dice", "ce")


@dataclass
class TrainingResult:
    metrics_csv: Path
    last_checkpoint: Path
    best_checkpoint: Path
    rows: List[Dict[str, Any]] = field(default_factory=list)
    best_miou: Optional[float] = None
    best_epoch: Optional[int] = None


def model_spec_for(config: TrainConfig, taxonomy: Taxonomy, manifest: JsonDict) -> ModelSpec:
    return ModelSpec.default(
        config.mode,
        num_classes=taxonomy.num_species,
        time_steps=int(manifest.get("time_steps", 4)),
        in_channels=int(manifest.get("channels", 3)),
        base_channels=config.base_channels,
        depth=config.depth,
        reference_index=int(manifest.get("reference_index", DEFAULT_REFERENCE_INDEX)),
    )


def _checkpoint_meta(
    spec: ModelSpec,
    config: TrainConfig,
    taxonomy: Taxonomy,
    stats: NormalizationStats,
    epoch: int,
    best_miou: Optional[float],
    best_epoch: Optional[int],
) -> JsonDict:
    return {
        "model": spec.to_dict(),
        "epoch": epoch,
        "seed": config.seed,
        "loss": config.loss,
        "mode": spec.mode.value,
        "species": list(taxonomy.species),
        "normalization": stats.to_dict(),
        "best_miou": best_miou,
        "best_epoch": best_epoch,
        "train_config": config.to_dict(),
    }


class _BatchLoader:
    """Prepara i batch di un'epoca su thread di lavoro; ogni campione ha il proprio flusso casuale."""

    def __init__(
        self,
        samples: Sequence[LabeledSequence],
        config: TrainConfig,
        stats: NormalizationStats,
        reference_index: int,
    ):
        self.samples = samples
        self.config = config
        self.stats = stats
        self.reference_index = reference_index

    def _sample(self, epoch: int, index: int) -> LabeledSequence:
        sample = self.samples[index]
        if self.config.augment:
            return augment(sample, sample_rng(self.config.seed, epoch, index))
        return sample

    def _batch(self, epoch: int, indices: List[int]) -> Tuple[np.ndarray, np.ndarray]:
        chosen = [self._sample(epoch, i) for i in indices]
        images = np.stack([s.images for s in chosen])
        masks = np.stack([s.mask for s in chosen]).astype(np.int64)
        return prepare_inputs(images, self.config.mode, self.stats, self.reference_index), masks

    def epoch(self, epoch: int, pool: Optional[ThreadPoolExecutor]):
        batches = assemble_batches(epoch_order(len(self.samples), self.config.seed, epoch), self.config.batch_size)
        if pool is None:
            return (self._batch(epoch, b) for b in batches)
        return pool.map(lambda b: self._batch(epoch, b), batches)


def execute_train(
    repository: IDatasetRepository,
    store: ICheckpointStore,
    writer: IResultWriter,
    config: TrainConfig,
    toolkit: ToolkitConfig,
    logger: Logger,
) -> TrainingResult:
    try:
        config.validate()
    except ValidationError as e:
        raise ConfigValidationError(e.problems) from e

    logger.info(
        f"Avvio addestramento: modalità {config.mode}, loss {config.loss}, "
        f"{config.epochs} epoche, seme {config.seed}."
    )
    try:
        manifest = repository.load_manifest()
        taxonomy = repository.load_taxonomy()
        reference_index = int(manifest.get("reference_index", DEFAULT_REFERENCE_INDEX))

        train = repository.load_split(config.train_split)
        if not train:
            raise MissingDataError(f"Split di addestramento '{config.train_split}' vuoto.")
        val = repository.load_split(config.val_split)
        if not val:
            logger.warning(f"Split di validazione '{config.val_split}' vuoto: mIoU non calcolata.")

        spec = model_spec_for(config, taxonomy, manifest)
        model = build_model(spec.mode, spec, config.seed)
        state = AdamState.for_params(model.params)
        stats = compute_normalization_stats(s.images for s in train)
        logger.info(
            f"{len(train)} campioni di addestramento, {len(val)} di validazione; "
            f"{model.params.count()} parametri."
        )

        metrics_csv = Path(toolkit.metrics_csv_file)
        last_path = Path(toolkit.last_checkpoint_file)
        best_path = Path(toolkit.best_checkpoint_file)
        rows: List[Dict[str, Any]] = []
        start_epoch = 0
        best_miou: Optional[float] = None
        best_epoch: Optional[int] = None

        if config.resume and last_path.exists():
            checkpoint = store.load(last_path)
            check_compatibility(checkpoint.meta, spec.to_dict(), list(taxonomy.species))
            load_params_into(model, checkpoint.params)
            if checkpoint.optimizer is None:
                raise CheckpointMismatchError("Checkpoint senza stato dell'ottimizzatore.", field="optimizer")
            state = checkpoint.optimizer
            stats = NormalizationStats.from_dict(checkpoint.meta["normalization"])
            start_epoch = int(checkpoint.meta["epoch"]) + 1
            best_miou = checkpoint.meta.get("best_miou")
            best_epoch = checkpoint.meta.get("best_epoch")
            rows = [r for r in writer.read_metrics_csv(metrics_csv) if r["epoch"] < start_epoch]
            logger.info(f"Ripresa dall'epoca {start_epoch} (checkpoint {last_path}).")

        loader = _BatchLoader(train, config, stats, reference_index)
        pool = ThreadPoolExecutor(max_workers=config.workers) if config.workers > 1 else None
        try:
            for epoch in range(start_epoch, config.epochs):
                lr = learning_rate(config.lr, config.lr_decay_gamma, epoch)
                totals: Dict[str, float] = {}
                steps = 0
                for inputs, masks in loader.epoch(epoch, pool):
                    try:
                        result = train_step(model, inputs, masks, taxonomy, config, state, lr)
                    except TrainingDivergedError as e:
                        logger.error(
                            f"Addestramento divergente all'epoca {epoch}: {e}. "
                            f"Ultimo checkpoint valido conservato in {last_path}."
                        )
                        raise
                    except LossUndefinedError:
                        logger.warning(f"Epoca {epoch}: batch senza pixel etichettati, saltato.")
                        continue
                    totals["total"] = totals.get("total", 0.0) + result.loss
                    for name, value in result.components.items():
                        totals[name] = totals.get(name, 0.0) + value
                    steps += 1

                if not steps:
                    raise MissingDataError(
                        f"Epoca {epoch}: nessun batch con pixel etichettati nello split '{config.train_split}'."
                    )

                val_miou = None
                if val:
                    report = evaluate(
                        model.forward,
                        iter_batches(val, config.mode, stats, reference_index, config.batch_size),
                        taxonomy,
                    )
                    val_miou = None if math.isnan(report.miou) else report.miou

                row: Dict[str, Any] = {"epoch": epoch, "lr": lr, "loss_total": totals["total"] / steps}
                for name in LOSS_COMPONENTS:
                    row[f"loss_{name}"] = totals[name] / steps if name in totals else None
                row["val_miou"] = val_miou
                rows.append(row)
                writer.write_metrics_csv(rows, metrics_csv)

                if val_miou is not None and (best_miou is None or val_miou > best_miou):
                    best_miou, best_epoch = val_miou, epoch
                    store.save(
                        best_path,
                        model.params.state_dict(),
                        _checkpoint_meta(spec, config, taxonomy, stats, epoch, best_miou, best_epoch),
                    )
                store.save(
                    last_path,
                    model.params.state_dict(),
                    _checkpoint_meta(spec, config, taxonomy, stats, epoch, best_miou, best_epoch),
                    optimizer=state,
                )
                miou_text = "n/d" if val_miou is None else f"{val_miou:.4f}"
                logger.info(
                    f"Epoca {epoch + 1}/{config.epochs} - lr {lr:.3e} - loss {row['loss_total']:.5f} "
                    f"- val mIoU {miou_text}"
                )
        finally:
            if pool is not None:
                pool.shutdown(wait=True)

        if not best_path.exists() and last_path.exists():
            checkpoint = store.load(last_path)
            store.save(best_path, checkpoint.params, checkpoint.meta)

        logger.info(f"Addestramento completato. Migliore mIoU {best_miou} all'epoca {best_epoch}.")
        return TrainingResult(metrics_csv, last_path, best_path, rows, best_miou, best_epoch)

    except (PipelineError, DomainError) as e:
        logger.error(f"Errore durante l'addestramento: {e}", exc_info=True)
        raise
    except Exception as e:
        logger.critical(f"Errore imprevisto durante l'addestramento: {e}", exc_info=True)
        raise PipelineError("Errore critico durante l'addestramento.") from e


def execute_plot(
    writer: IResultWriter,
    metrics_csv: Union[str, Path],
    svg_path: Union[str, Path],
    logger: Logger,
) -> Path:
    """Curve di loss e mIoU di validazione in SVG a partire dal CSV delle metriche."""
    try:
        return writer.write_training_plot(metrics_csv, svg_path)
    except (PipelineError, DomainError) as e:
        logger.error(f"Errore nella generazione del grafico: {e}")
        raise
    except Exception as e:
        logger.critical(f"Errore imprevisto nella generazione del grafico: {e}", exc_info=True)
        raise PipelineError("Errore critico nella generazione del grafico.") from e
