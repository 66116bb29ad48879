import logging
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Dict, Optional, Tuple, Union

from ..config import ToolkitConfig
from ..domain.errors import DomainError
from ..domain.gradcheck import (
    GradcheckReport,
    ModelBuilder,
    composite_builder,
    conv2d_builder,
    gradcheck,
    preset_input_shape,
    processor_builder,
    unet_builder,
)
from ..domain.interfaces import IResultWriter
from ..domain.models import ModelSpec, ProcessorSpec, TinyUNetSpec
from ..domain.synthesis import DEFAULT_SPECIES
from ..domain.taxonomy import Taxonomy, default_taxonomy_path, load_taxonomy
from ..domain.types import ModelMode
from .data_generation_usecase import restrict_taxonomy
from .errors import InvalidInputError, PipelineError

Logger = Union[logging.Logger, logging.LoggerAdapter]

BLOCK_TOLERANCE = 1e-4
COMPOSITE_TOLERANCE = 1e-3

# Ogni livello della U-Net dimezza il lato: l'ingresso deve essere divisibile per 2**depth.
SIZE_MULTIPLE = 2 ** TinyUNetSpec(3, 1).depth


@dataclass(frozen=True)
class GradcheckPreset:
    name: str
    tolerance: float
    build: Callable[[int, Taxonomy], Tuple[ModelBuilder, Tuple[int, ...]]]


def _conv2d(size: int, taxonomy: Taxonomy):
    return conv2d_builder(3, 4), (1, 3, size, size)


def _processor(size: int, taxonomy: Taxonomy):
    spec = ProcessorSpec()
    return processor_builder(spec), (1, spec.time_steps, spec.in_channels, size, size)


def _unet(size: int, taxonomy: Taxonomy):
    spec = TinyUNetSpec(3, taxonomy.num_species)
    return unet_builder(spec), (1, 3, size, size)


def _composite(mode: ModelMode):
    def build(size: int, taxonomy: Taxonomy):
        spec = ModelSpec.default(mode, num_classes=taxonomy.num_species)
        return composite_builder(spec, taxonomy, (1, size, size)), preset_input_shape(spec, size)

    return build


PRESETS: Dict[str, GradcheckPreset] = {
    "conv2d": GradcheckPreset("conv2d", BLOCK_TOLERANCE, _conv2d),
    "processor": GradcheckPreset("processor", BLOCK_TOLERANCE, _processor),
    "unet": GradcheckPreset("unet", BLOCK_TOLERANCE, _unet),
    "time_series": GradcheckPreset("time_series", COMPOSITE_TOLERANCE, _composite(ModelMode.TIME_SERIES)),
    "single_image": GradcheckPreset("single_image", COMPOSITE_TOLERANCE, _composite(ModelMode.SINGLE_IMAGE)),
}


def probe_taxonomy() -> Taxonomy:
    return restrict_taxonomy(load_taxonomy(default_taxonomy_path()), DEFAULT_SPECIES)


def execute_gradcheck(
    writer: IResultWriter,
    toolkit: ToolkitConfig,
    model: str,
    size: int,
    logger: Logger,
    tolerance: Optional[float] = None,
    seed: int = 0,
    samples: int = 20,
) -> GradcheckReport:
    """Esegue il controllo dei gradienti su un modello predefinito e salva ``gradcheck.json``."""
    preset = PRESETS.get(model)
    if preset is None:
        raise InvalidInputError(f"Modello '{model}' non previsto. Valori ammessi: {sorted(PRESETS)}")
    if size < SIZE_MULTIPLE or size % SIZE_MULTIPLE:
        raise InvalidInputError(f"size deve essere un multiplo di {SIZE_MULTIPLE} (ricevuto {size}).")

    try:
        builder, input_shape = preset.build(size, probe_taxonomy())
        limit = preset.tolerance if tolerance is None else tolerance
        logger.info(f"Gradcheck '{model}' su ingresso {input_shape}, tolleranza {limit:.1e}.")

        started = time.perf_counter()
        report = gradcheck(builder, input_shape, limit, seed=seed, samples=samples)
        elapsed = time.perf_counter() - started

        Path(toolkit.output_directory).mkdir(parents=True, exist_ok=True)
        payload = asdict(report)
        payload.update({"model": model, "size": size, "seed": seed, "seconds": round(elapsed, 3)})
        writer.write_json(payload, toolkit.gradcheck_report_file)

        log = logger.info if report.passed else logger.error
        log(f"{report.summary()} in {elapsed:.1f}s")
        return report

    except (PipelineError, DomainError) as e:
        logger.error(f"Errore durante il gradcheck: {e}", exc_info=True)
        raise
    except Exception as e:
        logger.critical(f"Errore imprevisto durante il gradcheck: {e}", exc_info=True)
        raise PipelineError("Errore critico durante il gradcheck.") from e
