import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

from ..domain.constants import (
    DEFAULT_CALENDAR,
    DEFAULT_MIN_CROWNS,
    DEFAULT_REFERENCE_INDEX,
    DEFAULT_SPLIT_RATIOS,
)
from ..domain.errors import DomainError
from ..domain.interfaces import IDatasetRepository
from ..domain.synthesis import (
    DEFAULT_SPECIES,
    SceneSpec,
    default_background,
    default_signatures,
    filter_rare_classes,
    find_confusable_pairs,
    grid_shape_for,
    select_timesteps,
    single_split_plan,
    spatial_split,
    synthesize_tiles,
)
from ..domain.taxonomy import Taxonomy, default_taxonomy_path, load_taxonomy
from ..domain.types import JsonDict
from .errors import InvalidInputError, PipelineError

Logger = Union[logging.Logger, logging.LoggerAdapter]


@dataclass
class GenerationRequest:
    seed: int = 7
    tiles: int = 64
    height: int = 64
    width: int = 64
    species: Sequence[str] = DEFAULT_SPECIES
    mix_weights: Optional[Dict[str, float]] = None
    crowns_range: Tuple[int, int] = (5, 9)
    noise_sigma: float = 0.02
    min_count: int = DEFAULT_MIN_CROWNS
    ratios: Sequence[float] = DEFAULT_SPLIT_RATIOS
    buffer: int = 1
    split: bool = True
    policy: str = "seasonal"
    reference_index: int = DEFAULT_REFERENCE_INDEX
    depth: int = 3
    workers: int = 1
    taxonomy_path: Optional[str] = None
    extra: JsonDict = field(default_factory=dict)


def restrict_taxonomy(taxonomy: Taxonomy, names: Sequence[str]) -> Taxonomy:
    """Tassonomia ridotta alle specie sintetizzate; l'ordine degli indici segue il file."""
    unknown = [n for n in names if n not in taxonomy.species]
    if unknown:
        raise InvalidInputError(f"Specie non presenti nella tassonomia: {unknown}")
    pruned, _ = taxonomy.prune([taxonomy.species_index(n) for n in names])
    return pruned


def execute_generate_dataset(
    repository: IDatasetRepository,
    request: GenerationRequest,
    logger: Logger,
) -> JsonDict:
    logger.info(
        f"Avvio generazione del dataset sintetico: {request.tiles} tile "
        f"{request.height}×{request.width}, seme {request.seed}."
    )
    try:
        base = load_taxonomy(request.taxonomy_path or default_taxonomy_path())
        taxonomy = restrict_taxonomy(base, list(request.species))
        signatures = default_signatures(taxonomy.species)

        if request.policy == "seasonal":
            selection = select_timesteps(DEFAULT_CALENDAR, tags=DEFAULT_CALENDAR, policy="seasonal")
        else:
            raise InvalidInputError(
                f"Politica '{request.policy}' non applicabile a firme di {len(DEFAULT_CALENDAR)} date."
            )
        signatures = [s.select(selection.indices) for s in signatures]
        background = default_background()[list(selection.indices)]
        logger.info(f"Istanti selezionati {selection.indices}: {list(selection.tags)}")

        pairs = find_confusable_pairs(signatures, request.reference_index)
        if pairs:
            logger.info(f"Coppie confondibili nel dataset: {pairs}")
        else:
            logger.warning("Nessuna coppia confondibile tra le specie selezionate.")

        scene = SceneSpec(
            height=request.height,
            width=request.width,
            crowns_range=tuple(request.crowns_range),
            mix_weights=request.mix_weights,
            noise_sigma=request.noise_sigma,
            seed=request.seed,
        )
        grid = grid_shape_for(request.tiles)
        samples = synthesize_tiles(
            scene,
            signatures,
            request.tiles,
            seed=request.seed,
            background=background,
            grid_shape=grid,
            workers=request.workers,
            depth=request.depth,
        )
        filtered = filter_rare_classes(samples, taxonomy, request.min_count)
        if filtered.removed:
            logger.warning(
                f"Classi rimosse (meno di {request.min_count} chiome): {filtered.removed}"
            )

        plan = spatial_split(grid, request.ratios, request.buffer) if request.split else single_split_plan(grid)
        logger.info(f"Suddivisione spaziale: bande {plan.band_widths} lungo {plan.axis}.")

        kept_pairs: List[List[str]] = [
            [a, b] for a, b in pairs if a in filtered.taxonomy.species and b in filtered.taxonomy.species
        ]
        manifest_extra: JsonDict = {
            "seed": request.seed,
            "num_tiles": request.tiles,
            "grid_shape": list(grid),
            "height": request.height,
            "width": request.width,
            "time_steps": len(selection.indices),
            "channels": 3,
            "calendar": list(DEFAULT_CALENDAR),
            "selection_policy": request.policy,
            "selected_indices": list(selection.indices),
            "tags": list(selection.tags),
            "reference_index": request.reference_index,
            "annotation_position": selection.reference_position,
            "confusable_pairs": kept_pairs,
            "mix_weights": request.mix_weights,
            "min_count": request.min_count,
            "ratios": list(request.ratios),
            "removed_classes": filtered.removed,
            "crown_totals": filtered.crown_totals,
            **request.extra,
        }
        repository.write_dataset(filtered.samples, filtered.taxonomy, plan, manifest_extra)
        manifest = repository.load_manifest()
        logger.info(
            f"Dataset generato: {manifest['num_samples']} campioni, "
            f"{filtered.taxonomy.num_species} specie."
        )
        return manifest

    except (PipelineError, DomainError) as e:
        logger.error(f"Errore nella generazione del dataset: {e}", exc_info=True)
        raise
    except Exception as e:
        logger.critical(f"Errore imprevisto nella generazione del dataset: {e}", exc_info=True)
        raise PipelineError("Errore critico durante la generazione del dataset.") from e


def execute_spatial_split(
    repository: IDatasetRepository,
    ratios: Sequence[float],
    buffer: int,
    logger: Logger,
) -> JsonDict:
    """Ricalcola l'assegnazione degli split di un dataset esistente."""
    try:
        manifest = repository.load_manifest()
        grid = tuple(manifest["grid_shape"])
        plan = spatial_split(grid, ratios, buffer)
        updated = repository.rewrite_splits(plan)
        logger.info(
            "Nuova suddivisione: "
            + ", ".join(f"{name}={len(ids)}" for name, ids in updated["splits"].items())
            + f", buffer={len(updated['buffer'])}"
        )
        return updated
    except (PipelineError, DomainError) as e:
        logger.error(f"Errore nella suddivisione spaziale: {e}", exc_info=True)
        raise
    except Exception as e:
        logger.critical(f"Errore imprevisto nella suddivisione spaziale: {e}", exc_info=True)
        raise PipelineError("Errore critico durante la suddivisione spaziale.") from e
