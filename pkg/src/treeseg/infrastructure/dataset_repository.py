import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from ..application.errors import DataPreparationError, MissingDataError
from ..domain.constants import SPLIT_NAMES
from ..domain.interfaces import IDatasetRepository, PathLike, SampleRecord
from ..domain.synthesis import LabeledSequence, SplitPlan
from ..domain.taxonomy import Taxonomy, load_taxonomy
from ..domain.types import JsonDict
from .file_writer import dump_json
from .graphics import read_pgm, write_pgm
from .tensor_io import atomic_write_bytes, read_tensor, write_tensor

MANIFEST_FILE = "manifest.json"
TAXONOMY_FILE = "taxonomy.json"
FORMAT_VERSION = 1


def sample_id_for(tile: Sequence[int]) -> str:
    return f"tile_{int(tile[0]):03d}_{int(tile[1]):03d}"


def split_section(plan: SplitPlan, ids_by_tile: Dict[tuple, str]) -> JsonDict:
    splits = {
        name: [ids_by_tile[t] for t in plan.tiles_in(name) if t in ids_by_tile]
        for name in SPLIT_NAMES
    }
    return {
        "splits": splits,
        "buffer": [ids_by_tile[t] for t in plan.buffer_tiles if t in ids_by_tile],
        "split_plan": {
            "grid_shape": list(plan.grid_shape),
            "axis": plan.axis,
            "band_widths": list(plan.band_widths),
            "buffer": plan.buffer,
        },
    }


class DirectoryDatasetRepository(IDatasetRepository):
    """
    Dataset su disco:

        <root>/manifest.json
        <root>/taxonomy.json
        <root>/samples/<id>.tseg     serie (T, C, H, W)
        <root>/masks/<id>.pgm        maschera a 8 bit, 255 = ignore
    """

    def __init__(
        self,
        root: PathLike,
        logger: Optional[Union[logging.Logger, logging.LoggerAdapter]] = None,
    ):
        self.root = Path(root)
        self.logger = logger or logging.getLogger(self.__class__.__name__)
        self._manifest: Optional[JsonDict] = None
        self._taxonomy: Optional[Taxonomy] = None

    @property
    def manifest_path(self) -> Path:
        return self.root / MANIFEST_FILE

    def write_dataset(
        self,
        samples: Sequence[LabeledSequence],
        taxonomy: Taxonomy,
        plan: SplitPlan,
        manifest_extra: JsonDict,
    ) -> Path:
        self.logger.info(f"Scrittura del dataset ({len(samples)} campioni) in: {self.root}")
        (self.root / "samples").mkdir(parents=True, exist_ok=True)
        (self.root / "masks").mkdir(parents=True, exist_ok=True)

        ids_by_tile = {tuple(s.tile): sample_id_for(s.tile) for s in samples}
        entries = []
        for sample in samples:
            sample_id = ids_by_tile[tuple(sample.tile)]
            write_tensor(self.root / "samples" / f"{sample_id}.tseg", sample.images.astype(np.float32))
            write_pgm(self.root / "masks" / f"{sample_id}.pgm", sample.mask)
            entries.append(
                {
                    "id": sample_id,
                    "tile": [int(v) for v in sample.tile],
                    "split": plan.assignments.get(tuple(sample.tile)),
                    "image": f"samples/{sample_id}.tseg",
                    "mask": f"masks/{sample_id}.pgm",
                    "crowns": {
                        taxonomy.species[k]: int(v) for k, v in sorted(sample.crown_counts.items())
                    },
                }
            )

        atomic_write_bytes(self.root / TAXONOMY_FILE, dump_json(taxonomy.to_dict()))
        manifest = dict(manifest_extra)
        manifest.update(
            {
                "format_version": FORMAT_VERSION,
                "num_samples": len(entries),
                "taxonomy": TAXONOMY_FILE,
                "samples": entries,
            }
        )
        manifest.update(split_section(plan, ids_by_tile))
        atomic_write_bytes(self.manifest_path, dump_json(manifest))
        self._manifest = None
        self._taxonomy = None
        self.logger.info(f"Manifest scritto in: {self.manifest_path}")
        return self.root

    def load_manifest(self) -> JsonDict:
        if self._manifest is None:
            if not self.manifest_path.exists():
                raise MissingDataError(f"Manifest del dataset non trovato: {self.manifest_path}")
            try:
                self._manifest = json.loads(self.manifest_path.read_text(encoding="utf-8"))
            except json.JSONDecodeError as e:
                raise DataPreparationError(f"Manifest non valido ({self.manifest_path}): {e}") from e
        return self._manifest

    def load_taxonomy(self) -> Taxonomy:
        if self._taxonomy is None:
            manifest = self.load_manifest()
            self._taxonomy = load_taxonomy(self.root / manifest.get("taxonomy", TAXONOMY_FILE))
        return self._taxonomy

    def records(self, split: Optional[str] = None) -> List[SampleRecord]:
        manifest = self.load_manifest()
        return [
            SampleRecord(
                sample_id=entry["id"],
                tile=tuple(entry["tile"]),
                split=entry.get("split"),
                crown_counts=dict(entry.get("crowns", {})),
            )
            for entry in manifest.get("samples", [])
            if split is None or entry.get("split") == split
        ]

    def load_sample(self, record: SampleRecord) -> LabeledSequence:
        images = read_tensor(self.root / "samples" / f"{record.sample_id}.tseg")
        mask = read_pgm(self.root / "masks" / f"{record.sample_id}.pgm")
        species = self.load_taxonomy().species
        counts = {species.index(name): int(v) for name, v in record.crown_counts.items() if name in species}
        return LabeledSequence(
            images=images.astype(np.float32),
            mask=mask,
            tile=tuple(record.tile),
            crown_counts=counts,
        )

    def load_split(self, split: str) -> List[LabeledSequence]:
        if split not in SPLIT_NAMES:
            raise DataPreparationError(f"Split sconosciuto: '{split}'. Valori ammessi: {list(SPLIT_NAMES)}")
        samples = [self.load_sample(r) for r in self.records(split)]
        self.logger.debug(f"Split '{split}': {len(samples)} campioni caricati.")
        return samples

    def rewrite_splits(self, plan: SplitPlan) -> JsonDict:
        manifest = dict(self.load_manifest())
        ids_by_tile = {tuple(e["tile"]): e["id"] for e in manifest.get("samples", [])}
        for entry in manifest["samples"]:
            entry["split"] = plan.assignments.get(tuple(entry["tile"]))
        manifest.update(split_section(plan, ids_by_tile))
        atomic_write_bytes(self.manifest_path, dump_json(manifest))
        self._manifest = None
        self.logger.info(f"Assegnazione degli split aggiornata in: {self.manifest_path}")
        return manifest
