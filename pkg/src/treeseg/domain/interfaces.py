from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Union

import numpy as np

from .metrics import MetricsReport
from .optim import AdamState
from .synthesis import LabeledSequence, SplitPlan
from .taxonomy import Taxonomy
from .types import JsonDict

PathLike = Union[str, Path]


@dataclass
class Checkpoint:
    params: Dict[str, np.ndarray]
    meta: JsonDict
    optimizer: Optional[AdamState] = None


@dataclass
class SampleRecord:
    sample_id: str
    tile: tuple
    split: Optional[str]
    crown_counts: Dict[str, int] = field(default_factory=dict)


class IDatasetRepository(ABC):
    @abstractmethod
    def write_dataset(
        self,
        samples: Sequence[LabeledSequence],
        taxonomy: Taxonomy,
        plan: SplitPlan,
        manifest_extra: JsonDict,
    ) -> Path:
        pass

    @abstractmethod
    def load_manifest(self) -> JsonDict:
        pass

    @abstractmethod
    def load_taxonomy(self) -> Taxonomy:
        pass

    @abstractmethod
    def records(self, split: Optional[str] = None) -> List[SampleRecord]:
        pass

    @abstractmethod
    def load_sample(self, record: SampleRecord) -> LabeledSequence:
        pass

    @abstractmethod
    def load_split(self, split: str) -> List[LabeledSequence]:
        pass

    @abstractmethod
    def rewrite_splits(self, plan: SplitPlan) -> JsonDict:
        pass


class ICheckpointStore(ABC):
    @abstractmethod
    def save(
        self,
        path: PathLike,
        params: Mapping[str, np.ndarray],
        meta: JsonDict,
        optimizer: Optional[AdamState] = None,
    ) -> None:
        pass

    @abstractmethod
    def load(self, path: PathLike) -> Checkpoint:
        pass


class IResultWriter(ABC):
    @abstractmethod
    def write_metrics_csv(self, rows: Sequence[Mapping[str, Any]], path: PathLike) -> None:
        pass

    @abstractmethod
    def read_metrics_csv(self, path: PathLike) -> List[Dict[str, Any]]:
        pass

    @abstractmethod
    def export_report(self, report: MetricsReport, path: PathLike, fmt: str = "csv") -> None:
        pass

    @abstractmethod
    def write_confusion_csv(self, report: MetricsReport, path: PathLike) -> None:
        pass

    @abstractmethod
    def write_comparison_csv(self, rows: Sequence[Mapping[str, Any]], path: PathLike) -> None:
        pass

    @abstractmethod
    def write_json(self, data: JsonDict, path: PathLike) -> None:
        pass

    @abstractmethod
    def write_overlays(
        self,
        sample_id: str,
        reference_frame: np.ndarray,
        truth: np.ndarray,
        prediction: np.ndarray,
        taxonomy: Taxonomy,
        directory: PathLike,
    ) -> List[Path]:
        pass

    @abstractmethod
    def write_training_plot(self, metrics_csv: PathLike, svg_path: PathLike) -> Path:
        pass
