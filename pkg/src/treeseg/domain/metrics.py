"""
IoU per classe, mIoU e matrice di confusione.

La matrice è accumulata con ``np.bincount`` (righe = verità, colonne = predizione);
l'unione di due matrici è una somma, quindi associativa e commutativa. I pixel
ignorati in una qualsiasi delle due maschere sono esclusi.
"""

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .constants import IGNORE_INDEX
from .errors import MetricsError
from .taxonomy import Taxonomy
from .tensor import Tensor, no_grad
from .types import TaxonomyLevel


def iou(
    pred_mask: np.ndarray,
    true_mask: np.ndarray,
    class_id: int,
    ignore_index: int = IGNORE_INDEX,
) -> Optional[float]:
    pred = np.asarray(pred_mask)
    true = np.asarray(true_mask)
    if pred.shape != true.shape:
        raise MetricsError(f"Maschere di forma diversa: {pred.shape} vs {true.shape}.")
    valid = (pred != ignore_index) & (true != ignore_index)
    a = (pred == class_id) & valid
    b = (true == class_id) & valid
    intersection = int(np.count_nonzero(a & b))
    union = int(np.count_nonzero(a)) + int(np.count_nonzero(b)) - intersection
    if union == 0:
        return None
    return intersection / union


def mean_defined(values: Iterable[Optional[float]]) -> Optional[float]:
    defined = [v for v in values if v is not None]
    return sum(defined) / len(defined) if defined else None


class ConfusionMatrix:
    def __init__(self, num_classes: int, matrix: Optional[np.ndarray] = None):
        self.num_classes = num_classes
        self.matrix = (
            np.zeros((num_classes, num_classes), dtype=np.int64)
            if matrix is None
            else np.asarray(matrix, dtype=np.int64)
        )

    def update(
        self, pred_mask: np.ndarray, true_mask: np.ndarray, ignore_index: int = IGNORE_INDEX
    ) -> "ConfusionMatrix":
        pred = np.asarray(pred_mask).astype(np.int64).ravel()
        true = np.asarray(true_mask).astype(np.int64).ravel()
        if pred.shape != true.shape:
            raise MetricsError(f"Maschere di forma diversa: {pred.shape} vs {true.shape}.")
        valid = (pred != ignore_index) & (true != ignore_index)
        pred, true = pred[valid], true[valid]
        k = self.num_classes
        if np.any((pred < 0) | (pred >= k) | (true < 0) | (true >= k)):
            raise MetricsError(f"Classe fuori intervallo per una matrice {k}×{k}.")
        self.matrix += np.bincount(k * true + pred, minlength=k * k).reshape(k, k)
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes:
            raise MetricsError("Impossibile unire matrici di dimensione diversa.")
        return ConfusionMatrix(self.num_classes, self.matrix + other.matrix)

    def aggregate(self, mapping: Sequence[int], size: int) -> "ConfusionMatrix":
        """Proietta la matrice su un livello più grossolano (argmax mappato nella gerarchia)."""
        index = np.asarray(mapping, dtype=np.int64)
        projector = np.zeros((self.num_classes, size), dtype=np.int64)
        projector[np.arange(self.num_classes), index] = 1
        return ConfusionMatrix(size, projector.T @ self.matrix @ projector)

    @property
    def total(self) -> int:
        return int(self.matrix.sum())

    def gt_pixels(self) -> np.ndarray:
        return self.matrix.sum(axis=1)

    def pred_pixels(self) -> np.ndarray:
        return self.matrix.sum(axis=0)

    def per_class_iou(self) -> List[Optional[float]]:
        tp = np.diag(self.matrix)
        union = self.gt_pixels() + self.pred_pixels() - tp
        return [None if u == 0 else int(t) / int(u) for t, u in zip(tp, union)]

    def accuracy(self) -> Optional[float]:
        return None if self.total == 0 else int(np.trace(self.matrix)) / self.total


@dataclass
class MetricsReport:
    class_names: List[str]
    per_class_iou: Dict[str, Optional[float]]
    miou: float
    confusion: np.ndarray
    excluded_classes: List[str]
    gt_pixels: Dict[str, int]
    pred_pixels: Dict[str, int]
    categories: Dict[str, Optional[str]] = field(default_factory=dict)
    pixel_accuracy: Optional[float] = None
    genus_miou: Optional[float] = None
    taxon_miou: Optional[float] = None
    genus_accuracy: Optional[float] = None
    taxon_accuracy: Optional[float] = None
    undefined_classes: List[str] = field(default_factory=list)

    def included(self, name: str) -> bool:
        return name not in self.excluded_classes

    def rows(self) -> List[Dict[str, Any]]:
        return [
            {
                "class": name,
                "iou": self.per_class_iou[name],
                "gt_pixels": self.gt_pixels[name],
                "pred_pixels": self.pred_pixels[name],
                "included": self.included(name),
            }
            for name in self.class_names
        ]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "class_names": list(self.class_names),
            "per_class_iou": dict(self.per_class_iou),
            "miou": self.miou,
            "confusion": self.confusion.tolist(),
            "excluded_classes": list(self.excluded_classes),
            "gt_pixels": dict(self.gt_pixels),
            "pred_pixels": dict(self.pred_pixels),
            "categories": dict(self.categories),
            "pixel_accuracy": self.pixel_accuracy,
            "genus_miou": self.genus_miou,
            "taxon_miou": self.taxon_miou,
            "genus_accuracy": self.genus_accuracy,
            "taxon_accuracy": self.taxon_accuracy,
            "undefined_classes": list(self.undefined_classes),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "MetricsReport":
        return cls(
            class_names=list(data["class_names"]),
            per_class_iou=dict(data["per_class_iou"]),
            miou=float(data["miou"]),
            confusion=np.asarray(data["confusion"], dtype=np.int64),
            excluded_classes=list(data.get("excluded_classes", [])),
            gt_pixels={k: int(v) for k, v in data["gt_pixels"].items()},
            pred_pixels={k: int(v) for k, v in data["pred_pixels"].items()},
            categories=dict(data.get("categories", {})),
            pixel_accuracy=data.get("pixel_accuracy"),
            genus_miou=data.get("genus_miou"),
            taxon_miou=data.get("taxon_miou"),
            genus_accuracy=data.get("genus_accuracy"),
            taxon_accuracy=data.get("taxon_accuracy"),
            undefined_classes=list(data.get("undefined_classes", [])),
        )


def build_report(confusion: ConfusionMatrix, taxonomy: Taxonomy) -> MetricsReport:
    if confusion.num_classes != taxonomy.num_species:
        raise MetricsError(
            f"Matrice {confusion.num_classes}×{confusion.num_classes} incompatibile con "
            f"{taxonomy.num_species} specie."
        )
    if confusion.total == 0:
        raise MetricsError("Nessun pixel valutabile: tutte le etichette sono ignorate.")

    names = list(taxonomy.species)
    ious = confusion.per_class_iou()
    per_class = dict(zip(names, ious))
    miou = mean_defined(ious)

    level_scores: Dict[TaxonomyLevel, Tuple[Optional[float], Optional[float]]] = {}
    for level in (TaxonomyLevel.GENUS, TaxonomyLevel.TAXON):
        coarse = confusion.aggregate(taxonomy.level_map(level), taxonomy.level_size(level))
        level_scores[level] = (mean_defined(coarse.per_class_iou()), coarse.accuracy())

    gt, pred = confusion.gt_pixels(), confusion.pred_pixels()
    return MetricsReport(
        class_names=names,
        per_class_iou=per_class,
        miou=float(miou) if miou is not None else math.nan,
        confusion=confusion.matrix.copy(),
        excluded_classes=list(taxonomy.excluded_species) + ["background"],
        gt_pixels={n: int(v) for n, v in zip(names, gt)},
        pred_pixels={n: int(v) for n, v in zip(names, pred)},
        categories={n: taxonomy.category_of_species(i) for i, n in enumerate(names)},
        pixel_accuracy=confusion.accuracy(),
        genus_miou=level_scores[TaxonomyLevel.GENUS][0],
        genus_accuracy=level_scores[TaxonomyLevel.GENUS][1],
        taxon_miou=level_scores[TaxonomyLevel.TAXON][0],
        taxon_accuracy=level_scores[TaxonomyLevel.TAXON][1],
        undefined_classes=[n for n, v in per_class.items() if v is None],
    )


def predict_labels(logits: Union[Tensor, np.ndarray]) -> np.ndarray:
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    return data.argmax(axis=1).astype(np.int64)


ModelForward = Callable[[np.ndarray], Union[Tensor, np.ndarray]]


def evaluate(
    model_forward: ModelForward,
    dataset_split: Iterable[Tuple[np.ndarray, np.ndarray]],
    taxonomy: Taxonomy,
) -> MetricsReport:
    """
    Valuta il modello su un insieme di batch ``(input, maschere)`` già preparati;
    la matrice di confusione è accumulata su tutti i campioni prima di derivare le IoU.
    """
    confusion = ConfusionMatrix(taxonomy.num_species)
    seen = 0
    with no_grad():
        for inputs, masks in dataset_split:
            predicted = predict_labels(model_forward(inputs))
            confusion.update(predicted, masks)
            seen += len(masks)
    if seen == 0:
        raise MetricsError("Split di valutazione vuoto.")
    return build_report(confusion, taxonomy)


def evaluate_predictions(
    pairs: Iterable[Tuple[np.ndarray, np.ndarray]], taxonomy: Taxonomy
) -> MetricsReport:
    """Come ``evaluate`` ma su coppie (predizione, verità) già calcolate."""
    confusion = ConfusionMatrix(taxonomy.num_species)
    seen = 0
    for predicted, truth in pairs:
        confusion.update(predicted, truth)
        seen += 1
    if seen == 0:
        raise MetricsError("Split di valutazione vuoto.")
    return build_report(confusion, taxonomy)
