"""
Obiettivi di addestramento: cross-entropia per specie, termini aggregati per genere
e taxon, loss gerarchica pesata e baseline Dice+CE.

Le probabilità in ingresso hanno forma (S, H, W) oppure (N, S, H, W); le etichette
(H, W) oppure (N, H, W). I pixel con ``IGNORE_INDEX`` non contribuiscono a nessun termine.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Union

import numpy as np

from .constants import DICE_EPSILON, IGNORE_INDEX
from .errors import LossUndefinedError, ShapeMismatchError, ValidationError
from .taxonomy import Taxonomy, aggregate_labels, aggregate_probs
from .tensor import Tensor
from .types import LossKind, Normalization, TaxonomyLevel


@dataclass(frozen=True)
class HierarchyWeights:
    lambda1: float = 1.0
    lambda2: float = 0.3
    lambda3: float = 0.1

    def __post_init__(self):
        bad = [
            f"{name}={value}"
            for name, value in (("lambda1", self.lambda1), ("lambda2", self.lambda2), ("lambda3", self.lambda3))
            if not math.isfinite(value) or value < 0
        ]
        if bad:
            raise ValidationError([f"peso gerarchico non valido: {b}" for b in bad])

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.lambda1, self.lambda2, self.lambda3)


@dataclass
class LossValue:
    total: Tensor
    components: Dict[str, float] = field(default_factory=dict)

    @property
    def value(self) -> float:
        return self.total.item()


def _class_axis(p: Tensor) -> int:
    if p.ndim == 3:
        return 0
    if p.ndim == 4:
        return 1
    raise ShapeMismatchError("loss", p.shape, detail="attese probabilità (S,H,W) o (N,S,H,W)")


def _one_hot(y: np.ndarray, num_classes: int, like: Tensor, ignore_index: int) -> np.ndarray:
    """Codifica one-hot sull'asse delle classi; righe nulle per i pixel ignorati."""
    axis = _class_axis(like)
    y = np.asarray(y)
    expected = like.shape[:axis] + like.shape[axis + 1 :]
    if y.shape != expected:
        raise ShapeMismatchError("loss", like.shape, y.shape, detail="etichette e probabilità non allineate")
    valid = y != ignore_index
    if not np.any(valid):
        raise LossUndefinedError("Tutti i pixel sono ignorati: loss non definita.")
    if np.any(y[valid] >= num_classes) or np.any(y[valid] < 0):
        raise ShapeMismatchError("loss", (num_classes,), detail="etichetta fuori intervallo")
    classes = np.arange(num_classes).reshape((-1,) + (1,) * (y.ndim - axis))
    encoded = (np.expand_dims(y, axis) == classes) & np.expand_dims(valid, axis)
    return encoded.astype(like.dtype)


def _cross_entropy(
    p: Tensor,
    y: np.ndarray,
    num_classes: int,
    normalization: Normalization,
    ignore_index: int,
) -> Tensor:
    axis = _class_axis(p)
    if p.shape[axis] != num_classes:
        raise ShapeMismatchError("cross_entropy", p.shape, (num_classes,))
    target = _one_hot(y, num_classes, p, ignore_index)
    summed = -(Tensor(target, dtype=p.dtype) * p.log()).sum()
    if Normalization(normalization) is Normalization.BY_CLASSES:
        batch = p.shape[0] if p.ndim == 4 else 1
        return summed / float(num_classes * batch)
    valid_pixels = int(np.count_nonzero(np.asarray(y) != ignore_index))
    return summed / float(valid_pixels)


def species_ce(
    p_species: Tensor,
    y: np.ndarray,
    normalization: Union[Normalization, str] = Normalization.BY_CLASSES,
    ignore_index: int = IGNORE_INDEX,
) -> Tensor:
    axis = _class_axis(p_species)
    return _cross_entropy(p_species, y, p_species.shape[axis], Normalization(normalization), ignore_index)


def level_ce(
    p_species: Tensor,
    y: np.ndarray,
    taxonomy: Taxonomy,
    level: Union[TaxonomyLevel, str],
    normalization: Union[Normalization, str] = Normalization.BY_CLASSES,
    ignore_index: int = IGNORE_INDEX,
) -> Tensor:
    """Cross-entropia al livello indicato, su probabilità ed etichette aggregate dalla specie."""
    level = TaxonomyLevel(level)
    probs = aggregate_probs(p_species, taxonomy, level, axis=_class_axis(p_species))
    labels = aggregate_labels(y, taxonomy, level, ignore_index=ignore_index)
    return _cross_entropy(
        probs, labels, taxonomy.level_size(level), Normalization(normalization), ignore_index
    )


def hierarchical_loss(
    p_species: Tensor,
    y: np.ndarray,
    taxonomy: Taxonomy,
    weights: Optional[HierarchyWeights] = None,
    normalization: Union[Normalization, str] = Normalization.BY_CLASSES,
    ignore_index: int = IGNORE_INDEX,
) -> LossValue:
    weights = weights or HierarchyWeights()
    axis = _class_axis(p_species)
    if p_species.shape[axis] != taxonomy.num_species:
        raise ShapeMismatchError(
            "hierarchical_loss",
            p_species.shape,
            (taxonomy.num_species,),
            detail=f"la tassonomia ha {taxonomy.num_species} specie",
        )

    terms = {
        "species": species_ce(p_species, y, normalization, ignore_index),
        "genus": level_ce(p_species, y, taxonomy, TaxonomyLevel.GENUS, normalization, ignore_index),
        "taxon": level_ce(p_species, y, taxonomy, TaxonomyLevel.TAXON, normalization, ignore_index),
    }
    total = terms["species"] * weights.lambda1
    for name, weight in (("genus", weights.lambda2), ("taxon", weights.lambda3)):
        if weight != 0.0:
            total = total + terms[name] * weight
    return LossValue(total=total, components={k: v.item() for k, v in terms.items()})


def dice_loss(
    p_species: Tensor,
    y: np.ndarray,
    eps: float = DICE_EPSILON,
    ignore_index: int = IGNORE_INDEX,
) -> Tensor:
    """Dice morbida mediata sulle classi presenti nelle etichette."""
    axis = _class_axis(p_species)
    num_classes = p_species.shape[axis]
    target = _one_hot(y, num_classes, p_species, ignore_index)
    valid = np.expand_dims(np.asarray(y) != ignore_index, axis)
    valid = np.broadcast_to(valid, p_species.shape).astype(p_species.dtype)

    reduce_axes = tuple(i for i in range(p_species.ndim) if i != axis)
    intersection = (p_species * Tensor(target, dtype=p_species.dtype)).sum(axis=reduce_axes)
    predicted = (p_species * Tensor(valid, dtype=p_species.dtype)).sum(axis=reduce_axes)
    labelled = target.sum(axis=reduce_axes)

    numerator = intersection * 2.0 + eps
    denominator = predicted + Tensor(labelled + eps, dtype=p_species.dtype)
    per_class = 1.0 - numerator / denominator

    present = (labelled > 0).astype(p_species.dtype)
    return (per_class * Tensor(present, dtype=p_species.dtype)).sum() / float(present.sum())


def dice_ce_loss(
    p_species: Tensor,
    y: np.ndarray,
    eps: float = DICE_EPSILON,
    ignore_index: int = IGNORE_INDEX,
) -> LossValue:
    dice = dice_loss(p_species, y, eps=eps, ignore_index=ignore_index)
    ce = species_ce(p_species, y, Normalization.BY_PIXELS, ignore_index)
    return LossValue(total=dice + ce, components={"dice": dice.item(), "ce": ce.item()})


def compute_loss(
    kind: Union[LossKind, str],
    p_species: Tensor,
    y: np.ndarray,
    taxonomy: Taxonomy,
    weights: Optional[HierarchyWeights] = None,
    normalization: Union[Normalization, str] = Normalization.BY_PIXELS,
) -> LossValue:
    if LossKind(kind) is LossKind.HLOSS:
        return hierarchical_loss(p_species, y, taxonomy, weights, normalization)
    return dice_ce_loss(p_species, y)
