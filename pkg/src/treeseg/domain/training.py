"""
Elementi puri del ciclo di addestramento: configurazione validata, statistiche di
normalizzazione, ordine dei campioni per epoca, composizione dei batch e singolo passo
di ottimizzazione.
"""

import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .constants import DEFAULT_REFERENCE_INDEX
from .errors import DomainError, TrainingDivergedError, ValidationError
from .losses import HierarchyWeights, LossValue, compute_loss
from .models import BuiltModel
from .optim import AdamState, adam_step
from .taxonomy import Taxonomy
from .tensor import Tensor, reset_graph
from .types import LossKind, ModelMode, Normalization


@dataclass
class TrainConfig:
    mode: str = ModelMode.TIME_SERIES.value
    loss: str = LossKind.HLOSS.value
    lr: float = 1e-4
    lr_decay_gamma: float = 0.99
    epochs: int = 300
    batch_size: int = 4
    seed: int = 0
    weights: HierarchyWeights = field(default_factory=HierarchyWeights)
    normalization: str = Normalization.BY_PIXELS.value
    weight_decay: float = 0.0
    augment: bool = True
    base_channels: int = 16
    depth: int = 3
    workers: int = 2
    train_split: str = "train"
    val_split: str = "val"
    dataset_path: str = ""
    output_dir: str = ""
    resume: bool = False

    def problems(self) -> List[str]:
        found = []
        if self.mode not in {m.value for m in ModelMode}:
            found.append(f"mode: valore '{self.mode}' non ammesso ({[m.value for m in ModelMode]})")
        if self.loss not in {k.value for k in LossKind}:
            found.append(f"loss: valore '{self.loss}' non ammesso ({[k.value for k in LossKind]})")
        if self.normalization not in {n.value for n in Normalization}:
            found.append(f"normalization: valore '{self.normalization}' non ammesso")
        if not (isinstance(self.lr, (int, float)) and math.isfinite(self.lr) and self.lr > 0):
            found.append(f"lr: deve essere > 0 (ricevuto {self.lr})")
        if not (isinstance(self.lr_decay_gamma, (int, float)) and 0 < self.lr_decay_gamma <= 1):
            found.append(f"lr_decay_gamma: deve stare in (0, 1] (ricevuto {self.lr_decay_gamma})")
        if not (isinstance(self.epochs, int) and self.epochs >= 1):
            found.append(f"epochs: deve essere un intero >= 1 (ricevuto {self.epochs})")
        if not (isinstance(self.batch_size, int) and self.batch_size >= 1):
            found.append(f"batch_size: deve essere un intero >= 1 (ricevuto {self.batch_size})")
        if not isinstance(self.seed, int):
            found.append(f"seed: deve essere intero (ricevuto {self.seed!r})")
        if not (isinstance(self.weight_decay, (int, float)) and self.weight_decay >= 0):
            found.append(f"weight_decay: deve essere >= 0 (ricevuto {self.weight_decay})")
        if not (isinstance(self.workers, int) and self.workers >= 1):
            found.append(f"workers: deve essere >= 1 (ricevuto {self.workers})")
        if not self.dataset_path:
            found.append("dataset_path: percorso del dataset obbligatorio")
        if not self.output_dir:
            found.append("output_dir: directory di output obbligatoria")
        return found

    def validate(self) -> "TrainConfig":
        found = self.problems()
        if found:
            raise ValidationError(found)
        return self

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrainConfig":
        """Costruisce la configurazione raccogliendo tutti i campi non validi in un'unica eccezione."""
        values = dict(data)
        problems = []
        known = set(cls.__dataclass_fields__)
        unknown = sorted(k for k in values if k not in known)
        problems += [f"{k}: campo sconosciuto" for k in unknown]
        weights = values.pop("weights", None)
        if isinstance(weights, dict):
            try:
                values["weights"] = HierarchyWeights(**weights)
            except (TypeError, ValidationError) as e:
                problems.append(f"weights: {e}")
        elif isinstance(weights, (list, tuple)):
            try:
                values["weights"] = HierarchyWeights(*[float(w) for w in weights])
            except (TypeError, ValueError) as e:
                problems.append(f"weights: {e}")
        elif isinstance(weights, HierarchyWeights):
            values["weights"] = weights
        config = cls(**{k: v for k, v in values.items() if k in known})
        problems += config.problems()
        if problems:
            raise ValidationError(problems)
        return config


@dataclass(frozen=True)
class NormalizationStats:
    mean: Tuple[float, ...]
    std: Tuple[float, ...]

    def to_dict(self) -> Dict[str, List[float]]:
        return {"mean": list(self.mean), "std": list(self.std)}

    @classmethod
    def from_dict(cls, data: Dict[str, Sequence[float]]) -> "NormalizationStats":
        return cls(tuple(float(v) for v in data["mean"]), tuple(float(v) for v in data["std"]))


def compute_normalization_stats(image_series: Iterable[np.ndarray]) -> NormalizationStats:
    """Media e deviazione standard per canale su tutti gli istanti e pixel dello split."""
    total = None
    total_sq = None
    count = 0
    for images in image_series:
        data = np.asarray(images, dtype=np.float64)  # (T, C, H, W)
        axes = (0, 2, 3)
        s = data.sum(axis=axes)
        sq = (data * data).sum(axis=axes)
        total = s if total is None else total + s
        total_sq = sq if total_sq is None else total_sq + sq
        count += data.shape[0] * data.shape[2] * data.shape[3]
    if count == 0:
        raise ValidationError(["normalizzazione: nessuna immagine disponibile"])
    mean = total / count
    var = np.maximum(total_sq / count - mean * mean, 0.0)
    std = np.maximum(np.sqrt(var), 1e-6)
    return NormalizationStats(tuple(float(v) for v in mean), tuple(float(v) for v in std))


def prepare_inputs(
    images: np.ndarray,
    mode: str,
    stats: Optional[NormalizationStats],
    reference_index: int = DEFAULT_REFERENCE_INDEX,
) -> np.ndarray:
    """(N, T, C, H, W) → ingresso del modello, normalizzato per canale."""
    data = np.asarray(images, dtype=np.float32)
    if stats is not None:
        mean = np.asarray(stats.mean, dtype=np.float32).reshape(-1, 1, 1)
        std = np.asarray(stats.std, dtype=np.float32).reshape(-1, 1, 1)
        data = (data - mean) / std
    if ModelMode(mode) is ModelMode.SINGLE_IMAGE:
        return np.ascontiguousarray(data[:, reference_index])
    return data


def epoch_order(num_samples: int, seed: int, epoch: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([seed, epoch]))
    return rng.permutation(num_samples)


def sample_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, epoch, index]))


def assemble_batches(order: Sequence[int], batch_size: int) -> List[List[int]]:
    """Batch di dimensione fissa; l'ultimo batch parziale viene mantenuto."""
    order = [int(i) for i in order]
    return [order[i : i + batch_size] for i in range(0, len(order), batch_size)]


@dataclass
class StepResult:
    loss: float
    components: Dict[str, float]


def train_step(
    model: BuiltModel,
    inputs: np.ndarray,
    masks: np.ndarray,
    taxonomy: Taxonomy,
    config: TrainConfig,
    state: AdamState,
    lr: float,
) -> StepResult:
    model.params.zero_grad()
    logits = model.forward(Tensor(inputs))
    probs = logits.softmax(axis=1)
    try:
        value: LossValue = compute_loss(
            config.loss, probs, masks, taxonomy, config.weights, config.normalization
        )
        loss = value.value
        if not math.isfinite(loss):
            raise TrainingDivergedError(f"Loss non finita ({loss}): addestramento divergente.")
    except DomainError:
        # il forward registrato non verrà mai consumato da backward()
        reset_graph()
        raise
    value.total.backward()
    adam_step(model.params, state, lr, weight_decay=config.weight_decay)
    return StepResult(loss=loss, components=dict(value.components))


def iter_batches(
    samples: Sequence[Any],
    mode: str,
    stats: Optional[NormalizationStats],
    reference_index: int,
    batch_size: int,
) -> Iterable[Tuple[np.ndarray, np.ndarray]]:
    """Batch ``(input, maschere)`` in ordine fisso, senza aumentazione (valutazione)."""
    for batch in assemble_batches(range(len(samples)), batch_size):
        images = np.stack([samples[i].images for i in batch])
        masks = np.stack([samples[i].mask for i in batch]).astype(np.int64)
        yield prepare_inputs(images, mode, stats, reference_index), masks
