"""
Verifica dei gradienti per differenze finite centrali.

Il controllo gira sempre a 64 bit: ``model_builder`` viene invocato dentro
``precision(np.float64)`` così che parametri e attivazioni nascano in doppia precisione.
"""

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .constants import GRADCHECK_FLOOR, GRADCHECK_SAMPLES, GRADCHECK_STEP
from .errors import ShapeMismatchError
from .losses import HierarchyWeights, hierarchical_loss
from .models import ModelSpec, ProcessorSpec, TinyUNetSpec, build_model, init_processor, init_unet
from .models import processor_forward, unet_forward
from .nn_ops import ConvSpec, ParamSet, conv2d
from .taxonomy import Taxonomy
from .tensor import Tensor, no_grad, precision, reset_graph
from .types import ModelMode, Normalization

LossFn = Callable[[Tensor], Tensor]
ModelBuilder = Callable[[np.random.Generator], Tuple[ParamSet, LossFn]]


@dataclass(frozen=True)
class GradcheckEntry:
    parameter: str
    index: Tuple[int, ...]
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradcheckReport:
    max_rel_error: float
    tolerance: float
    passed: bool
    checked: int
    worst: Optional[GradcheckEntry] = None
    failures: List[GradcheckEntry] = field(default_factory=list)
    non_finite: List[str] = field(default_factory=list)

    def summary(self) -> str:
        outcome = "SUPERATO" if self.passed else "FALLITO"
        text = (
            f"gradcheck {outcome}: errore relativo massimo {self.max_rel_error:.3e} "
            f"(tolleranza {self.tolerance:.1e}, {self.checked} parametri campionati)"
        )
        if self.worst is not None:
            text += f"; peggiore {self.worst.parameter}{list(self.worst.index)}"
        if self.non_finite:
            text += f"; gradienti non finiti in {self.non_finite}"
        return text


def relative_error(analytic: float, numeric: float, floor: float = GRADCHECK_FLOOR) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def _central_difference(
    loss_fn: LossFn, x: Tensor, target: Tensor, index: Tuple[int, ...], step: float
) -> float:
    original = float(target.data[index])
    try:
        with no_grad():
            target.data[index] = original + step
            plus = loss_fn(x).item()
            target.data[index] = original - step
            minus = loss_fn(x).item()
    finally:
        target.data[index] = original
    return (plus - minus) / (2.0 * step)


def _sample_entries(
    params: ParamSet, samples: int, rng: np.random.Generator
) -> List[Tuple[str, Tuple[int, ...]]]:
    names = params.names()
    sizes = np.asarray([params[n].size for n in names])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    total = int(offsets[-1])
    chosen = np.sort(rng.choice(total, size=min(samples, total), replace=False))
    entries = []
    for flat in chosen:
        slot = int(np.searchsorted(offsets, flat, side="right") - 1)
        name = names[slot]
        local = np.unravel_index(int(flat - offsets[slot]), params[name].shape)
        entries.append((name, tuple(int(i) for i in local)))
    return entries


def gradcheck(
    model_builder: ModelBuilder,
    input_shape: Sequence[int],
    tolerance: float,
    seed: int = 0,
    samples: int = GRADCHECK_SAMPLES,
    step: float = GRADCHECK_STEP,
) -> GradcheckReport:
    """
    Confronta il gradiente automatico con le differenze finite centrali su ``samples``
    voci scelte a caso tra tutti i parametri. Una voce fuori tolleranza viene
    ricontrollata con passo h/10 prima di essere dichiarata fallita.
    """
    rng = np.random.default_rng(seed)
    with precision(np.float64):
        reset_graph()
        params, loss_fn = model_builder(rng)
        x = Tensor(rng.uniform(-2.0, 2.0, size=tuple(input_shape)))

        params.zero_grad()
        loss = loss_fn(x)
        if loss.size != 1:
            raise ShapeMismatchError("gradcheck", loss.shape, detail="la loss deve essere scalare")
        loss.backward()

        non_finite = [
            f"{name}[{int(np.flatnonzero(~np.isfinite(t.grad))[0])}]"
            for name, t in params.items()
            if t.grad is not None and not np.all(np.isfinite(t.grad))
        ]
        if non_finite:
            return GradcheckReport(
                max_rel_error=float("inf"),
                tolerance=tolerance,
                passed=False,
                checked=0,
                non_finite=non_finite,
            )

        entries: List[GradcheckEntry] = []
        for name, index in _sample_entries(params, samples, rng):
            target = params[name]
            analytic = 0.0 if target.grad is None else float(target.grad[index])
            numeric = _central_difference(loss_fn, x, target, index, step)
            error = relative_error(analytic, numeric)
            if error > tolerance:
                refined = _central_difference(loss_fn, x, target, index, step / 10.0)
                refined_error = relative_error(analytic, refined)
                if refined_error < error:
                    numeric, error = refined, refined_error
            entries.append(GradcheckEntry(name, index, analytic, numeric, error))

    worst = max(entries, key=lambda e: e.rel_error) if entries else None
    failures = [e for e in entries if e.rel_error > tolerance]
    return GradcheckReport(
        max_rel_error=worst.rel_error if worst else 0.0,
        tolerance=tolerance,
        passed=not failures,
        checked=len(entries),
        worst=worst,
        failures=failures,
    )


def op_gradcheck(
    fn: Callable[..., Tensor],
    *arrays: np.ndarray,
    step: float = GRADCHECK_STEP,
) -> float:
    """Errore relativo massimo di ``sum(fn(*inputs) * R)`` su tutte le voci degli ingressi."""
    with precision(np.float64):
        inputs = [Tensor(a, requires_grad=True) for a in arrays]
        probe = fn(*inputs)
        weights = Tensor(np.random.default_rng(0).uniform(-1.0, 1.0, size=probe.shape))
        (probe * weights).sum().backward()

        def scalar() -> float:
            with no_grad():
                return float((fn(*inputs).data * weights.data).sum())

        worst = 0.0
        for tensor in inputs:
            for index in np.ndindex(tensor.shape):
                original = float(tensor.data[index])
                tensor.data[index] = original + step
                plus = scalar()
                tensor.data[index] = original - step
                minus = scalar()
                tensor.data[index] = original
                numeric = (plus - minus) / (2.0 * step)
                analytic = 0.0 if tensor.grad is None else float(tensor.grad[index])
                worst = max(worst, relative_error(analytic, numeric))
        return worst


# --- Modelli predefiniti --------------------------------------------------------------


def _projection(rng: np.random.Generator, shape: Tuple[int, ...]) -> Tensor:
    return Tensor(rng.uniform(-1.0, 1.0, size=shape))


def conv2d_builder(in_channels: int = 3, out_channels: int = 4) -> ModelBuilder:
    spec = ConvSpec("probe.conv", in_channels, out_channels, (3, 3), (1, 1))

    def build(rng: np.random.Generator) -> Tuple[ParamSet, LossFn]:
        params = ParamSet()
        params.add_conv(spec, rng)
        params["probe.conv.bias"].data[:] = rng.uniform(-0.5, 0.5, size=out_channels)
        cache = {}

        def loss_fn(x: Tensor) -> Tensor:
            out = conv2d(x, spec, params)
            if "r" not in cache:
                cache["r"] = _projection(rng, out.shape)
            return (out * cache["r"]).sum()

        return params, loss_fn

    return build


def processor_builder(spec: Optional[ProcessorSpec] = None) -> ModelBuilder:
    spec = spec or ProcessorSpec()

    def build(rng: np.random.Generator) -> Tuple[ParamSet, LossFn]:
        params = ParamSet()
        init_processor(params, spec, rng)
        cache = {}

        def loss_fn(x: Tensor) -> Tensor:
            out = processor_forward(x, spec, params)
            if "r" not in cache:
                cache["r"] = _projection(rng, out.shape)
            return (out * cache["r"]).sum()

        return params, loss_fn

    return build


def unet_builder(spec: TinyUNetSpec) -> ModelBuilder:
    def build(rng: np.random.Generator) -> Tuple[ParamSet, LossFn]:
        params = ParamSet()
        init_unet(params, spec, rng)
        cache = {}

        def loss_fn(x: Tensor) -> Tensor:
            out = unet_forward(x, spec, params)
            if "r" not in cache:
                cache["r"] = _projection(rng, out.shape)
            return (out * cache["r"]).sum()

        return params, loss_fn

    return build


def composite_builder(
    spec: ModelSpec,
    taxonomy: Taxonomy,
    label_shape: Tuple[int, ...],
    weights: Optional[HierarchyWeights] = None,
) -> ModelBuilder:
    """Modello completo nella modalità di ``spec`` seguito da softmax e loss gerarchica."""

    def build(rng: np.random.Generator) -> Tuple[ParamSet, LossFn]:
        model = build_model(spec.mode, spec, seed=int(rng.integers(2**31)))
        labels = rng.integers(0, taxonomy.num_species, size=label_shape)

        def loss_fn(x: Tensor) -> Tensor:
            probs = model.forward(x).softmax(axis=1)
            return hierarchical_loss(
                probs, labels, taxonomy, weights, Normalization.BY_PIXELS
            ).total

        return model.params, loss_fn

    return build


def preset_input_shape(spec: ModelSpec, size: int, batch: int = 1) -> Tuple[int, ...]:
    channels = spec.processor.in_channels
    if spec.mode is ModelMode.TIME_SERIES:
        return (batch, spec.processor.time_steps, channels, size, size)
    return (batch, channels, size, size)
