"""
Processor spazio-temporale (due convoluzioni 3D che collassano l'asse temporale),
U-Net ridotta e le due modalità di composizione:

    single_image:  f(x[:, reference_index])
    time_series:   f(p(x))
"""

from dataclasses import asdict, dataclass, field, replace
from typing import Any, Callable, Dict, List, NamedTuple, Tuple, Union

import numpy as np

from .constants import DEFAULT_REFERENCE_INDEX, DEFAULT_TIME_STEPS, LEAKY_RELU_SLOPE
from .errors import ShapeMismatchError, UnsupportedConfigurationError
from .nn_ops import ConvSpec, ParamSet, conv2d, conv3d, maxpool2d, transposed_conv2d
from .tensor import Tensor, as_tensor, concat
from .types import ModelMode

ForwardFn = Callable[[Union[Tensor, np.ndarray]], Tensor]


@dataclass(frozen=True)
class ProcessorSpec:
    time_steps: int = DEFAULT_TIME_STEPS
    in_channels: int = 3
    mid_channels: int = 32
    out_channels: int = 64
    kernels: Tuple[Tuple[int, int, int], ...] = ((3, 3, 3), (2, 3, 3))
    paddings: Tuple[Tuple[int, int, int], ...] = ((0, 1, 1), (0, 1, 1))

    def __post_init__(self):
        residual = self.time_steps
        for kernel, padding in zip(self.kernels, self.paddings):
            residual = residual + 2 * padding[0] - kernel[0] + 1
        if residual != 1:
            raise UnsupportedConfigurationError(
                f"I kernel temporali {[k[0] for k in self.kernels]} non collassano "
                f"{self.time_steps} istanti a 1 (restano {residual})."
            )

    def conv_specs(self) -> List[ConvSpec]:
        channels = (self.in_channels, self.mid_channels, self.out_channels)
        return [
            ConvSpec(f"processor.conv{i + 1}", channels[i], channels[i + 1], tuple(k), tuple(p))
            for i, (k, p) in enumerate(zip(self.kernels, self.paddings))
        ]


@dataclass(frozen=True)
class TinyUNetSpec:
    in_channels: int
    num_classes: int
    base_channels: int = 16
    depth: int = 3

    def __post_init__(self):
        if self.depth < 1 or self.base_channels < 1 or self.num_classes < 1:
            raise UnsupportedConfigurationError(
                "TinyUNetSpec: profondità, canali base e numero di classi devono essere positivi."
            )

    def channels(self, level: int) -> int:
        return self.base_channels * (2**level)

    def conv_specs(self) -> Dict[str, ConvSpec]:
        specs: Dict[str, ConvSpec] = {}
        previous = self.in_channels
        for i in range(self.depth):
            width = self.channels(i)
            specs[f"enc{i}.conv1"] = ConvSpec(f"unet.enc{i}.conv1", previous, width, (3, 3), (1, 1))
            specs[f"enc{i}.conv2"] = ConvSpec(f"unet.enc{i}.conv2", width, width, (3, 3), (1, 1))
            previous = width
        bottom = self.channels(self.depth)
        specs["bottleneck.conv1"] = ConvSpec("unet.bottleneck.conv1", previous, bottom, (3, 3), (1, 1))
        specs["bottleneck.conv2"] = ConvSpec("unet.bottleneck.conv2", bottom, bottom, (3, 3), (1, 1))
        for i in reversed(range(self.depth)):
            width = self.channels(i)
            specs[f"up{i}"] = ConvSpec(f"unet.up{i}", self.channels(i + 1), width, (2, 2), (0, 0), stride=2)
            specs[f"dec{i}.conv1"] = ConvSpec(f"unet.dec{i}.conv1", 2 * width, width, (3, 3), (1, 1))
            specs[f"dec{i}.conv2"] = ConvSpec(f"unet.dec{i}.conv2", width, width, (3, 3), (1, 1))
        specs["head"] = ConvSpec("unet.head", self.channels(0), self.num_classes, (1, 1), (0, 0))
        return specs


@dataclass(frozen=True)
class ModelSpec:
    mode: ModelMode
    unet: TinyUNetSpec
    processor: ProcessorSpec = field(default_factory=ProcessorSpec)
    reference_index: int = DEFAULT_REFERENCE_INDEX

    def __post_init__(self):
        object.__setattr__(self, "mode", ModelMode(self.mode))
        expected = (
            self.processor.out_channels
            if self.mode is ModelMode.TIME_SERIES
            else self.processor.in_channels
        )
        if self.unet.in_channels != expected:
            raise UnsupportedConfigurationError(
                f"In modalità {self.mode.value} la U-Net deve ricevere {expected} canali, "
                f"configurati {self.unet.in_channels}."
            )
        if not 0 <= self.reference_index < self.processor.time_steps:
            raise UnsupportedConfigurationError(
                f"reference_index {self.reference_index} fuori dalla serie di "
                f"{self.processor.time_steps} istanti."
            )

    @classmethod
    def default(
        cls,
        mode: Union[ModelMode, str],
        num_classes: int,
        time_steps: int = DEFAULT_TIME_STEPS,
        in_channels: int = 3,
        base_channels: int = 16,
        depth: int = 3,
        reference_index: int = DEFAULT_REFERENCE_INDEX,
    ) -> "ModelSpec":
        mode = resolve_mode(mode)
        processor = ProcessorSpec(time_steps=time_steps, in_channels=in_channels)
        unet_in = processor.out_channels if mode is ModelMode.TIME_SERIES else in_channels
        return cls(
            mode=mode,
            unet=TinyUNetSpec(unet_in, num_classes, base_channels, depth),
            processor=processor,
            reference_index=reference_index,
        )

    def with_mode(self, mode: ModelMode) -> "ModelSpec":
        if mode is self.mode:
            return self
        unet_in = (
            self.processor.out_channels
            if mode is ModelMode.TIME_SERIES
            else self.processor.in_channels
        )
        return replace(self, mode=mode, unet=replace(self.unet, in_channels=unet_in))

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["mode"] = self.mode.value
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ModelSpec":
        processor = data["processor"]
        return cls(
            mode=ModelMode(data["mode"]),
            unet=TinyUNetSpec(**data["unet"]),
            processor=ProcessorSpec(
                time_steps=processor["time_steps"],
                in_channels=processor["in_channels"],
                mid_channels=processor["mid_channels"],
                out_channels=processor["out_channels"],
                kernels=tuple(tuple(k) for k in processor["kernels"]),
                paddings=tuple(tuple(p) for p in processor["paddings"]),
            ),
            reference_index=data.get("reference_index", DEFAULT_REFERENCE_INDEX),
        )


def init_processor(params: ParamSet, spec: ProcessorSpec, rng: np.random.Generator) -> None:
    for conv in spec.conv_specs():
        params.add_conv(conv, rng)


def init_unet(params: ParamSet, spec: TinyUNetSpec, rng: np.random.Generator) -> None:
    for conv in spec.conv_specs().values():
        params.add_conv(conv, rng)


def processor_forward(x: Tensor, spec: ProcessorSpec, params: ParamSet) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 5:
        raise ShapeMismatchError("processor", x.shape, detail="atteso input (N, T, C, H, W)")
    n, t, c, h, w = x.shape
    if t != spec.time_steps:
        raise ShapeMismatchError(
            "processor",
            x.shape,
            detail=f"il Processor ha lunghezza fissa: attesi {spec.time_steps} istanti, ricevuti {t}",
        )
    if c != spec.in_channels:
        raise ShapeMismatchError(
            "processor", x.shape, detail=f"attesi {spec.in_channels} canali, ricevuti {c}"
        )
    if h < 3 or w < 3:
        raise ShapeMismatchError("processor", x.shape, detail="H e W devono essere almeno 3")

    out = x.transpose(0, 2, 1, 3, 4)
    for conv in spec.conv_specs():
        out = conv3d(out, conv, params).leaky_relu(LEAKY_RELU_SLOPE)
    return out.reshape(n, spec.out_channels, h, w)


def _double_conv(x: Tensor, first: ConvSpec, second: ConvSpec, params: ParamSet) -> Tensor:
    x = conv2d(x, first, params).relu()
    return conv2d(x, second, params).relu()


def unet_forward(x: Tensor, spec: TinyUNetSpec, params: ParamSet) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeMismatchError("unet", x.shape, detail="atteso input (N, C, H, W)")
    multiple = 2**spec.depth
    h, w = x.shape[2], x.shape[3]
    if h % multiple or w % multiple:
        pad_h = (-h) % multiple
        pad_w = (-w) % multiple
        raise ShapeMismatchError(
            "unet",
            x.shape,
            detail=(
                f"H e W devono essere multipli di {multiple}: applicare un padding di "
                f"{pad_h}×{pad_w} pixel (fino a {h + pad_h}×{w + pad_w})"
            ),
        )

    convs = spec.conv_specs()
    skips = []
    out = x
    for i in range(spec.depth):
        out = _double_conv(out, convs[f"enc{i}.conv1"], convs[f"enc{i}.conv2"], params)
        skips.append(out)
        out = maxpool2d(out)
    out = _double_conv(out, convs["bottleneck.conv1"], convs["bottleneck.conv2"], params)
    for i in reversed(range(spec.depth)):
        up = transposed_conv2d(out, convs[f"up{i}"], params)
        out = concat([up, skips[i]], axis=1)
        out = _double_conv(out, convs[f"dec{i}.conv1"], convs[f"dec{i}.conv2"], params)
    return conv2d(out, convs["head"], params)


class BuiltModel(NamedTuple):
    params: ParamSet
    forward: ForwardFn


def resolve_mode(mode: Union[ModelMode, str]) -> ModelMode:
    try:
        return ModelMode(mode)
    except ValueError as e:
        raise UnsupportedConfigurationError(
            f"Modalità sconosciuta: '{mode}'. Valori ammessi: "
            f"{[m.value for m in ModelMode]}."
        ) from e


def build_model(mode: Union[ModelMode, str], spec: ModelSpec, seed: int) -> BuiltModel:
    """Inizializza i parametri in ordine fisso (Processor, poi U-Net) dal seme dato."""
    spec = spec.with_mode(resolve_mode(mode))
    rng = np.random.default_rng(seed)
    params = ParamSet()
    if spec.mode is ModelMode.TIME_SERIES:
        init_processor(params, spec.processor, rng)
    init_unet(params, spec.unet, rng)

    if spec.mode is ModelMode.TIME_SERIES:

        def forward(x: Union[Tensor, np.ndarray]) -> Tensor:
            features = processor_forward(as_tensor(x), spec.processor, params)
            return unet_forward(features, spec.unet, params)

    else:

        def forward(x: Union[Tensor, np.ndarray]) -> Tensor:
            x = as_tensor(x)
            if x.ndim != 4:
                raise ShapeMismatchError(
                    "single_image",
                    x.shape,
                    detail="atteso input (N, C, H, W) del fotogramma di riferimento",
                )
            return unet_forward(x, spec.unet, params)

    return BuiltModel(params, forward)


def processor_parameter_count(spec: ProcessorSpec) -> int:
    return sum(
        int(np.prod(conv.weight_shape)) + conv.out_channels for conv in spec.conv_specs()
    )
