"""
Blocchi di base per le reti: convoluzioni 2D/3D a passo unitario, convoluzione
trasposta 2×2/passo 2, max-pooling 2×2 e il contenitore ordinato dei parametri.

Le correlazioni usano finestre scorrevoli (``sliding_window_view``) contratte con
``tensordot``; il gradiente rispetto all'ingresso è la correlazione "piena" del
gradiente in uscita con il kernel ribaltato.
"""

from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, Iterator, Mapping, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeMismatchError, UnsupportedConfigurationError
from .tensor import Tensor, forward_op, register_op


@dataclass(frozen=True)
class ConvSpec:
    name: str
    in_channels: int
    out_channels: int
    kernel: Tuple[int, ...]
    padding: Tuple[int, ...]
    stride: int = 1

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise UnsupportedConfigurationError(
                f"Layer '{self.name}': i canali devono essere positivi."
            )
        if len(self.kernel) != len(self.padding):
            raise UnsupportedConfigurationError(
                f"Layer '{self.name}': kernel {self.kernel} e padding {self.padding} di rango diverso."
            )
        if any(k < 1 for k in self.kernel) or any(p < 0 for p in self.padding):
            raise UnsupportedConfigurationError(
                f"Layer '{self.name}': kernel positivi e padding non negativi richiesti."
            )

    @property
    def spatial_rank(self) -> int:
        return len(self.kernel)

    @property
    def weight_shape(self) -> Tuple[int, ...]:
        return (self.out_channels, self.in_channels, *self.kernel)

    def output_size(self, in_size: Sequence[int]) -> Tuple[int, ...]:
        return tuple(
            n + 2 * p - k + 1 for n, p, k in zip(in_size, self.padding, self.kernel)
        )


class ParamSet:
    """Mappa ordinata percorso-del-layer → tensore dei parametri."""

    def __init__(self) -> None:
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"Parametro duplicato: '{name}'.")
        tensor = Tensor(value, requires_grad=True, name=name)
        self._params[name] = tensor
        return tensor

    def add_conv(self, spec: ConvSpec, rng: np.random.Generator) -> None:
        receptive = int(np.prod(spec.kernel))
        fan_in = spec.in_channels * receptive
        fan_out = spec.out_channels * receptive
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weight = rng.uniform(-bound, bound, size=spec.weight_shape)
        self.add(f"{spec.name}.weight", weight)
        self.add(f"{spec.name}.bias", np.zeros(spec.out_channels))

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._params[name]
        except KeyError as e:
            raise KeyError(f"Parametro mancante: '{name}'.") from e

    def __contains__(self, name: object) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> Tuple[str, ...]:
        return tuple(self._params)

    def count(self, prefix: Optional[str] = None) -> int:
        return sum(
            t.size for n, t in self._params.items() if prefix is None or n.startswith(prefix)
        )

    def zero_grad(self) -> None:
        for tensor in self._params.values():
            tensor.grad = None

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        missing = [n for n in self._params if n not in state]
        unexpected = [n for n in state if n not in self._params]
        if missing or unexpected:
            raise ValueError(
                f"Parametri incompatibili. Mancanti: {missing}; inattesi: {unexpected}."
            )
        for name, tensor in self._params.items():
            value = np.asarray(state[name])
            if value.shape != tensor.shape:
                raise ShapeMismatchError(f"load:{name}", tensor.shape, value.shape)
            tensor.data = value.astype(tensor.dtype, copy=True)


def conv_weights(params: ParamSet, spec: ConvSpec) -> Tuple[Tensor, Tensor]:
    weight = params[f"{spec.name}.weight"]
    bias = params[f"{spec.name}.bias"]
    if weight.shape != spec.weight_shape:
        raise ShapeMismatchError(spec.name, spec.weight_shape, weight.shape)
    return weight, bias


# --- Correlazione N-dimensionale -------------------------------------------------


def _correlate(x: np.ndarray, w: np.ndarray, padding: Sequence[int]) -> np.ndarray:
    nd = w.ndim - 2
    widths = [(0, 0), (0, 0)] + [(p, p) for p in padding]
    xp = np.pad(x, widths) if any(padding) else x
    windows = sliding_window_view(xp, w.shape[2:], axis=tuple(range(2, 2 + nd)))
    # windows: (N, C, *out, *K)
    out = np.tensordot(
        windows,
        w,
        axes=([1] + list(range(2 + nd, 2 + 2 * nd)), [1] + list(range(2, 2 + nd))),
    )
    return np.ascontiguousarray(np.moveaxis(out, -1, 1))


@register_op("conv")
def _conv(x: np.ndarray, w: np.ndarray, b: np.ndarray, padding: Tuple[int, ...], layer: str):
    nd = w.ndim - 2
    if x.ndim != nd + 2:
        raise ShapeMismatchError(layer, x.shape, w.shape, detail=f"atteso input di rango {nd + 2}")
    if x.shape[1] != w.shape[1]:
        raise ShapeMismatchError(
            layer, x.shape, w.shape, detail=f"canali in ingresso {x.shape[1]} != {w.shape[1]}"
        )
    out_size = [n + 2 * p - k + 1 for n, p, k in zip(x.shape[2:], padding, w.shape[2:])]
    if any(s < 1 for s in out_size):
        raise ShapeMismatchError(
            layer, x.shape, w.shape, detail=f"dimensione di uscita non positiva {tuple(out_size)}"
        )

    out = _correlate(x, w, padding)
    out += b.reshape((1, -1) + (1,) * nd)

    def backward_fn(g: np.ndarray):
        spatial = tuple(range(2, 2 + nd))
        grad_b = g.sum(axis=(0,) + spatial)

        widths = [(0, 0), (0, 0)] + [(p, p) for p in padding]
        xp = np.pad(x, widths) if any(padding) else x
        windows = sliding_window_view(xp, w.shape[2:], axis=spatial)
        grad_w = np.tensordot(g, windows, axes=([0, *spatial], [0, *spatial]))

        flipped = np.flip(w, axis=spatial).swapaxes(0, 1)
        full = _correlate(g, flipped, [k - 1 for k in w.shape[2:]])
        crop = (slice(None), slice(None)) + tuple(
            slice(p, p + n) for p, n in zip(padding, x.shape[2:])
        )
        grad_x = np.ascontiguousarray(full[crop])
        return grad_x, grad_w.astype(w.dtype), grad_b.astype(b.dtype)

    return out, backward_fn


def _conv_nd(x: Tensor, spec: ConvSpec, params: ParamSet, rank: int) -> Tensor:
    if spec.spatial_rank != rank:
        raise UnsupportedConfigurationError(
            f"Layer '{spec.name}': kernel {spec.kernel} non valido per una convoluzione {rank}D."
        )
    if spec.stride != 1:
        raise UnsupportedConfigurationError(
            f"Layer '{spec.name}': è supportato solo passo 1 (ricevuto {spec.stride})."
        )
    if x.ndim != rank + 2:
        raise ShapeMismatchError(spec.name, x.shape, spec.weight_shape)
    if x.shape[1] != spec.in_channels:
        raise ShapeMismatchError(
            spec.name,
            x.shape,
            spec.weight_shape,
            detail=f"il layer '{spec.name}' attende {spec.in_channels} canali, ricevuti {x.shape[1]}",
        )
    weight, bias = conv_weights(params, spec)
    return forward_op("conv", x, weight, bias, padding=tuple(spec.padding), layer=spec.name)


def conv2d(x: Tensor, spec: ConvSpec, params: ParamSet) -> Tensor:
    return _conv_nd(x, spec, params, rank=2)


def conv3d(x: Tensor, spec: ConvSpec, params: ParamSet) -> Tensor:
    """x in layout (N, C, T, H, W)."""
    if x.ndim == 5 and len(spec.kernel) == 3:
        depth, k_t, p_t = x.shape[2], spec.kernel[0], spec.padding[0]
        if depth + 2 * p_t < k_t:
            raise ShapeMismatchError(
                spec.name,
                x.shape,
                spec.weight_shape,
                detail=f"asse temporale {depth} più corto del kernel {k_t}",
            )
    return _conv_nd(x, spec, params, rank=3)


# --- Convoluzione trasposta 2×2, passo 2 ----------------------------------------


@register_op("transposed_conv2d")
def _transposed_conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray, layer: str):
    if x.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeMismatchError(layer, x.shape, w.shape)
    n, _, h, wd = x.shape
    out_channels = w.shape[0]
    blocks = np.einsum("ncij,ocab->noiajb", x, w, optimize=True)
    out = blocks.reshape(n, out_channels, 2 * h, 2 * wd) + b.reshape(1, -1, 1, 1)

    def backward_fn(g: np.ndarray):
        tiles = g.reshape(n, out_channels, h, 2, wd, 2)
        grad_x = np.einsum("noiajb,ocab->ncij", tiles, w, optimize=True)
        grad_w = np.einsum("noiajb,ncij->ocab", tiles, x, optimize=True)
        return grad_x, grad_w, g.sum(axis=(0, 2, 3))

    return np.ascontiguousarray(out), backward_fn


def transposed_conv2d(x: Tensor, spec: ConvSpec, params: ParamSet) -> Tensor:
    if tuple(spec.kernel) != (2, 2) or spec.stride != 2 or any(spec.padding):
        raise UnsupportedConfigurationError(
            f"Layer '{spec.name}': convoluzione trasposta supportata solo con kernel 2×2, "
            f"passo 2 e padding 0 (ricevuti kernel={spec.kernel}, passo={spec.stride}, "
            f"padding={spec.padding})."
        )
    if x.ndim != 4 or x.shape[1] != spec.in_channels:
        raise ShapeMismatchError(spec.name, x.shape, spec.weight_shape)
    weight, bias = conv_weights(params, spec)
    return forward_op("transposed_conv2d", x, weight, bias, layer=spec.name)


# --- Max-pooling 2×2 -------------------------------------------------------------


@register_op("maxpool2d")
def _maxpool2d(x: np.ndarray):
    n, c, h, w = x.shape
    windows = (
        x.reshape(n, c, h // 2, 2, w // 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, h // 2, w // 2, 4)
    )
    # argmax restituisce la prima occorrenza: pareggi risolti in ordine riga-maggiore.
    winner = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, winner[..., None], axis=-1)[..., 0]

    def backward_fn(g: np.ndarray):
        routed = np.zeros_like(windows)
        np.put_along_axis(routed, winner[..., None], g[..., None], axis=-1)
        grad = (
            routed.reshape(n, c, h // 2, w // 2, 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, h, w)
        )
        return (grad,)

    return out, backward_fn


def maxpool2d(x: Tensor, window: int = 2) -> Tensor:
    if window != 2:
        raise UnsupportedConfigurationError(f"Finestra di pooling {window} non supportata.")
    if x.ndim != 4:
        raise ShapeMismatchError("maxpool2d", x.shape, detail="atteso input (N, C, H, W)")
    if x.shape[2] % 2 or x.shape[3] % 2:
        raise ShapeMismatchError(
            "maxpool2d", x.shape, detail="altezza e larghezza devono essere pari"
        )
    return forward_op("maxpool2d", x)

