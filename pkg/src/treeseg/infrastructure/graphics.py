"""
Scrittura e lettura di immagini PGM (P5) e PPM (P6), palette delle specie e grafici SVG
generati a mano. Tutte le uscite sono deterministiche e confrontabili byte per byte.
"""

import colorsys
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from ..application.errors import DataPreparationError
from ..domain.constants import IGNORE_INDEX
from ..domain.taxonomy import Taxonomy
from .tensor_io import atomic_write_bytes

PathLike = Union[str, Path]
GOLDEN_RATIO_CONJUGATE = 0.618033988749895


def _netpbm_header(magic: str, width: int, height: int) -> bytes:
    return f"{magic}\n{width} {height}\n255\n".encode("ascii")


def write_pgm(path: PathLike, mask: np.ndarray) -> None:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise DataPreparationError(f"PGM richiede una matrice 2D, ricevuta forma {mask.shape}.")
    if mask.min(initial=0) < 0 or mask.max(initial=0) > 255:
        raise DataPreparationError("PGM a 8 bit: valori fuori da [0, 255].")
    h, w = mask.shape
    atomic_write_bytes(path, _netpbm_header("P5", w, h) + mask.astype(np.uint8).tobytes())


def write_ppm(path: PathLike, rgb: np.ndarray) -> None:
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise DataPreparationError(f"PPM richiede (H, W, 3), ricevuta forma {rgb.shape}.")
    h, w, _ = rgb.shape
    atomic_write_bytes(path, _netpbm_header("P6", w, h) + rgb.astype(np.uint8).tobytes())


def _read_netpbm(path: PathLike, magic: bytes, channels: int) -> np.ndarray:
    try:
        buffer = Path(path).read_bytes()
    except OSError as e:
        raise DataPreparationError(f"Impossibile leggere {path}: {e}") from e

    tokens: List[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(buffer) and buffer[pos : pos + 1].isspace():
            pos += 1
        if buffer[pos : pos + 1] == b"#":
            while pos < len(buffer) and buffer[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(buffer) and not buffer[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataPreparationError(f"Header Netpbm incompleto in {path}.")
        tokens.append(buffer[start:pos])
    pos += 1

    if tokens[0] != magic:
        raise DataPreparationError(f"{path}: atteso formato {magic.decode()}, trovato {tokens[0]!r}.")
    width, height, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise DataPreparationError(f"{path}: supportati solo file a 8 bit (maxval {maxval}).")
    expected = width * height * channels
    payload = buffer[pos : pos + expected]
    if len(payload) != expected:
        raise DataPreparationError(f"{path}: payload di {len(payload)} byte, attesi {expected}.")
    shape = (height, width) if channels == 1 else (height, width, channels)
    return np.frombuffer(payload, dtype=np.uint8).reshape(shape).copy()


def read_pgm(path: PathLike) -> np.ndarray:
    return _read_netpbm(path, b"P5", 1)


def read_ppm(path: PathLike) -> np.ndarray:
    return _read_netpbm(path, b"P6", 3)


def frame_to_rgb(frame: np.ndarray) -> np.ndarray:
    """(3, H, W) in [0, 1] → (H, W, 3) uint8."""
    frame = np.clip(np.asarray(frame, dtype=np.float64), 0.0, 1.0)
    return np.rint(np.moveaxis(frame, 0, -1) * 255.0).astype(np.uint8)


def hex_to_rgb(color: str) -> Tuple[int, int, int]:
    value = color.lstrip("#")
    return int(value[0:2], 16), int(value[2:4], 16), int(value[4:6], 16)


def fallback_color(index: int) -> Tuple[int, int, int]:
    hue = (index * GOLDEN_RATIO_CONJUGATE) % 1.0
    r, g, b = colorsys.hsv_to_rgb(hue, 0.65, 0.95)
    return int(round(r * 255)), int(round(g * 255)), int(round(b * 255))


def species_palette(taxonomy: Taxonomy) -> np.ndarray:
    """Colore di visualizzazione per specie; i colori mancanti usano una palette di ripiego fissa."""
    return np.asarray(
        [
            hex_to_rgb(color) if color else fallback_color(i)
            for i, color in enumerate(taxonomy.colors)
        ],
        dtype=np.uint8,
    )


def colorize(mask: np.ndarray, palette: np.ndarray) -> np.ndarray:
    """Etichette → RGB; ignore e indici fuori palette sono resi in nero."""
    mask = np.asarray(mask).astype(np.int64)
    lut = np.zeros((256, 3), dtype=np.uint8)
    lut[: len(palette)] = palette[:256]
    out = lut[np.clip(mask, 0, 255)]
    out[(mask == IGNORE_INDEX) | (mask < 0) | (mask >= len(palette))] = 0
    return out


class SvgBuilder:
    def __init__(self, width: int, height: int):
        self.width = width
        self.height = height
        self._elements: List[str] = []

    def line(self, x1: float, y1: float, x2: float, y2: float, stroke: str = "#000000") -> "SvgBuilder":
        self._elements.append(
            f'<line x1="{x1:.2f}" y1="{y1:.2f}" x2="{x2:.2f}" y2="{y2:.2f}" stroke="{stroke}" stroke-width="1"/>'
        )
        return self

    def polyline(self, points: Sequence[Tuple[float, float]], stroke: str, label: str = "") -> "SvgBuilder":
        rendered = " ".join(f"{x:.2f},{y:.2f}" for x, y in points)
        title = f' data-series="{label}"' if label else ""
        self._elements.append(
            f'<polyline{title} points="{rendered}" fill="none" stroke="{stroke}" stroke-width="1.5"/>'
        )
        return self

    def text(self, x: float, y: float, content: str, anchor: str = "start", fill: str = "#000000") -> "SvgBuilder":
        escaped = content.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
        self._elements.append(
            f'<text x="{x:.2f}" y="{y:.2f}" font-family="sans-serif" font-size="11" '
            f'text-anchor="{anchor}" fill="{fill}">{escaped}</text>'
        )
        return self

    def render(self) -> str:
        body = "\n  ".join(self._elements)
        return (
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" height="{self.height}" '
            f'viewBox="0 0 {self.width} {self.height}">\n'
            f'  <rect x="0" y="0" width="{self.width}" height="{self.height}" fill="#ffffff"/>\n'
            f"  {body}\n</svg>\n"
        )


def training_plot_svg(
    epochs: Sequence[float],
    loss: Sequence[float],
    miou: Sequence[Optional[float]],
    width: int = 640,
    height: int = 360,
) -> str:
    """Loss (asse sinistro, scala propria) e mIoU di validazione (asse destro, [0, 1]) per epoca."""
    if not len(epochs):
        raise DataPreparationError("Nessuna riga da disegnare.")
    left, right, top, bottom = 60.0, 60.0, 30.0, 40.0
    plot_w, plot_h = width - left - right, height - top - bottom

    e0, e1 = float(min(epochs)), float(max(epochs))
    span_e = (e1 - e0) or 1.0
    loss_values = [float(v) for v in loss]
    l0, l1 = min(loss_values), max(loss_values)
    span_l = (l1 - l0) or 1.0

    def x_of(e: float) -> float:
        return left + (float(e) - e0) / span_e * plot_w

    def y_of(fraction: float) -> float:
        return top + (1.0 - fraction) * plot_h

    svg = SvgBuilder(width, height)
    svg.line(left, top, left, top + plot_h).line(left, top + plot_h, left + plot_w, top + plot_h)
    svg.line(left + plot_w, top, left + plot_w, top + plot_h)
    svg.text(left - 6, top + 4, f"{l1:.3f}", anchor="end").text(left - 6, top + plot_h, f"{l0:.3f}", anchor="end")
    svg.text(left + plot_w + 6, top + 4, "1.00").text(left + plot_w + 6, top + plot_h, "0.00")
    svg.text(left, top + plot_h + 18, f"{e0:g}", anchor="middle")
    svg.text(left + plot_w, top + plot_h + 18, f"{e1:g}", anchor="middle")
    svg.text(left + plot_w / 2, height - 8, "epoca", anchor="middle")
    svg.text(left, top - 10, "loss", fill="#C0392B").text(left + plot_w, top - 10, "val mIoU", anchor="end", fill="#2980B9")

    svg.polyline(
        [(x_of(e), y_of((v - l0) / span_l)) for e, v in zip(epochs, loss_values)],
        stroke="#C0392B",
        label="loss",
    )
    svg.polyline(
        [(x_of(e), y_of(float(v))) for e, v in zip(epochs, miou) if v is not None and v == v],
        stroke="#2980B9",
        label="val_miou",
    )
    return svg.render()
