"""
Generatore sintetico di serie temporali di chiome arboree.

Le specie differiscono solo per la firma fenologica (colore medio per data); due
specie "confondibili" hanno firme identiche in tutte le date tranne l'ultima, per
cui un modello a singola immagine non può distinguerle sul fotogramma di riferimento.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .constants import (
    ANNOTATION_SLOT,
    DEFAULT_CALENDAR,
    DEFAULT_MIN_CROWNS,
    DEFAULT_SPLIT_RATIOS,
    IGNORE_INDEX,
    SEASONAL_POLICY_SLOTS,
    SPLIT_NAMES,
)
from .errors import SplitError, SynthesisError
from .taxonomy import Taxonomy
from .types import TileCoord

SUPERSAMPLING = 4
PLACEMENT_ATTEMPTS = 50

# --- Firme fenologiche ------------------------------------------------------------


@dataclass(frozen=True)
class SpeciesSignature:
    name: str
    rgb: np.ndarray  # (T, 3)
    texture: float = 0.04
    radius_range: Tuple[float, float] = (5.0, 8.0)

    def __post_init__(self):
        rgb = np.asarray(self.rgb, dtype=np.float64)
        if rgb.ndim != 2 or rgb.shape[1] != 3:
            raise SynthesisError(f"Firma '{self.name}': attesa matrice (T, 3), ricevuta {rgb.shape}.")
        if np.any(rgb < 0) or np.any(rgb > 1):
            raise SynthesisError(f"Firma '{self.name}': medie RGB fuori da [0, 1].")
        low, high = self.radius_range
        if not 0 < low <= high:
            raise SynthesisError(f"Firma '{self.name}': intervallo di raggio non valido {self.radius_range}.")
        object.__setattr__(self, "rgb", rgb)

    @property
    def time_steps(self) -> int:
        return self.rgb.shape[0]

    def select(self, indices: Sequence[int]) -> "SpeciesSignature":
        return replace(self, rgb=self.rgb[list(indices)])


# Colori medi per le sette date del calendario (maggio → ottobre).
_SIGNATURE_TABLE: Dict[str, List[Tuple[float, float, float]]] = {
    "ACRU": [
        (0.38, 0.52, 0.24), (0.24, 0.46, 0.18), (0.22, 0.43, 0.17), (0.23, 0.42, 0.17),
        (0.28, 0.44, 0.18), (0.45, 0.45, 0.18), (0.75, 0.20, 0.15),
    ],
    "BEAL": [
        (0.38, 0.52, 0.24), (0.24, 0.46, 0.18), (0.22, 0.43, 0.17), (0.23, 0.42, 0.17),
        (0.28, 0.44, 0.18), (0.45, 0.45, 0.18), (0.80, 0.70, 0.20),
    ],
    "ACSA": [
        (0.42, 0.60, 0.26), (0.30, 0.56, 0.22), (0.28, 0.52, 0.20), (0.30, 0.50, 0.19),
        (0.40, 0.48, 0.16), (0.70, 0.45, 0.12), (0.90, 0.50, 0.10),
    ],
    "BEPA": [
        (0.46, 0.66, 0.34), (0.40, 0.62, 0.30), (0.38, 0.60, 0.29), (0.40, 0.60, 0.30),
        (0.48, 0.62, 0.30), (0.55, 0.62, 0.30), (0.85, 0.80, 0.35),
    ],
    "PIST": [
        (0.12, 0.32, 0.22), (0.11, 0.31, 0.22), (0.10, 0.30, 0.22), (0.10, 0.30, 0.22),
        (0.10, 0.30, 0.22), (0.10, 0.30, 0.22), (0.11, 0.29, 0.21),
    ],
    "ABBA": [
        (0.07, 0.20, 0.13), (0.06, 0.19, 0.13), (0.05, 0.18, 0.12), (0.05, 0.18, 0.12),
        (0.05, 0.18, 0.12), (0.05, 0.18, 0.12), (0.05, 0.17, 0.12),
    ],
}
_BACKGROUND_TABLE = [
    (0.34, 0.30, 0.20), (0.30, 0.33, 0.20), (0.31, 0.32, 0.21), (0.33, 0.31, 0.21),
    (0.33, 0.29, 0.20), (0.35, 0.28, 0.19), (0.36, 0.27, 0.18),
]

DEFAULT_SPECIES = tuple(_SIGNATURE_TABLE)
DEFAULT_CONFUSABLE_PAIRS: Tuple[Tuple[str, str], ...] = (("ACRU", "BEAL"),)


def default_signatures(names: Sequence[str] = DEFAULT_SPECIES) -> List[SpeciesSignature]:
    """Firme sulle sette date del calendario di default."""
    unknown = [n for n in names if n not in _SIGNATURE_TABLE]
    if unknown:
        raise SynthesisError(f"Firme non disponibili per: {unknown}.")
    return [SpeciesSignature(name, np.asarray(_SIGNATURE_TABLE[name])) for name in names]


def default_background() -> np.ndarray:
    return np.asarray(_BACKGROUND_TABLE, dtype=np.float64)


def find_confusable_pairs(
    signatures: Sequence[SpeciesSignature], reference_index: int
) -> List[Tuple[str, str]]:
    """Coppie con firma identica fino al riferimento compreso e diversa nell'ultimo istante."""
    pairs = []
    for i, a in enumerate(signatures):
        for b in signatures[i + 1 :]:
            same_until_reference = np.array_equal(a.rgb[: reference_index + 1], b.rgb[: reference_index + 1])
            same_shape = a.texture == b.texture and a.radius_range == b.radius_range
            if same_until_reference and same_shape and not np.array_equal(a.rgb[-1], b.rgb[-1]):
                pairs.append((a.name, b.name))
    return pairs


# --- Selezione degli istanti --------------------------------------------------------


@dataclass(frozen=True)
class TimestepSelection:
    indices: Tuple[int, ...]
    tags: Tuple[str, ...]
    reference_position: int
    frames: Any = None


def select_timesteps(
    sequence: Sequence[Any],
    tags: Optional[Sequence[str]] = None,
    policy: str = "seasonal",
) -> TimestepSelection:
    """
    Riduce una serie a quattro istanti (giugno, settembre-a, settembre-b, ottobre).
    La posizione di annotazione (settembre-a) è segnalata in ``reference_position``.
    """
    length = len(sequence)
    tags = tuple(tags) if tags is not None else None
    if tags is not None and len(tags) != length:
        raise SynthesisError(f"{len(tags)} tag data per una serie di {length} elementi.")

    if policy == "identity":
        if length != len(SEASONAL_POLICY_SLOTS):
            raise SynthesisError(
                f"La politica 'identity' richiede {len(SEASONAL_POLICY_SLOTS)} istanti, ricevuti {length}."
            )
        indices = tuple(range(length))
    elif policy == "seasonal":
        if length != len(DEFAULT_CALENDAR):
            raise SynthesisError(
                f"La politica 'seasonal' richiede {len(DEFAULT_CALENDAR)} istanti, ricevuti {length}."
            )
        if tags is None or any(not t for t in tags):
            raise SynthesisError("Tag data mancante: impossibile applicare la politica 'seasonal'.")
        indices = tuple(_slot_index(tags, month, rank) for month, rank in SEASONAL_POLICY_SLOTS)
    else:
        raise SynthesisError(f"Politica di selezione sconosciuta: '{policy}'.")

    if isinstance(sequence, np.ndarray):
        frames: Any = np.take(sequence, indices, axis=0)
    else:
        frames = [sequence[i] for i in indices]
    return TimestepSelection(
        indices=indices,
        tags=tuple(tags[i] for i in indices) if tags is not None else (),
        reference_position=ANNOTATION_SLOT,
        frames=frames,
    )


def _slot_index(tags: Sequence[str], month: str, rank: int) -> int:
    matches = [i for i, tag in enumerate(tags) if len(tag) >= 7 and tag[5:7] == month]
    if len(matches) <= rank:
        raise SynthesisError(f"Tag data mancante: nessuna acquisizione n.{rank + 1} nel mese {month}.")
    return matches[rank]


# --- Scene e tile ---------------------------------------------------------------------


@dataclass(frozen=True)
class SceneSpec:
    height: int = 64
    width: int = 64
    crowns_range: Tuple[int, int] = (5, 9)
    mix_weights: Optional[Mapping[str, float]] = None
    noise_sigma: float = 0.02
    signature_jitter: float = 0.03
    background_texture: float = 0.03
    seed: int = 0

    def validate(self, depth: int = 3) -> None:
        multiple = 2**depth
        if self.height % multiple or self.width % multiple:
            raise SynthesisError(
                f"La tela {self.height}×{self.width} deve essere divisibile per {multiple}."
            )
        low, high = self.crowns_range
        if not 0 < low <= high:
            raise SynthesisError(f"Intervallo di chiome non valido: {self.crowns_range}.")
        if self.noise_sigma < 0 or self.signature_jitter < 0:
            raise SynthesisError("Rumore e jitter devono essere non negativi.")


@dataclass
class LabeledSequence:
    images: np.ndarray  # (T, C, H, W) float32 in [0, 1]
    mask: np.ndarray  # (H, W) uint8, IGNORE_INDEX per lo sfondo
    tile: TileCoord = (0, 0)
    crown_counts: Dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.images.ndim != 4:
            raise SynthesisError(f"Immagini attese (T, C, H, W), ricevute {self.images.shape}.")
        if self.images.shape[-2:] != self.mask.shape:
            raise SynthesisError(
                f"Maschera {self.mask.shape} non allineata alle immagini {self.images.shape}."
            )


def _species_sequence(rng: np.random.Generator, weights: np.ndarray, count: int) -> List[int]:
    """Campionamento sistematico: conteggi per tile proporzionali ai pesi."""
    cdf = np.cumsum(weights / weights.sum())
    golden = (np.sqrt(5.0) - 1.0) / 2.0
    offset = rng.random()
    picks = []
    for j in range(count):
        u = (offset + j * golden) % 1.0
        picks.append(int(min(np.searchsorted(cdf, u, side="right"), len(cdf) - 1)))
    return picks


def _ellipse_coverage(
    height: int, width: int, center: Tuple[float, float], axes: Tuple[float, float], angle: float
) -> Tuple[Tuple[slice, slice], np.ndarray]:
    cy, cx = center
    a, b = axes
    reach = max(a, b) + 1
    r0, r1 = max(int(np.floor(cy - reach)), 0), min(int(np.ceil(cy + reach)), height)
    c0, c1 = max(int(np.floor(cx - reach)), 0), min(int(np.ceil(cx + reach)), width)

    offsets = (np.arange(SUPERSAMPLING) + 0.5) / SUPERSAMPLING
    ys = (np.arange(r0, r1)[:, None] + offsets[None, :]).reshape(-1)
    xs = (np.arange(c0, c1)[:, None] + offsets[None, :]).reshape(-1)
    dy = ys[:, None] - cy
    dx = xs[None, :] - cx
    cos, sin = np.cos(angle), np.sin(angle)
    u = (dx * cos + dy * sin) / a
    v = (-dx * sin + dy * cos) / b
    inside = (u * u + v * v) <= 1.0
    coverage = inside.reshape(r1 - r0, SUPERSAMPLING, c1 - c0, SUPERSAMPLING).mean(axis=(1, 3))
    return (slice(r0, r1), slice(c0, c1)), coverage


def generate_tile(
    scene: SceneSpec,
    signatures: Sequence[SpeciesSignature],
    background: np.ndarray,
    tile_index: int,
    seed: int,
    tile: TileCoord = (0, 0),
) -> LabeledSequence:
    rng = np.random.default_rng(np.random.SeedSequence([seed, tile_index]))
    steps = signatures[0].time_steps
    h, w = scene.height, scene.width

    if scene.mix_weights is None:
        weights = np.ones(len(signatures))
    else:
        weights = np.asarray([float(scene.mix_weights.get(s.name, 0.0)) for s in signatures])
    if weights.sum() <= 0:
        raise SynthesisError("I pesi di mescolanza delle specie sommano a zero.")

    texture = rng.standard_normal((h, w)) * scene.background_texture
    images = background[:, :, None, None] + texture[None, None]
    images = np.broadcast_to(images, (steps, 3, h, w)).copy()
    mask = np.full((h, w), IGNORE_INDEX, dtype=np.uint8)
    occupied = np.zeros((h, w), dtype=bool)
    counts: Dict[int, int] = {}

    n_crowns = int(rng.integers(scene.crowns_range[0], scene.crowns_range[1] + 1))
    for species in _species_sequence(rng, weights, n_crowns):
        signature = signatures[species]
        for _ in range(PLACEMENT_ATTEMPTS):
            axes = tuple(rng.uniform(*signature.radius_range, size=2))
            center = (rng.uniform(0, h), rng.uniform(0, w))
            angle = rng.uniform(0, np.pi)
            window, coverage = _ellipse_coverage(h, w, center, axes, angle)
            footprint = coverage > 0
            if not np.any(occupied[window] & footprint):
                break
        else:
            continue

        jitter = rng.normal(0.0, scene.signature_jitter, size=3)
        pattern = rng.standard_normal(coverage.shape) * signature.texture
        colors = np.clip(signature.rgb + jitter[None, :], 0.0, 1.0)  # (T, 3)
        crown = colors[:, :, None, None] + pattern[None, None]
        region = images[(slice(None), slice(None)) + window]
        images[(slice(None), slice(None)) + window] = (1 - coverage) * region + coverage * crown

        occupied[window] |= footprint
        labelled = coverage >= 0.5
        if np.any(labelled):
            mask[window][labelled] = species
            counts[species] = counts.get(species, 0) + 1

    images += rng.normal(0.0, scene.noise_sigma, size=images.shape)
    images = np.clip(images, 0.0, 1.0).astype(np.float32)
    return LabeledSequence(images=images, mask=mask, tile=tile, crown_counts=counts)


def grid_shape_for(num_tiles: int) -> Tuple[int, int]:
    rows = max(int(np.floor(np.sqrt(num_tiles))), 1)
    cols = int(np.ceil(num_tiles / rows))
    return rows, cols


def synthesize_tiles(
    scene: SceneSpec,
    signatures: Sequence[SpeciesSignature],
    num_tiles: int,
    seed: Optional[int] = None,
    background: Optional[np.ndarray] = None,
    grid_shape: Optional[Tuple[int, int]] = None,
    workers: int = 1,
    depth: int = 3,
) -> List[LabeledSequence]:
    """Funzione pura di (scena, firme, seme): ogni tile usa un seme derivato dal proprio indice."""
    if len(signatures) < 2:
        raise SynthesisError("Servono almeno due specie per generare un dataset.")
    if num_tiles < 1:
        raise SynthesisError("Il numero di tile deve essere positivo.")
    scene.validate(depth)
    seed = scene.seed if seed is None else seed
    steps = signatures[0].time_steps
    mismatched = [s.name for s in signatures if s.time_steps != steps]
    if mismatched:
        raise SynthesisError(f"Firme con numero di istanti diverso da {steps}: {mismatched}.")
    background = default_background() if background is None else np.asarray(background, dtype=np.float64)
    if background.shape != (steps, 3):
        raise SynthesisError(f"Sfondo atteso ({steps}, 3), ricevuto {background.shape}.")

    rows, cols = grid_shape or grid_shape_for(num_tiles)
    if rows * cols < num_tiles:
        raise SynthesisError(f"Griglia {rows}×{cols} troppo piccola per {num_tiles} tile.")
    coords = [(i // cols, i % cols) for i in range(num_tiles)]

    def build(index: int) -> LabeledSequence:
        return generate_tile(scene, signatures, background, index, seed, coords[index])

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(build, range(num_tiles)))
    return [build(i) for i in range(num_tiles)]


# --- Suddivisione spaziale --------------------------------------------------------------


@dataclass(frozen=True)
class SplitPlan:
    grid_shape: Tuple[int, int]
    axis: str  # "columns" oppure "rows"
    band_widths: Tuple[int, int, int]
    buffer: int
    assignments: Dict[TileCoord, Optional[str]]

    def tiles_in(self, split: str) -> List[TileCoord]:
        return sorted(t for t, s in self.assignments.items() if s == split)

    @property
    def buffer_tiles(self) -> List[TileCoord]:
        return sorted(t for t, s in self.assignments.items() if s is None)

    def fractions(self) -> Dict[str, float]:
        assigned = [s for s in self.assignments.values() if s is not None]
        return {name: assigned.count(name) / len(assigned) for name in SPLIT_NAMES}

    def adjacency_violations(self) -> List[Tuple[TileCoord, TileCoord]]:
        return adjacency_violations(self.assignments)


def adjacency_violations(
    assignments: Mapping[TileCoord, Optional[str]],
) -> List[Tuple[TileCoord, TileCoord]]:
    """Coppie di tile 4-adiacenti assegnate a split diversi."""
    violations = []
    for (r, c), split in assignments.items():
        if split is None:
            continue
        for neighbour in ((r + 1, c), (r, c + 1)):
            other = assignments.get(neighbour)
            if other is not None and other != split:
                violations.append(((r, c), neighbour))
    return violations


def _band_widths(usable: int, ratios: Sequence[float]) -> List[int]:
    """Arrotondamento al resto maggiore, con almeno una linea per banda."""
    raw = np.asarray([usable * r for r in ratios])
    widths = np.maximum(np.floor(raw).astype(int), 1)
    while widths.sum() > usable:
        excess = np.where(widths > 1, widths - raw, -np.inf)
        widths[int(np.argmax(excess))] -= 1
    while widths.sum() < usable:
        widths[int(np.argmax(raw - widths))] += 1
    return [int(w) for w in widths]


def spatial_split(
    tile_grid: Tuple[int, int],
    ratios: Sequence[float] = DEFAULT_SPLIT_RATIOS,
    buffer: int = 1,
) -> SplitPlan:
    """
    Bande contigue lungo l'asse più lungo della griglia, separate da ``buffer`` linee
    di tile non assegnate a nessuno split.
    """
    rows, cols = (int(v) for v in tile_grid)
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != len(SPLIT_NAMES):
        raise SplitError(f"Attesi {len(SPLIT_NAMES)} rapporti, ricevuti {len(ratios)}.")
    if any(r <= 0 for r in ratios):
        raise SplitError(f"I rapporti devono essere positivi: {ratios}.")
    if abs(sum(ratios) - 1.0) > 1e-6:
        raise SplitError(f"I rapporti devono sommare a 1 (somma = {sum(ratios):.6f}).")
    if buffer < 1:
        raise SplitError("Serve almeno una linea di buffer tra gli split.")
    if rows < 1 or cols < 1:
        raise SplitError(f"Griglia non valida: {tile_grid}.")

    along_columns = cols >= rows
    lines = cols if along_columns else rows
    minimum = len(SPLIT_NAMES) + 2 * buffer
    if lines < minimum:
        raise SplitError(
            f"Griglia {rows}×{cols} troppo piccola: servono almeno {minimum} linee lungo "
            f"l'asse maggiore (3 bande + 2×{buffer} di buffer), disponibili {lines}."
        )

    widths = _band_widths(lines - 2 * buffer, ratios)
    line_split: List[Optional[str]] = []
    for k, (name, width) in enumerate(zip(SPLIT_NAMES, widths)):
        line_split += [name] * width
        if k < len(SPLIT_NAMES) - 1:
            line_split += [None] * buffer

    assignments = {
        (r, c): line_split[c if along_columns else r] for r in range(rows) for c in range(cols)
    }
    return SplitPlan(
        grid_shape=(rows, cols),
        axis="columns" if along_columns else "rows",
        band_widths=tuple(widths),
        buffer=buffer,
        assignments=assignments,
    )


def single_split_plan(tile_grid: Tuple[int, int], split: str = "train") -> SplitPlan:
    """Tutte le tile in un solo split, senza buffer (dataset di sovradattamento)."""
    if split not in SPLIT_NAMES:
        raise SplitError(f"Split sconosciuto: '{split}'.")
    rows, cols = (int(v) for v in tile_grid)
    widths = tuple(cols if name == split else 0 for name in SPLIT_NAMES)
    return SplitPlan(
        grid_shape=(rows, cols),
        axis="columns",
        band_widths=widths,
        buffer=0,
        assignments={(r, c): split for r in range(rows) for c in range(cols)},
    )


# --- Filtro delle classi rare ---------------------------------------------------------------


@dataclass
class FilteredDataset:
    samples: List[LabeledSequence]
    taxonomy: Taxonomy
    index_map: Dict[int, int]
    removed: List[str]
    crown_totals: Dict[str, int]


def count_crowns(samples: Sequence[LabeledSequence], num_classes: int) -> np.ndarray:
    totals = np.zeros(num_classes, dtype=np.int64)
    for sample in samples:
        for species, count in sample.crown_counts.items():
            totals[int(species)] += int(count)
    return totals


def filter_rare_classes(
    samples: Sequence[LabeledSequence],
    taxonomy: Taxonomy,
    min_count: int = DEFAULT_MIN_CROWNS,
) -> FilteredDataset:
    """Le classi con meno di ``min_count`` chiome diventano ignore; la tassonomia viene potata."""
    if not samples:
        raise SynthesisError("Dataset vuoto: nessun campione da filtrare.")
    totals = count_crowns(samples, taxonomy.num_species)
    keep = [i for i in range(taxonomy.num_species) if totals[i] >= min_count]
    if not keep:
        raise SynthesisError(
            f"Tutte le classi hanno meno di {min_count} chiome: nessuna classe rimane."
        )
    pruned, index_map = taxonomy.prune(keep)

    lut = np.full(256, IGNORE_INDEX, dtype=np.uint8)
    for old, new in index_map.items():
        lut[old] = new
    filtered = [
        LabeledSequence(
            images=s.images,
            mask=lut[s.mask],
            tile=s.tile,
            crown_counts={index_map[k]: v for k, v in s.crown_counts.items() if k in index_map},
        )
        for s in samples
    ]
    return FilteredDataset(
        samples=filtered,
        taxonomy=pruned,
        index_map=index_map,
        removed=[taxonomy.species[i] for i in range(taxonomy.num_species) if i not in index_map],
        crown_totals={taxonomy.species[i]: int(totals[i]) for i in range(taxonomy.num_species)},
    )


# --- Aumentazione diedrale ---------------------------------------------------------------------


@dataclass(frozen=True)
class DihedralTransform:
    quarter_turns: int  # rotazioni orarie di 90°
    flip: bool  # ribaltamento orizzontale dopo la rotazione


ALL_TRANSFORMS = tuple(DihedralTransform(k, f) for k in range(4) for f in (False, True))


def draw_transform(rng: np.random.Generator) -> DihedralTransform:
    return DihedralTransform(int(rng.integers(4)), bool(rng.integers(2)))


def apply_transform(array: np.ndarray, transform: DihedralTransform) -> np.ndarray:
    """Opera sugli ultimi due assi; una rotazione porta il pixel (r, c) in (c, H-1-r)."""
    if transform.quarter_turns % 2 and array.shape[-1] != array.shape[-2]:
        raise SynthesisError(
            f"Rotazione di {90 * transform.quarter_turns}° non ammessa su input non quadrato {array.shape[-2:]}."
        )
    out = np.rot90(array, k=-transform.quarter_turns, axes=(-2, -1))
    if transform.flip:
        out = out[..., ::-1]
    return np.ascontiguousarray(out)


def augment(sample: LabeledSequence, rng: np.random.Generator) -> LabeledSequence:
    transform = draw_transform(rng)
    return LabeledSequence(
        images=apply_transform(sample.images, transform),
        mask=apply_transform(sample.mask, transform),
        tile=sample.tile,
        crown_counts=dict(sample.crown_counts),
    )

