from enum import Enum
from typing import Any, Tuple

import numpy as np

# Alias dei contenitori numerici scambiati tra i layer.
ImageSeries = np.ndarray  # (T, C, H, W) float32 in [0, 1]
LabelMask = np.ndarray  # (H, W) interi, IGNORE_INDEX per lo sfondo
TileCoord = Tuple[int, int]
JsonDict = dict[str, Any]


class ModelMode(str, Enum):
    SINGLE_IMAGE = "single_image"
    TIME_SERIES = "time_series"


class LossKind(str, Enum):
    HLOSS = "hloss"
    DICE_CE = "dice_ce"


class Normalization(str, Enum):
    BY_CLASSES = "by_classes"
    BY_PIXELS = "by_pixels"


class TaxonomyLevel(str, Enum):
    SPECIES = "species"
    GENUS = "genus"
    TAXON = "taxon"
