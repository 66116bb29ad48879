from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np

from ..domain.errors import ShapeMismatchError
from ..domain.models import BuiltModel
from ..domain.types import JsonDict
from .errors import CheckpointMismatchError


def _first_difference(expected: Any, actual: Any, prefix: str = "") -> Optional[Tuple[str, Any, Any]]:
    if isinstance(expected, Mapping) and isinstance(actual, Mapping):
        for key in sorted(set(expected) | set(actual)):
            found = _first_difference(expected.get(key), actual.get(key), f"{prefix}{key}.")
            if found:
                return found
        return None
    if isinstance(expected, (list, tuple)) and isinstance(actual, (list, tuple)):
        if len(expected) == len(actual) and all(
            _first_difference(e, a, prefix) is None for e, a in zip(expected, actual)
        ):
            return None
        return prefix.rstrip("."), expected, actual
    if expected != actual:
        return prefix.rstrip("."), expected, actual
    return None


def check_compatibility(
    meta: JsonDict, expected_model: JsonDict, species: Optional[List[str]] = None
) -> None:
    """Solleva ``CheckpointMismatchError`` indicando il primo campo della spec che differisce."""
    found = _first_difference(expected_model, meta.get("model", {}), "model.")
    if found:
        field, want, got = found
        raise CheckpointMismatchError(
            f"Checkpoint incompatibile: il campo '{field}' vale {got!r}, atteso {want!r}.",
            field=field,
        )
    if species is not None and meta.get("species") is not None and list(meta["species"]) != list(species):
        raise CheckpointMismatchError(
            f"Checkpoint incompatibile: specie {meta['species']} diverse da {list(species)}.",
            field="species",
        )


def load_params_into(model: BuiltModel, params: Dict[str, np.ndarray]) -> None:
    try:
        model.params.load_state_dict(params)
    except (ShapeMismatchError, ValueError) as e:
        raise CheckpointMismatchError(
            f"Parametri del checkpoint incompatibili: {e}", field="params"
        ) from e
