import copy
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional

from .application.errors import ConfigValidationError


@dataclass
class ToolkitConfig:
    """
    Percorsi degli artefatti prodotti da un'esecuzione. Condivisa tra i layer così che
    casi d'uso e adattatori scrivano negli stessi file.
    """

    # --- Directory principali ---
    output_directory: str  # Destinazione di checkpoint, report e grafici
    dataset_directory: str = ""  # Dataset generato da gen-data

    @property
    def resolved_config_file(self) -> str:
        """Configurazione effettiva dell'esecuzione, riutilizzabile con --config."""
        return os.path.join(self.output_directory, "resolved_config.json")

    @property
    def metrics_csv_file(self) -> str:
        """Una riga per epoca: lr, componenti della loss, mIoU di validazione."""
        return os.path.join(self.output_directory, "metrics.csv")

    @property
    def checkpoints_directory(self) -> str:
        return os.path.join(self.output_directory, "checkpoints")

    @property
    def last_checkpoint_file(self) -> str:
        return os.path.join(self.checkpoints_directory, "last.tsck")

    @property
    def best_checkpoint_file(self) -> str:
        """Checkpoint con la miglior mIoU di validazione (a parità vince l'epoca precedente)."""
        return os.path.join(self.checkpoints_directory, "best.tsck")

    @property
    def reports_directory(self) -> str:
        return os.path.join(self.output_directory, "reports")

    def report_file(self, split: str, fmt: str) -> str:
        return os.path.join(self.reports_directory, f"report_{split}.{fmt}")

    def confusion_file(self, split: str) -> str:
        return os.path.join(self.reports_directory, f"confusion_{split}.csv")

    @property
    def predictions_directory(self) -> str:
        return os.path.join(self.output_directory, "predictions")

    @property
    def plots_directory(self) -> str:
        return os.path.join(self.output_directory, "plots")

    @property
    def training_plot_file(self) -> str:
        return os.path.join(self.plots_directory, "training.svg")

    @property
    def gradcheck_report_file(self) -> str:
        return os.path.join(self.output_directory, "gradcheck.json")

    @property
    def comparison_directory(self) -> str:
        return os.path.join(self.output_directory, "comparison")

    @property
    def mode_comparison_file(self) -> str:
        """IoU per classe delle due modalità, differenze e riga di sintesi."""
        return os.path.join(self.comparison_directory, "compare_modes.csv")

    @property
    def loss_comparison_file(self) -> str:
        """HLoss contro Dice+CE per seme, con righe mean/std."""
        return os.path.join(self.comparison_directory, "compare_losses.csv")

    def run_directory(self, *parts: str) -> "ToolkitConfig":
        return ToolkitConfig(
            output_directory=os.path.join(self.output_directory, *parts),
            dataset_directory=self.dataset_directory,
        )


# --- Risoluzione della configurazione della CLI -------------------------------------


def _parse_scalar(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_override(target: Dict[str, Any], assignment: str) -> None:
    """Applica un override ``percorso.puntato=valore``; il valore è interpretato come JSON se possibile."""
    if "=" not in assignment:
        raise ConfigValidationError([f"override '{assignment}': atteso percorso=valore"])
    path, raw = assignment.split("=", 1)
    keys = [k for k in path.strip().split(".") if k]
    if not keys:
        raise ConfigValidationError([f"override '{assignment}': percorso vuoto"])
    node = target
    for key in keys[:-1]:
        child = node.get(key)
        if not isinstance(child, dict):
            child = {}
            node[key] = child
        node = child
    node[keys[-1]] = _parse_scalar(raw.strip())


def load_config_file(path: Optional[str]) -> Dict[str, Any]:
    if not path:
        return {}
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise ConfigValidationError([f"config: file non trovato '{path}'"]) from e
    except json.JSONDecodeError as e:
        raise ConfigValidationError([f"config: JSON non valido in '{path}': {e}"]) from e
    if not isinstance(data, dict):
        raise ConfigValidationError([f"config: '{path}' deve contenere un oggetto JSON"])
    return data


def resolve_config(
    defaults: Mapping[str, Any],
    file_values: Mapping[str, Any],
    flag_values: Mapping[str, Any],
    overrides: Iterable[str] = (),
) -> Dict[str, Any]:
    """Precedenza crescente: default < file --config < flag espliciti < override --set."""
    resolved = copy.deepcopy(dict(defaults))
    for key, value in file_values.items():
        if key in ("command", "subcommand"):
            continue
        if isinstance(value, dict) and isinstance(resolved.get(key), dict):
            resolved[key] = {**resolved[key], **value}
        else:
            resolved[key] = value
    for key, value in flag_values.items():
        if value is not None:
            resolved[key] = value
    for assignment in overrides:
        apply_override(resolved, assignment)
    return resolved


def unknown_keys(resolved: Mapping[str, Any], allowed: Iterable[str]) -> List[str]:
    allowed = set(allowed)
    return sorted(k for k in resolved if k not in allowed)
