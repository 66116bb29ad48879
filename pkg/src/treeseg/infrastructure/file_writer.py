import io
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd
import polars as pl

from ..application.errors import DataPreparationError, MissingDataError
from ..config import ToolkitConfig
from ..domain.constants import METRICS_CSV_COLUMNS
from ..domain.interfaces import IResultWriter, PathLike
from ..domain.metrics import MetricsReport
from ..domain.taxonomy import CATEGORIES, Taxonomy
from ..domain.types import JsonDict
from .graphics import colorize, frame_to_rgb, species_palette, training_plot_svg, write_ppm
from .tensor_io import atomic_write_bytes

METRICS_SCHEMA = {name: pl.Float64 for name in METRICS_CSV_COLUMNS} | {"epoch": pl.Int64}
REPORT_COLUMNS = ("class", "iou", "gt_pixels", "pred_pixels", "included")
PLOT_COLUMNS = ("epoch", "loss_total", "val_miou")


def _json_safe(value: Any) -> Any:
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if isinstance(value, np.generic):
        return _json_safe(value.item())
    return value


def dump_json(data: Any) -> bytes:
    return (json.dumps(_json_safe(data), indent=2, sort_keys=True) + "\n").encode("utf-8")


class FileResultWriter(IResultWriter):
    def __init__(
        self,
        config: ToolkitConfig,
        logger: Optional[Union[logging.Logger, logging.LoggerAdapter]] = None,
    ):
        self.config = config
        Path(self.config.output_directory).mkdir(parents=True, exist_ok=True)
        self.logger = logger or logging.getLogger(self.__class__.__name__)
        self.logger.debug(f"FileResultWriter inizializzato. Directory di output: {self.config.output_directory}")

    def _write_frame(self, df: pl.DataFrame, path: PathLike) -> None:
        try:
            atomic_write_bytes(path, df.write_csv().encode("utf-8"))
        except DataPreparationError:
            raise
        except Exception as e:
            self.logger.error(f"Errore durante la scrittura del CSV {path}: {e}", exc_info=True)
            raise DataPreparationError(f"Impossibile scrivere il CSV {path}") from e

    def write_metrics_csv(self, rows: Sequence[Mapping[str, Any]], path: PathLike) -> None:
        data = {
            name: [row.get(name) for row in rows] for name in METRICS_CSV_COLUMNS
        }
        df = pl.DataFrame(data, schema=METRICS_SCHEMA)
        self._write_frame(df, path)

    def read_metrics_csv(self, path: PathLike) -> List[Dict[str, Any]]:
        path = Path(path)
        if not path.exists():
            raise MissingDataError(f"CSV delle metriche non trovato: {path}")
        try:
            df = pl.read_csv(path, infer_schema_length=None)
        except pl.exceptions.NoDataError as e:
            raise DataPreparationError(f"CSV delle metriche vuoto: {path}") from e
        except Exception as e:
            raise DataPreparationError(f"Impossibile leggere il CSV {path}: {e}") from e
        missing = [c for c in METRICS_CSV_COLUMNS if c not in df.columns]
        if missing:
            raise DataPreparationError(f"Colonne mancanti in {path}: {missing}")
        df = df.select(
            [pl.col(c).cast(METRICS_SCHEMA[c]) for c in METRICS_CSV_COLUMNS]
        )
        return df.to_dicts()

    def export_report(self, report: MetricsReport, path: PathLike, fmt: str = "csv") -> None:
        self.logger.info(f"Esportazione del report ({fmt}) in: {path}")
        if fmt == "json":
            atomic_write_bytes(path, dump_json(report.to_dict()))
            return
        if fmt != "csv":
            raise ValueError(f"Formato di report sconosciuto: '{fmt}'")

        order = {c: i for i, c in enumerate(CATEGORIES)}
        rows = sorted(
            report.rows(),
            key=lambda r: order.get(report.categories.get(r["class"]), len(order)),
        )
        df = pl.DataFrame(
            {col: [r[col] for r in rows] for col in REPORT_COLUMNS},
            schema={
                "class": pl.Utf8,
                "iou": pl.Float64,
                "gt_pixels": pl.Int64,
                "pred_pixels": pl.Int64,
                "included": pl.Boolean,
            },
        )
        self._write_frame(df, path)

    def write_confusion_csv(self, report: MetricsReport, path: PathLike) -> None:
        frame = pd.DataFrame(report.confusion, index=report.class_names, columns=report.class_names)
        buffer = io.StringIO()
        frame.to_csv(buffer, index_label="truth\\pred")
        atomic_write_bytes(path, buffer.getvalue().encode("utf-8"))

    def write_comparison_csv(self, rows: Sequence[Mapping[str, Any]], path: PathLike) -> None:
        if not rows:
            raise DataPreparationError("Nessuna riga di confronto da scrivere.")
        columns = list(rows[0])
        df = pl.DataFrame([{c: r.get(c) for c in columns} for r in rows], infer_schema_length=None)
        self._write_frame(df, path)
        self.logger.info(f"Tabella di confronto salvata in: {path}")

    def write_json(self, data: JsonDict, path: PathLike) -> None:
        atomic_write_bytes(path, dump_json(data))

    def write_overlays(
        self,
        sample_id: str,
        reference_frame: np.ndarray,
        truth: np.ndarray,
        prediction: np.ndarray,
        taxonomy: Taxonomy,
        directory: PathLike,
    ) -> List[Path]:
        directory = Path(directory)
        palette = species_palette(taxonomy)
        outputs = [
            (directory / f"{sample_id}_input.ppm", frame_to_rgb(reference_frame)),
            (directory / f"{sample_id}_truth.ppm", colorize(truth, palette)),
            (directory / f"{sample_id}_pred.ppm", colorize(prediction, palette)),
        ]
        for path, image in outputs:
            write_ppm(path, image)
        self.logger.debug(f"Sovrapposizioni scritte per il campione {sample_id}.")
        return [p for p, _ in outputs]

    def write_training_plot(self, metrics_csv: PathLike, svg_path: PathLike) -> Path:
        metrics_csv = Path(metrics_csv)
        if not metrics_csv.exists():
            raise MissingDataError(f"CSV delle metriche non trovato: {metrics_csv}")
        try:
            df = pl.read_csv(metrics_csv, infer_schema_length=None)
        except pl.exceptions.NoDataError as e:
            raise DataPreparationError(f"CSV delle metriche vuoto: {metrics_csv}") from e
        for column in PLOT_COLUMNS:
            if column not in df.columns:
                raise DataPreparationError(f"Colonna obbligatoria mancante nel CSV: '{column}'")
        if df.height == 0:
            raise DataPreparationError(f"CSV delle metriche senza righe: {metrics_csv}")

        svg = training_plot_svg(
            df["epoch"].cast(pl.Float64).to_list(),
            df["loss_total"].cast(pl.Float64).to_list(),
            df["val_miou"].cast(pl.Float64).to_list(),
        )
        atomic_write_bytes(svg_path, svg.encode("utf-8"))
        self.logger.info(f"Grafico di addestramento salvato in: {svg_path}")
        return Path(svg_path)
