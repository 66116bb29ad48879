import json

import numpy as np
import pandas as pd
import polars as pl
import pytest

from src.treeseg.application.errors import DataPreparationError, MissingDataError
from src.treeseg.config import ToolkitConfig
from src.treeseg.domain.constants import IGNORE_INDEX, METRICS_CSV_COLUMNS
from src.treeseg.domain.metrics import evaluate_predictions
from src.treeseg.infrastructure.file_writer import FileResultWriter, dump_json
from src.treeseg.infrastructure.graphics import (
    colorize,
    fallback_color,
    frame_to_rgb,
    read_pgm,
    read_ppm,
    species_palette,
    training_plot_svg,
    write_pgm,
)


@pytest.fixture
def writer(tmp_path):
    return FileResultWriter(ToolkitConfig(output_directory=str(tmp_path)))


def _metrics_rows(n=3):
    return [
        {
            "epoch": e,
            "lr": 1e-3 * 0.5**e,
            "loss_total": 1.0 / (e + 1),
            "loss_species": 0.5,
            "loss_genus": 0.3,
            "loss_taxon": 0.1,
            "val_miou": 0.1 * e,
        }
        for e in range(n)
    ]


class TestMetricsCsv:
    def test_columns_in_fixed_order(self, writer, tmp_path):
        path = tmp_path / "metrics.csv"
        writer.write_metrics_csv(_metrics_rows(), path)
        header = path.read_text(encoding="utf-8").splitlines()[0]
        assert header.split(",") == list(METRICS_CSV_COLUMNS)

    def test_read_back(self, writer, tmp_path):
        path = tmp_path / "metrics.csv"
        writer.write_metrics_csv(_metrics_rows(), path)
        rows = writer.read_metrics_csv(path)
        assert [r["epoch"] for r in rows] == [0, 1, 2]
        assert rows[1]["lr"] == pytest.approx(5e-4)
        assert rows[0]["loss_dice"] is None

    def test_missing_file(self, writer, tmp_path):
        with pytest.raises(MissingDataError):
            writer.read_metrics_csv(tmp_path / "absent.csv")

    def test_missing_columns(self, writer, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("epoch,lr\n0,0.1\n", encoding="utf-8")
        with pytest.raises(DataPreparationError, match="loss_total"):
            writer.read_metrics_csv(path)


class TestReports:
    def test_report_csv_orders_by_category(self, writer, tmp_path, taxonomy_15):
        pine = taxonomy_15.species_index("ABBA")
        maple = taxonomy_15.species_index("ACRU")
        truth = np.array([[pine, maple]])
        report = evaluate_predictions([(truth, truth)], taxonomy_15)

        path = tmp_path / "report.csv"
        writer.export_report(report, path, "csv")

        df = pl.read_csv(path)
        classes = df["class"].to_list()
        assert classes.index("ACRU") < classes.index("ABBA")
        assert classes[-1] == "DEAD"
        assert df.filter(pl.col("class") == "Acer sp.")["included"].to_list() == [False]

    def test_report_json_round_trips_nan(self, writer, tmp_path, small_taxonomy):
        truth = np.array([[0, 1]])
        report = evaluate_predictions([(truth, truth)], small_taxonomy)
        path = tmp_path / "report.json"
        writer.export_report(report, path, "json")
        data = json.loads(path.read_text(encoding="utf-8"))
        assert data["miou"] == pytest.approx(1.0)
        assert data["per_class_iou"]["s3"] is None

    def test_unknown_format(self, writer, tmp_path, small_taxonomy):
        truth = np.array([[0]])
        report = evaluate_predictions([(truth, truth)], small_taxonomy)
        with pytest.raises(ValueError):
            writer.export_report(report, tmp_path / "r.xml", "xml")

    def test_confusion_csv(self, writer, tmp_path, small_taxonomy):
        report = evaluate_predictions([(np.array([[1, 1]]), np.array([[0, 1]]))], small_taxonomy)
        path = tmp_path / "confusion.csv"
        writer.write_confusion_csv(report, path)
        frame = pd.read_csv(path, index_col=0)
        assert list(frame.columns) == ["s0", "s1", "s2", "s3"]
        assert frame.loc["s0", "s1"] == 1
        assert frame.loc["s1", "s1"] == 1

    def test_comparison_csv_requires_rows(self, writer, tmp_path):
        with pytest.raises(DataPreparationError):
            writer.write_comparison_csv([], tmp_path / "c.csv")

    def test_comparison_csv(self, writer, tmp_path):
        path = tmp_path / "c.csv"
        writer.write_comparison_csv([{"class": "ACRU", "delta": 0.3}, {"class": "mIoU", "delta": 0.1}], path)
        assert pl.read_csv(path)["class"].to_list() == ["ACRU", "mIoU"]


class TestTrainingPlot:
    def test_svg_has_both_series(self, writer, tmp_path):
        metrics = tmp_path / "metrics.csv"
        writer.write_metrics_csv(_metrics_rows(), metrics)
        svg = writer.write_training_plot(metrics, tmp_path / "plots" / "training.svg").read_text(encoding="utf-8")
        assert svg.startswith("<svg")
        assert 'data-series="loss"' in svg
        assert 'data-series="val_miou"' in svg

    def test_missing_csv(self, writer, tmp_path):
        with pytest.raises(MissingDataError):
            writer.write_training_plot(tmp_path / "absent.csv", tmp_path / "t.svg")

    def test_empty_csv(self, writer, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("", encoding="utf-8")
        with pytest.raises(DataPreparationError):
            writer.write_training_plot(path, tmp_path / "t.svg")

    def test_missing_column_is_named(self, writer, tmp_path):
        path = tmp_path / "partial.csv"
        path.write_text("epoch,loss_total\n0,1.0\n", encoding="utf-8")
        with pytest.raises(DataPreparationError, match="val_miou"):
            writer.write_training_plot(path, tmp_path / "t.svg")

    def test_header_without_rows(self, writer, tmp_path):
        path = tmp_path / "header.csv"
        path.write_text("epoch,loss_total,val_miou\n", encoding="utf-8")
        with pytest.raises(DataPreparationError):
            writer.write_training_plot(path, tmp_path / "t.svg")

    def test_plot_is_deterministic(self):
        a = training_plot_svg([0, 1, 2], [1.0, 0.5, 0.2], [0.1, None, 0.4])
        b = training_plot_svg([0, 1, 2], [1.0, 0.5, 0.2], [0.1, None, 0.4])
        assert a == b


class TestGraphics:
    def test_pgm_round_trip(self, tmp_path):
        mask = np.array([[0, 1], [IGNORE_INDEX, 3]], dtype=np.uint8)
        write_pgm(tmp_path / "m.pgm", mask)
        assert (tmp_path / "m.pgm").read_bytes().startswith(b"P5\n2 2\n255\n")
        np.testing.assert_array_equal(read_pgm(tmp_path / "m.pgm"), mask)

    def test_pgm_rejects_wrong_magic(self, tmp_path):
        write_pgm(tmp_path / "m.pgm", np.zeros((2, 2), dtype=np.uint8))
        with pytest.raises(DataPreparationError):
            read_ppm(tmp_path / "m.pgm")

    def test_colorize_blacks_out_ignore_and_unknown(self, small_taxonomy):
        palette = species_palette(small_taxonomy)
        out = colorize(np.array([[0, IGNORE_INDEX, 9]]), palette)
        np.testing.assert_array_equal(out[0, 0], [255, 0, 0])
        np.testing.assert_array_equal(out[0, 1], [0, 0, 0])
        np.testing.assert_array_equal(out[0, 2], [0, 0, 0])

    def test_missing_color_uses_fallback(self, small_taxonomy):
        palette = species_palette(small_taxonomy)
        assert tuple(palette[3]) == fallback_color(3)

    def test_frame_to_rgb(self):
        frame = np.zeros((3, 1, 2))
        frame[0, 0, 1] = 1.0
        np.testing.assert_array_equal(frame_to_rgb(frame)[0, 1], [255, 0, 0])

    def test_overlays(self, writer, tmp_path, small_taxonomy):
        mask = np.array([[0, 1], [2, IGNORE_INDEX]])
        paths = writer.write_overlays("tile_000_000", np.zeros((3, 2, 2)), mask, mask, small_taxonomy, tmp_path / "p")
        assert [p.name for p in paths] == ["tile_000_000_input.ppm", "tile_000_000_truth.ppm", "tile_000_000_pred.ppm"]
        assert read_ppm(paths[1]).shape == (2, 2, 3)


def test_dump_json_replaces_nan_and_numpy_scalars():
    data = json.loads(dump_json({"a": float("nan"), "b": np.float32(0.5), "c": [np.int64(2)]}))
    assert data == {"a": None, "b": 0.5, "c": [2]}
