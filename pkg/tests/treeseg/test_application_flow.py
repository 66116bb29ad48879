from unittest.mock import Mock

import pytest

from src.treeseg.application import pipeline as pipeline_module
from src.treeseg.application.errors import ConfigValidationError, InvalidInputError, MissingDataError, PipelineError
from src.treeseg.application.interfaces import Command
from src.treeseg.application.pipeline import ToolkitPipeline, train_config_from
from src.treeseg.application.training_usecase import execute_plot, execute_train
from src.treeseg.config import ToolkitConfig
from src.treeseg.domain.interfaces import ICheckpointStore, IDatasetRepository, IResultWriter
from src.treeseg.domain.training import TrainConfig
from src.treeseg.infrastructure.checkpoint_store import FileCheckpointStore
from src.treeseg.infrastructure.dataset_repository import DirectoryDatasetRepository
from src.treeseg.infrastructure.file_writer import FileResultWriter


@pytest.fixture
def toolkit(tmp_path):
    return ToolkitConfig(output_directory=str(tmp_path / "run"))


@pytest.fixture
def pipeline(toolkit, test_logger):
    factory = Mock(side_effect=lambda path: Mock(spec=IDatasetRepository, name=path))
    return ToolkitPipeline(factory, Mock(spec=ICheckpointStore), Mock(spec=IResultWriter), toolkit, test_logger)


class TestTrainConfigFrom:
    def test_maps_dataset_and_out(self, toolkit):
        config = train_config_from({"dataset": "data", "out": "ignored", "epochs": 3}, toolkit)
        assert config.dataset_path == "data"
        assert config.output_dir == toolkit.output_directory
        assert config.epochs == 3

    def test_explicit_dataset_wins(self, toolkit):
        config = train_config_from({"dataset": "a"}, toolkit, dataset="b")
        assert config.dataset_path == "b"

    def test_collects_every_problem(self, toolkit):
        with pytest.raises(ConfigValidationError) as exc:
            train_config_from({"dataset": "d", "lr": -1.0, "loss": "focal", "colour": 1}, toolkit)
        text = "\n".join(exc.value.problems)
        assert "lr" in text
        assert "loss" in text
        assert "colour: campo sconosciuto" in text


class TestDispatch:
    def test_gen_data_uses_out_directory(self, pipeline, monkeypatch):
        calls = {}

        def fake(repository, request, logger):
            calls["request"] = request
            return {"num_samples": request.tiles}

        monkeypatch.setattr(pipeline_module, "execute_generate_dataset", fake)
        result = pipeline.run(Command.GEN_DATA, {"out": "data", "tiles": 6, "seed": 4, "unrelated": 1})

        assert result == {"num_samples": 6}
        assert calls["request"].seed == 4
        pipeline.repository_factory.assert_called_once_with("data")

    def test_gen_data_requires_out(self, pipeline):
        with pytest.raises(InvalidInputError, match="out"):
            pipeline.run(Command.GEN_DATA, {"tiles": 2})

    def test_train_builds_config(self, pipeline, monkeypatch):
        seen = {}

        def fake(repository, store, writer, config, toolkit, logger):
            seen["config"] = config
            return "trained"

        monkeypatch.setattr(pipeline_module, "execute_train", fake)
        assert pipeline.run(Command.TRAIN, {"dataset": "data", "epochs": 2, "mode": "single_image"}) == "trained"
        assert seen["config"].mode == "single_image"
        pipeline.repository_factory.assert_called_once_with("data")

    def test_oracle_eval_needs_no_checkpoint(self, pipeline, monkeypatch):
        seen = {}

        def fake(repository, store, writer, toolkit, checkpoint, split, logger, **kwargs):
            seen.update(checkpoint=checkpoint, split=split, **kwargs)
            return "report"

        monkeypatch.setattr(pipeline_module, "execute_evaluate", fake)
        pipeline.run(Command.EVAL, {"dataset": "data", "split": "test", "oracle": True})
        assert seen["checkpoint"] is None
        assert seen["oracle"] is True

    def test_eval_without_checkpoint(self, pipeline):
        with pytest.raises(InvalidInputError, match="checkpoint"):
            pipeline.run(Command.EVAL, {"dataset": "data", "split": "test"})

    def test_eval_without_dataset(self, pipeline):
        with pytest.raises(InvalidInputError, match="dataset"):
            pipeline.run(Command.EVAL, {"split": "test", "oracle": True})

    def test_unknown_compare_axis(self, pipeline):
        with pytest.raises(InvalidInputError, match="tiles"):
            pipeline.run(Command.COMPARE, {"dataset": "data", "axis": "tiles"})

    def test_compare_defaults_to_base_seed(self, pipeline, monkeypatch):
        seen = {}

        def fake(repository, store, writer, base, toolkit, seeds, logger):
            seen.update(base=base, seeds=seeds)
            return []

        monkeypatch.setattr(pipeline_module, "execute_compare_losses", fake)
        pipeline.run(Command.COMPARE, {"dataset": "data", "axis": "losses", "train": {"seed": 7}})
        assert seen["seeds"] == [7]
        assert seen["base"].dataset_path == "data"


class TestTrainUseCase:
    def test_empty_train_split(self, tiny_dataset, toolkit, test_logger):
        config = TrainConfig(dataset_path=str(tiny_dataset), output_dir=toolkit.output_directory, train_split="test")
        with pytest.raises(MissingDataError):
            execute_train(
                DirectoryDatasetRepository(tiny_dataset),
                FileCheckpointStore(),
                FileResultWriter(toolkit),
                config,
                toolkit,
                test_logger,
            )

    def test_invalid_config_is_reported_before_loading(self, toolkit, test_logger):
        repository = Mock(spec=IDatasetRepository)
        with pytest.raises(ConfigValidationError):
            execute_train(
                repository,
                Mock(spec=ICheckpointStore),
                Mock(spec=IResultWriter),
                TrainConfig(epochs=0),
                toolkit,
                test_logger,
            )
        repository.load_manifest.assert_not_called()


class TestPlotUseCase:
    def test_writes_svg(self, toolkit, tmp_path, test_logger):
        writer = FileResultWriter(toolkit)
        metrics = tmp_path / "metrics.csv"
        metrics.write_text(
            "epoch,lr,loss_total,loss_species,loss_genus,loss_taxon,loss_dice,loss_ce,val_miou\n"
            "0,0.001,1.0,0.5,0.3,0.2,,,0.1\n"
            "1,0.00099,0.8,0.4,0.2,0.2,,,\n",
            encoding="utf-8",
        )
        path = execute_plot(writer, metrics, tmp_path / "plot.svg", test_logger)
        assert path.read_text(encoding="utf-8").startswith("<svg")

    def test_unexpected_error_is_wrapped(self, test_logger, tmp_path):
        writer = Mock(spec=IResultWriter)
        writer.write_training_plot.side_effect = OSError("read-only")
        with pytest.raises(PipelineError, match="Errore critico"):
            execute_plot(writer, tmp_path / "m.csv", tmp_path / "p.svg", test_logger)
