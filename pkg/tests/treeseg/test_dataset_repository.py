import json
from unittest.mock import Mock

import numpy as np
import pytest

from src.treeseg.application.data_generation_usecase import (
    GenerationRequest,
    execute_generate_dataset,
    execute_spatial_split,
    restrict_taxonomy,
)
from src.treeseg.application.errors import DataPreparationError, InvalidInputError, MissingDataError, PipelineError
from src.treeseg.domain.constants import IGNORE_INDEX
from src.treeseg.domain.errors import SplitError
from src.treeseg.domain.interfaces import IDatasetRepository
from src.treeseg.infrastructure.dataset_repository import DirectoryDatasetRepository, sample_id_for


def test_sample_id_for():
    assert sample_id_for((3, 12)) == "tile_003_012"


class TestGeneratedDataset:
    def test_manifest_describes_selection(self, tiny_dataset):
        manifest = DirectoryDatasetRepository(tiny_dataset).load_manifest()
        assert manifest["num_samples"] == 8
        assert manifest["grid_shape"] == [2, 4]
        assert manifest["selected_indices"] == [1, 4, 5, 6]
        assert manifest["annotation_position"] == 1
        assert manifest["time_steps"] == 4
        assert manifest["splits"]["val"] == []
        assert len(manifest["splits"]["train"]) == 8

    def test_confusable_pair_is_recorded(self, tiny_dataset):
        repository = DirectoryDatasetRepository(tiny_dataset)
        manifest = repository.load_manifest()
        taxonomy = repository.load_taxonomy()
        if "ACRU" in taxonomy.species and "BEAL" in taxonomy.species:
            assert manifest["confusable_pairs"] == [["ACRU", "BEAL"]]

    def test_samples_load_back(self, tiny_dataset):
        repository = DirectoryDatasetRepository(tiny_dataset)
        taxonomy = repository.load_taxonomy()
        samples = repository.load_split("train")

        assert len(samples) == 8
        for sample in samples:
            assert sample.images.shape == (4, 3, 32, 32)
            assert sample.images.dtype == np.float32
            labels = set(np.unique(sample.mask)) - {IGNORE_INDEX}
            assert all(0 <= label < taxonomy.num_species for label in labels)

    def test_generation_is_reproducible(self, tmp_path, test_logger):
        request = GenerationRequest(seed=11, tiles=2, height=16, width=16, crowns_range=(1, 2), min_count=1, split=False)
        for name in ("a", "b"):
            execute_generate_dataset(DirectoryDatasetRepository(tmp_path / name), request, test_logger)
        for sub in ("samples/tile_000_000.tseg", "masks/tile_000_001.pgm", "manifest.json"):
            assert (tmp_path / "a" / sub).read_bytes() == (tmp_path / "b" / sub).read_bytes()

    def test_high_threshold_prunes_taxonomy(self, tmp_path, test_logger):
        request = GenerationRequest(
            seed=1,
            tiles=2,
            height=16,
            width=16,
            crowns_range=(1, 2),
            mix_weights={"ACRU": 1.0},
            min_count=2,
            split=False,
        )
        manifest = execute_generate_dataset(DirectoryDatasetRepository(tmp_path), request, test_logger)
        taxonomy = DirectoryDatasetRepository(tmp_path).load_taxonomy()
        assert taxonomy.species == ("ACRU",)
        assert sorted(manifest["removed_classes"]) == ["ABBA", "ACSA", "BEAL", "BEPA", "PIST"]
        assert manifest["crown_totals"]["ACRU"] >= 2
        assert manifest["confusable_pairs"] == []


class TestSplits:
    def test_split_dataset_has_buffer_columns(self, split_dataset):
        manifest = DirectoryDatasetRepository(split_dataset).load_manifest()
        assert manifest["split_plan"]["band_widths"] == [1, 1, 1]
        assert {len(manifest["splits"][s]) for s in ("train", "val", "test")} == {4}
        assert len(manifest["buffer"]) == 8

    def test_resplit_rewrites_manifest(self, tmp_path, test_logger):
        request = GenerationRequest(seed=2, tiles=20, height=16, width=16, crowns_range=(1, 2), min_count=1, split=False)
        repository = DirectoryDatasetRepository(tmp_path)
        execute_generate_dataset(repository, request, test_logger)

        updated = execute_spatial_split(repository, (0.63, 0.16, 0.21), 1, test_logger)

        reloaded = json.loads((tmp_path / "manifest.json").read_text(encoding="utf-8"))
        assert updated["splits"] == reloaded["splits"]
        assert [e["split"] for e in reloaded["samples"] if e["tile"] == [0, 1]] == [None]
        assert len(repository.load_split("test")) == 4

    def test_resplit_of_too_small_grid(self, tiny_dataset, test_logger):
        with pytest.raises(SplitError):
            execute_spatial_split(DirectoryDatasetRepository(tiny_dataset), (0.63, 0.16, 0.21), 1, test_logger)


class TestRepositoryErrors:
    def test_missing_manifest(self, tmp_path):
        with pytest.raises(MissingDataError):
            DirectoryDatasetRepository(tmp_path).load_manifest()

    def test_invalid_manifest(self, tmp_path):
        (tmp_path / "manifest.json").write_text("{", encoding="utf-8")
        with pytest.raises(DataPreparationError):
            DirectoryDatasetRepository(tmp_path).load_manifest()

    def test_unknown_split(self, tiny_dataset):
        with pytest.raises(DataPreparationError, match="holdout"):
            DirectoryDatasetRepository(tiny_dataset).load_split("holdout")


class TestGenerationUseCase:
    def test_unknown_species(self, taxonomy_15):
        with pytest.raises(InvalidInputError, match="QURU"):
            restrict_taxonomy(taxonomy_15, ["ACRU", "QURU"])

    def test_restricted_taxonomy_follows_file_order(self, taxonomy_15):
        taxonomy = restrict_taxonomy(taxonomy_15, ["PIST", "ACRU", "BEAL"])
        assert taxonomy.species == ("ACRU", "BEAL", "PIST")

    def test_unexpected_errors_become_pipeline_errors(self, test_logger):
        repository = Mock(spec=IDatasetRepository)
        repository.write_dataset.side_effect = RuntimeError("disk full")
        request = GenerationRequest(tiles=1, height=16, width=16, crowns_range=(1, 1), min_count=1, split=False)
        with pytest.raises(PipelineError, match="Errore critico"):
            execute_generate_dataset(repository, request, test_logger)

    def test_unsupported_policy(self, tmp_path, test_logger):
        request = GenerationRequest(tiles=1, height=16, width=16, policy="identity")
        with pytest.raises(InvalidInputError):
            execute_generate_dataset(DirectoryDatasetRepository(tmp_path), request, test_logger)
