import json

import numpy as np
import pytest

from src.treeseg.domain.constants import IGNORE_INDEX
from src.treeseg.domain.errors import ShapeMismatchError, TaxonomyError
from src.treeseg.domain.taxonomy import aggregate_labels, aggregate_probs, load_taxonomy, taxonomy_from_dict
from src.treeseg.domain.tensor import Tensor, debug_mode, precision


def test_bundled_taxonomy_sizes(taxonomy_15):
    assert taxonomy_15.num_species == 15
    assert taxonomy_15.num_genera == 11
    assert taxonomy_15.num_taxa == 6
    assert taxonomy_15.excluded_species == ("Acer sp.",)


def test_bundled_taxonomy_groups(taxonomy_15):
    acer = taxonomy_15.genera.index("Acer")
    names = [taxonomy_15.species[s] for s in taxonomy_15.species_groups[acer]]
    assert names == ["ACPE", "ACRU", "ACSA", "Acer sp."]
    assert taxonomy_15.category_of_species(taxonomy_15.species_index("PIST")) == "coniferous"


def test_taxa_are_derived_when_section_missing():
    taxonomy = taxonomy_from_dict(
        {
            "species": [{"name": "a", "genus": "G1"}, {"name": "b", "genus": "G2"}],
            "genera": [{"name": "G1", "taxon": "T2"}, {"name": "G2", "taxon": "T1"}],
        }
    )
    assert taxonomy.taxa == ("T2", "T1")
    assert taxonomy.categories == (None, None)


class TestValidation:
    def test_orphan_species_is_reported(self):
        with pytest.raises(TaxonomyError) as exc:
            taxonomy_from_dict(
                {
                    "species": [{"name": "a", "genus": "missing"}],
                    "genera": [{"name": "G", "taxon": "T"}],
                }
            )
        assert any("orfana" in p for p in exc.value.problems)

    def test_all_problems_are_collected(self):
        with pytest.raises(TaxonomyError) as exc:
            taxonomy_from_dict(
                {
                    "species": [
                        {"name": "a", "genus": "G", "color": "red"},
                        {"name": "a", "genus": "G"},
                    ],
                    "genera": [{"name": "G", "taxon": "T"}],
                    "taxa": [{"name": "T", "category": "shrub"}],
                }
            )
        problems = " ".join(exc.value.problems)
        assert "duplicato" in problems
        assert "shrub" in problems
        assert "red" in problems

    def test_empty_genus_is_rejected(self):
        with pytest.raises(TaxonomyError, match="senza specie"):
            taxonomy_from_dict(
                {
                    "species": [{"name": "a", "genus": "G1"}],
                    "genera": [{"name": "G1", "taxon": "T"}, {"name": "G2", "taxon": "T"}],
                }
            )

    def test_missing_sections(self):
        with pytest.raises(TaxonomyError):
            taxonomy_from_dict({"species": []})

    def test_missing_file(self, tmp_path):
        with pytest.raises(TaxonomyError, match="non trovato"):
            load_taxonomy(tmp_path / "absent.json")

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(TaxonomyError, match="JSON"):
            load_taxonomy(path)


def test_round_trip_through_file(tmp_path, taxonomy_15):
    path = tmp_path / "taxonomy.json"
    path.write_text(json.dumps(taxonomy_15.to_dict()), encoding="utf-8")
    assert load_taxonomy(path) == taxonomy_15


def test_prune_keeps_used_levels(taxonomy_15):
    keep = [taxonomy_15.species_index(n) for n in ("ACSA", "ABBA", "ACRU")]
    pruned, mapping = taxonomy_15.prune(keep)

    assert pruned.species == ("ABBA", "ACRU", "ACSA")
    assert pruned.genera == ("Abies", "Acer")
    assert pruned.taxa == ("maple-group", "pine-family")
    assert mapping == {0: 0, 2: 1, 3: 2}


def test_prune_to_nothing_is_rejected(taxonomy_15):
    with pytest.raises(TaxonomyError):
        taxonomy_15.prune([])


class TestAggregation:
    def test_probabilities_sum_per_group(self, small_taxonomy):
        with precision(np.float64):
            p = Tensor(np.array([0.1, 0.2, 0.3, 0.4]).reshape(4, 1, 1))
            genus = aggregate_probs(p, small_taxonomy, "genus")
            taxon = aggregate_probs(p, small_taxonomy, "taxon")
        np.testing.assert_allclose(genus.data.ravel(), [0.3, 0.7])
        np.testing.assert_allclose(taxon.data.ravel(), [1.0])

    def test_batched_probabilities_use_channel_axis(self, small_taxonomy):
        p = Tensor(np.full((2, 4, 3, 3), 0.25))
        assert aggregate_probs(p, small_taxonomy, "genus").shape == (2, 2, 3, 3)

    def test_wrong_class_count(self, small_taxonomy):
        with pytest.raises(ShapeMismatchError):
            aggregate_probs(Tensor(np.full((3, 2, 2), 1 / 3)), small_taxonomy, "genus")

    def test_debug_checks_simplex(self, small_taxonomy):
        with debug_mode(True):
            with pytest.raises(TaxonomyError):
                aggregate_probs(Tensor(np.full((4, 1, 1), 0.5)), small_taxonomy, "genus")

    def test_labels_keep_ignore_index(self, small_taxonomy):
        y = np.array([[0, 1], [3, IGNORE_INDEX]])
        np.testing.assert_array_equal(
            aggregate_labels(y, small_taxonomy, "genus"), [[0, 0], [1, IGNORE_INDEX]]
        )
        np.testing.assert_array_equal(
            aggregate_labels(y, small_taxonomy, "taxon"), [[0, 0], [0, IGNORE_INDEX]]
        )

    def test_out_of_range_label_names_coordinate(self, small_taxonomy):
        with pytest.raises(TaxonomyError, match=r"\(1, 0\)"):
            aggregate_labels(np.array([[0, 1], [7, 2]]), small_taxonomy, "species")
