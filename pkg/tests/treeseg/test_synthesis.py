from collections import Counter

import numpy as np
import pytest

from src.treeseg.domain.constants import DEFAULT_CALENDAR, IGNORE_INDEX
from src.treeseg.domain.errors import SplitError, SynthesisError
from src.treeseg.domain.synthesis import (
    ALL_TRANSFORMS,
    DEFAULT_SPECIES,
    DihedralTransform,
    LabeledSequence,
    SceneSpec,
    apply_transform,
    augment,
    default_signatures,
    draw_transform,
    filter_rare_classes,
    find_confusable_pairs,
    generate_tile,
    grid_shape_for,
    select_timesteps,
    single_split_plan,
    spatial_split,
    synthesize_tiles,
)


@pytest.fixture
def signatures():
    selection = select_timesteps(list(range(7)), DEFAULT_CALENDAR, "seasonal")
    return [s.select(selection.indices) for s in default_signatures()]


class TestTimestepSelection:
    def test_seasonal_policy_picks_june_september_october(self):
        selection = select_timesteps(list("abcdefg"), DEFAULT_CALENDAR, "seasonal")
        assert selection.indices == (1, 4, 5, 6)
        assert selection.frames == ["b", "e", "f", "g"]
        assert selection.reference_position == 1
        assert selection.tags[selection.reference_position] == "2021-09-02"

    def test_arrays_are_selected_along_time_axis(self):
        series = np.arange(7 * 2).reshape(7, 2)
        selection = select_timesteps(series, DEFAULT_CALENDAR)
        np.testing.assert_array_equal(selection.frames[:, 0], [2, 8, 10, 12])

    def test_identity_policy(self):
        assert select_timesteps([0, 1, 2, 3], policy="identity").indices == (0, 1, 2, 3)

    def test_missing_tag(self):
        tags = list(DEFAULT_CALENDAR)
        tags[6] = ""
        with pytest.raises(SynthesisError, match="Tag data mancante"):
            select_timesteps(list(range(7)), tags)

    def test_missing_month(self):
        tags = list(DEFAULT_CALENDAR)
        tags[6] = "2021-11-02"
        with pytest.raises(SynthesisError, match="10"):
            select_timesteps(list(range(7)), tags)

    def test_wrong_length(self):
        with pytest.raises(SynthesisError):
            select_timesteps(list(range(5)), DEFAULT_CALENDAR[:5])

    def test_unknown_policy(self):
        with pytest.raises(SynthesisError):
            select_timesteps(list(range(4)), policy="monthly")


class TestSignatures:
    def test_default_species(self):
        assert set(DEFAULT_SPECIES) == {"ACRU", "BEAL", "ACSA", "BEPA", "PIST", "ABBA"}

    def test_confusable_pair_differs_only_after_reference(self, signatures):
        assert find_confusable_pairs(signatures, reference_index=2) == [("ACRU", "BEAL")]

    def test_no_pair_when_reference_is_last(self, signatures):
        assert find_confusable_pairs(signatures, reference_index=3) == []

    def test_unknown_species(self):
        with pytest.raises(SynthesisError):
            default_signatures(["QURU"])


class TestTiles:
    def test_tile_shapes_and_ranges(self, signatures):
        scene = SceneSpec(height=32, width=32, crowns_range=(3, 5))
        sample = generate_tile(scene, signatures, np.full((4, 3), 0.3), tile_index=0, seed=1)
        assert sample.images.shape == (4, 3, 32, 32)
        assert sample.images.dtype == np.float32
        assert 0.0 <= sample.images.min() and sample.images.max() <= 1.0
        labels = set(np.unique(sample.mask)) - {IGNORE_INDEX}
        assert labels == set(sample.crown_counts)
        assert np.any(sample.mask == IGNORE_INDEX)

    def test_generation_is_deterministic(self, signatures):
        scene = SceneSpec(height=32, width=32, crowns_range=(3, 5))
        bg = np.full((4, 3), 0.3)
        a = synthesize_tiles(scene, signatures, 3, seed=9, background=bg, workers=1)
        b = synthesize_tiles(scene, signatures, 3, seed=9, background=bg, workers=2)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.images, y.images)
            np.testing.assert_array_equal(x.mask, y.mask)

    def test_tiles_are_laid_on_grid(self, signatures):
        scene = SceneSpec(height=16, width=16, crowns_range=(1, 2))
        tiles = synthesize_tiles(scene, signatures, 5, seed=0, background=np.full((4, 3), 0.3))
        assert [t.tile for t in tiles] == [(0, 0), (0, 1), (0, 2), (1, 0), (1, 1)]

    def test_class_pixels_follow_mix_weights(self, signatures):
        scene = SceneSpec(height=32, width=32, crowns_range=(3, 5))
        tiles = synthesize_tiles(scene, signatures, 64, seed=21, background=np.full((4, 3), 0.3))

        labels = np.concatenate([t.mask.ravel() for t in tiles])
        counts = np.bincount(labels[labels != IGNORE_INDEX], minlength=len(signatures))
        shares = counts / counts.sum()
        expected = 1 / len(signatures)
        assert np.all(np.abs(shares / expected - 1) <= 0.20), shares

    def test_canvas_must_fit_unet_depth(self, signatures):
        with pytest.raises(SynthesisError, match="divisibile"):
            synthesize_tiles(SceneSpec(height=30, width=32), signatures, 1, background=np.full((4, 3), 0.3))

    def test_background_length_must_match(self, signatures):
        with pytest.raises(SynthesisError):
            synthesize_tiles(SceneSpec(height=16, width=16), signatures, 1, background=np.zeros((7, 3)))

    def test_mask_must_align(self):
        with pytest.raises(SynthesisError):
            LabeledSequence(images=np.zeros((4, 3, 8, 8)), mask=np.zeros((8, 7), dtype=np.uint8))


@pytest.mark.parametrize("n, expected", [(1, (1, 1)), (8, (2, 4)), (20, (4, 5)), (100, (10, 10))])
def test_grid_shape_for(n, expected):
    assert grid_shape_for(n) == expected


class TestSpatialSplit:
    def test_bands_are_separated_by_buffer(self):
        plan = spatial_split((4, 5), buffer=1)
        assert plan.axis == "columns"
        assert plan.band_widths == (1, 1, 1)
        assert plan.tiles_in("train") == [(r, 0) for r in range(4)]
        assert plan.tiles_in("test") == [(r, 4) for r in range(4)]
        assert len(plan.buffer_tiles) == 8
        assert plan.adjacency_violations() == []

    def test_default_ratios_on_large_grid(self):
        plan = spatial_split((10, 20))
        assert plan.band_widths == (11, 3, 4)
        fractions = plan.fractions()
        assert fractions["train"] == pytest.approx(0.63, abs=0.10)
        assert fractions["val"] == pytest.approx(0.16, abs=0.10)
        assert fractions["test"] == pytest.approx(0.21, abs=0.10)
        assert plan.adjacency_violations() == []

    def test_tall_grid_splits_along_rows(self):
        plan = spatial_split((7, 2))
        assert plan.axis == "rows"
        assert plan.tiles_in("train")[0] == (0, 0)

    def test_too_small_grid_names_minimum(self):
        with pytest.raises(SplitError, match="almeno 5"):
            spatial_split((2, 4), buffer=1)

    def test_ratios_must_sum_to_one(self):
        with pytest.raises(SplitError):
            spatial_split((4, 10), ratios=(0.5, 0.2, 0.2))

    def test_single_split_plan(self):
        plan = single_split_plan((2, 4))
        assert len(plan.tiles_in("train")) == 8
        assert plan.buffer_tiles == []


class TestRareClassFilter:
    def _sample(self, labels, counts):
        mask = np.array(labels, dtype=np.uint8)
        return LabeledSequence(np.zeros((4, 3) + mask.shape, dtype=np.float32), mask, crown_counts=counts)

    def test_rare_class_becomes_ignore(self, small_taxonomy):
        samples = [
            self._sample([[0, 1], [2, IGNORE_INDEX]], {0: 2, 1: 1, 2: 2}),
            self._sample([[0, 2], [0, 0]], {0: 1, 2: 1}),
        ]
        result = filter_rare_classes(samples, small_taxonomy, min_count=2)

        assert result.removed == ["s1", "s3"]
        assert result.taxonomy.species == ("s0", "s2")
        assert result.index_map == {0: 0, 2: 1}
        np.testing.assert_array_equal(result.samples[0].mask, [[0, IGNORE_INDEX], [1, IGNORE_INDEX]])
        assert result.crown_totals == {"s0": 3, "s1": 1, "s2": 3, "s3": 0}

    def test_threshold_is_inclusive(self, small_taxonomy):
        samples = [
            self._sample([[0, 1], [2, 3]], {0: 30, 1: 25, 2: 40, 3: 1}),
            self._sample([[0, 1], [2, 3]], {0: 19, 1: 25, 2: 10}),
        ]
        result = filter_rare_classes(samples, small_taxonomy, min_count=50)

        assert result.crown_totals == {"s0": 49, "s1": 50, "s2": 50, "s3": 1}
        assert result.removed == ["s0", "s3"]
        assert result.taxonomy.species == ("s1", "s2")
        np.testing.assert_array_equal(result.samples[0].mask, [[IGNORE_INDEX, 0], [1, IGNORE_INDEX]])

    def test_everything_rare(self, small_taxonomy):
        samples = [self._sample([[0]], {0: 1})]
        with pytest.raises(SynthesisError):
            filter_rare_classes(samples, small_taxonomy, min_count=5)


class TestAugmentation:
    def test_quarter_turn_maps_pixel(self):
        image = np.zeros((3, 3))
        image[0, 1] = 1.0
        rotated = apply_transform(image, DihedralTransform(1, False))
        assert rotated[1, 2] == 1.0

    def test_eight_distinct_transforms(self):
        image = np.arange(9).reshape(3, 3)
        outputs = {apply_transform(image, t).tobytes() for t in ALL_TRANSFORMS}
        assert len(outputs) == 8

    def test_rotation_rejected_on_rectangular_input(self):
        with pytest.raises(SynthesisError):
            apply_transform(np.zeros((2, 4)), DihedralTransform(1, False))

    def test_augment_keeps_images_and_mask_aligned(self, signatures):
        scene = SceneSpec(height=16, width=16, crowns_range=(2, 3))
        sample = generate_tile(scene, signatures, np.full((4, 3), 0.3), 0, seed=2)
        out = augment(sample, np.random.default_rng(3))
        crown = out.mask != IGNORE_INDEX
        original = sample.mask != IGNORE_INDEX
        assert crown.sum() == original.sum()
        assert out.images.shape == sample.images.shape

    @pytest.mark.parametrize("transform", ALL_TRANSFORMS)
    def test_class_pixel_counts_survive_every_transform(self, signatures, transform):
        scene = SceneSpec(height=16, width=16, crowns_range=(3, 4))
        sample = generate_tile(scene, signatures, np.full((4, 3), 0.3), 0, seed=4)
        moved = apply_transform(sample.mask, transform)
        np.testing.assert_array_equal(
            np.bincount(moved.ravel(), minlength=256), np.bincount(sample.mask.ravel(), minlength=256)
        )

    def test_draws_cover_the_dihedral_group_uniformly(self):
        rng = np.random.default_rng(11)
        draws = Counter(draw_transform(rng) for _ in range(10_000))
        assert set(draws) == set(ALL_TRANSFORMS)
        for transform in ALL_TRANSFORMS:
            assert abs(draws[transform] / 10_000 - 1 / 8) <= 0.02, transform
