import numpy as np
import pytest

from heatdiff.dataprep import (
    SpectralBands,
    SplitSpec,
    compute_indices,
    flatten_tabular,
    make_point_condition,
    make_sr_condition,
    partition_patches,
    scale_lst,
    split_by_year,
    tabular_to_csv,
)
from heatdiff.errors import AlignmentError, ConfigError
from heatdiff.grids import Raster, resample_bilinear

from test_grids import make_meta, make_scene


def make_bands(size=8, seed=0):
    rng = np.random.default_rng(seed)
    mk = lambda: Raster(rng.uniform(0.05, 0.9, (size, size, 1)), 30.0)
    return SpectralBands(red=mk(), green=mk(), blue=mk(), nir=mk(), swir=mk(), tir=mk())


class TestIndices:
    def test_direct_formula(self):
        b = make_bands()
        b.nir.values[0, 0, 0] = 0.6
        b.red.values[0, 0, 0] = 0.2
        ndvi, _, _ = compute_indices(b)
        assert ndvi.values[0, 0, 0] == pytest.approx(0.5, abs=1e-6)

    def test_equal_nir_swir_zeroes_both(self):
        b = make_bands()
        b.swir.values[:] = b.nir.values
        _, ndbi, ndwi = compute_indices(b)
        assert np.all(ndbi.values == 0.0)
        assert np.all(ndwi.values == 0.0)

    def test_ndwi_is_negated_ndbi(self):
        b = make_bands(seed=3)
        _, ndbi, ndwi = compute_indices(b)
        assert np.array_equal(ndwi.values, -ndbi.values)

    def test_zero_denominator_invalid(self):
        b = make_bands()
        b.nir.values[2, 3, 0] = 0.4
        b.red.values[2, 3, 0] = -0.4
        ndvi, _, _ = compute_indices(b)
        assert ndvi.values[2, 3, 0] == 0.0
        assert not ndvi.valid_mask[2, 3]

    def test_misaligned_bands_rejected(self):
        b = make_bands()
        with pytest.raises(AlignmentError):
            SpectralBands(
                red=Raster(np.zeros((4, 4, 1)), 30.0),
                green=b.green,
                blue=b.blue,
                nir=b.nir,
                swir=b.swir,
                tir=b.tir,
            )


class TestScaleLst:
    def test_arithmetic(self):
        r = Raster(np.full((2, 2, 1), 20.0), 30.0)
        out = scale_lst(r, 0.5, 10.0)
        assert np.all(out.values == 20.0)

    def test_identity(self):
        rng = np.random.default_rng(1)
        r = Raster(rng.normal(size=(4, 4, 1)).astype(np.float32), 30.0)
        out = scale_lst(r, 1.0, 0.0)
        assert np.array_equal(out.values, r.values)

    def test_elementwise_oracle(self):
        rng = np.random.default_rng(2)
        vals = rng.normal(300, 20, (6, 6, 1)).astype(np.float32)
        r = Raster(vals, 30.0)
        out = scale_lst(r, 0.00341802, -124.15)
        expected = np.array(
            [[0.00341802 * float(v) + -124.15 for v in row] for row in vals[:, :, 0]]
        )
        assert np.allclose(out.values[:, :, 0], expected, atol=1e-6)

    def test_nonfinite_constants_rejected(self):
        with pytest.raises(ConfigError):
            scale_lst(Raster(np.zeros((2, 2, 1)), 30.0), float("nan"), 0.0)

    def test_mask_propagates(self):
        mask = np.array([[True, False], [True, True]])
        r = Raster(np.ones((2, 2, 1)), 30.0, mask)
        out = scale_lst(r, 2.0, 1.0)
        assert np.array_equal(out.valid_mask, mask)


class TestPatches:
    def test_single_patch_identity(self):
        s = make_scene(sat=20, ta=6)
        patches = partition_patches(s, 20)
        assert len(patches) == 1
        assert np.array_equal(patches[0].rgb.values, s.rgb.values)
        assert np.array_equal(patches[0].ta.values, s.ta.values)

    def test_patch_counting(self):
        s = make_scene(sat=40, ta=12)
        patches = partition_patches(s, 20)
        assert len(patches) == 4
        assert patches[0].ta.width == 6

    def test_stitch_back_lossless(self):
        s = make_scene(sat=40, ta=12, seed=11)
        patches = partition_patches(s, 20)
        top = np.concatenate([patches[0].rgb.values, patches[1].rgb.values], axis=1)
        bottom = np.concatenate([patches[2].rgb.values, patches[3].rgb.values], axis=1)
        assert np.array_equal(np.concatenate([top, bottom], axis=0), s.rgb.values)
        top_ta = np.concatenate([patches[0].ta.values, patches[1].ta.values], axis=1)
        bottom_ta = np.concatenate([patches[2].ta.values, patches[3].ta.values], axis=1)
        assert np.array_equal(np.concatenate([top_ta, bottom_ta], axis=0), s.ta.values)

    def test_edge_patches_padded_and_masked(self):
        s = make_scene(sat=30, ta=9)
        patches = partition_patches(s, 20)
        assert len(patches) == 4
        edge = patches[1]
        assert edge.rgb.width == 20
        assert not edge.rgb.valid_mask[:, 10:].any()
        assert edge.rgb.valid_mask[:, :10].all()

    def test_incompatible_ratio_rejected(self):
        s = make_scene(sat=20, ta=6)
        with pytest.raises(ConfigError):
            partition_patches(s, 7)


class TestConditions:
    def test_sr_constant_unchanged(self):
        r = Raster(np.full((12, 12, 1), 4.5, dtype=np.float32), 100.0)
        out = make_sr_condition(r)
        assert out.values.shape == (12, 12, 1)
        assert np.allclose(out.values, 4.5, atol=1e-6)

    def test_sr_matches_composed_oracle(self):
        ramp = np.tile(np.linspace(0, 10, 48, dtype=np.float32)[:, None, None], (1, 48, 1))
        r = Raster(ramp, 100.0)
        out = make_sr_condition(r)
        oracle = resample_bilinear(resample_bilinear(r, 16, 16), 48, 48)
        assert np.allclose(out.values, oracle.values, atol=1e-5)

    def test_point_grid_count(self):
        r = Raster(np.random.default_rng(0).normal(size=(48, 48, 1)), 100.0)
        values, mask = make_point_condition(r, 16)
        assert mask.values.sum() == 9
        pts = np.argwhere(mask.values[:, :, 0] > 0)
        assert set(map(tuple, pts)) == {(y, x) for y in (8, 24, 40) for x in (8, 24, 40)}
        for y, x in pts:
            assert values.values[y, x, 0] == r.values[y, x, 0]

    def test_point_stride_one_degenerate(self):
        r = Raster(np.random.default_rng(1).normal(size=(6, 6, 1)), 100.0)
        values, mask = make_point_condition(r, 1)
        assert np.all(mask.values == 1.0)
        assert np.array_equal(values.values, r.values.astype(np.float32))

    def test_point_count_formula(self):
        r = Raster(np.zeros((50, 37, 1)), 100.0)
        _, mask = make_point_condition(r, 8)
        off = 4
        expected = int(np.ceil((37 - off) / 8)) * int(np.ceil((50 - off) / 8))
        assert mask.values.sum() == expected


class TestSplit:
    def test_default_years(self):
        scenes = [make_scene(seed=i) for i in range(4)]
        years = [2008, 2015, 2016, 2017]
        scenes = [
            type(s)(ta=s.ta, lst=s.lst, ndvi=s.ndvi, ndbi=s.ndbi, ndwi=s.ndwi, rgb=s.rgb, meta=make_meta(year=y))
            for s, y in zip(scenes, years)
        ]
        train, test = split_by_year(scenes)
        assert [s.meta.year for s in train] == [2008, 2015]
        assert [s.meta.year for s in test] == [2016, 2017]

    def test_unknown_year_dropped(self):
        scenes = []
        for y in (2008, 2016, 1999):
            s = make_scene()
            scenes.append(
                type(s)(ta=s.ta, lst=s.lst, ndvi=s.ndvi, ndbi=s.ndbi, ndwi=s.ndwi, rgb=s.rgb, meta=make_meta(year=y))
            )
        train, test = split_by_year(scenes)
        assert len(train) == 1 and len(test) == 1

    def test_empty_partition_rejected(self):
        s = make_scene()
        s = type(s)(ta=s.ta, lst=s.lst, ndvi=s.ndvi, ndbi=s.ndbi, ndwi=s.ndwi, rgb=s.rgb, meta=make_meta(year=2008))
        with pytest.raises(ConfigError):
            split_by_year([s])

    def test_overlapping_spec_rejected(self):
        with pytest.raises(ConfigError):
            SplitSpec(frozenset({2008}), frozenset({2008}))


class TestTabular:
    def test_row_count_fully_valid(self):
        s = make_scene(sat=20, ta=6)
        ts = flatten_tabular([s])
        assert ts.n_rows == 36
        assert ts.features.shape == (36, 14)

    def test_invalid_pixels_skipped(self):
        s = make_scene(sat=20, ta=6)
        mask = np.ones((6, 6), dtype=bool)
        mask[0, :3] = False
        s.ta.valid_mask = mask
        ts = flatten_tabular([s])
        assert ts.n_rows == 33

    def test_values_match_source(self):
        s = make_scene(sat=20, ta=6, seed=4)
        ts = flatten_tabular([s], scene_ids=["a"])
        i = 17
        p = int(ts.pixel_index[i])
        y, x = divmod(p, 6)
        assert ts.targets[i] == s.ta.values[y, x, 0]
        assert ts.features[i, 0] == s.lst.values[y, x, 0]

    def test_csv_round_trip(self, tmp_path):
        s = make_scene(sat=20, ta=6, seed=5)
        ts = flatten_tabular([s])
        tabular_to_csv(ts, tmp_path / "t.csv")
        rows = (tmp_path / "t.csv").read_text().strip().split("\n")
        assert len(rows) == 37
        header = rows[0].split(",")
        assert header[0] == "scene_id" and header[-1] == "ta"
        first = rows[1].split(",")
        assert float(first[-1]) == ts.targets[0]
