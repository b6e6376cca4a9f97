import numpy as np
import pytest

from heatdiff.errors import ConfigError, RejectionError
from heatdiff.synthscene import (
    CLASS_NAMES,
    DEFAULT_LAW,
    apply_cloud_mask,
    apply_scanline_mask,
    class_map,
    corpus_meta,
    gen_corpus,
    gen_scene,
)

SEEDS = range(100)


@pytest.fixture(scope="module")
def scenes100():
    return [gen_scene(seed, 80, corpus_meta(seed, 100, 1)) for seed in SEEDS]


class TestGenScene:
    def test_deterministic(self):
        meta = corpus_meta(3, 10, 5)
        a = gen_scene(9, 80, meta)
        b = gen_scene(9, 80, meta)
        for name in ("ta", "lst", "ndvi", "ndbi", "ndwi", "rgb"):
            assert np.array_equal(getattr(a, name).values, getattr(b, name).values), name

    def test_shapes_follow_ratio(self):
        s = gen_scene(1, 160, corpus_meta(0, 10, 1))
        assert s.rgb.values.shape == (160, 160, 3)
        assert s.ta.values.shape == (48, 48, 1)
        assert s.ta.gsd == pytest.approx(s.rgb.gsd * 160 / 48)

    def test_incompatible_size_rejected(self):
        with pytest.raises(ConfigError):
            gen_scene(1, 77, corpus_meta(0, 10, 1))

    def test_ta_narrower_than_lst(self, scenes100):
        for s in scenes100:
            assert s.ta.values.std() < s.lst.values.std()

    def test_water_cooler_than_built(self, scenes100):
        diffs = []
        for seed, s in zip(SEEDS, scenes100):
            # nearest-projection of the satellite-grid classes onto the lst grid
            lst = s.lst.values[:, :, 0]
            idx = np.linspace(0, 79, 24).astype(int)
            cm_ta = class_map(seed, 80)[np.ix_(idx, idx)]
            water = lst[cm_ta == 0]
            built = lst[cm_ta == 3]
            if len(water) and len(built):
                diffs.append(water.mean() - built.mean())
        assert len(diffs) > 50
        assert np.mean(diffs) < 0
        assert np.mean([d < 0 for d in diffs]) > 0.95

    def test_ta_lst_correlated(self, scenes100):
        rs = [
            np.corrcoef(s.ta.values.ravel(), s.lst.values.ravel())[0, 1] for s in scenes100
        ]
        assert np.mean(rs) > 0.5
        assert np.mean([r > 0.5 for r in rs]) > 0.9

    def test_indices_antisymmetry_inherited(self, scenes100):
        s = scenes100[0]
        assert np.array_equal(s.ndwi.values, -s.ndbi.values)

    def test_class_fractions(self):
        cm = class_map(4, 160)
        fracs = [(cm == i).mean() for i in range(4)]
        assert fracs[0] == pytest.approx(0.15, abs=0.02)
        assert fracs[1] == pytest.approx(0.35, abs=0.02)


class TestCloudMask:
    def test_zero_cover_unchanged(self):
        s = gen_scene(2, 80, corpus_meta(0, 10, 2))
        out = apply_cloud_mask(s, 7, 0.0)
        assert out is s

    def test_cover_fraction_within_tolerance(self):
        s = gen_scene(2, 160, corpus_meta(0, 10, 2))
        out = apply_cloud_mask(s, 7, 0.2)
        invalid = 1.0 - out.rgb.valid_mask.mean()
        assert 0.18 <= invalid <= 0.22
        assert out.meta.cloud_cover == pytest.approx(invalid, abs=1e-6)

    def test_over_policy_rejected(self):
        s = gen_scene(2, 80, corpus_meta(0, 10, 2))
        with pytest.raises(RejectionError):
            apply_cloud_mask(s, 7, 0.5)

    def test_blobs_are_contiguous(self):
        s = gen_scene(3, 160, corpus_meta(0, 10, 3))
        out = apply_cloud_mask(s, 9, 0.15)
        cloud = ~out.rgb.valid_mask
        # every cloud pixel should touch another cloud pixel (no salt noise)
        ys, xs = np.where(cloud)
        padded = np.pad(cloud, 1)
        neighbors = (
            padded[ys, xs + 1]
            | padded[ys + 2, xs + 1]
            | padded[ys + 1, xs]
            | padded[ys + 1, xs + 2]
        )
        assert neighbors.all()

    def test_ta_untouched(self):
        s = gen_scene(2, 80, corpus_meta(0, 10, 2))
        out = apply_cloud_mask(s, 7, 0.15)
        assert out.ta.valid_mask is None


class TestScanlineMask:
    def test_deterministic(self):
        s = gen_scene(5, 160, corpus_meta(0, 10, 5))
        a = apply_scanline_mask(s, 11)
        b = apply_scanline_mask(s, 11)
        assert np.array_equal(a.rgb.valid_mask, b.rgb.valid_mask)

    def test_stripe_count(self):
        s = gen_scene(5, 160, corpus_meta(0, 10, 5))
        out = apply_scanline_mask(s, 11)
        invalid = ~out.rgb.valid_mask
        # count distinct diagonal stripes via transitions along the top row/left column border
        border = np.concatenate([invalid[0, :], invalid[1:, -1]])
        transitions = np.diff(border.astype(int))
        assert (transitions == 1).sum() >= 3

    def test_ta_mask_unchanged(self):
        s = gen_scene(5, 160, corpus_meta(0, 10, 5))
        out = apply_scanline_mask(s, 11)
        assert out.ta.valid_mask is None
        assert out.lst.valid_mask is not None


class TestCorpus:
    def test_year_split_ratio(self):
        scenes = gen_corpus(16, 1, sat_size=40)
        years = [s.meta.year for s in scenes]
        assert sum(y <= 2015 for y in years) == 12
        assert sum(y >= 2016 for y in years) == 4

    def test_deterministic(self):
        a = gen_corpus(3, 2, sat_size=40)
        b = gen_corpus(3, 2, sat_size=40)
        for x, y in zip(a, b):
            assert np.array_equal(x.ta.values, y.ta.values)
            assert x.meta == y.meta
