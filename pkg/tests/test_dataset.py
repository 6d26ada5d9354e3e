import json

import numpy as np
import pytest

from shapesem.dataset import (Dataset, RoiLayout, SyntheticConfig, TrialRecord,
                              average_test_trials, binarize_mask, load_dataset,
                              read_pgm, save_dataset, simulate, write_pgm)
from shapesem.errors import ConfigError, DataError, LayoutError


def tiny_layout(n_per_roi=4):
    spans = []
    pos = 0
    for name in ("V1", "V2", "V3", "LOC", "FFA", "PPA"):
        spans.append((name, (pos, pos + n_per_roi)))
        pos += n_per_roi
    return RoiLayout(tuple(spans))


def tiny_dataset():
    layout = tiny_layout()
    n = layout.total_voxels
    rng = np.random.default_rng(0)
    img = np.round(rng.random((16, 16)) * 255) / 255.0
    mask = (img > 0.5).astype(np.float32)
    records = [
        TrialRecord("train_0000", 0, "train", 0, rng.standard_normal(n)),
        TrialRecord("test_0000", 1, "test", 0, rng.standard_normal(n)),
    ]
    stimuli = {"train_0000": img.astype(np.float32),
               "test_0000": (1 - img).astype(np.float32)}
    masks = {"train_0000": mask, "test_0000": 1 - mask}
    return Dataset(layout, records, stimuli, masks, ["a", "b"])


class TestRoiLayout:
    def test_missing_roi_rejected(self):
        with pytest.raises(LayoutError):
            RoiLayout((("V1", (0, 4)), ("V2", (4, 8))))

    def test_gap_rejected(self):
        spans = [("V1", (0, 4)), ("V2", (5, 8)), ("V3", (8, 9)),
                 ("LOC", (9, 10)), ("FFA", (10, 11)), ("PPA", (11, 12))]
        with pytest.raises(LayoutError):
            RoiLayout(tuple(spans))

    def test_index_unions(self):
        layout = tiny_layout()
        assert layout.total_voxels == 24
        assert layout.indices("LVC").tolist() == list(range(12))
        assert layout.indices("HVC").tolist() == list(range(12, 24))
        assert layout.indices("VC").tolist() == list(range(24))
        with pytest.raises(LayoutError):
            layout.indices("V9")


class TestRoundTrip:
    def test_save_load_identity(self, tmp_path):
        ds = tiny_dataset()
        save_dataset(ds, tmp_path / "d")
        back = load_dataset(tmp_path / "d")
        assert back.layout == ds.layout
        assert back.category_names == ds.category_names
        assert len(back.records) == len(ds.records)
        for a, b in zip(ds.records, back.records):
            assert (a.stimulus_id, a.category_id, a.split, a.trial_index) == \
                (b.stimulus_id, b.category_id, b.split, b.trial_index)
            assert np.array_equal(np.asarray(a.voxels, dtype=np.float32), b.voxels)
        for sid in ds.stimuli:
            assert np.array_equal(ds.stimuli[sid], back.stimuli[sid])
            assert np.array_equal(ds.masks[sid], back.masks[sid])

    def test_unknown_roi_in_manifest(self, tmp_path):
        ds = tiny_dataset()
        save_dataset(ds, tmp_path / "d")
        mf = json.loads((tmp_path / "d" / "manifest.json").read_text())
        mf["rois"][0][0] = "V9"
        (tmp_path / "d" / "manifest.json").write_text(json.dumps(mf))
        with pytest.raises(LayoutError):
            load_dataset(tmp_path / "d")

    def test_duplicate_record_rejected(self):
        ds = tiny_dataset()
        with pytest.raises(DataError):
            Dataset(ds.layout, ds.records + [ds.records[0]], ds.stimuli,
                    ds.masks, ds.category_names)

    def test_voxel_length_mismatch_rejected(self):
        ds = tiny_dataset()
        bad = TrialRecord("train_0000", 0, "train", 1, np.zeros(5))
        with pytest.raises(DataError):
            Dataset(ds.layout, ds.records + [bad], ds.stimuli, ds.masks,
                    ds.category_names)

    def test_train_test_overlap_rejected(self):
        ds = tiny_dataset()
        bad = TrialRecord("train_0000", 0, "test", 3,
                          np.zeros(ds.layout.total_voxels))
        with pytest.raises(DataError):
            Dataset(ds.layout, ds.records + [bad], ds.stimuli, ds.masks,
                    ds.category_names)

    def test_full_scale_counts(self, tmp_path):
        # 1200 train / 50 test stimulus manifest loads with those counts
        layout = tiny_layout(1)
        n = layout.total_voxels
        records, stimuli, masks = [], {}, {}
        img = np.zeros((16, 16), dtype=np.float32)
        for i in range(1200):
            sid = "train_%04d" % i
            records.append(TrialRecord(sid, 0, "train", 0, np.zeros(n)))
            stimuli[sid] = img
            masks[sid] = img
        for i in range(50):
            sid = "test_%04d" % i
            records.append(TrialRecord(sid, 1, "test", 0, np.zeros(n)))
            stimuli[sid] = img
            masks[sid] = img
        ds = Dataset(layout, records, stimuli, masks, ["a", "b"])
        save_dataset(ds, tmp_path / "d")
        back = load_dataset(tmp_path / "d")
        assert len({r.stimulus_id for r in back.split_records("train")}) == 1200
        assert len({r.stimulus_id for r in back.split_records("test")}) == 50


class TestPgm:
    def test_roundtrip(self, tmp_path):
        img = np.linspace(0, 1, 64, dtype=np.float32).reshape(8, 8)
        img = np.round(img * 255) / 255
        write_pgm(tmp_path / "x.pgm", img)
        back = read_pgm(tmp_path / "x.pgm")
        assert np.allclose(back, img, atol=1e-7)
        assert (tmp_path / "x.pgm").read_bytes()[:2] == b"P5"


class TestAverageTestTrials:
    def test_single_trial_unchanged(self):
        ds = tiny_dataset()
        out = average_test_trials(ds)
        rec = out.split_records("test")[0]
        assert np.allclose(rec.voxels,
                           ds.split_records("test")[0].voxels, atol=1e-7)

    def test_opposite_trials_cancel(self):
        ds = tiny_dataset()
        v = ds.split_records("test")[0].voxels
        extra = TrialRecord("test_0000", 1, "test", 1, -v)
        ds2 = Dataset(ds.layout, ds.records + [extra], ds.stimuli, ds.masks,
                      ds.category_names)
        rec = average_test_trials(ds2).split_records("test")[0]
        assert np.max(np.abs(rec.voxels)) < 1e-6

    def test_24_trials_match_independent_mean(self):
        ds = tiny_dataset()
        rng = np.random.default_rng(5)
        n = ds.layout.total_voxels
        trials = [rng.standard_normal(n).astype(np.float32) for _ in range(24)]
        records = [r for r in ds.records if r.split == "train"]
        records += [TrialRecord("test_0000", 1, "test", t, v)
                    for t, v in enumerate(trials)]
        ds2 = Dataset(ds.layout, records, ds.stimuli, ds.masks, ds.category_names)
        avg = average_test_trials(ds2)
        test = avg.split_records("test")
        assert len(test) == 1
        # independent two-pass oracle
        expect = np.zeros(n, dtype=np.float64)
        for v in trials:
            expect += v
        expect /= 24
        assert np.max(np.abs(test[0].voxels - expect)) < 1e-6

    def test_idempotent(self):
        ds = tiny_dataset()
        once = average_test_trials(ds)
        twice = average_test_trials(once)
        for a, b in zip(once.records, twice.records):
            assert np.array_equal(a.voxels, b.voxels)


class TestBinarize:
    def test_idempotent_on_binary(self):
        img = (np.random.default_rng(0).random((16, 16)) > 0.5).astype(np.float32)
        assert np.array_equal(binarize_mask(img, 0.5), img)

    def test_step_threshold(self):
        img = np.full((8, 8), 0.2, dtype=np.float32)
        img[:, 4:] = 0.9
        mask = binarize_mask(img, 0.5)
        assert mask[:, :4].sum() == 0 and mask[:, 4:].min() == 1

    def test_otsu_matches_brute_force(self):
        rng = np.random.default_rng(1)
        img = np.where(rng.random((32, 32)) < 0.4, 0.1, 0.8).astype(np.float32)
        auto = binarize_mask(img, "auto")
        assert np.array_equal(auto, binarize_mask(img, 0.45))
        # brute force over all 256 bin-edge thresholds
        best_t, best_v = 0.0, -1.0
        flat = img.reshape(-1).astype(np.float64)
        for k in range(1, 256):
            t = k / 256
            lo, hi = flat[flat < t], flat[flat >= t]
            if lo.size == 0 or hi.size == 0:
                continue
            w0, w1 = lo.size / flat.size, hi.size / flat.size
            v = w0 * w1 * (lo.mean() - hi.mean()) ** 2
            if v > best_v:
                best_t, best_v = t, v
        mask_bf = (img >= best_t).astype(np.float32)
        assert np.array_equal(auto, mask_bf)

    def test_constant_image_warns_empty(self):
        img = np.full((8, 8), 0.3, dtype=np.float32)
        with pytest.warns(RuntimeWarning):
            mask = binarize_mask(img, "auto")
        assert mask.sum() == 0


class TestSimulator:
    def test_noiseless_lvc_is_linear_in_patches(self):
        cfg = SyntheticConfig(n_train=5, n_test=2, noise_sigma=0.0, seed=3)
        ds, truth = simulate(cfg)
        rec = ds.split_records("train")[0]
        p = truth.patch_grids[rec.stimulus_id].reshape(-1).astype(np.float64)
        expect = truth.lvc_maps["V1"].astype(np.float64) @ p
        idx = ds.layout.indices("V1")
        assert np.max(np.abs(rec.voxels[idx] - expect)) < 1e-5

    def test_same_seed_bitwise_identical(self):
        cfg = SyntheticConfig(n_train=6, n_test=3, seed=11)
        a, _ = simulate(cfg)
        b, _ = simulate(cfg)
        for ra, rb in zip(a.records, b.records):
            assert np.array_equal(ra.voxels, rb.voxels)
        for sid in a.stimuli:
            assert np.array_equal(a.stimuli[sid], b.stimuli[sid])

    def test_mask_foreground_fraction(self):
        cfg = SyntheticConfig(n_train=100, n_test=2, seed=7)
        ds, _ = simulate(cfg)
        for sid, mask in ds.masks.items():
            assert set(np.unique(mask)).issubset({0.0, 1.0})
            frac = mask.mean()
            assert 0.05 <= frac <= 0.6, (sid, frac)

    def test_too_many_categories_rejected(self):
        with pytest.raises(ConfigError):
            SyntheticConfig(categories=31)

    def test_noiseless_patch_features_exactly_decodable(self):
        from shapesem.linalg import ridge_solve

        cfg = SyntheticConfig(n_train=80, n_test=5, noise_sigma=0.0, seed=2)
        ds, truth = simulate(cfg)
        train = ds.split_records("train")
        idx = ds.layout.indices("LVC")
        x = np.stack([r.voxels[idx] for r in train]).astype(np.float64)
        p = np.stack([truth.patch_grids[r.stimulus_id].reshape(-1)
                      for r in train]).astype(np.float64)
        w = ridge_solve(x, p, 0.0)
        assert np.max(np.abs(x @ w - p)) < 1e-6
