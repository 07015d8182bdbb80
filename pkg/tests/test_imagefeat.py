"""Feature store format, synthesis determinism, and projection tests."""

import numpy as np
import pytest

from mmdialog.autograd import Tensor, matmul
from mmdialog.imagefeat import (FEATURE_DIM, FeatureFormatError,
                                FeatureNotFound, FeatureStore, ImageFeatures,
                                KIND_ROWS, project, synth_features,
                                write_store)


class TestSynth:
    def test_deterministic(self):
        a = synth_features("img1", "global", seed=3)
        b = synth_features("img1", "global", seed=3)
        assert np.array_equal(a.matrix, b.matrix)

    def test_different_ids_differ(self):
        a = synth_features("img1", "global", seed=0)
        b = synth_features("img2", "global", seed=0)
        frac_diff = np.mean(a.matrix != b.matrix)
        assert frac_diff >= 0.99

    def test_region_shape(self):
        f = synth_features("x", "region", seed=0)
        assert f.matrix.shape == (100, FEATURE_DIM)

    @pytest.mark.parametrize("kind,rows", list(KIND_ROWS.items()))
    def test_rows_by_kind(self, kind, rows):
        assert synth_features("y", kind).matrix.shape == (rows, FEATURE_DIM)


class TestStore:
    def _feats(self, n, kind="global", seed=0):
        return [synth_features(f"img{i}", kind, seed) for i in range(n)]

    def test_write_read_roundtrip(self, tmp_path):
        path = tmp_path / "f.bin"
        feats = self._feats(3)
        write_store(path, feats, "global")
        store = FeatureStore(path)
        for f in feats:
            loaded = store.load(f.image_id)
            assert np.array_equal(loaded.matrix, f.matrix)
            assert loaded.kind == "global"

    def test_unknown_id(self, tmp_path):
        path = tmp_path / "f.bin"
        write_store(path, self._feats(2), "global")
        store = FeatureStore(path)
        with pytest.raises(FeatureNotFound):
            store.load("missing")

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
        with pytest.raises(FeatureFormatError):
            FeatureStore(path)

    def test_truncated_file_names_offset(self, tmp_path):
        path = tmp_path / "f.bin"
        write_store(path, self._feats(2), "global")
        data = path.read_bytes()
        path.write_bytes(data[:len(data) // 2])
        (tmp_path / "f.bin.idx").unlink()   # force index rebuild
        with pytest.raises(FeatureFormatError, match="offset"):
            FeatureStore(path)

    def test_index_rebuilt_when_missing(self, tmp_path):
        path = tmp_path / "f.bin"
        feats = self._feats(4)
        write_store(path, feats, "global")
        (tmp_path / "f.bin.idx").unlink()
        store = FeatureStore(path)
        assert store.ids() == sorted(f.image_id for f in feats)
        assert np.array_equal(store.load("img2").matrix, feats[2].matrix)


class TestProject:
    def test_zero_weights_zero_block(self):
        f = synth_features("z", "global")
        out = project(f, Tensor(np.zeros((FEATURE_DIM, 8))),
                      Tensor(np.zeros(8)))
        assert out.shape == (1, 8)
        assert np.all(out.data == 0)

    def test_global_block_shape(self):
        f = synth_features("z", "spatial")
        W = Tensor(np.random.default_rng(0).normal(
            size=(FEATURE_DIM, 16)).astype(np.float32) * 0.01)
        out = project(f, W, Tensor(np.zeros(16, dtype=np.float32)))
        assert out.shape == (49, 16)

    def test_frozen_feature_contract(self):
        f = synth_features("z", "global")
        before = f.matrix.copy()
        W = Tensor(np.random.default_rng(1).normal(
            size=(FEATURE_DIM, 4)).astype(np.float64) * 0.01,
            requires_grad=True)
        b = Tensor(np.zeros(4), requires_grad=True)
        out = project(f, W, b)
        out.sum().backward()
        assert W.grad is not None and b.grad is not None
        assert np.array_equal(f.matrix, before)

    def test_dim_mismatch(self):
        f = synth_features("z", "global")
        with pytest.raises(FeatureFormatError):
            project(f, Tensor(np.zeros((100, 8))), Tensor(np.zeros(8)))
