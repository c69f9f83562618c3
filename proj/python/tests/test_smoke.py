import json

import numpy as np
import pytest

import densemp


def test_default_config_round_trip():
    cfg = densemp.default_config()
    assert densemp.normalize_config(cfg) == cfg
    assert len(densemp.config_fingerprint(cfg)) == 16


def test_unknown_key_raises_config_error():
    with pytest.raises(densemp.ConfigError):
        densemp.normalize_config({"no_such_key": 1})


def test_felzenszwalb_splits_two_halves():
    img = np.full((10, 10), 0.2)
    img[:, 5:] = 0.7
    labels = densemp.felzenszwalb(img, k_scale=0.01, sigma=0.0, min_size=1)
    assert labels.shape == (10, 10)
    assert (labels[:, :5] == 0).all() and (labels[:, 5:] == 1).all()


def test_dice():
    a = np.zeros((4, 4), dtype=np.uint8)
    a[:2] = 1
    assert densemp.dice(a, a) == 1.0
    assert densemp.dice(a, 1 - a) == 0.0


def test_synthetic_slice_is_deterministic():
    img1, lab1 = densemp.synthesize_slice(3, 1, 4)
    img2, lab2 = densemp.synthesize_slice(3, 1, 4)
    assert img1.shape == (32, 32)
    assert np.array_equal(img1, img2) and np.array_equal(lab1, lab2)
    assert 0.0 <= img1.min() and img1.max() <= 1.0
    assert set(np.unique(lab1)) <= {0, 1, 2, 3, 4}


def test_encoder_shapes_and_checkpoint(tmp_path):
    enc = densemp.make_encoder(seed=1)
    img, _ = densemp.synthesize_slice(0, 0, 0)
    feats = enc.encode(img)
    assert feats.shape == (32, 16, 16)
    keys = enc.dense_keys(img)
    assert keys.shape == (16, 16)
    assert np.allclose(np.linalg.norm(keys, axis=0), 1.0, atol=1e-6)
    assert enc.heatmap(img).shape == (32, 32)
    path = tmp_path / "enc.ckpt"
    enc.save(path)
    loaded = densemp.Encoder.load(path)
    assert np.allclose(loaded.encode(img), feats, atol=1e-5)
    with pytest.raises(densemp.ArgumentError):
        enc.encode(np.zeros((16, 16)))


def test_run_all_tiny(tmp_path):
    manifest = densemp.generate_synthetic(tmp_path / "data", n_patients=4, slices_per_patient=4, n_folds=2, seed=1)
    cfg = {
        "data": {"manifest": str(manifest), "n_folds": 2, "folds": [0]},
        "stage1": {"iterations": 2},
        "stage2": {"iterations": 2},
        "finetune": {"iterations": 2},
    }
    report = densemp.run_all(cfg, tmp_path / "out")
    assert report["config_fingerprint"] == densemp.config_fingerprint(densemp.normalize_config(cfg))
    assert 0.0 <= report["overall_mean"] <= 1.0
    assert json.loads((tmp_path / "out" / "eval_report.json").read_text()) == report
