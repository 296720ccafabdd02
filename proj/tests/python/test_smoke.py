# SPDX-License-Identifier: Apache-2.0
import math

import numpy as np
import pytest

import hardcore

TINY = ["model.topology=4-1/k3/d2/m3/p2-1", "train.epochs=10"]


def test_parameter_count():
    assert hardcore.parameter_count() == 1755
    assert hardcore.parameter_count("12-1/k9/d4/m11/p8-1") == 911
    assert hardcore.DEFAULT_TOPOLOGY == "12-8-1/k9/d4/m11/p8-1"


def test_shoelace_polygon():
    t = 2 * np.pi * np.arange(1024) / 1024
    area, p = hardcore.shoelace_power(np.sin(t), np.cos(t), 2.0)
    assert abs(area - 512 * math.sin(2 * math.pi / 1024)) < 1e-9
    assert p == pytest.approx(2 * area)


def test_classify():
    t = 2 * np.pi * np.arange(1024) / 1024
    assert hardcore.classify_waveform(0.1 * np.sin(t)) == "sine"


def test_synthetic_io_roundtrip(tmp_path):
    ds = hardcore.synthetic_dataset(records=5, seed=3, material_id="mat")
    assert len(ds) == 5
    ds.save(tmp_path / "mat")
    back = hardcore.load_material(tmp_path / "mat")
    assert back.material_id == "mat"
    assert np.array_equal(back[2].b, ds[2].b)
    with pytest.raises(hardcore.DataError):
        hardcore.load_material(tmp_path / "missing")


def test_record_validation():
    with pytest.raises(ValueError):
        hardcore.Record(np.zeros(10), 1e5, 25.0)


def test_model_predict_shapes_and_zero_mean():
    ds = hardcore.synthetic_dataset(records=3, seed=1)
    model = hardcore.Model(ds, seed=2)
    assert model.parameter_count == 1755
    p_hat, h_hat = model.predict(ds)
    assert p_hat.shape == (3,)
    assert h_hat.shape == (3, 1024)


def test_train_save_load_predict(tmp_path):
    ds = hardcore.synthetic_dataset(records=6, seed=4, material_id="toy")
    out = hardcore.train(ds, overrides=TINY)
    assert len(out["log"]) == 10
    model = out["model"]
    path = tmp_path / "toy.hardcore.json"
    model.save(path)
    loaded = hardcore.load_model(path)
    p_hat, _ = loaded.predict(ds)
    assert np.array_equal(p_hat, out["training_p_hat"])
    with pytest.raises(ValueError):
        hardcore.train(ds, overrides=["train.nope=1"])


def test_divergence_raises():
    ds = hardcore.synthetic_dataset(records=4, seed=4)
    with pytest.raises(hardcore.NumericError):
        hardcore.train(ds, overrides=TINY + ["train.learning_rate=1e300", "train.epochs=20"])


def test_cross_validate_and_metrics():
    ds = hardcore.synthetic_dataset(records=8, seed=5)
    cv = hardcore.cross_validate(ds, seeds=[0, 1], overrides=TINY + ["train.k_folds=2"], workers=1)
    assert len(cv["runs"]) == 4
    assert cv["best_seed"] in (0, 1)
    stats = hardcore.relative_error_stats([1.1, 2.0], [1.0, 2.0])
    assert stats["avg_rel_err"] == pytest.approx(0.05)
    assert hardcore.pareto_frontier([(10, 0.5), (20, 0.4), (30, 0.45)]) == [0, 1]


def test_area_error_stats_recovers_factor():
    ds = hardcore.synthetic_dataset(records=200, factor_amplitude=0.0)
    stats = hardcore.area_error_stats(ds)
    assert abs(stats["min"]) < 1e-12 and abs(stats["max"]) < 1e-12
