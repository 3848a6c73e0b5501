"""Smoke tests for the python bindings."""

import numpy as np
import pytest

import fxemu


def test_scalar_quantize_examples():
    assert fxemu.quantize_value(1.3, wl=8, fl=4) == 21
    assert fxemu.quantize_value(1000.0, wl=8, fl=4) == 127
    assert fxemu.quantize_value(0.078125, wl=8, fl=5) == 3
    assert fxemu.dequantize_value(21, wl=8, fl=4) == 1.3125
    assert fxemu.rescale_value(21, 8, 4, 8, 2) == 5


def test_array_round_trip():
    x = np.array([1.3, -0.4, 300.0], dtype=np.float32)
    raw = fxemu.quantize_array(x, wl=8, fl=4)
    assert raw.tolist() == [21, -6, 127]
    back = fxemu.dequantize_array(raw, wl=8, fl=4)
    assert back.dtype == np.float32
    assert back[0] == 1.3125


def test_fixture_pipeline_and_run():
    model = fxemu.build_fixture("tiny_cnn")
    assert model.input_shape == [1, 3, 8, 8]

    rng = np.random.default_rng(7)
    calib = [rng.uniform(-2, 2, size=model.input_shape).astype(np.float32) for _ in range(8)]
    qm = fxemu.quantize(model, calib, wl=12)

    x = calib[0]
    out, report = qm.run(x)
    assert report is None
    assert out.shape == (1, 10)

    ref = qm.run_fp32_reference(x)
    metrics = fxemu.compare(out, ref)
    assert metrics["mse"] < 1e-4
    assert metrics["argmax_agreement"] == 1.0


def test_overflow_detection_reports_and_mode_invariance():
    model = fxemu.build_fixture("resnet_block")
    rng = np.random.default_rng(11)
    calib = [rng.uniform(-2, 2, size=model.input_shape).astype(np.float32) for _ in range(8)]
    qm = fxemu.quantize(model, calib, wl=8, add_strategy="align-max")

    x = calib[0]
    plain, _ = qm.run(x)
    detected, report = qm.run(x, detect_overflow=True, guard_bits=0)
    assert np.array_equal(plain, detected)
    assert report is not None
    names = {row["node"] for row in report["nodes"]}
    assert {"conv1", "conv2"} <= names
    for row in report["nodes"]:
        assert row["overflow_count"] <= row["total_macs"]


def test_save_and_load(tmp_path):
    model = fxemu.build_fixture("csp_concat_bn")
    path = tmp_path / "csp.fxm"
    model.save(str(path))
    loaded = fxemu.load_model(str(path))
    assert loaded.input_shape == model.input_shape

    rng = np.random.default_rng(3)
    calib = [rng.uniform(-2, 2, size=model.input_shape).astype(np.float32) for _ in range(4)]
    qm = fxemu.quantize(loaded, calib, wl=10)
    qpath = tmp_path / "csp.fxq"
    qm.save(str(qpath))
    qloaded = fxemu.load_quantized(str(qpath))

    x = calib[0]
    a, _ = qm.run(x)
    b, _ = qloaded.run(x)
    assert np.array_equal(a, b)


def test_raw_outputs_are_integers():
    model = fxemu.build_fixture("tiny_cnn")
    rng = np.random.default_rng(5)
    calib = [rng.uniform(-2, 2, size=model.input_shape).astype(np.float32) for _ in range(4)]
    qm = fxemu.quantize(model, calib, wl=8)
    raw, params = qm.run_raw(calib[0])
    assert raw.dtype == np.int64
    assert params.wl == 8
    assert np.all(raw <= 2 ** (params.wl - 1) - 1)
    assert np.all(raw >= -(2 ** (params.wl - 1)))


def test_errors_surface_as_python_exceptions():
    with pytest.raises(ValueError):
        fxemu.build_fixture("not_a_fixture")
    with pytest.raises(RuntimeError):
        fxemu.quantize_value(float("nan"), wl=8, fl=4)
