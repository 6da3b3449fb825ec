"""Int8 quantization scheme, quantized inference and the model container."""
import struct

import numpy as np
import pytest

from core.errors import FormatError, InputError, StateError
from services.layers import Conv2D, Dense, TRAIN, _im2col
from services.model_zoo import backward, build_cnn, build_transformer, forward
from services.quantizer import (
    QuantizedModel, QuantizedTensor, dequantize_model, load_model, model_from_bytes,
    model_to_bytes, predict, quantize_model, quantize_tensor, quantized_forward, save_model,
    size_report,
)
from services.tensor_core import Rng, int8_matmul


def test_quantize_tensor_examples():
    qt = quantize_tensor(np.array([0.5, -1.0], np.float32))
    assert qt.scale == pytest.approx(1 / 127)
    np.testing.assert_array_equal(qt.values, [64, -127])
    np.testing.assert_allclose(qt.dequantize(), [0.50394, -1.0], atol=1e-5)

    zeros = quantize_tensor(np.zeros((2, 3), np.float32))
    assert zeros.scale == 1.0 and not zeros.values.any()

    with pytest.raises(InputError):
        quantize_tensor(np.array([1.0, np.inf]))


def test_round_trip_error_within_half_scale(np_rng):
    for shape in [(7,), (3, 5), (3, 2, 4, 6)]:
        w = (np_rng.standard_normal(shape) * np_rng.uniform(0.01, 3)).astype(np.float32)
        qt = quantize_tensor(w)
        assert qt.values.dtype == np.int8
        assert qt.values.min() >= -127 and qt.values.max() <= 127
        err = np.abs(w.astype(np.float64) - qt.values.astype(np.float64) * qt.scale)
        assert err.max() <= qt.scale / 2 * (1 + 1e-6)


def test_quantize_model_tensor_split():
    cnn = quantize_model(build_cnn(28))
    assert len(cnn.kernels()) == 7 and len(cnn.float_tensors()) == 7
    tr = quantize_model(build_transformer(28))
    assert len(tr.kernels()) == 9
    assert sum(k.endswith(("gamma", "beta")) for k in tr.float_tensors()) == 4
    assert list(tr.tensors) == list(build_transformer(28).named_parameters())


def test_requantizing_dequantized_model_is_a_fixed_point():
    q1 = quantize_model(build_cnn(5, seed=2))
    q2 = quantize_model(dequantize_model(q1))
    for name, qt in q1.kernels().items():
        np.testing.assert_array_equal(q2.kernels()[name].values, qt.values)


def test_exactly_representable_dense_layer_is_lossless(np_rng):
    # power-of-two scales keep both weights and activations exact in float32
    w_codes = np_rng.integers(-127, 128, size=(6, 4))
    w_codes[0, 0] = 127
    scale = 2.0 ** -7
    layer = Dense("d", 6, 4)
    layer.params.tensors["kernel"] = (w_codes * scale).astype(np.float32)
    x_codes = np_rng.integers(-127, 128, size=(3, 6))
    x_codes[0, 0] = 127
    x = (x_codes * 2.0 ** -7).astype(np.float32)
    reference = layer.forward(x)
    qt = quantize_tensor(layer.params["kernel"])
    np.testing.assert_array_equal(qt.values, w_codes)
    layer.quantized["kernel"] = (qt.values.astype(np.float32), qt.scale)
    np.testing.assert_allclose(layer.forward(x), reference, atol=1e-5)


def test_quantized_conv_matches_per_window_reference(np_rng):
    layer = Conv2D("c", (3, 2), 3, 4)
    layer.params.tensors["kernel"] = np_rng.standard_normal((3, 2, 3, 4)).astype(np.float32)
    layer.params.tensors["bias"] = np_rng.standard_normal(4).astype(np.float32)
    qt = quantize_tensor(layer.params["kernel"])
    codes = qt.values.reshape(-1, 4).astype(np.float32)
    layer.quantized["kernel"] = (codes, qt.scale)
    x = np_rng.standard_normal((2, 8, 2, 3)).astype(np.float32)

    cols, _ = _im2col(x, 3, 2)
    expected = np.maximum(int8_matmul(cols, codes, qt.scale) + layer.params["bias"], 0).reshape(2, 8, 2, 4)
    np.testing.assert_array_equal(layer.forward(x), expected)


@pytest.mark.parametrize("builder", [build_cnn, build_transformer])
def test_quantized_outputs_are_distributions(builder):
    qmodel = quantize_model(builder(6, seed=1))
    x = np.random.default_rng(4).standard_normal((3, 256, 2, 1)).astype(np.float32)
    probs = quantized_forward(qmodel, x)
    assert probs.shape == (3, 6)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-5)
    np.testing.assert_array_equal(predict(qmodel, x), probs)


def test_quantized_graph_cannot_be_trained():
    qmodel = quantize_model(build_cnn(3, seed=1))
    forward(qmodel.graph, np.zeros((1, 256, 2, 1), np.float32), TRAIN, Rng(0))
    with pytest.raises(StateError):
        backward(qmodel.graph, [0])


@pytest.mark.parametrize("builder", [build_cnn, build_transformer])
def test_container_round_trip_is_byte_exact(tmp_path, builder):
    model = builder(28, seed=3)
    qmodel = quantize_model(model)
    x = np.random.default_rng(8).standard_normal((2, 256, 2, 1)).astype(np.float32)
    for original, name in [(model, "float.rffm"), (qmodel, "int8.rffm")]:
        path = save_model(original, str(tmp_path / name))
        loaded = load_model(path)
        assert type(loaded) is type(original)
        assert model_to_bytes(loaded) == model_to_bytes(original)
        np.testing.assert_array_equal(predict(loaded, x), predict(original, x))


def test_file_sizes(tmp_path):
    cnn = build_cnn(28)
    float_path = save_model(cnn, str(tmp_path / "cnn.rffm"))
    quant_path = save_model(quantize_model(cnn), str(tmp_path / "cnn_q.rffm"))
    report = size_report(float_path, quant_path)
    assert report["float_kb"] * 1024 >= 4 * 116_808
    assert report["float_kb"] < 480
    assert 462.02 * 0.9 <= report["float_kb"] <= 462.02 * 1.1
    assert report["quantized_kb"] <= 130
    assert report["ratio"] <= 0.45

    tr = build_transformer(28)
    tf_path = save_model(tr, str(tmp_path / "tr.rffm"))
    tq_path = save_model(quantize_model(tr), str(tmp_path / "tr_q.rffm"))
    tr_report = size_report(tf_path, tq_path)
    assert 210.2 * 0.85 <= tr_report["float_kb"] <= 210.2 * 1.15
    assert tr_report["quantized_kb"] <= 80
    assert tr_report["ratio"] <= 0.45


def test_bad_magic_and_version():
    blob = model_to_bytes(build_cnn(4))
    with pytest.raises(FormatError):
        model_from_bytes(b"NOPE" + blob[4:])
    bad_version = blob[:4] + struct.pack("<H", 2) + blob[6:]
    with pytest.raises(FormatError):
        model_from_bytes(bad_version)


def test_shape_disagreement_names_the_tensor():
    blob = bytearray(model_to_bytes(build_cnn(4)))
    # first tensor: conv1/kernel with dims (3, 2, 1, 8); make the last dim 9
    name_len = blob[11]
    dims_at = 11 + 1 + name_len + 2
    blob[dims_at + 12:dims_at + 16] = struct.pack("<I", 9)
    with pytest.raises(FormatError) as err:
        model_from_bytes(bytes(blob))
    assert err.value.tensor == "conv1/kernel"
    assert "conv1/kernel" in str(err.value)


def test_truncated_model_file():
    blob = model_to_bytes(quantize_model(build_cnn(4)))
    with pytest.raises(FormatError):
        model_from_bytes(blob[:-3])
    with pytest.raises(FormatError):
        model_from_bytes(blob + b"\x00")


def test_quantized_tensor_dequantize_shape():
    qt = QuantizedTensor(np.array([1, -2, 3, 4], np.int8), 0.5, (2, 2))
    np.testing.assert_array_equal(qt.dequantize(), [[0.5, -1.0], [1.5, 2.0]])
    assert isinstance(quantize_model(build_cnn(3)), QuantizedModel)


def test_int8_code_minus_128_is_rejected():
    blob = bytearray(model_to_bytes(quantize_model(build_cnn(4))))
    # conv1/kernel: name, dtype + rank, four u32 dims, f32 scale, then codes
    codes_at = 11 + 1 + blob[11] + 2 + 16 + 4
    blob[codes_at] = 0x80
    with pytest.raises(FormatError) as err:
        model_from_bytes(bytes(blob))
    assert err.value.tensor == "conv1/kernel"
