"""Bit-exact fixed-point quantization emulator for divider-free integer inference."""

from fxemu._core import (
    Model,
    QuantizedModel,
    QuantParams,
    build_fixture,
    compare,
    dequantize_array,
    dequantize_value,
    fixture_names,
    load_model,
    load_quantized,
    quantize,
    quantize_array,
    quantize_value,
    rescale_value,
)

__all__ = [
    "Model",
    "QuantizedModel",
    "QuantParams",
    "build_fixture",
    "compare",
    "dequantize_array",
    "dequantize_value",
    "fixture_names",
    "load_model",
    "load_quantized",
    "quantize",
    "quantize_array",
    "quantize_value",
    "rescale_value",
]
