#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fxemu/model.hpp"

namespace fxemu {

// On-disk formats are little-endian and documented field by field in
// docs/FORMAT.md. Version strings are compared exactly.
inline constexpr char kModelMagic[8] = {'F', 'X', 'E', 'M', 'D', 'L', '1', '\n'};
inline constexpr char kQuantMagic[8] = {'F', 'X', 'E', 'Q', 'N', 'T', '1', '\n'};
inline constexpr char kTensorMagic[8] = {'F', 'X', 'E', 'T', 'N', 'S', '1', '\n'};
inline constexpr const char* kModelVersion = "fxemu.model.v1";
inline constexpr const char* kQuantVersion = "fxemu.quant.v1";

/// FP32 model container (.fxm): JSON manifest + FP32 weight blob.
Model load_model(const std::string& path);
void save_model(const Model& m, const std::string& path);

/// Quantized model container (.fxq): the model file plus the per-tensor
/// QuantParams table (signed 16-bit wl/fl pairs) and int32 weight raws.
/// A loaded file runs without re-calibration.
QuantizedModel load_quantized(const std::string& path);
void export_quantized(const QuantizedModel& qm, const std::string& path);

/// Batch-of-tensors container (.fxt) for calibration and evaluation data.
std::vector<FTensor> load_tensors(const std::string& path);
void save_tensors(const std::vector<FTensor>& tensors, const std::string& path);

inline constexpr uint64_t kDefaultFixtureSeed = 20250809;

/// Deterministic, seeded fixture models:
///   tiny_cnn      - conv+BN+LeakyReLU, maxpool, conv+BN+HardSwish, GAP, linear
///   resnet_block  - conv+BN, ReLU, conv+BN, Add skip, ReLU
///   csp_concat_bn - two conv branches, channel Concat, BN, LeakyReLU
/// Throws ConfigError on an unknown name.
Model build_fixture(const std::string& name, uint64_t seed = kDefaultFixtureSeed);

std::vector<std::string> fixture_names();

/// Seeded uniform inputs in [lo, hi] matching the model's input shape.
std::vector<FTensor> make_inputs(const Model& m, int count, uint64_t seed, double lo, double hi);

} // namespace fxemu
