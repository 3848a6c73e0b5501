#include "fxemu/model.hpp"

namespace fxemu {

const FTensor& Model::weight(const std::string& name) const {
    auto it = weights.find(name);
    if (it == weights.end()) throw ContractError("missing weight tensor '" + name + "'");
    return it->second;
}

const QTensor& QuantizedModel::qweight(const std::string& name) const {
    auto it = qweights.find(name);
    if (it == qweights.end()) throw ContractError("missing quantized weight '" + name + "'");
    return it->second;
}

void WlConfig::check() const {
    auto in_range = [](int wl) { return wl >= 2 && wl <= 63; };
    if (!in_range(wl_weight))
        throw ConfigError("weight WL out of [2, 63]: " + std::to_string(wl_weight));
    if (!in_range(wl_activation))
        throw ConfigError("activation WL out of [2, 63]: " + std::to_string(wl_activation));
    if (wl_bias != 0 && !in_range(wl_bias))
        throw ConfigError("bias WL out of [2, 63]: " + std::to_string(wl_bias));
    if (fl_internal_offset < 0 || fl_internal_offset > 32)
        throw ConfigError("activation-internal FL offset out of [0, 32]: " +
                          std::to_string(fl_internal_offset));
}

} // namespace fxemu
