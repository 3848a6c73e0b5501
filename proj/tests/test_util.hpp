#pragma once

// Test-side oracles, kept independent of the library kernels they check:
// exact dyadic-rational quantization, a brute-force overflow counter, and
// small random-data helpers.

#include <cstdint>
#include <random>
#include <vector>

#include "fxemu/fixedpoint.hpp"
#include "fxemu/tensor.hpp"

namespace oracle {

// Reference quantization of the dyadic rational x = num * 2^-m, evaluated
// in pure integer arithmetic (no floating point anywhere).
inline int64_t quantize_dyadic(int64_t num, int m, int wl, int fl) {
    const int shift = fl - m;
    __int128 rounded;
    if (shift >= 0) {
        rounded = static_cast<__int128>(num) << shift;
    } else {
        const __int128 d = static_cast<__int128>(1) << (-shift);
        __int128 q = static_cast<__int128>(num) / d;
        __int128 r = static_cast<__int128>(num) % d;
        if (r < 0) r = -r;
        if (2 * r >= d) q += num < 0 ? -1 : 1;
        rounded = q;
    }
    const __int128 lo = -(static_cast<__int128>(1) << (wl - 1));
    const __int128 hi = (static_cast<__int128>(1) << (wl - 1)) - 1;
    if (rounded <= lo) return static_cast<int64_t>(lo);
    if (rounded >= hi) return static_cast<int64_t>(hi);
    return static_cast<int64_t>(rounded);
}

struct DotOverflow {
    int64_t result = 0; // exact accumulated sum (bias + products)
    uint64_t overflow_count = 0;
    uint64_t max_abs = 0;
};

// Re-walks one dot product the way the hardware would: bias first, then
// k ascending; an excursion is |acc| >= 2^(acc_bits-1).
inline DotOverflow dot_overflow(const std::vector<int64_t>& w, const std::vector<int64_t>& x,
                                int64_t bias, int acc_bits) {
    DotOverflow out;
    __int128 acc = bias;
    const __int128 limit = static_cast<__int128>(1) << (acc_bits - 1);
    for (size_t i = 0; i < w.size(); ++i) {
        acc += static_cast<__int128>(w[i]) * static_cast<__int128>(x[i]);
        __int128 mag = acc < 0 ? -acc : acc;
        if (mag >= limit) ++out.overflow_count;
        if (static_cast<uint64_t>(mag) > out.max_abs) out.max_abs = static_cast<uint64_t>(mag);
    }
    out.result = static_cast<int64_t>(acc);
    return out;
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
    return lo + (double(rng() >> 11) * 0x1.0p-53) * (hi - lo);
}

inline fxemu::FTensor random_ftensor(std::mt19937_64& rng, std::vector<int64_t> shape, double lo,
                                     double hi) {
    fxemu::FTensor t = fxemu::FTensor::zeros(std::move(shape));
    for (float& v : t.data) v = static_cast<float>(uniform(rng, lo, hi));
    return t;
}

inline fxemu::QTensor random_qtensor(std::mt19937_64& rng, std::vector<int64_t> shape,
                                     fxemu::QuantParams p) {
    fxemu::QTensor t = fxemu::QTensor::zeros(std::move(shape), p);
    const uint64_t span = static_cast<uint64_t>(p.hi() - p.lo() + 1);
    for (int64_t& v : t.raw) v = p.lo() + static_cast<int64_t>(rng() % span);
    return t;
}

} // namespace oracle
