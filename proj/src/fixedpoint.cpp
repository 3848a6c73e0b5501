#include "fxemu/fixedpoint.hpp"

#include <cmath>
#include <string>

namespace fxemu {

QuantParams QuantParams::checked(int wl, int fl) {
    if (wl < 2 || wl > 63)
        throw DomainError("QuantParams: wl must be in [2, 63], got " + std::to_string(wl));
    if (fl < -32767 || fl > 32767)
        throw DomainError("QuantParams: fl out of signed 16-bit range: " + std::to_string(fl));
    return QuantParams{wl, fl};
}

int64_t clamp_int(int64_t x, int64_t lo, int64_t hi) {
    if (lo > hi)
        throw DomainError("clamp: lo > hi (" + std::to_string(lo) + " > " + std::to_string(hi) + ")");
    if (x <= lo) return lo;
    if (x >= hi) return hi;
    return x;
}

wide_t shift_round_half_away(wide_t v, int shift) {
    if (shift < 0) throw DomainError("shift_round_half_away: negative shift");
    if (shift == 0) return v;
    const wide_t d = wide_t(1) << shift;
    wide_t q = v / d;
    wide_t r = v % d; // truncating division: r has the sign of v
    if (r < 0) r = -r;
    if (2 * r >= d) q += (v < 0) ? -1 : 1;
    return q;
}

int64_t quantize_raw(double x, QuantParams p) {
    if (!std::isfinite(x))
        throw DomainError("quantize: non-finite input");
    const double scaled = std::ldexp(x, p.fl); // exact: power-of-two scale
    if (!std::isfinite(scaled))
        return x > 0 ? p.hi() : p.lo(); // 2^fl overflowed FP64; far past the clamp
    const double rounded = std::round(scaled); // half away from zero
    const double bound = std::ldexp(1.0, p.wl - 1); // 2^(wl-1), exact
    if (rounded >= bound) return p.hi();
    if (rounded <= -bound) return p.lo();
    return static_cast<int64_t>(rounded);
}

FixedScalar quantize(double x, QuantParams p) {
    return FixedScalar{quantize_raw(x, p), p};
}

double dequantize(int64_t raw, QuantParams p) noexcept {
    return std::ldexp(static_cast<double>(raw), -p.fl);
}

double dequantize(const FixedScalar& s) noexcept {
    return dequantize(s.raw, s.params);
}

int64_t rescale_wide(wide_t raw, int from_fl, QuantParams to) {
    wide_t v;
    if (to.fl <= from_fl) {
        v = shift_round_half_away(raw, from_fl - to.fl);
    } else {
        const int up = to.fl - from_fl;
        if (up >= 126) {
            // Shift would leave 128 bits; the true value saturates unless zero.
            if (raw == 0) return 0;
            return raw > 0 ? to.hi() : to.lo();
        }
        // 128-bit headroom: |raw| <= 2^62 here in practice, and a shift that
        // would overflow can only produce a clamped result anyway.
        const wide_t limit = (wide_t(1) << 126) >> up;
        if (raw > limit) return to.hi();
        if (raw < -limit) return to.lo();
        v = raw << up;
    }
    const wide_t lo = to.lo(), hi = to.hi();
    if (v <= lo) return to.lo();
    if (v >= hi) return to.hi();
    return static_cast<int64_t>(v);
}

FixedScalar rescale(const FixedScalar& s, QuantParams to) {
    return FixedScalar{rescale_wide(s.raw, s.params.fl, to), to};
}

const char* to_string(ErrorCategory cat) {
    switch (cat) {
        case ErrorCategory::Config: return "config";
        case ErrorCategory::Pipeline: return "pipeline";
        case ErrorCategory::Contract: return "contract";
        case ErrorCategory::Graph: return "graph";
        case ErrorCategory::Shape: return "shape";
        case ErrorCategory::Domain: return "domain";
        case ErrorCategory::Manifest: return "manifest";
        case ErrorCategory::Version: return "version";
        case ErrorCategory::Blob: return "blob";
        case ErrorCategory::Validation: return "validation";
    }
    return "unknown";
}

} // namespace fxemu
