#pragma once

#include <cstdint>

#include "fxemu/errors.hpp"

namespace fxemu {

// Accumulators and shift intermediates use 128-bit integers so that every
// partial sum is exact for word lengths up to the 63-bit cap.
using wide_t = __int128;
using uwide_t = unsigned __int128;

/// Fixed-point format of one tensor: WL total bits (including sign),
/// FL fractional bits. The represented value is raw * 2^-fl.
/// FL may be negative or exceed WL; it is a pure scaling exponent.
struct QuantParams {
    int wl = 8;
    int fl = 0;

    bool operator==(const QuantParams&) const = default;

    /// Smallest representable raw value, -2^(wl-1).
    int64_t lo() const noexcept { return -(int64_t(1) << (wl - 1)); }
    /// Largest representable raw value, 2^(wl-1) - 1.
    int64_t hi() const noexcept { return (int64_t(1) << (wl - 1)) - 1; }

    /// Throws DomainError unless 2 <= wl <= 63 and |fl| <= 32767
    /// (the serialized encoding stores fl as a signed 16-bit value).
    static QuantParams checked(int wl, int fl);
};

struct FixedScalar {
    int64_t raw = 0;
    QuantParams params;

    bool operator==(const FixedScalar&) const = default;
};

/// Saturating clamp. Throws DomainError if lo > hi.
int64_t clamp_int(int64_t x, int64_t lo, int64_t hi);

/// round-half-away-from-zero of v / 2^shift, exact in 128-bit arithmetic.
/// shift must be >= 0.
wide_t shift_round_half_away(wide_t v, int shift);

/// Quantize a finite real to fixed point:
/// clamp(round_half_away_from_zero(x * 2^fl), -2^(wl-1), 2^(wl-1)-1).
/// The scaling multiply is exact (power of two in FP64), so the rounding
/// is applied to the true product. Throws DomainError on non-finite x.
FixedScalar quantize(double x, QuantParams p);
int64_t quantize_raw(double x, QuantParams p);

/// raw * 2^-fl, exact in FP64 for wl <= 53.
double dequantize(const FixedScalar& s) noexcept;
double dequantize(int64_t raw, QuantParams p) noexcept;

/// Re-encode a fixed-point value in a new format. Bit-exactly equivalent
/// to quantize(dequantize(s), to): lowering FL rounds half away from zero,
/// raising FL shifts left; both clamp to the new range.
FixedScalar rescale(const FixedScalar& s, QuantParams to);

/// Rescale a wide intermediate (e.g. a MAC accumulator at FL from_fl)
/// into the target format. Shared by the integer kernels.
int64_t rescale_wide(wide_t raw, int from_fl, QuantParams to);

} // namespace fxemu
