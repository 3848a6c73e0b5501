#include <cmath>

#include "doctest.h"
#include "fxemu/fixedpoint.hpp"
#include "test_util.hpp"

using namespace fxemu;

TEST_CASE("quantize matches the worked examples") {
    CHECK(quantize(0.0, {8, 4}).raw == 0);
    CHECK(quantize(1.3, {8, 4}).raw == 21);      // 1.3 * 16 = 20.8
    CHECK(quantize(1000.0, {8, 4}).raw == 127);  // clamped to 2^7 - 1
    CHECK(quantize(-1000.0, {8, 4}).raw == -128);
    CHECK(quantize(0.078125, {8, 5}).raw == 3);  // 2.5 rounds away from zero
    CHECK(quantize(-0.078125, {8, 5}).raw == -3);
}

TEST_CASE("quantize rejects non-finite input") {
    CHECK_THROWS_AS(quantize(std::nan(""), {8, 4}), DomainError);
    CHECK_THROWS_AS(quantize(INFINITY, {8, 4}), DomainError);
}

TEST_CASE("QuantParams range checking") {
    CHECK_THROWS_AS(QuantParams::checked(1, 0), DomainError);
    CHECK_THROWS_AS(QuantParams::checked(64, 0), DomainError);
    CHECK(QuantParams::checked(2, -5).lo() == -2);
    CHECK(QuantParams::checked(8, 0).hi() == 127);
    CHECK(QuantParams::checked(63, 0).lo() == -(int64_t(1) << 62));
}

TEST_CASE("clamp examples and domain error") {
    CHECK(clamp_int(5, -128, 127) == 5);
    CHECK(clamp_int(-500, -128, 127) == -128);
    CHECK(clamp_int(127, -128, 127) == 127);
    CHECK_THROWS_AS(clamp_int(0, 3, -3), DomainError);
}

TEST_CASE("dequantize examples") {
    CHECK(dequantize(0, {8, 4}) == 0.0);
    CHECK(dequantize(21, {8, 4}) == 1.3125);
    CHECK(dequantize(-128, {8, 7}) == -1.0);
}

// Exhaustive conformance against the exact-rational oracle. The grid
// x = num * 2^-(fl+1) hits every .5 tie and runs well past both clamp
// boundaries for every word length.
TEST_CASE("quantize agrees with the dyadic oracle on a dense grid") {
    for (int wl = 2; wl <= 10; ++wl) {
        const int fls[] = {-3, -1, 0, 1, 3, wl - 1, wl, wl + 2};
        for (int fl : fls) {
            const int m = fl + 1;
            const int64_t span = int64_t(1) << (wl + 1);
            for (int64_t num = -span; num <= span; ++num) {
                const double x = std::ldexp(double(num), -m);
                const int64_t expected = oracle::quantize_dyadic(num, m, wl, fl);
                const int64_t got = quantize_raw(x, {wl, fl});
                if (got != expected) {
                    CAPTURE(wl);
                    CAPTURE(fl);
                    CAPTURE(num);
                    REQUIRE(got == expected);
                }
            }
        }
    }
}

TEST_CASE("round trip bound inside the representable range") {
    std::mt19937_64 rng(7);
    for (int iter = 0; iter < 20000; ++iter) {
        const int wl = 2 + int(rng() % 20);
        const int fl = -4 + int(rng() % 24);
        const QuantParams p{wl, fl};
        const double lo = dequantize(p.lo(), p), hi = dequantize(p.hi(), p);
        const double x = oracle::uniform(rng, std::min(lo, hi), std::max(lo, hi));
        const double back = dequantize(quantize(x, p));
        CHECK(std::abs(back - x) <= std::ldexp(1.0, -fl - 1));
    }
}

TEST_CASE("quantize is idempotent through dequantize") {
    std::mt19937_64 rng(11);
    for (int iter = 0; iter < 20000; ++iter) {
        const int wl = 2 + int(rng() % 20);
        const int fl = -6 + int(rng() % 30);
        const QuantParams p{wl, fl};
        const double x = oracle::uniform(rng, -40.0, 40.0);
        const FixedScalar once = quantize(x, p);
        CHECK(quantize(dequantize(once), p).raw == once.raw);
    }
}

TEST_CASE("rounding is odd-symmetric away from the clamp") {
    std::mt19937_64 rng(13);
    for (int iter = 0; iter < 20000; ++iter) {
        const int wl = 2 + int(rng() % 16);
        const int fl = -4 + int(rng() % 20);
        const QuantParams p{wl, fl};
        const double x = oracle::uniform(rng, -30.0, 30.0);
        const int64_t pos = quantize(x, p).raw;
        if (pos == p.lo() || pos == p.hi() || -pos > p.hi()) continue;
        CHECK(quantize(-x, p).raw == -pos);
    }
}

TEST_CASE("rescale matches the worked examples") {
    CHECK(rescale({21, {8, 4}}, {8, 4}).raw == 21);
    CHECK(rescale({21, {8, 4}}, {8, 2}).raw == 5);  // 21/4 = 5.25 -> 5
    CHECK(rescale({21, {8, 4}}, {8, 6}).raw == 84);
    CHECK(rescale({-6, {8, 4}}, {8, 2}).raw == -2); // -1.5 rounds away from zero
}

// rescale must be bit-exactly quantize(dequantize(s), to); exhaustive over
// every raw value for small word lengths, a cross-section of FL pairs.
TEST_CASE("rescale equals quantize-of-dequantize exhaustively") {
    const int fls[] = {-3, 0, 2, 5, 9};
    for (int wl = 2; wl <= 10; ++wl)
        for (int from_fl : fls)
            for (int to_fl : fls) {
                const QuantParams from{wl, from_fl}, to{wl, to_fl};
                for (int64_t raw = from.lo(); raw <= from.hi(); ++raw) {
                    const FixedScalar s{raw, from};
                    const int64_t direct = rescale(s, to).raw;
                    const int64_t via_fp = quantize(dequantize(s), to).raw;
                    if (direct != via_fp) {
                        CAPTURE(wl);
                        CAPTURE(from_fl);
                        CAPTURE(to_fl);
                        CAPTURE(raw);
                        REQUIRE(direct == via_fp);
                    }
                }
            }
}

TEST_CASE("shift_round_half_away handles ties and signs") {
    CHECK(shift_round_half_away(5, 1) == 3);   // 2.5 -> 3
    CHECK(shift_round_half_away(-5, 1) == -3); // -2.5 -> -3
    CHECK(shift_round_half_away(4, 2) == 1);
    CHECK(shift_round_half_away(-156, 8) == -1); // -0.609 -> -1
    CHECK(shift_round_half_away(7, 0) == 7);
}
