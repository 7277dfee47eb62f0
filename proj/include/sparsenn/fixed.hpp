#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "sparsenn/errors.hpp"

namespace sparsenn {

using SatCounter = std::uint64_t;

// 16-bit fixed-point format: value = code * 2^(-frac_bits).
// Representable range is [-2^(15-frac_bits), 2^(15-frac_bits) - 2^(-frac_bits)].
struct QFormat {
    static constexpr int total_bits = 16;
    int frac_bits = 10;

    QFormat() = default;
    explicit QFormat(int frac) : frac_bits(frac) {
        if (frac < 0 || frac > 15) {
            throw ShapeError("QFormat: frac_bits must be in [0,15], got " + std::to_string(frac));
        }
    }

    bool operator==(const QFormat&) const = default;

    double lsb() const { return std::ldexp(1.0, -frac_bits); }
    double max_value() const { return 32767.0 * lsb(); }
    double min_value() const { return -32768.0 * lsb(); }
};

struct FxScalar {
    std::int16_t code = 0;
    QFormat format;

    double value() const { return static_cast<double>(code) * format.lsb(); }
};

// Exact 64-bit accumulator for sums of 16-bit code products. frac_bits is
// the scale of the accumulated value, i.e. the sum of the operand formats'
// fractional bits. Integer addition makes the accumulation order-invariant,
// and the result is exact for any sum of up to 2^31 products.
struct WideAccumulator {
    std::int64_t acc = 0;
    int frac_bits = 0;

    void add_product(std::int16_t a, std::int16_t b) {
        acc += static_cast<std::int64_t>(a) * static_cast<std::int64_t>(b);
    }

    double value() const { return std::ldexp(static_cast<double>(acc), -frac_bits); }
};

inline std::int16_t saturate_to_i16(std::int64_t v, SatCounter* sat = nullptr) {
    if (v > 32767) {
        if (sat) ++*sat;
        return 32767;
    }
    if (v < -32768) {
        if (sat) ++*sat;
        return -32768;
    }
    return static_cast<std::int16_t>(v);
}

// Arithmetic right shift with round-half-to-even. shift must be >= 0.
inline std::int64_t rne_shift_right(std::int64_t v, int shift) {
    if (shift <= 0) return v;
    if (shift > 62) return 0; // |v| < 2^62 always holds for our accumulators
    std::int64_t q = v >> shift;
    std::int64_t rem = v - (q << shift); // in [0, 2^shift)
    std::int64_t half = std::int64_t{1} << (shift - 1);
    if (rem > half || (rem == half && (q & 1))) ++q;
    return q;
}

// code = round-half-to-even(x * 2^frac_bits), saturated to the 16-bit range.
// Saturation is defined behavior; when a counter is supplied each clamp is
// recorded there.
inline FxScalar quantize(double x, QFormat fmt, SatCounter* sat = nullptr) {
    if (!std::isfinite(x)) throw Error("quantize: non-finite input");
    double scaled = std::ldexp(x, fmt.frac_bits);
    // nearbyint under the default FE_TONEAREST mode rounds half to even
    double r = std::nearbyint(scaled);
    std::int16_t code;
    if (r >= 32768.0) {
        if (sat) ++*sat;
        code = 32767;
    } else if (r <= -32769.0) {
        if (sat) ++*sat;
        code = -32768;
    } else {
        code = saturate_to_i16(static_cast<std::int64_t>(r), sat);
    }
    return FxScalar{code, fmt};
}

inline double dequantize(FxScalar s) { return s.value(); }

// Fixed-point vector: one shared format for all elements.
struct FxVector {
    std::vector<std::int16_t> codes;
    QFormat format;

    std::size_t size() const { return codes.size(); }
};

// Exact dot product of raw codes; the caller tracks the scale.
inline std::int64_t dot_codes(std::span<const std::int16_t> a, std::span<const std::int16_t> b) {
    std::int64_t acc = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        acc += static_cast<std::int64_t>(a[i]) * static_cast<std::int64_t>(b[i]);
    }
    return acc;
}

// MAC-style dot product: acc = sum_i w[i]*x[i], exact, order-invariant.
inline WideAccumulator fx_dot(const FxVector& w, const FxVector& x) {
    if (w.format != x.format) {
        throw ShapeError("fx_dot: format mismatch (Q frac " + std::to_string(w.format.frac_bits) +
                         " vs " + std::to_string(x.format.frac_bits) + ")");
    }
    if (w.codes.size() != x.codes.size()) {
        throw ShapeError("fx_dot: length mismatch (" + std::to_string(w.codes.size()) + " vs " +
                         std::to_string(x.codes.size()) + ")");
    }
    WideAccumulator a;
    a.frac_bits = w.format.frac_bits + x.format.frac_bits;
    a.acc = dot_codes(w.codes, x.codes);
    return a;
}

// Shift the accumulator down to the target format with round-half-to-even
// and saturate to 16 bits. A negative net shift (accumulator coarser than
// the target) is an exact left shift with saturation.
inline FxScalar requantize(const WideAccumulator& acc, QFormat fmt, SatCounter* sat = nullptr) {
    int shift = acc.frac_bits - fmt.frac_bits;
    std::int16_t code;
    if (shift >= 0) {
        code = saturate_to_i16(rne_shift_right(acc.acc, shift), sat);
    } else {
        int k = -shift;
        std::int64_t hi = std::int64_t{32767} >> k;
        std::int64_t lo = std::int64_t{-32768} >> k; // arithmetic, exact for powers of two
        if (acc.acc > hi) {
            if (sat) ++*sat;
            code = 32767;
        } else if (acc.acc < lo) {
            if (sat) ++*sat;
            code = -32768;
        } else {
            code = static_cast<std::int16_t>(acc.acc << k);
        }
    }
    return FxScalar{code, fmt};
}

// Pick the largest frac_bits such that max|v| is representable:
// frac_bits = clamp(15 - ceil(log2(max|v| + eps)), 0, 15).
inline QFormat calibrate_format(std::span<const double> values) {
    if (values.empty()) throw Error("calibrate_format: empty input");
    double m = 0.0;
    for (double v : values) {
        if (!std::isfinite(v)) throw Error("calibrate_format: non-finite input");
        m = std::max(m, std::fabs(v));
    }
    constexpr double eps = 1e-12;
    int f = 15 - static_cast<int>(std::ceil(std::log2(m + eps)));
    if (f < 0) f = 0;
    if (f > 15) f = 15;
    return QFormat(f);
}

inline FxVector quantize_vector(std::span<const double> values, QFormat fmt,
                                SatCounter* sat = nullptr) {
    FxVector out;
    out.format = fmt;
    out.codes.reserve(values.size());
    for (double v : values) out.codes.push_back(quantize(v, fmt, sat).code);
    return out;
}

} // namespace sparsenn
