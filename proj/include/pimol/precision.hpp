#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>

#include "pimol/errors.hpp"

namespace pimol {

/// Floating-point format used when emulating reduced-precision function
/// evaluations inside the finite-difference backend. Arithmetic stays in
/// 64-bit; only function values are rounded to the target format.
enum class Precision { f64, f32, f16, bf16 };

/// Unit roundoff of the format (2^-52, 2^-23, 2^-10, 2^-7).
inline double precision_epsilon(Precision p) {
    switch (p) {
        case Precision::f64: return 0x1p-52;
        case Precision::f32: return 0x1p-23;
        case Precision::f16: return 0x1p-10;
        case Precision::bf16: return 0x1p-7;
    }
    return 0x1p-52;
}

inline std::string precision_name(Precision p) {
    switch (p) {
        case Precision::f64: return "f64";
        case Precision::f32: return "f32";
        case Precision::f16: return "f16_emulated";
        case Precision::bf16: return "bf16_emulated";
    }
    return "f64";
}

namespace detail {

// float -> IEEE binary16, round to nearest even, then back to double.
inline double round_f16(double v) {
    float f = static_cast<float>(v);
    uint32_t bits = std::bit_cast<uint32_t>(f);
    uint32_t sign = bits >> 31;
    int32_t exp = static_cast<int32_t>((bits >> 23) & 0xff) - 127;
    uint32_t frac = bits & 0x7fffffu;

    if (exp == 128) {  // inf or nan
        return frac ? std::numeric_limits<double>::quiet_NaN()
                    : (sign ? -std::numeric_limits<double>::infinity()
                            : std::numeric_limits<double>::infinity());
    }
    if (exp > 15) {  // overflow to inf
        return sign ? -std::numeric_limits<double>::infinity()
                    : std::numeric_limits<double>::infinity();
    }
    uint32_t mant = frac | 0x800000u;  // implicit bit, 24-bit significand
    int shift = 13;                    // 24 -> 11 bits for normal halves
    if (exp < -14) {                   // subnormal half
        shift += (-14 - exp);
        exp = -14;
        if (shift > 24) return sign ? -0.0 : 0.0;
    }
    uint32_t kept = mant >> shift;
    uint32_t rem = mant & ((1u << shift) - 1);
    uint32_t half = 1u << (shift - 1);
    if (rem > half || (rem == half && (kept & 1u))) ++kept;  // round to nearest even
    double mag = std::ldexp(static_cast<double>(kept), exp - 10);
    return sign ? -mag : mag;
}

// float -> bfloat16 (8-bit exponent, 7-bit mantissa), round to nearest even.
inline double round_bf16(double v) {
    float f = static_cast<float>(v);
    if (std::isnan(f) || std::isinf(f)) return static_cast<double>(f);
    uint32_t bits = std::bit_cast<uint32_t>(f);
    uint32_t lsb = (bits >> 16) & 1u;
    bits += 0x7fffu + lsb;
    bits &= 0xffff0000u;
    return static_cast<double>(std::bit_cast<float>(bits));
}

}  // namespace detail

/// Round a 64-bit value to the target format (round to nearest even).
inline double quantize_value(double v, Precision p) {
    switch (p) {
        case Precision::f64: return v;
        case Precision::f32: return static_cast<double>(static_cast<float>(v));
        case Precision::f16: return detail::round_f16(v);
        case Precision::bf16: return detail::round_bf16(v);
    }
    return v;
}

inline Precision precision_from_name(const std::string& name) {
    if (name == "f64" || name == "float64") return Precision::f64;
    if (name == "f32" || name == "float32") return Precision::f32;
    if (name == "f16" || name == "f16_emulated" || name == "float16") return Precision::f16;
    if (name == "bf16" || name == "bf16_emulated" || name == "bfloat16") return Precision::bf16;
    throw ConfigError("unknown precision '" + name + "'");
}

}  // namespace pimol
