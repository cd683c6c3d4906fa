#include "stockpot/dtype.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <limits>

#include "stockpot/errors.hpp"

namespace stockpot {

namespace {

constexpr std::uint32_t kF32SignMask = 0x8000'0000u;

std::uint32_t f32_bits(float f) {
    return std::bit_cast<std::uint32_t>(f);
}

float f32_from_bits(std::uint32_t bits) {
    return std::bit_cast<float>(bits);
}

// Narrow a double to float with round-to-odd: truncate toward zero, then
// force the mantissa odd if anything was lost. Feeding this into a
// round-to-even 32->16 narrowing yields the correctly rounded 64->16
// result (the two extra mantissa bits of float absorb the double rounding).
float f64_to_f32_round_odd(double value) {
    float narrowed = static_cast<float>(value);  // round-to-nearest-even
    if (std::isnan(narrowed) || static_cast<double>(narrowed) == value) {
        return narrowed;
    }
    float truncated;
    if (std::isinf(narrowed)) {
        // Overflowed past the float range: truncation is the largest finite.
        truncated = std::copysign(std::numeric_limits<float>::max(), narrowed);
    } else if (std::fabs(static_cast<double>(narrowed)) > std::fabs(value)) {
        truncated = std::nextafter(narrowed, 0.0f);
    } else {
        truncated = narrowed;
    }
    return f32_from_bits(f32_bits(truncated) | 1u);
}

// Round-to-nearest-even narrowing from f32 bits to a smaller binary format
// with `kMantBits` mantissa bits and `kExpBits` exponent bits.
template <int kMantBits, int kExpBits>
std::uint16_t narrow_f32_rne(float value) {
    constexpr int kShift = 23 - kMantBits;
    constexpr std::uint32_t kRoundBias = (1u << (kShift - 1)) - 1;
    constexpr int kExpDiff = 127 - ((1 << (kExpBits - 1)) - 1);  // f32 bias - target bias
    constexpr std::uint16_t kInfBits = static_cast<std::uint16_t>(((1u << kExpBits) - 1) << kMantBits);

    const std::uint32_t bits = f32_bits(value);
    const std::uint16_t sign = static_cast<std::uint16_t>((bits >> 16) & 0x8000u);
    const std::uint32_t abs = bits & ~kF32SignMask;

    if (abs >= 0x7F80'0000u) {  // inf or nan
        if (abs == 0x7F80'0000u) return static_cast<std::uint16_t>(sign | kInfBits);
        std::uint16_t payload = static_cast<std::uint16_t>((abs >> kShift) & ((1u << kMantBits) - 1));
        if (payload == 0) payload = 1u << (kMantBits - 1);  // keep it a nan
        return static_cast<std::uint16_t>(sign | kInfBits | payload);
    }

    const int unbiased = static_cast<int>(abs >> 23) - kExpDiff;
    if (unbiased >= (1 << kExpBits) - 1) {  // overflow -> inf
        return static_cast<std::uint16_t>(sign | kInfBits);
    }
    if (unbiased <= 0) {  // subnormal or zero in the target format
        if (unbiased < -kMantBits) {
            // Below half of the smallest subnormal: rounds to zero.
            return sign;
        }
        std::uint32_t mant;
        int shift;
        if ((abs >> 23) == 0) {
            // Subnormal source: no implicit bit. Only reachable when the
            // formats share a bias (bf16), where the ulp ratio is 2^kShift.
            mant = abs;
            shift = kShift;
        } else {
            mant = (abs & 0x007F'FFFFu) | 0x0080'0000u;
            shift = kShift + 1 - unbiased;
        }
        const std::uint32_t shifted = mant >> shift;
        const std::uint32_t remainder = mant & ((1u << shift) - 1);
        const std::uint32_t half = 1u << (shift - 1);
        std::uint32_t out = shifted;
        if (remainder > half || (remainder == half && (out & 1u))) out += 1;
        return static_cast<std::uint16_t>(sign | out);
    }

    std::uint32_t out = (static_cast<std::uint32_t>(unbiased) << kMantBits) | ((abs >> kShift) & ((1u << kMantBits) - 1));
    const std::uint32_t remainder = abs & ((1u << kShift) - 1);
    if (remainder > kRoundBias + 1 || (remainder == kRoundBias + 1 && (out & 1u))) out += 1;
    return static_cast<std::uint16_t>(sign | out);
}

}  // namespace

std::size_t dtype_size(DType dtype) {
    switch (dtype) {
        case DType::F16:
        case DType::BF16:
            return 2;
        case DType::F32:
            return 4;
        case DType::F64:
            return 8;
    }
    return 0;
}

std::string_view dtype_name(DType dtype) {
    switch (dtype) {
        case DType::F16: return "F16";
        case DType::BF16: return "BF16";
        case DType::F32: return "F32";
        case DType::F64: return "F64";
    }
    return "?";
}

DType dtype_from_name(std::string_view name) {
    if (name == "F16") return DType::F16;
    if (name == "BF16") return DType::BF16;
    if (name == "F32") return DType::F32;
    if (name == "F64") return DType::F64;
    throw ParseError("unknown dtype '" + std::string(name) + "'");
}

double f16_to_f64(std::uint16_t bits) {
    const std::uint32_t sign = (bits & 0x8000u) ? 1u : 0u;
    const std::uint32_t exp = (bits >> 10) & 0x1Fu;
    const std::uint32_t mant = bits & 0x3FFu;
    std::uint32_t out;
    if (exp == 0) {
        if (mant == 0) {
            out = sign << 31;
        } else {
            // Subnormal: renormalize into f32. n shifts bring the most
            // significant set bit to the implicit-one position (bit 10).
            const int n = std::countl_zero(mant) - 21;
            const std::uint32_t m = (mant << n) & 0x3FFu;
            const std::uint32_t e = static_cast<std::uint32_t>(127 - 15 + 1 - n);
            out = (sign << 31) | (e << 23) | (m << 13);
        }
    } else if (exp == 0x1Fu) {
        out = (sign << 31) | 0x7F80'0000u | (mant << 13);
    } else {
        out = (sign << 31) | ((exp - 15 + 127) << 23) | (mant << 13);
    }
    return static_cast<double>(f32_from_bits(out));
}

double bf16_to_f64(std::uint16_t bits) {
    return static_cast<double>(f32_from_bits(static_cast<std::uint32_t>(bits) << 16));
}

std::uint16_t f64_to_f16(double value) {
    return narrow_f32_rne<10, 5>(f64_to_f32_round_odd(value));
}

std::uint16_t f64_to_bf16(double value) {
    return narrow_f32_rne<7, 8>(f64_to_f32_round_odd(value));
}

void decode_values(DType dtype, std::span<const std::byte> raw, std::span<double> out) {
    const std::size_t elem = dtype_size(dtype);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const std::byte* p = raw.data() + i * elem;
        switch (dtype) {
            case DType::F16: {
                std::uint16_t b;
                std::memcpy(&b, p, 2);
                out[i] = f16_to_f64(b);
                break;
            }
            case DType::BF16: {
                std::uint16_t b;
                std::memcpy(&b, p, 2);
                out[i] = bf16_to_f64(b);
                break;
            }
            case DType::F32: {
                float f;
                std::memcpy(&f, p, 4);
                out[i] = static_cast<double>(f);
                break;
            }
            case DType::F64: {
                double d;
                std::memcpy(&d, p, 8);
                out[i] = d;
                break;
            }
        }
    }
}

void encode_values(DType dtype, std::span<const double> values, std::span<std::byte> out) {
    const std::size_t elem = dtype_size(dtype);
    for (std::size_t i = 0; i < values.size(); ++i) {
        std::byte* p = out.data() + i * elem;
        switch (dtype) {
            case DType::F16: {
                const std::uint16_t b = f64_to_f16(values[i]);
                std::memcpy(p, &b, 2);
                break;
            }
            case DType::BF16: {
                const std::uint16_t b = f64_to_bf16(values[i]);
                std::memcpy(p, &b, 2);
                break;
            }
            case DType::F32: {
                const float f = static_cast<float>(values[i]);
                std::memcpy(p, &f, 4);
                break;
            }
            case DType::F64: {
                std::memcpy(p, &values[i], 8);
                break;
            }
        }
    }
}

}  // namespace stockpot
