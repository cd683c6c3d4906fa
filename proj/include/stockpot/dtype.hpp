#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>

namespace stockpot {

// Storage dtypes of the container format. Storage only: all arithmetic in
// the toolkit promotes to 64-bit floating point.
enum class DType : std::uint8_t { F16, BF16, F32, F64 };

std::size_t dtype_size(DType dtype);
std::string_view dtype_name(DType dtype);

// Throws ParseError on unknown names.
DType dtype_from_name(std::string_view name);

// Scalar conversions. Decoding is exact (every f16/bf16/f32 value is
// representable as a double). Encoding rounds to nearest, ties to even;
// the f16/bf16 paths go through a round-to-odd intermediate so the result
// matches a single correctly rounded conversion from double.
double f16_to_f64(std::uint16_t bits);
double bf16_to_f64(std::uint16_t bits);
std::uint16_t f64_to_f16(double value);
std::uint16_t f64_to_bf16(double value);

// Bulk little-endian codecs between raw storage bytes and doubles.
void decode_values(DType dtype, std::span<const std::byte> raw, std::span<double> out);
void encode_values(DType dtype, std::span<const double> values, std::span<std::byte> out);

}  // namespace stockpot
