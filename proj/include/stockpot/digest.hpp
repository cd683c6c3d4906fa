#pragma once

#include <cstddef>
#include <span>
#include <string>

namespace stockpot {

// SHA-256 hex digest of a byte buffer (OpenSSL-backed). Content digests
// order ensembles canonically and identify merge inputs in metadata.
std::string sha256_hex(std::span<const std::byte> bytes);

}  // namespace stockpot
