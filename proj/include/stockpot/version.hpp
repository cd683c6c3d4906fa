#pragma once

namespace stockpot {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace stockpot
