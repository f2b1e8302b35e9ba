#pragma once

namespace caviar {

inline constexpr const char* kVersion = "caviar 0.1.0";

}  // namespace caviar
