#pragma once

namespace eflic {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace eflic
