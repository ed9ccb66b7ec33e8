#pragma once

namespace pplxguard {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace pplxguard
