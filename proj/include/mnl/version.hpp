#pragma once

namespace mnl {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace mnl
