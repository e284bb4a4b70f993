#pragma once

namespace triplab {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace triplab
