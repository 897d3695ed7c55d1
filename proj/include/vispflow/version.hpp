#pragma once

namespace vispflow {

inline constexpr const char* kVersion = "vispflow-0.1.0";

}  // namespace vispflow
