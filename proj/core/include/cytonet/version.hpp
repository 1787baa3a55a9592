#pragma once

namespace cytonet {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace cytonet
