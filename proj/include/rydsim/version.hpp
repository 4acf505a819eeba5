#pragma once

namespace rydsim {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace rydsim
