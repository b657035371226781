#pragma once

namespace panda {

inline constexpr const char* kVersion = "0.1.0-desk";

}  // namespace panda
