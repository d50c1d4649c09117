#pragma once

namespace ohubert {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr int kCheckpointFormatVersion = 1;

}  // namespace ohubert
