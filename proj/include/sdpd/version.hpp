#pragma once

namespace sdpd {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace sdpd
