#pragma once

namespace krec {

inline constexpr const char* kToolVersion = "0.1.0";

}
