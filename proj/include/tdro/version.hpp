#pragma once

namespace tdro {
inline constexpr const char* kVersion = "0.1.0";
}
