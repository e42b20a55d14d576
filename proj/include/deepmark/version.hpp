#pragma once

namespace deepmark {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace deepmark
