#pragma once

namespace kml {

// Version string embedded in every checkpoint manifest and report.
// Loaders reject checkpoints whose major version differs.
inline constexpr const char* kVersion = "kml 1.0.0";
inline constexpr int kVersionMajor = 1;

} // namespace kml
