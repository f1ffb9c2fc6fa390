#pragma once

namespace hetpeer {

/// Version of every emitted JSON and CSV layout.
inline constexpr int kFormatVersion = 1;

} // namespace hetpeer
