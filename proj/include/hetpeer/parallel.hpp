#pragma once
#include <cstddef>
#include <functional>

namespace hetpeer {

/// Runs `body(i)` for i in [0, count) on up to `workers` threads.
///
/// Indices are statically partitioned and each call writes only its own
/// output slot, so results never depend on the worker count. Calls made from
/// inside a worker run serially (no nested pools). The first exception thrown
/// by any body is rethrown on the calling thread.
void parallel_for(std::size_t count, int workers,
                  const std::function<void(std::size_t)>& body);

} // namespace hetpeer
