#pragma once

#include <cstddef>
#include <functional>

namespace tracetrust {

/// Worker count: TRACE_TRUST_THREADS if set to a positive integer, otherwise
/// the hardware concurrency (at least 1).
std::size_t worker_count();

/// Runs body(i) for i in [0, count) on up to worker_count() threads. Callers
/// write results into index-addressed slots, so output order never depends on
/// scheduling. The first exception thrown by any body is rethrown after all
/// workers have joined.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

}  // namespace tracetrust
