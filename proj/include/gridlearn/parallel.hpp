#pragma once

#include <cstddef>
#include <functional>

namespace gridlearn {

// Worker count: GRIDLEARN_THREADS if set (>= 1), else hardware concurrency.
std::size_t thread_budget();

// Runs body(i) for i in [0, count) on up to thread_budget() threads. Bodies
// must write only to their own slot; the first exception is rethrown after
// all workers join.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

}  // namespace gridlearn
