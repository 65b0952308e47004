#pragma once

#include <cstddef>
#include <functional>

namespace precog {

// Calls fn(i) for i in [0, n) on up to `jobs` threads. Work is handed out
// in index order; callers write results by index so output order never
// depends on scheduling. The first exception thrown is rethrown.
void parallel_for(std::size_t n, std::size_t jobs,
                  const std::function<void(std::size_t)>& fn);

}  // namespace precog
