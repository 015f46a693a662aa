#pragma once

#include <cstddef>
#include <functional>

namespace hiergeo {

// 0 restores the default (hardware concurrency).
void set_num_threads(int n);
int num_threads();

// Runs fn(i) for i in [0, n). Iterations must write to disjoint locations;
// outputs are then independent of the thread count and of the partition.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace hiergeo
