#pragma once

#include <cstddef>
#include <functional>

namespace spd {

/// Number of worker threads used by batch-parallel kernels. Defaults to 1.
/// Results never depend on this value: work is split over batch items and
/// every reduction runs in a fixed order afterwards.
void set_num_threads(int n);
int num_threads() noexcept;

/// Runs body(i) for i in [0, n). Calls with distinct i must touch disjoint
/// outputs.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace spd
