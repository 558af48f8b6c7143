#pragma once

#include <cstddef>
#include <functional>

namespace fps {

// Worker cap: FPS_THREADS if set and positive, else hardware concurrency.
std::size_t worker_count();

// Runs body(begin, end) over contiguous chunks of [0, n). Chunk boundaries
// depend only on n and the worker count, and each index is visited exactly
// once, so bodies that write per-index results are deterministic.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace fps
