#pragma once

#include <cstdint>
#include <functional>

namespace depthfill {

/// Caps the worker pool used by tensor ops and the propagation engine.
/// 0 restores the default (logical core count). Takes effect immediately.
void set_thread_count(int threads);
int thread_count();

/// Runs fn(i) for i in [begin, end) on the worker pool. Work is split into
/// fixed-size chunks independent of the thread count, and every index is
/// processed by exactly one worker, so kernels that write disjoint outputs
/// are bitwise reproducible for any pool size. Exceptions from fn are
/// rethrown on the calling thread.
void parallel_for(std::int64_t begin, std::int64_t end,
                  const std::function<void(std::int64_t)>& fn);

/// Chunked variant: fn(chunk_begin, chunk_end) with fixed chunk boundaries
/// (grain indices per chunk, last chunk ragged).
void parallel_for_chunks(std::int64_t begin, std::int64_t end, std::int64_t grain,
                         const std::function<void(std::int64_t, std::int64_t)>& fn);

}  // namespace depthfill
