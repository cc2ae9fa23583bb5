#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>

namespace irf {

// Bad external input: unreadable files, mismatched dimensions, invalid config.
// CLI maps this to exit code 3.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numeric breakdown: non-finite values, failed decompositions. Exit code 4.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thread budget for batch/chain-level parallelism. IRF_THREADS caps it.
int thread_budget();

// Runs fn(i) for i in [0, n). Work is assigned by index stride, so results
// written to per-index slots are identical regardless of the thread count.
void parallel_for(int64_t n, const std::function<void(int64_t)>& fn);

}  // namespace irf
