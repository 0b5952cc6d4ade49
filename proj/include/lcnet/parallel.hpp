#pragma once

#include <cstdint>
#include <functional>

namespace lcnet {

// Number of workers used by kernel-internal parallelism. Defaults to 1.
int worker_count();
void set_worker_count(int n);

// Scoped override of the worker count.
class WorkerScope {
 public:
  explicit WorkerScope(int n) : saved_(worker_count()) { set_worker_count(n); }
  ~WorkerScope() { set_worker_count(saved_); }
  WorkerScope(const WorkerScope &) = delete;
  WorkerScope &operator=(const WorkerScope &) = delete;

 private:
  int saved_;
};

// Splits [0, n) into contiguous chunks, one per worker, and runs body(begin, end)
// on each. Callers must make every output element depend on exactly one index so
// results do not depend on the partition.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)> &body);

}  // namespace lcnet
