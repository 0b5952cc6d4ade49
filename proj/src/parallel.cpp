#include "lcnet/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

#include "lcnet/error.hpp"

namespace lcnet {
namespace {

// Persistent helper threads. Task i of a dispatch always runs chunk i, so the
// work split is a pure function of (n, workers).
class Pool {
 public:
  ~Pool() { resize(0); }

  void run(int tasks, const std::function<void(int)> &fn) {
    std::lock_guard<std::mutex> dispatch(dispatch_mu_);
    if (static_cast<int>(threads_.size()) < tasks - 1) resize(tasks - 1);
    {
      std::lock_guard<std::mutex> lk(mu_);
      fn_ = &fn;
      tasks_ = tasks;
      next_ = 1;
      pending_ = tasks - 1;
      error_ = nullptr;
    }
    cv_.notify_all();
    std::exception_ptr local;
    try {
      fn(0);
    } catch (...) {
      local = std::current_exception();
    }
    std::unique_lock<std::mutex> lk(mu_);
    done_cv_.wait(lk, [&] { return pending_ == 0; });
    fn_ = nullptr;
    if (local) std::rethrow_exception(local);
    if (error_) std::rethrow_exception(error_);
  }

 private:
  void resize(std::size_t n) {
    if (n < threads_.size()) {
      {
        std::lock_guard<std::mutex> lk(mu_);
        stop_ = true;
      }
      cv_.notify_all();
      for (auto &t : threads_) t.join();
      threads_.clear();
      stop_ = false;
    }
    while (threads_.size() < n) threads_.emplace_back([this] { loop(); });
  }

  void loop() {
    std::unique_lock<std::mutex> lk(mu_);
    for (;;) {
      cv_.wait(lk, [&] { return stop_ || (fn_ && next_ < tasks_); });
      if (stop_) return;
      int task = next_++;
      const auto *fn = fn_;
      lk.unlock();
      try {
        (*fn)(task);
      } catch (...) {
        std::lock_guard<std::mutex> g(mu_);
        if (!error_) error_ = std::current_exception();
      }
      lk.lock();
      if (--pending_ == 0) done_cv_.notify_all();
    }
  }

  std::mutex dispatch_mu_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
  std::vector<std::thread> threads_;
  const std::function<void(int)> *fn_ = nullptr;
  int tasks_ = 0;
  int next_ = 0;
  int pending_ = 0;
  bool stop_ = false;
  std::exception_ptr error_;
};

Pool &pool() {
  static Pool p;
  return p;
}

std::atomic<int> g_workers{1};
thread_local bool t_in_parallel = false;

}  // namespace

int worker_count() { return g_workers.load(); }

void set_worker_count(int n) {
  if (n < 1) throw Error(Errc::InvalidArgument, "worker count must be >= 1");
  g_workers.store(n);
}

void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)> &body) {
  if (n <= 0) return;
  int workers = static_cast<int>(std::min<std::int64_t>(worker_count(), n));
  if (workers <= 1 || t_in_parallel) {
    body(0, n);
    return;
  }
  std::function<void(int)> task = [&](int i) {
    std::int64_t begin = n * i / workers;
    std::int64_t end = n * (i + 1) / workers;
    t_in_parallel = true;
    try {
      if (begin < end) body(begin, end);
    } catch (...) {
      t_in_parallel = false;
      throw;
    }
    t_in_parallel = false;
  };
  pool().run(workers, task);
}

}  // namespace lcnet
