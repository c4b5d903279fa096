#include "rfp/parallel.hpp"

#include <atomic>
#include <cmath>
#include <thread>

namespace rfp {

namespace {

double pairwise_sum_impl(const double* x, std::size_t n) {
  if (n <= 32) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x[i];
    return s;
  }
  const std::size_t half = n / 2;
  return pairwise_sum_impl(x, half) + pairwise_sum_impl(x + half, n - half);
}

}  // namespace

double pairwise_sum(const double* x, std::size_t n) { return pairwise_sum_impl(x, n); }

double pairwise_sum(const std::vector<double>& x) { return pairwise_sum_impl(x.data(), x.size()); }

void for_blocks(std::int64_t n,
                const std::function<void(std::int64_t, std::int64_t, std::int64_t)>& fn) {
  const std::int64_t blocks = num_blocks(n);
  unsigned workers = std::thread::hardware_concurrency();
  if (workers <= 1 || blocks <= 1) {
    for (std::int64_t b = 0; b < blocks; ++b) {
      fn(b, b * kReduceBlock, std::min(n, (b + 1) * kReduceBlock));
    }
    return;
  }
  workers = std::min<unsigned>(workers, static_cast<unsigned>(blocks));
  std::atomic<std::int64_t> next{0};
  auto work = [&] {
    while (true) {
      const std::int64_t b = next.fetch_add(1);
      if (b >= blocks) break;
      fn(b, b * kReduceBlock, std::min(n, (b + 1) * kReduceBlock));
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
  for (auto& t : pool) t.join();
}

MeanVar reduce_mean_var(const std::vector<double>& block_sums,
                        const std::vector<double>& block_sumsq, std::int64_t n) {
  MeanVar out;
  out.n = n;
  if (n == 0) return out;
  const double total = pairwise_sum(block_sums);
  const double total_sq = pairwise_sum(block_sumsq);
  out.mean = total / static_cast<double>(n);
  if (n > 1) {
    const double centered = total_sq - total * total / static_cast<double>(n);
    out.variance = std::max(0.0, centered / static_cast<double>(n - 1));
  }
  return out;
}

}  // namespace rfp
