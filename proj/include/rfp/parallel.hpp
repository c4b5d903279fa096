#pragma once

#include <cstdint>
#include <functional>
#include <vector>

namespace rfp {

/// Fixed block width for deterministic reductions over Monte Carlo paths.
/// Partial results are indexed by block, never by thread, so the combined
/// value is bit-identical for any worker count.
inline constexpr std::int64_t kReduceBlock = 4096;

/// Pairwise (cascade) summation: recursive halving with a short sequential
/// base case. Bounds rounding error growth to O(log n) and fixes the
/// reduction tree independent of evaluation order.
double pairwise_sum(const double* x, std::size_t n);
double pairwise_sum(const std::vector<double>& x);

/// Runs fn(block_index, begin, end) over the fixed partition of [0, n) into
/// kReduceBlock-wide blocks. Uses a small thread pool when hardware allows;
/// callers must write results into per-block slots only.
void for_blocks(std::int64_t n,
                const std::function<void(std::int64_t, std::int64_t, std::int64_t)>& fn);

inline std::int64_t num_blocks(std::int64_t n) {
  return (n + kReduceBlock - 1) / kReduceBlock;
}

/// Deterministic mean/variance accumulator over per-path values: each block
/// contributes a pairwise sum of values and squares, and blocks are combined
/// pairwise in index order.
struct MeanVar {
  double mean = 0.0;
  double variance = 0.0;  // unbiased sample variance
  std::int64_t n = 0;
};
MeanVar reduce_mean_var(const std::vector<double>& block_sums,
                        const std::vector<double>& block_sumsq, std::int64_t n);

}  // namespace rfp
