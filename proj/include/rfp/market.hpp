#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace rfp::market {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Market primitives under parameter uncertainty:
///  - riskless rate r >= 0,
///  - d risky assets with drift constrained to the box [b_lo, b_hi],
///  - covariance constrained to the convex hull of cov_vertices (symmetric
///    PSD, at least one positive definite),
///  - admissible investment proportions constrained to the box
///    Pi = [p_lo, p_hi], which must contain 0 (entries may be +-infinity).
struct MarketSpec {
  double r = 0.0;
  int d = 1;
  Vec b_lo, b_hi;
  std::vector<Mat> cov_vertices;
  Vec p_lo, p_hi;

  /// Throws std::invalid_argument on any structural violation.
  void validate() const;

  bool pi_contains(const Vec& p, double tol = 1e-9) const;
  bool drift_in_box(const Vec& b, double tol = 1e-9) const;

  /// Frobenius distance from S to the convex hull of cov_vertices
  /// (simplex-constrained least squares, solved exactly by an active-set
  /// method; exact in exact arithmetic, machine precision in practice).
  double cov_hull_distance(const Mat& S) const;

  /// Convenience 1-D accessors (throw unless d == 1).
  double sigma_sq_lo() const;
  double sigma_sq_hi() const;

  static MarketSpec from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

/// Piecewise-constant control path on a strictly increasing grid
/// times[0] = 0 < ... < times[N]; entry k applies on [times[k], times[k+1]).
/// p: investment proportions, c: proportional consumption rate >= 0,
/// b: drift selection, sigma: volatility matrix with sigma*sigma^T in the
/// covariance hull.
struct StrategyPath {
  std::vector<double> times;
  std::vector<Vec> p;
  std::vector<double> c;
  std::vector<Vec> b;
  std::vector<Mat> sigma;

  static StrategyPath constant(double horizon, Vec p, double c, Vec b, Mat sigma);
  std::size_t interval_index(double t) const;
  double horizon() const { return times.back(); }
  void validate_shape() const;
};

/// Strategy and model coefficients resolved onto a simulation grid. The grid
/// is the union of the uniform dt-grid with the strategy breakpoints, so the
/// per-step exponential update is exact for piecewise-constant controls.
struct ResolvedStrategy {
  std::vector<double> times;          // size n_steps + 1
  std::vector<double> log_drift;      // r + p.(b - r 1) - c - |sigma^T p|^2 / 2, per step
  std::vector<double> consumption;    // c per step
  std::vector<double> vol_norm;       // |sigma^T p| per step
  std::vector<Vec> noise_load;        // sigma^T p per step (d)
  std::vector<Vec> p;                 // per step (d)
  std::size_t n_steps() const { return log_drift.size(); }
};

ResolvedStrategy resolve_on_grid(const MarketSpec& spec, const StrategyPath& strat, double dt);

/// Simulated wealth paths. Wealth follows the exact log-space exponential
/// per step; each path draws from its own counter-based (seed, path) stream,
/// so results are independent of path count and parallel schedule.
struct SimResult {
  std::uint64_t seed = 0;
  double dt = 0.0;
  double x0 = 0.0;
  ResolvedStrategy grid;
  std::vector<std::vector<double>> wealth;      // [path][time]
  std::vector<std::vector<double>> increments;  // [path][step*d + j], Brownian increments
  std::vector<double> log_wealth_integral;      // trapezoid of log X over the grid, per path
};

SimResult simulate_wealth(const MarketSpec& spec, double x0, const StrategyPath& strat,
                          int n_paths, std::uint64_t seed, double dt);

/// Power functionals of simulated wealth: X_T^delta and the consumption
/// integral per path, plus moment diagnostics standing in for an exact
/// admissibility (uniform integrability) certificate.
struct WealthFunctional {
  double delta = 0.0;
  std::vector<double> terminal_power;                // X_T^delta
  std::vector<double> consumption_power_integral;    // int (c X)^delta ds (trapezoid)
  std::vector<double> running_max_power;             // max_t X_t^delta
  double sample_max = 0.0;                           // max over paths and times of X^delta
  double sample_variance = 0.0;                      // sample variance of X_T^delta
};

WealthFunctional power_wealth_functional(const SimResult& sim, double delta);

}  // namespace rfp::market
