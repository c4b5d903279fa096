#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "rfp/market.hpp"

namespace rfp::bsde {

using market::MarketSpec;
using market::Mat;
using market::Vec;

/// Volatility environment: either a deterministic function of time (with
/// declared discontinuity points) or a map of a one-dimensional Markov
/// factor dV = kappa (theta - V) dt + eta dW^1.
struct SigmaModel {
  enum class Kind { Deterministic, MarkovFactor };
  Kind kind = Kind::Deterministic;

  std::function<Mat(double)> sigma_of_t;
  std::vector<double> breakpoints;  // jump times of sigma_of_t

  double kappa = 0.0, theta = 0.0, eta = 0.0, v0 = 0.0;
  std::function<Mat(double)> sigma_of_v;

  /// Uniform bound on |sigma^{-1}|_2 over the evaluation range (a model
  /// invariant; estimated by sampling for deterministic kind, supplied by
  /// the caller for the factor kind).
  double sigma_inv_norm_bound = 0.0;

  static SigmaModel deterministic(std::function<Mat(double)> f,
                                  std::vector<double> breakpoints = {});
  static SigmaModel constant(Mat sigma);
  static SigmaModel markov_factor(double kappa, double theta, double eta, double v0,
                                  std::function<Mat(double)> sigma_of_v,
                                  double sigma_inv_norm_bound);

  /// sigma at time t (deterministic kind) or factor level v (factor kind;
  /// NaN falls back to the initial level v0).
  Mat sigma_at(double t, double v = std::numeric_limits<double>::quiet_NaN()) const;
};

/// One-dimensional polynomial regression surface in the factor variable,
/// with the moment normalization used at fit time.
struct RegressionSurface {
  double v_mean = 0.0;
  double v_sd = 1.0;
  std::vector<double> coeffs;  // coefficients of ((v - v_mean)/v_sd)^k
  double eval(double v) const;
};

struct BsdeSolution {
  double T = 0.0;
  double dt = 0.0;
  double rho = 0.0;
  std::uint64_t seed = 0;
  std::vector<double> times;
  std::vector<double> Y;              // per time: value (deterministic) or path mean (LSMC)
  std::vector<Vec> Z;                 // per time: Z (deterministic: 0) or path mean
  std::vector<double> tail_estimate;  // (sup_t H(t,0)/rho) e^{-rho (T-t)}
  double sup_bound = 0.0;             // sup over the grid of H(t,0)/rho
  double y0_std_error = 0.0;          // sampling error of the t=0 estimate (0 if exact)
  std::vector<RegressionSurface> coeff_Y;               // LSMC conditional-mean surfaces
  std::vector<std::vector<RegressionSurface>> coeff_Z;  // LSMC Z surfaces, per component
  double z_sumsq_unweighted = 0.0;    // sum over grid of mean|Z|^2 dt
  double z_sumsq_weighted = 0.0;      // same with e^{-2 rho t} weights
  int basis_size_used = 0;            // smallest basis size after conditioning reductions
};

/// BSDE driver F(t, y, z) = H(t, z) + |z|^2/2 - rho y, where H is the
/// saddle value of the dynamic game at sigma(t) (or sigma(V)). The |z|^2/2
/// term belongs to the driver, not to H (see saddle module).
double driver(const SigmaModel& model, const MarketSpec& spec, double delta, double rho,
              double t, double y, const Vec& z,
              double v_factor = std::numeric_limits<double>::quiet_NaN());

/// Deterministic-sigma reduction: Z = 0 and Y solves the backward ODE
/// Y' = rho Y - H(t, 0), Y_T = 0, integrated by classical fourth-order
/// Runge-Kutta on the union of the uniform grid and sigma's breakpoints
/// (stages never sample across a discontinuity).
BsdeSolution solve_bsde_deterministic_sigma(const SigmaModel& model, const MarketSpec& spec,
                                            double delta, double rho, double T, double dt);

/// Least-squares Monte Carlo for the Markov-factor model: forward factor
/// simulation (counter-based RNG, checkpointed storage), backward implicit
/// update Y_t = (E_t[Y_{t+dt}] + (H(t,Z_t) + |Z_t|^2/2) dt)/(1 + rho dt)
/// with conditional expectations regressed on normalized monomials of V_t
/// (degree n_basis - 1); Z is regressed from centered martingale increments
/// E_t[(Y_{t+dt} - E_t[Y_{t+dt}]) dW]/dt. Deterministic for a fixed seed.
BsdeSolution solve_bsde_lsmc(const SigmaModel& model, const MarketSpec& spec, double delta,
                             double rho, double T, double dt, int n_paths, int n_basis,
                             std::uint64_t seed);

struct DriverEstimatesReport {
  int n_samples = 0;
  double K = 0.0;                  // model-derived growth/bound constant
  int lipschitz_violations = 0;
  double max_growth_ratio = 0.0;   // max |F1-F2| / ((1+|z1|+|z2|)|z1-z2|)
  double f00_max = 0.0;            // max |F(t,0,0)|
  bool f00_within_K = false;
  double max_affinity_error = 0.0; // max |(y1-y2)(F1-F2) + rho (y1-y2)^2|
  int affinity_violations = 0;
};

/// Samples random (t, y, z1, z2) and checks the driver growth bound
/// |F(t,y,z1) - F(t,y,z2)| <= K (1 + |z1| + |z2|) |z1 - z2|, the bound
/// |F(t,0,0)| <= K, and the exact affinity of F in y.
DriverEstimatesReport driver_estimates_check(const SigmaModel& model, const MarketSpec& spec,
                                             double delta, double rho, int n_samples,
                                             std::uint64_t seed);

}  // namespace rfp::bsde
