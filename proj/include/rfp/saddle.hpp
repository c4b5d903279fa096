#pragma once

#include <vector>

#include <Eigen/Dense>

#include "rfp/market.hpp"

namespace rfp::saddle {

using market::MarketSpec;
using market::Mat;
using market::Vec;

/// Objective of the static market game:
///   G(p; b, S) = delta(delta-1)/2 p^T S p + delta p^T (b - r 1) + delta r.
double eval_G(const MarketSpec& spec, double delta, const Vec& p, const Vec& b, const Mat& S);

struct InnerMinG {
  double value = 0.0;
  Vec b_star;
  Mat sigma_star;                // covariance selection (a hull vertex)
  int vertex_index = -1;
  std::vector<int> tie_indices;  // coordinates with p_i = 0: any drift is optimal
};

/// Worst-case model parameters for a fixed portfolio p: the minimizing drift
/// is the bang-bang selection b_i = b_lo when p_i > 0, b_hi when p_i < 0
/// (interval midpoint reported and the tie flagged when p_i = 0), and the
/// minimizing covariance is the hull vertex maximizing p^T S p (the
/// quadratic coefficient is negative). Vertex ties resolve to lowest index.
InnerMinG inner_min_G(const MarketSpec& spec, double delta, const Vec& p);

struct SaddleSolutionG {
  double value = 0.0;
  Vec p_star;
  Vec b_star;
  Mat sigma_star;
  double residual = 0.0;   // duality-gap certificate: max_p G(p; b~, S~) - value
  int iterations = 0;
};

/// Closed-form saddle point for d == 1 (three drift regimes split by the
/// position of r relative to [b_lo, b_hi]).
SaddleSolutionG solve_saddle_G_1d(const MarketSpec& spec, double delta);

/// General-dimension saddle by projected supergradient ascent on the concave
/// value function p -> inner_min_G(p), with an adaptive Polyak step, exact
/// coordinate polish, and a duality-gap certificate from the exact inner
/// optimizers. Throws SolverError("unbounded saddle problem") if the value
/// is detected to grow without bound along an unbounded direction of Pi.
SaddleSolutionG solve_saddle_G_nd(const MarketSpec& spec, double delta, double tol = 1e-9,
                                  int max_iter = 20000);

SaddleSolutionG solve_saddle_G(const MarketSpec& spec, double delta, double tol = 1e-9);

struct ProjResult {
  Vec u;           // projection of v onto sigma^T Pi
  Vec p;           // a pre-image: u = sigma^T p, p in Pi
  double dist = 0.0;
  int iterations = 0;
};

/// Euclidean projection onto the linear image sigma^T Pi of the portfolio
/// box, by projected gradient on p with step 1/lambda_max(sigma sigma^T),
/// stopping on the gradient-mapping norm. Exact clamp when d == 1.
/// Throws std::invalid_argument on singular sigma.
ProjResult project_onto_sigma_pi(const Mat& sigma, const Vec& p_lo, const Vec& p_hi,
                                 const Vec& v, double tol = 1e-12, int max_iter = 200000);

struct SaddleSolutionH {
  double t = 0.0;
  Vec z;
  double value = 0.0;
  Vec p_star;
  Vec b_star;
  double residual = 0.0;
  int iterations = 0;
  std::vector<int> tie_report;  // coordinates where p*_i = 0 (b~_i non-unique)
};

/// Dynamic-game Hamiltonian at a fixed volatility sigma_t and adjoint z:
///   H(p; b) = delta(delta-1)/2 |sigma^T p|^2 + delta p^T (b - r 1)
///             + delta p^T sigma z + delta r,
/// maximized over p in Pi and minimized over b in the drift box. Note the
/// |z|^2/2 term of the BSDE driver is NOT part of H; it lives in the driver.
double eval_H_bilinear(const MarketSpec& spec, double delta, const Mat& sigma, const Vec& z,
                       const Vec& p, const Vec& b);

/// Saddle value of the dynamic-game Hamiltonian. d == 1 uses the closed form
/// (piecewise-quadratic scalar objective, minimizer clamped onto sigma^T Pi);
/// d >= 2 uses projected subgradient with a duality-gap certificate.
SaddleSolutionH solve_saddle_H(const MarketSpec& spec, double delta, double t, const Mat& sigma,
                               const Vec& z, double tol = 1e-10);

/// Force the subgradient path even when a closed form exists (cross-checks).
SaddleSolutionH solve_saddle_H_subgradient(const MarketSpec& spec, double delta, double t,
                                           const Mat& sigma, const Vec& z, double tol = 1e-10,
                                           int max_iter = 20000);

/// Value-only scalar closed form (d == 1), allocation-free for Monte Carlo
/// hot loops. Identical to solve_saddle_H(...).value for 1x1 sigma.
double saddle_H_value_1d(const MarketSpec& spec, double delta, double sigma_scalar, double z);

/// Constant K in the growth bound
///   |H(t,z1) - H(t,z2)| <= K (1 + |z1| + |z2|) |z1 - z2|,
/// derived from model bounds: with M = |sigma^{-1}|_2 *
/// sqrt(sum_i max(|b_lo_i - r|, |b_hi_i - r|)^2), K = delta/(1-delta) *
/// max(1, M). (|grad_z H| <= delta/(1-delta) (M + |z|) pointwise.)
double lipschitz_K_H(const MarketSpec& spec, double delta, const Mat& sigma);

}  // namespace rfp::saddle
