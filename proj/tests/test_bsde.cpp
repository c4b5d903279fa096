#include <cmath>
#include <stdexcept>

#include <doctest.h>

#include "rfp/bsde.hpp"

using namespace rfp::bsde;
using rfp::market::MarketSpec;

namespace {

MarketSpec fig2_market() {
  MarketSpec m;
  m.r = 0.2;
  m.d = 1;
  m.b_lo = Vec::Constant(1, 0.3);
  m.b_hi = Vec::Constant(1, 0.8);
  m.cov_vertices = {Mat::Constant(1, 1, 0.01), Mat::Constant(1, 1, 1.0)};
  m.p_lo = Vec::Constant(1, -0.5);
  m.p_hi = Vec::Constant(1, 1.5);
  m.validate();
  return m;
}

}  // namespace

TEST_SUITE_BEGIN("bsde");

TEST_CASE("driver value, uniform bound and affinity in y") {
  const MarketSpec m = fig2_market();
  const auto model = SigmaModel::constant(Mat::Constant(1, 1, 0.5));
  const double rho = 0.1;

  CHECK_LT(std::abs(driver(model, m, 0.5, rho, 0.0, 0.0, Vec::Zero(1)) - 0.12), 1e-14);
  CHECK_LT(std::abs(driver(model, m, 0.5, rho, 0.0, 1.2, Vec::Zero(1))), 1e-14);

  // F(t, y, z) - F(t, y', z) = -rho (y - y') up to one rounding of each side
  for (double z : {-0.7, 0.0, 0.4}) {
    const Vec zv = Vec::Constant(1, z);
    const double f1 = driver(model, m, 0.5, rho, 0.3, 0.7, zv);
    const double f2 = driver(model, m, 0.5, rho, 0.3, -0.9, zv);
    CHECK_LT(std::abs((f1 - f2) + rho * (0.7 - (-0.9))), 1e-14);
  }
}

TEST_CASE("constant volatility: truncated value matches the closed form") {
  const MarketSpec m = fig2_market();
  const auto model = SigmaModel::constant(Mat::Constant(1, 1, 0.5));
  const double rho = 0.1;

  const auto sol10 = solve_bsde_deterministic_sigma(model, m, 0.5, rho, 10.0, 0.01);
  CHECK_LT(std::abs(sol10.Y.front() - 0.75854467059426921), 1e-8);
  CHECK_LT(std::abs(sol10.Y.back()), 1e-15);
  CHECK_LT(std::abs(sol10.sup_bound - 1.2), 1e-12);
  CHECK_LT(std::abs(sol10.tail_estimate.front() - 1.2 * std::exp(-1.0)), 1e-12);
  for (const auto& z : sol10.Z) CHECK_EQ(z.norm(), 0.0);

  const auto sol50 = solve_bsde_deterministic_sigma(model, m, 0.5, rho, 50.0, 0.01);
  CHECK_LT(std::abs(sol50.Y.front() - 1.1919144636010974), 1e-8);

  const auto fast = solve_bsde_deterministic_sigma(model, m, 0.5, 5.0, 10.0, 0.01);
  CHECK_LT(std::abs(fast.sup_bound - 0.024), 1e-12);
  CHECK_LT(std::abs(fast.Y.front() - 0.024 * (1.0 - std::exp(-50.0))), 1e-10);
}

TEST_CASE("piecewise volatility: breakpoint-aware integration") {
  // sigma = 0.5 on [0,1) (H = 0.12), sigma = 1.0 on [1,10] (H = 0.105):
  // Y(1) = 1.05 (1 - e^{-0.9}), Y(0) = 1.2 + (Y(1) - 1.2) e^{-0.1}.
  const MarketSpec m = fig2_market();
  const auto model = SigmaModel::deterministic(
      [](double t) { return Mat::Constant(1, 1, t < 1.0 ? 0.5 : 1.0); }, {1.0});

  for (double dt : {0.01, 0.03}) {  // 1.0 is off the 0.03 grid: must be inserted
    const auto sol = solve_bsde_deterministic_sigma(model, m, 0.5, 0.1, 10.0, dt);
    CHECK_LT(std::abs(sol.Y.front() - 0.67800097406459163), 1e-8);
    // locate the t = 1 node and check the switch value
    double y1 = 1e300;
    for (std::size_t i = 0; i < sol.times.size(); ++i)
      if (std::abs(sol.times[i] - 1.0) < 1e-12) y1 = sol.Y[i];
    CHECK_LT(std::abs(y1 - 0.62310185727237093), 1e-8);
    CHECK_LT(std::abs(sol.sup_bound - 1.2), 1e-12);
  }
}

TEST_CASE("integrator converges at fourth order on the smooth problem") {
  const MarketSpec m = fig2_market();
  const auto model = SigmaModel::constant(Mat::Constant(1, 1, 0.5));
  const double exact = 1.2 * (1.0 - std::exp(-1.0));
  const double e1 =
      std::abs(solve_bsde_deterministic_sigma(model, m, 0.5, 0.1, 10.0, 0.5).Y.front() - exact);
  const double e2 =
      std::abs(solve_bsde_deterministic_sigma(model, m, 0.5, 0.1, 10.0, 0.25).Y.front() - exact);
  CHECK_GT(e1 / e2, 10.0);
  CHECK_LT(e1 / e2, 24.0);
}

TEST_CASE("degenerate factor reproduces the deterministic solver") {
  const MarketSpec m = fig2_market();
  const Mat sigma = Mat::Constant(1, 1, 0.5);
  const auto det = SigmaModel::constant(sigma);
  const auto flat = SigmaModel::markov_factor(
      1.0, 0.0, 0.0, 0.0, [sigma](double) { return sigma; }, 2.0);

  const auto ode = solve_bsde_deterministic_sigma(det, m, 0.5, 0.1, 5.0, 0.02);
  const auto mc = solve_bsde_lsmc(flat, m, 0.5, 0.1, 5.0, 0.02, 20000, 4, 91);
  // eta = 0: only the implicit-Euler time bias separates the two
  CHECK_LT(std::abs(mc.Y.front() - ode.Y.front()), 2e-3);
  CHECK_LT(mc.y0_std_error, 1e-10);
  for (const auto& z : mc.Z) CHECK_LT(z.norm(), 1e-10);
}

TEST_CASE("stochastic factor with a constant map stays deterministic") {
  const MarketSpec m = fig2_market();
  const Mat sigma = Mat::Constant(1, 1, 0.5);
  const auto model = SigmaModel::markov_factor(
      1.0, 0.0, 0.5, 0.0, [sigma](double) { return sigma; }, 2.0);
  const auto det = SigmaModel::constant(sigma);

  const auto mc = solve_bsde_lsmc(model, m, 0.5, 0.1, 5.0, 0.02, 20000, 4, 91);
  const auto ode = solve_bsde_deterministic_sigma(det, m, 0.5, 0.1, 5.0, 0.02);
  CHECK_LT(std::abs(mc.Y.front() - ode.Y.front()), std::max(3.0 * mc.y0_std_error, 2e-3));
  CHECK_EQ(mc.basis_size_used, 4);
}

TEST_CASE("factor-driven volatility: diagnostics, determinism, bounds") {
  const MarketSpec m = fig2_market();
  const Mat base = Mat::Constant(1, 1, 0.5);
  auto map = [base](double v) -> Mat { return base * std::exp(0.1 * v); };
  const double bound = 2.0 * std::exp(0.1 * 3.0);  // |sigma^{-1}| over +-3 sd of the factor
  const auto model = SigmaModel::markov_factor(1.0, 0.0, 0.5, 0.0, map, bound);

  const auto a = solve_bsde_lsmc(model, m, 0.5, 0.1, 5.0, 0.05, 4000, 4, 2024);
  const auto b = solve_bsde_lsmc(model, m, 0.5, 0.1, 5.0, 0.05, 4000, 4, 2024);
  CHECK_EQ(a.Y.front(), b.Y.front());          // bit-identical rerun
  CHECK_EQ(a.z_sumsq_weighted, b.z_sumsq_weighted);

  CHECK_GT(a.z_sumsq_unweighted, 0.0);
  CHECK_GT(a.z_sumsq_unweighted + 1e-18, a.z_sumsq_weighted);
  for (std::size_t i = 0; i < a.Y.size(); ++i) {
    CHECK_LT(a.Y[i], a.sup_bound * 1.02 + 1e-6);
    CHECK_GT(a.Y[i], -0.01);
  }
  // near the constant-sigma value: the factor only wiggles sigma by a few %
  const auto det = SigmaModel::constant(base);
  const auto ode = solve_bsde_deterministic_sigma(det, m, 0.5, 0.1, 5.0, 0.05);
  CHECK_LT(std::abs(a.Y.front() - ode.Y.front()), 0.05);

  // oversized basis on few paths: conditioning reduction must not crash
  const auto c = solve_bsde_lsmc(model, m, 0.5, 0.1, 2.0, 0.1, 500, 6, 7);
  CHECK_GT(c.basis_size_used, 0);
  const auto ode2 = solve_bsde_deterministic_sigma(det, m, 0.5, 0.1, 2.0, 0.1);
  CHECK_LT(std::abs(c.Y.front() - ode2.Y.front()), 0.05);
}

TEST_CASE("model construction rejects invalid inputs") {
  CHECK_THROWS_AS(SigmaModel::markov_factor(-1.0, 0.0, 0.5, 0.0,
                                            [](double) { return Mat::Identity(1, 1); }, 1.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(SigmaModel::markov_factor(1.0, 0.0, -0.5, 0.0,
                                            [](double) { return Mat::Identity(1, 1); }, 1.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(SigmaModel::markov_factor(1.0, 0.0, 0.5, 0.0, nullptr, 1.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(SigmaModel::markov_factor(1.0, 0.0, 0.5, 0.0,
                                            [](double) { return Mat::Identity(1, 1); }, 0.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(SigmaModel::deterministic([](double) { return Mat::Zero(1, 1); }),
                  std::invalid_argument);
}

TEST_CASE("driver estimates hold with zero violations") {
  const MarketSpec m = fig2_market();
  const auto det = SigmaModel::constant(Mat::Constant(1, 1, 0.5));
  const auto rep = driver_estimates_check(det, m, 0.5, 0.1, 2000, 5150);
  CHECK_EQ(rep.lipschitz_violations, 0);
  CHECK_EQ(rep.affinity_violations, 0);
  CHECK(rep.f00_within_K);
  CHECK_LT(rep.max_growth_ratio, 1.0 + 1e-12);
  CHECK_LT(rep.max_affinity_error, 1e-10);
  CHECK_GT(rep.K, 0.0);

  const Mat base = Mat::Constant(1, 1, 0.5);
  const auto fac = SigmaModel::markov_factor(
      1.0, 0.0, 0.5, 0.0, [base](double v) -> Mat { return base * std::exp(0.1 * v); },
      2.0 * std::exp(0.1 * 3.0));
  const auto rep2 = driver_estimates_check(fac, m, 0.5, 0.1, 2000, 5151);
  CHECK_EQ(rep2.lipschitz_violations, 0);
  CHECK_EQ(rep2.affinity_violations, 0);
  CHECK(rep2.f00_within_K);
}

TEST_SUITE_END();
