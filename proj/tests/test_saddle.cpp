#include <cmath>
#include <stdexcept>
#include <vector>

#include <doctest.h>

#include "rfp/philox.hpp"
#include "rfp/saddle.hpp"

using namespace rfp::saddle;
using rfp::market::MarketSpec;

namespace {

MarketSpec make_1d(double r, double b_lo, double b_hi, double v_lo, double v_hi, double p_lo,
                   double p_hi) {
  MarketSpec m;
  m.r = r;
  m.d = 1;
  m.b_lo = Vec::Constant(1, b_lo);
  m.b_hi = Vec::Constant(1, b_hi);
  m.cov_vertices = {Mat::Constant(1, 1, v_lo), Mat::Constant(1, 1, v_hi)};
  m.p_lo = Vec::Constant(1, p_lo);
  m.p_hi = Vec::Constant(1, p_hi);
  m.validate();
  return m;
}

MarketSpec fig_market(double b_lo, double b_hi) {
  return make_1d(0.2, b_lo, b_hi, 0.01, 0.25, -0.5, 1.5);
}

/// Random well-posed 1-D market; u(k) indexes one shared uniform stream.
MarketSpec random_1d(std::uint64_t seed, std::uint64_t n, double& delta) {
  auto u = [&](std::uint64_t k) { return rfp::philox::uniform_at(seed, n, k); };
  const double r = 0.3 * u(0);
  double b1 = -0.5 + 1.3 * u(1), b2 = -0.5 + 1.3 * u(2);
  if (b1 > b2) std::swap(b1, b2);
  const double v1 = 0.01 + 0.49 * u(3), v2 = 0.01 + 0.49 * u(4);
  delta = 0.1 + 0.8 * u(5);
  return make_1d(r, b1, b2, std::min(v1, v2), std::max(v1, v2), -2.0 * u(6) - 0.05,
                 2.0 * u(7) + 0.05);
}

}  // namespace

TEST_SUITE_BEGIN("saddle");

TEST_CASE("objective value at a fixed point") {
  const MarketSpec m = fig_market(0.3, 0.8);
  // 0.5*0.5*(-0.5)*0.04*0.25 + 0.5*0.2*0.1 + 0.5*0.2 = 0.10875
  const double g = eval_G(m, 0.5, Vec::Constant(1, 0.2), Vec::Constant(1, 0.3),
                          Mat::Constant(1, 1, 0.25));
  CHECK_LT(std::abs(g - 0.10875), 1e-15);
}

TEST_CASE("canonical single-asset saddle points") {
  struct Want {
    double b_lo, b_hi, p, b, value;
  };
  const Want wants[3] = {{0.1, 0.5, 0.0, 0.2, 0.1},
                         {0.3, 0.8, 0.8, 0.3, 0.12},
                         {-0.1, 0.1, -0.5, 0.1, 0.1171875}};
  for (const auto& w : wants) {
    const auto sg = solve_saddle_G(fig_market(w.b_lo, w.b_hi), 0.5);
    CHECK_LT(std::abs(sg.p_star(0) - w.p), 1e-12);
    CHECK_LT(std::abs(sg.b_star(0) - w.b), 1e-12);
    CHECK_LT(std::abs(sg.sigma_star(0, 0) - 0.25), 1e-12);
    CHECK_LT(std::abs(sg.value - w.value), 1e-12);
    CHECK_LT(std::abs(std::sqrt(sg.sigma_star(0, 0)) - 0.5), 1e-12);
  }
}

TEST_CASE("portfolio clipped at the box boundary") {
  const auto sg = solve_saddle_G(make_1d(0.2, 0.4, 0.8, 0.01, 0.25, -0.5, 1.0), 0.5);
  CHECK_LT(std::abs(sg.p_star(0) - 1.0), 1e-12);
  CHECK_LT(std::abs(sg.value - 0.16875), 1e-12);
}

TEST_CASE("degenerate box with r inside keeps zero investment") {
  const auto sg = solve_saddle_G(make_1d(0.2, 0.2, 0.2, 0.01, 0.25, -0.5, 1.5), 0.5);
  CHECK_LT(std::abs(sg.p_star(0)), 1e-12);
  CHECK_LT(std::abs(sg.value - 0.1), 1e-12);
}

TEST_CASE("worst-case parameters for a fixed portfolio") {
  const MarketSpec m = fig_market(0.3, 0.8);
  const auto at_zero = inner_min_G(m, 0.5, Vec::Zero(1));
  CHECK_LT(std::abs(at_zero.b_star(0) - 0.55), 1e-15);  // midpoint
  REQUIRE_EQ(at_zero.tie_indices.size(), 1u);
  CHECK_EQ(at_zero.tie_indices[0], 0);

  const auto at_long = inner_min_G(m, 0.5, Vec::Constant(1, 1.0));
  CHECK_EQ(at_long.b_star(0), 0.3);                 // long position: lower drift is worse
  CHECK_EQ(at_long.sigma_star(0, 0), 0.25);         // higher variance is worse
  CHECK(at_long.tie_indices.empty());

  const auto at_short = inner_min_G(m, 0.5, Vec::Constant(1, -1.0));
  CHECK_EQ(at_short.b_star(0), 0.8);                // short position: higher drift is worse
  CHECK_EQ(at_short.sigma_star(0, 0), 0.25);
}

TEST_CASE("multi-asset saddle with no drift uncertainty matches the closed form") {
  MarketSpec m;
  m.r = 0.2;
  m.d = 2;
  m.b_lo = m.b_hi = (Vec(2) << 0.3, 0.4).finished();
  m.cov_vertices = {Mat::Identity(2, 2)};
  m.p_lo = Vec::Constant(2, -10.0);
  m.p_hi = Vec::Constant(2, 10.0);
  m.validate();
  const auto sg = solve_saddle_G(m, 0.5);
  CHECK_LT(std::abs(sg.p_star(0) - 0.2), 1e-6);
  CHECK_LT(std::abs(sg.p_star(1) - 0.4), 1e-6);
  CHECK_LT(std::abs(sg.value - 0.125), 1e-9);
  CHECK_LT(sg.residual, 1e-7);
}

TEST_CASE("multi-dimensional solver equals the 1-D closed form on random instances") {
  for (std::uint64_t n = 0; n < 30; ++n) {
    double delta = 0.5;
    const MarketSpec m = random_1d(424242, n, delta);
    const auto exact = solve_saddle_G_1d(m, delta);
    const auto numeric = solve_saddle_G_nd(m, delta, 1e-9);
    CHECK_LT(std::abs(numeric.value - exact.value), 1e-6);
  }
}

TEST_CASE("two-asset saddle value agrees with a brute-force grid") {
  MarketSpec m;
  m.r = 0.2;
  m.d = 2;
  m.b_lo = (Vec(2) << 0.25, 0.30).finished();
  m.b_hi = (Vec(2) << 0.35, 0.50).finished();
  Mat v2 = (Mat(2, 2) << 0.30, 0.05, 0.05, 0.25).finished();
  m.cov_vertices = {0.2 * Mat::Identity(2, 2), v2};
  m.p_lo = Vec::Constant(2, -1.0);
  m.p_hi = Vec::Constant(2, 1.0);
  m.validate();
  const double delta = 0.5;

  double best = -1e300;
  const int n_grid = 200;
  Vec p(2);
  for (int i = 0; i <= n_grid; ++i) {
    p(0) = -1.0 + 2.0 * i / n_grid;
    for (int j = 0; j <= n_grid; ++j) {
      p(1) = -1.0 + 2.0 * j / n_grid;
      best = std::max(best, inner_min_G(m, delta, p).value);
    }
  }
  const auto sg = solve_saddle_G(m, delta);
  CHECK_GT(sg.value, best - 1e-9);      // grid cannot beat the true max
  CHECK_LT(sg.value, best + 5e-4);      // and lies within grid resolution
  CHECK_LT(sg.residual, 1e-7);
}

TEST_CASE("saddle certificate on random instances") {
  for (std::uint64_t n = 0; n < 20; ++n) {
    double delta = 0.5;
    const MarketSpec m = random_1d(777, n, delta);
    const auto sg = solve_saddle_G(m, delta);
    CHECK_GT(sg.value, delta * m.r - 1e-12);  // playing p = 0 is always available
    // inner value at any portfolio is a lower bound; objective at the saddle
    // parameters is an upper bound for any feasible (b, S).
    auto u = [&](std::uint64_t k) { return rfp::philox::uniform_at(99, n, k); };
    Vec pr = Vec::Constant(1, m.p_lo(0) + (m.p_hi(0) - m.p_lo(0)) * u(0));
    CHECK_LT(inner_min_G(m, delta, pr).value, sg.value + 1e-10);
    Vec br = Vec::Constant(1, m.b_lo(0) + (m.b_hi(0) - m.b_lo(0)) * u(1));
    Mat Sr = Mat::Constant(1, 1, m.sigma_sq_lo() + (m.sigma_sq_hi() - m.sigma_sq_lo()) * u(2));
    CHECK_GT(eval_G(m, delta, sg.p_star, br, Sr), sg.value - 1e-10);
  }
}

TEST_CASE("projection onto the volatility image of the portfolio box") {
  const Mat sigma = Mat::Constant(1, 1, 0.5);
  const Vec p_lo = Vec::Constant(1, -0.5), p_hi = Vec::Constant(1, 1.5);

  const auto hit_hi = project_onto_sigma_pi(sigma, p_lo, p_hi, Vec::Constant(1, 1.0));
  CHECK_LT(std::abs(hit_hi.u(0) - 0.75), 1e-12);
  CHECK_LT(std::abs(hit_hi.p(0) - 1.5), 1e-12);
  CHECK_LT(std::abs(hit_hi.dist - 0.25), 1e-12);

  const auto hit_lo = project_onto_sigma_pi(sigma, p_lo, p_hi, Vec::Constant(1, -0.3));
  CHECK_LT(std::abs(hit_lo.u(0) + 0.25), 1e-12);
  CHECK_LT(std::abs(hit_lo.p(0) + 0.5), 1e-12);

  const auto inside = project_onto_sigma_pi(sigma, p_lo, p_hi, Vec::Constant(1, 0.1));
  CHECK_LT(std::abs(inside.u(0) - 0.1), 1e-12);
  CHECK_LT(inside.dist, 1e-12);

  const auto boxy = project_onto_sigma_pi(Mat::Identity(2, 2), Vec::Constant(2, -1.0),
                                          Vec::Constant(2, 1.0), (Vec(2) << 2.0, 0.5).finished());
  CHECK_LT(std::abs(boxy.u(0) - 1.0), 1e-10);
  CHECK_LT(std::abs(boxy.u(1) - 0.5), 1e-10);
  CHECK_LT(std::abs(boxy.dist - 1.0), 1e-10);

  CHECK_THROWS_AS(project_onto_sigma_pi(Mat::Zero(1, 1), p_lo, p_hi, Vec::Constant(1, 1.0)),
                  std::invalid_argument);
}

TEST_CASE("dynamic-game Hamiltonian closed form") {
  const MarketSpec m = fig_market(0.3, 0.8);
  const Mat sigma = Mat::Constant(1, 1, 0.5);

  const auto pos = solve_saddle_H(m, 0.5, 0.0, sigma, Vec::Constant(1, 0.2));
  CHECK_LT(std::abs(pos.value - 0.1796875), 1e-12);
  CHECK_LT(std::abs(pos.p_star(0) - 1.5), 1e-12);
  CHECK_LT(std::abs(pos.b_star(0) - 0.3), 1e-12);
  CHECK(pos.tie_report.empty());

  const auto zero = solve_saddle_H(m, 0.5, 0.0, sigma, Vec::Zero(1));
  CHECK_LT(std::abs(zero.value - 0.12), 1e-12);
  CHECK_LT(std::abs(zero.p_star(0) - 0.8), 1e-12);
  CHECK_LT(std::abs(zero.b_star(0) - 0.3), 1e-12);

  const auto neg = solve_saddle_H(m, 0.5, 0.0, sigma, Vec::Constant(1, -0.7));
  CHECK_LT(std::abs(neg.value - 0.1), 1e-12);
  CHECK_LT(std::abs(neg.p_star(0)), 1e-12);
  CHECK_LT(std::abs(neg.b_star(0) - 0.55), 1e-12);
  REQUIRE_EQ(neg.tie_report.size(), 1u);
  CHECK_EQ(neg.tie_report[0], 0);

  // the reported saddle pair reproduces the value through the bilinear form
  for (const auto* s : {&pos, &zero, &neg})
    CHECK_LT(std::abs(eval_H_bilinear(m, 0.5, sigma, s->z, s->p_star, s->b_star) - s->value),
             1e-12);
}

TEST_CASE("value-only fast path equals the full solver") {
  for (std::uint64_t n = 0; n < 200; ++n) {
    double delta = 0.5;
    const MarketSpec m = random_1d(31415, n, delta);
    auto u = [&](std::uint64_t k) { return rfp::philox::uniform_at(8888, n, k); };
    const double s = 0.05 + 0.9 * u(0);
    const double z = -3.0 + 6.0 * u(1);
    const auto full = solve_saddle_H(m, delta, 0.0, Mat::Constant(1, 1, s),
                                     Vec::Constant(1, z));
    CHECK_EQ(saddle_H_value_1d(m, delta, s, z), full.value);
  }
}

TEST_CASE("subgradient solver cross-checks the closed form") {
  for (std::uint64_t n = 0; n < 30; ++n) {
    double delta = 0.5;
    const MarketSpec m = random_1d(5555, n, delta);
    auto u = [&](std::uint64_t k) { return rfp::philox::uniform_at(6666, n, k); };
    const double s = 0.05 + 0.9 * u(0);
    const double z = -2.0 + 4.0 * u(1);
    const auto exact = solve_saddle_H(m, delta, 0.0, Mat::Constant(1, 1, s),
                                      Vec::Constant(1, z));
    const auto sub = solve_saddle_H_subgradient(m, delta, 0.0, Mat::Constant(1, 1, s),
                                                Vec::Constant(1, z), 1e-10);
    CHECK_LT(std::abs(sub.value - exact.value), 1e-6);
  }
}

TEST_CASE("two-asset Hamiltonian agrees with a brute-force grid") {
  MarketSpec m;
  m.r = 0.1;
  m.d = 2;
  m.b_lo = (Vec(2) << 0.15, 0.20).finished();
  m.b_hi = (Vec(2) << 0.25, 0.40).finished();
  m.cov_vertices = {Mat::Identity(2, 2)};
  m.p_lo = Vec::Constant(2, -1.0);
  m.p_hi = Vec::Constant(2, 1.0);
  m.validate();
  const Mat sigma = Mat::Identity(2, 2);
  const Vec z = (Vec(2) << 0.3, -0.2).finished();
  const double delta = 0.5;

  double best = -1e300;
  const int n_grid = 200;
  Vec p(2), b(2);
  for (int i = 0; i <= n_grid; ++i) {
    p(0) = -1.0 + 2.0 * i / n_grid;
    for (int j = 0; j <= n_grid; ++j) {
      p(1) = -1.0 + 2.0 * j / n_grid;
      for (int k = 0; k < 2; ++k) b(k) = p(k) > 0 ? m.b_lo(k) : m.b_hi(k);
      best = std::max(best, eval_H_bilinear(m, delta, sigma, z, p, b));
    }
  }
  const auto sh = solve_saddle_H(m, delta, 0.0, sigma, z);
  CHECK_GT(sh.value, best - 1e-9);
  CHECK_LT(sh.value, best + 5e-4);
  CHECK_LT(sh.residual, 1e-6);
}

TEST_CASE("growth bound of the Hamiltonian in the adjoint variable") {
  for (std::uint64_t n = 0; n < 100; ++n) {
    double delta = 0.5;
    const MarketSpec m = random_1d(123123, n, delta);
    auto u = [&](std::uint64_t k) { return rfp::philox::uniform_at(321321, n, k); };
    const double s = 0.1 + 0.8 * u(0);
    const Mat sigma = Mat::Constant(1, 1, s);
    const double K = lipschitz_K_H(m, delta, sigma);
    for (int rep = 0; rep < 5; ++rep) {
      const double z1 = -4.0 + 8.0 * u(1 + 2 * rep);
      const double z2 = -4.0 + 8.0 * u(2 + 2 * rep);
      const double h1 = saddle_H_value_1d(m, delta, s, z1);
      const double h2 = saddle_H_value_1d(m, delta, s, z2);
      const double rhs = K * (1.0 + std::abs(z1) + std::abs(z2)) * std::abs(z1 - z2);
      CHECK_LT(std::abs(h1 - h2), rhs + 1e-10 * (1.0 + std::abs(h1) + std::abs(h2)));
    }
    // zero investment is always available: H(t, z) >= delta r
    CHECK_GT(saddle_H_value_1d(m, delta, s, 0.0), delta * m.r - 1e-12);
  }
}

TEST_SUITE_END();
