#include "rfp/market.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>

#include "rfp/errors.hpp"
#include "rfp/philox.hpp"

namespace rfp::market {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double json_bound(const nlohmann::json& v) {
  if (v.is_string()) {
    const std::string s = v.get<std::string>();
    if (s == "inf" || s == "+inf") return kInf;
    if (s == "-inf") return -kInf;
    throw rfp::IoError("unrecognized bound string: " + s);
  }
  return v.get<double>();
}

nlohmann::json bound_to_json(double v) {
  if (v == kInf) return "inf";
  if (v == -kInf) return "-inf";
  return v;
}

bool is_symmetric(const Mat& S, double tol) {
  return (S - S.transpose()).cwiseAbs().maxCoeff() <= tol;
}

double min_eigenvalue(const Mat& S) {
  Eigen::SelfAdjointEigenSolver<Mat> es(S, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

/// Minimizes |A w - s|^2 over the simplex {w >= 0, sum w = 1} where the
/// columns of A are the vectorized hull vertices and s is the vectorized
/// target. Active-set method on the nonnegativity constraints; the equality
/// constraint is kept in the KKT system. Terminates because the objective
/// strictly decreases across iterations.
double simplex_lsq_distance(const Mat& A, const Vec& s) {
  const int m = static_cast<int>(A.cols());
  if (m == 1) return (A.col(0) - s).norm();

  std::vector<bool> active(m, true);  // "active" = allowed nonzero
  Vec w = Vec::Constant(m, 1.0 / m);

  auto solve_free = [&](const std::vector<bool>& freev) {
    // Solve min |A_F w_F - s|^2 s.t. sum w_F = 1 via KKT:
    // [2 A_F^T A_F, 1; 1^T, 0] [w_F; mu] = [2 A_F^T s; 1].
    std::vector<int> idx;
    for (int i = 0; i < m; ++i)
      if (freev[i]) idx.push_back(i);
    const int k = static_cast<int>(idx.size());
    Mat Af(A.rows(), k);
    for (int i = 0; i < k; ++i) Af.col(i) = A.col(idx[i]);
    Mat K = Mat::Zero(k + 1, k + 1);
    K.topLeftCorner(k, k) = 2.0 * Af.transpose() * Af;
    K.topRightCorner(k, 1).setOnes();
    K.bottomLeftCorner(1, k).setOnes();
    Vec rhs = Vec::Zero(k + 1);
    rhs.head(k) = 2.0 * Af.transpose() * s;
    rhs(k) = 1.0;
    // Vertices may coincide or be affinely dependent; the minimum-norm
    // solution of the (possibly singular) KKT system still yields a valid
    // minimizer of the convex program.
    Vec sol = K.completeOrthogonalDecomposition().solve(rhs);
    Vec wf = Vec::Zero(m);
    for (int i = 0; i < k; ++i) wf(idx[i]) = sol(i);
    return wf;
  };

  for (int iter = 0; iter < 4 * m + 16; ++iter) {
    Vec cand = solve_free(active);
    double min_c = 0.0;
    int min_i = -1;
    for (int i = 0; i < m; ++i) {
      if (active[i] && cand(i) < min_c) {
        min_c = cand(i);
        min_i = i;
      }
    }
    if (min_i < 0) {
      w = cand;
      // Check the dual condition on dropped coordinates: gradient of the
      // Lagrangian must be >= 0 for variables at their lower bound.
      Vec g = 2.0 * A.transpose() * (A * w - s);
      double mu = kInf;
      for (int i = 0; i < m; ++i)
        if (active[i]) mu = std::min(mu, g(i));
      int worst = -1;
      double worst_v = -1e-12 * (1.0 + g.cwiseAbs().maxCoeff());
      for (int i = 0; i < m; ++i) {
        if (!active[i] && g(i) - mu < worst_v) {
          worst_v = g(i) - mu;
          worst = i;
        }
      }
      if (worst < 0) break;
      active[worst] = true;
      continue;
    }
    // Step from w toward cand until the first variable hits zero, then fix
    // that variable at zero.
    double alpha = 1.0;
    int blocker = min_i;
    for (int i = 0; i < m; ++i) {
      if (active[i] && cand(i) < 0.0 && w(i) > cand(i)) {
        double a = w(i) / (w(i) - cand(i));
        if (a < alpha) {
          alpha = a;
          blocker = i;
        }
      }
    }
    w = w + alpha * (cand - w);
    w(blocker) = 0.0;
    active[blocker] = false;
  }
  w = w.cwiseMax(0.0);
  w /= w.sum();
  return (A * w - s).norm();
}

}  // namespace

void MarketSpec::validate() const {
  if (!(r >= 0.0) || !std::isfinite(r)) throw std::invalid_argument("r must be finite and >= 0");
  if (d < 1) throw std::invalid_argument("d must be >= 1");
  auto check_len = [&](const Vec& v, const char* name) {
    if (v.size() != d) throw std::invalid_argument(std::string(name) + " must have length d");
  };
  check_len(b_lo, "b_lo");
  check_len(b_hi, "b_hi");
  check_len(p_lo, "p_lo");
  check_len(p_hi, "p_hi");
  for (int i = 0; i < d; ++i) {
    if (!std::isfinite(b_lo(i)) || !std::isfinite(b_hi(i)))
      throw std::invalid_argument("drift bounds must be finite");
    if (b_lo(i) > b_hi(i)) throw std::invalid_argument("b_lo must be <= b_hi");
    if (p_lo(i) > p_hi(i)) throw std::invalid_argument("p_lo must be <= p_hi");
    if (p_lo(i) > 0.0 || p_hi(i) < 0.0)
      throw std::invalid_argument("Pi must contain the zero portfolio");
    if (std::isnan(p_lo(i)) || std::isnan(p_hi(i)))
      throw std::invalid_argument("p bounds must not be NaN");
  }
  if (cov_vertices.empty()) throw std::invalid_argument("cov_vertices must be nonempty");
  bool any_pd = false;
  for (const Mat& S : cov_vertices) {
    if (S.rows() != d || S.cols() != d)
      throw std::invalid_argument("cov vertices must be d x d");
    if (!is_symmetric(S, 1e-10 * (1.0 + S.cwiseAbs().maxCoeff())))
      throw std::invalid_argument("cov vertices must be symmetric");
    const double lam = min_eigenvalue(S);
    if (lam < -1e-12 * (1.0 + S.cwiseAbs().maxCoeff()))
      throw std::invalid_argument("cov vertices must be positive semidefinite");
    if (lam > 0.0) any_pd = true;
  }
  if (!any_pd)
    throw std::invalid_argument("at least one cov vertex must be positive definite");
}

bool MarketSpec::pi_contains(const Vec& p, double tol) const {
  for (int i = 0; i < d; ++i)
    if (p(i) < p_lo(i) - tol || p(i) > p_hi(i) + tol) return false;
  return true;
}

bool MarketSpec::drift_in_box(const Vec& b, double tol) const {
  for (int i = 0; i < d; ++i)
    if (b(i) < b_lo(i) - tol || b(i) > b_hi(i) + tol) return false;
  return true;
}

double MarketSpec::cov_hull_distance(const Mat& S) const {
  const int m = static_cast<int>(cov_vertices.size());
  Mat A(d * d, m);
  for (int k = 0; k < m; ++k)
    A.col(k) = Eigen::Map<const Vec>(cov_vertices[k].data(), d * d);
  Vec s = Eigen::Map<const Vec>(S.data(), d * d);
  return simplex_lsq_distance(A, s);
}

double MarketSpec::sigma_sq_lo() const {
  if (d != 1) throw std::logic_error("sigma_sq_lo requires d == 1");
  double lo = kInf;
  for (const Mat& S : cov_vertices) lo = std::min(lo, S(0, 0));
  return lo;
}

double MarketSpec::sigma_sq_hi() const {
  if (d != 1) throw std::logic_error("sigma_sq_hi requires d == 1");
  double hi = -kInf;
  for (const Mat& S : cov_vertices) hi = std::max(hi, S(0, 0));
  return hi;
}

MarketSpec MarketSpec::from_json(const nlohmann::json& j) {
  MarketSpec spec;
  spec.r = j.at("r").get<double>();
  spec.d = j.at("d").get<int>();
  const int d = spec.d;
  auto read_vec = [&](const char* key, double missing) {
    Vec v(d);
    if (!j.contains(key)) {
      v.setConstant(missing);
      return v;
    }
    const auto& arr = j.at(key);
    if (static_cast<int>(arr.size()) != d)
      throw rfp::IoError(std::string(key) + " must have length d");
    for (int i = 0; i < d; ++i) v(i) = json_bound(arr.at(i));
    return v;
  };
  spec.b_lo = read_vec("b_lo", 0.0);
  spec.b_hi = read_vec("b_hi", 0.0);
  if (!j.contains("b_lo") || !j.contains("b_hi"))
    throw rfp::IoError("market requires b_lo and b_hi");
  spec.p_lo = read_vec("p_lo", -kInf);
  spec.p_hi = read_vec("p_hi", kInf);
  if (!j.contains("cov_vertices")) throw rfp::IoError("market requires cov_vertices");
  for (const auto& jm : j.at("cov_vertices")) {
    if (static_cast<int>(jm.size()) != d * d)
      throw rfp::IoError("cov vertex must be a row-major d*d array");
    Mat S(d, d);
    for (int r_ = 0; r_ < d; ++r_)
      for (int c_ = 0; c_ < d; ++c_) S(r_, c_) = jm.at(r_ * d + c_).get<double>();
    spec.cov_vertices.push_back(S);
  }
  spec.validate();
  return spec;
}

nlohmann::json MarketSpec::to_json() const {
  nlohmann::json j;
  j["r"] = r;
  j["d"] = d;
  auto vec_json = [&](const Vec& v) {
    nlohmann::json arr = nlohmann::json::array();
    for (int i = 0; i < d; ++i) arr.push_back(bound_to_json(v(i)));
    return arr;
  };
  j["b_lo"] = vec_json(b_lo);
  j["b_hi"] = vec_json(b_hi);
  j["p_lo"] = vec_json(p_lo);
  j["p_hi"] = vec_json(p_hi);
  nlohmann::json verts = nlohmann::json::array();
  for (const Mat& S : cov_vertices) {
    nlohmann::json flat = nlohmann::json::array();
    for (int r_ = 0; r_ < d; ++r_)
      for (int c_ = 0; c_ < d; ++c_) flat.push_back(S(r_, c_));
    verts.push_back(flat);
  }
  j["cov_vertices"] = verts;
  return j;
}

StrategyPath StrategyPath::constant(double horizon, Vec p_, double c_, Vec b_, Mat sigma_) {
  StrategyPath s;
  s.times = {0.0, horizon};
  s.p = {std::move(p_)};
  s.c = {c_};
  s.b = {std::move(b_)};
  s.sigma = {std::move(sigma_)};
  return s;
}

std::size_t StrategyPath::interval_index(double t) const {
  // Right-open intervals; t == horizon maps to the last interval.
  auto it = std::upper_bound(times.begin(), times.end(), t);
  std::size_t k = static_cast<std::size_t>(it - times.begin());
  if (k == 0) return 0;
  if (k >= times.size()) return times.size() - 2;
  return k - 1;
}

void StrategyPath::validate_shape() const {
  if (times.size() < 2) throw std::invalid_argument("strategy grid needs at least two times");
  if (times.front() != 0.0) throw std::invalid_argument("strategy grid must start at 0");
  for (std::size_t k = 0; k + 1 < times.size(); ++k)
    if (!(times[k] < times[k + 1]))
      throw std::invalid_argument("strategy grid must be strictly increasing");
  const std::size_t n = times.size() - 1;
  if (p.size() != n || c.size() != n || b.size() != n || sigma.size() != n)
    throw std::invalid_argument("strategy arrays must have times.size() - 1 entries");
  for (double ck : c)
    if (!(ck >= 0.0)) throw std::invalid_argument("consumption rate must be >= 0");
}

ResolvedStrategy resolve_on_grid(const MarketSpec& spec, const StrategyPath& strat, double dt) {
  strat.validate_shape();
  if (!(dt > 0.0)) throw std::invalid_argument("dt must be > 0");
  const double T = strat.horizon();
  std::set<double> grid(strat.times.begin(), strat.times.end());
  const auto n_uniform = static_cast<std::size_t>(std::ceil(T / dt - 1e-12));
  for (std::size_t k = 1; k < n_uniform; ++k) grid.insert(k * dt);
  grid.insert(0.0);
  grid.insert(T);

  ResolvedStrategy out;
  out.times.assign(grid.begin(), grid.end());
  const std::size_t n_steps = out.times.size() - 1;
  out.log_drift.resize(n_steps);
  out.consumption.resize(n_steps);
  out.vol_norm.resize(n_steps);
  out.noise_load.resize(n_steps);
  out.p.resize(n_steps);
  const Vec ones = Vec::Ones(spec.d);
  for (std::size_t s = 0; s < n_steps; ++s) {
    const std::size_t k = strat.interval_index(out.times[s]);
    const Vec& p = strat.p[k];
    const Vec& b = strat.b[k];
    const Mat& sg = strat.sigma[k];
    if (!spec.pi_contains(p)) throw std::invalid_argument("strategy p leaves Pi");
    if (!spec.drift_in_box(b)) throw std::invalid_argument("strategy b leaves the drift box");
    Vec load = sg.transpose() * p;
    const double vn = load.norm();
    out.log_drift[s] =
        spec.r + p.dot(b - spec.r * ones) - strat.c[k] - 0.5 * vn * vn;
    out.consumption[s] = strat.c[k];
    out.vol_norm[s] = vn;
    out.noise_load[s] = std::move(load);
    out.p[s] = p;
  }
  return out;
}

SimResult simulate_wealth(const MarketSpec& spec, double x0, const StrategyPath& strat,
                          int n_paths, std::uint64_t seed, double dt) {
  spec.validate();
  if (!(x0 > 0.0)) throw std::invalid_argument("x0 must be > 0");
  if (n_paths < 1) throw std::invalid_argument("n_paths must be >= 1");
  // Volatility selections must stay in the covariance hull.
  for (const Mat& sg : strat.sigma) {
    const Mat S = sg * sg.transpose();
    if (spec.cov_hull_distance(S) > 1e-9 * (1.0 + S.norm()))
      throw std::invalid_argument("strategy sigma*sigma^T leaves the covariance hull");
  }

  SimResult sim;
  sim.seed = seed;
  sim.dt = dt;
  sim.x0 = x0;
  sim.grid = resolve_on_grid(spec, strat, dt);
  const std::size_t n_steps = sim.grid.n_steps();
  const int d = spec.d;

  sim.wealth.assign(n_paths, std::vector<double>(n_steps + 1));
  sim.increments.assign(n_paths, std::vector<double>(n_steps * d));
  sim.log_wealth_integral.assign(n_paths, 0.0);

  for (int path = 0; path < n_paths; ++path) {
    rfp::NormalStream rng(seed, static_cast<std::uint64_t>(path));
    double log_x = std::log(x0);
    sim.wealth[path][0] = x0;
    double integral = 0.0;
    for (std::size_t s = 0; s < n_steps; ++s) {
      const double h = sim.grid.times[s + 1] - sim.grid.times[s];
      const double sqh = std::sqrt(h);
      double noise = 0.0;
      for (int j = 0; j < d; ++j) {
        const double dw = sqh * rng.next();
        sim.increments[path][s * d + j] = dw;
        noise += sim.grid.noise_load[s](j) * dw;
      }
      const double log_next = log_x + sim.grid.log_drift[s] * h + noise;
      integral += 0.5 * h * (log_x + log_next);
      log_x = log_next;
      sim.wealth[path][s + 1] = std::exp(log_x);
    }
    sim.log_wealth_integral[path] = integral;
  }
  return sim;
}

WealthFunctional power_wealth_functional(const SimResult& sim, double delta) {
  if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("delta must lie in (0,1)");
  WealthFunctional out;
  out.delta = delta;
  const std::size_t n_paths = sim.wealth.size();
  const std::size_t n_steps = sim.grid.n_steps();
  out.terminal_power.resize(n_paths);
  out.consumption_power_integral.resize(n_paths);
  out.running_max_power.resize(n_paths);
  double sum = 0.0, sumsq = 0.0;
  for (std::size_t path = 0; path < n_paths; ++path) {
    const auto& w = sim.wealth[path];
    double run_max = 0.0;
    double integral = 0.0;
    for (std::size_t s = 0; s < n_steps; ++s) {
      const double h = sim.grid.times[s + 1] - sim.grid.times[s];
      const double c = sim.grid.consumption[s];
      const double f0 = std::pow(c * w[s], delta);
      const double f1 = std::pow(c * w[s + 1], delta);
      integral += 0.5 * h * (f0 + f1);
    }
    for (double x : w) run_max = std::max(run_max, std::pow(x, delta));
    out.terminal_power[path] = std::pow(w.back(), delta);
    out.consumption_power_integral[path] = integral;
    out.running_max_power[path] = run_max;
    out.sample_max = std::max(out.sample_max, run_max);
    sum += out.terminal_power[path];
    sumsq += out.terminal_power[path] * out.terminal_power[path];
  }
  if (n_paths > 1) {
    const double n = static_cast<double>(n_paths);
    out.sample_variance = std::max(0.0, (sumsq - sum * sum / n) / (n - 1.0));
  }
  return out;
}

}  // namespace rfp::market
