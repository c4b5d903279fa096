#include "rfp/preferences.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>

#include "rfp/errors.hpp"

namespace rfp::preferences {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

using Fn = std::function<double(double)>;

double simpson_rule(double a, double b, double fa, double fm, double fb) {
  return (b - a) / 6.0 * (fa + 4.0 * fm + fb);
}

double adaptive_step(const Fn& f, double a, double b, double fa, double fm, double fb,
                     double whole, double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = simpson_rule(a, m, fa, flm, fm);
  const double right = simpson_rule(m, b, fm, frm, fb);
  const double delta = left + right - whole;
  if (depth <= 0 || std::abs(delta) <= 15.0 * tol)
    return left + right + delta / 15.0;
  return adaptive_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
         adaptive_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

/// Richardson-accelerated adaptive quadrature, absolute target tol.
double adaptive_quad(const Fn& f, double a, double b, double tol, int depth = 40) {
  if (!(b > a)) return 0.0;
  const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  return adaptive_step(f, a, b, fa, fm, fb, simpson_rule(a, b, fa, fm, fb), tol, depth);
}

}  // namespace

LambdaSpec LambdaSpec::zero() { return LambdaSpec{}; }

LambdaSpec LambdaSpec::exponential(double alpha, double beta, double rate_base) {
  if (!(alpha >= 0.0)) throw std::invalid_argument("lambda alpha must be >= 0");
  if (!(beta > 0.0)) throw std::invalid_argument("lambda beta must be > 0");
  LambdaSpec s;
  s.kind = Kind::Exponential;
  s.alpha = alpha;
  s.beta = beta;
  s.rate_base = rate_base;
  return s;
}

LambdaSpec LambdaSpec::tabulated(std::vector<double> times, std::vector<double> values) {
  if (times.size() != values.size() || times.size() < 2)
    throw std::invalid_argument("tabulated lambda needs >= 2 (t, value) pairs");
  for (std::size_t k = 0; k + 1 < times.size(); ++k)
    if (!(times[k] < times[k + 1]))
      throw std::invalid_argument("tabulated lambda grid must be strictly increasing");
  for (double v : values)
    if (!(v >= 0.0)) throw std::invalid_argument("lambda values must be >= 0");
  LambdaSpec s;
  s.kind = Kind::Tabulated;
  s.times = std::move(times);
  s.values = std::move(values);
  return s;
}

double LambdaSpec::value(double t) const {
  switch (kind) {
    case Kind::Zero:
      return 0.0;
    case Kind::Exponential:
      return alpha * std::exp(-(rate_base + beta) * t);
    case Kind::Tabulated: {
      if (t <= times.front()) return values.front();
      if (t >= times.back()) return values.back();
      const auto it = std::upper_bound(times.begin(), times.end(), t);
      const std::size_t k = static_cast<std::size_t>(it - times.begin()) - 1;
      const double w = (t - times[k]) / (times[k + 1] - times[k]);
      return values[k] + w * (values[k + 1] - values[k]);
    }
  }
  return 0.0;
}

double LambdaSpec::power_integral(double t, double delta, double G) const {
  if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("delta must lie in (0,1)");
  if (t <= 0.0) return 0.0;
  const double q = 1.0 / (1.0 - delta);
  switch (kind) {
    case Kind::Zero:
      return 0.0;
    case Kind::Exponential: {
      if (alpha == 0.0) return 0.0;
      const double A = std::pow(alpha, q);
      const double gamma = (G - rate_base - beta) * q;
      if (gamma == 0.0) return A * t;
      return A * std::expm1(gamma * t) / gamma;
    }
    case Kind::Tabulated: {
      auto integrand = [&](double s) {
        return std::exp(G * s * q) * std::pow(value(s), q);
      };
      // Split at the table nodes: the integrand has kinks there.
      std::set<double> cuts = {0.0, t};
      for (double tk : times)
        if (tk > 0.0 && tk < t) cuts.insert(tk);
      double sum = 0.0;
      auto it = cuts.begin();
      double prev = *it++;
      for (; it != cuts.end(); ++it) {
        sum += adaptive_quad(integrand, prev, *it, 1e-13 * (1.0 + std::abs(t)));
        prev = *it;
      }
      return sum;
    }
  }
  return 0.0;
}

double LambdaSpec::power_integral_sup_infinite(double delta, double G) const {
  const double q = 1.0 / (1.0 - delta);
  switch (kind) {
    case Kind::Zero:
      return 0.0;
    case Kind::Exponential: {
      if (alpha == 0.0) return 0.0;
      const double gamma = (G - rate_base - beta) * q;
      if (gamma < 0.0) return -std::pow(alpha, q) / gamma;
      return kInf;
    }
    case Kind::Tabulated:
      return kNaN;
  }
  return kNaN;
}

LambdaSpec LambdaSpec::from_json(const nlohmann::json& j) {
  const std::string kind = j.value("kind", std::string("zero"));
  if (kind == "zero") return zero();
  if (kind == "exponential")
    return exponential(j.at("alpha").get<double>(), j.at("beta").get<double>(),
                       j.value("rate_base", 0.0));
  if (kind == "tabulated")
    return tabulated(j.at("times").get<std::vector<double>>(),
                     j.at("values").get<std::vector<double>>());
  throw rfp::IoError("unknown lambda kind: " + kind);
}

nlohmann::json LambdaSpec::to_json() const {
  nlohmann::json j;
  switch (kind) {
    case Kind::Zero:
      j["kind"] = "zero";
      break;
    case Kind::Exponential:
      j["kind"] = "exponential";
      j["alpha"] = alpha;
      j["beta"] = beta;
      j["rate_base"] = rate_base;
      break;
    case Kind::Tabulated:
      j["kind"] = "tabulated";
      j["times"] = times;
      j["values"] = values;
      break;
  }
  return j;
}

SampledPath SampledPath::make(std::vector<double> times, std::vector<double> values) {
  if (times.size() != values.size() || times.size() < 2)
    throw std::invalid_argument("sampled path needs >= 2 nodes");
  for (std::size_t k = 0; k + 1 < times.size(); ++k)
    if (!(times[k] < times[k + 1]))
      throw std::invalid_argument("sampled path grid must be strictly increasing");
  SampledPath p;
  p.times = std::move(times);
  p.values = std::move(values);
  p.prefix_.resize(p.times.size());
  p.prefix_[0] = 0.0;
  for (std::size_t k = 1; k < p.times.size(); ++k)
    p.prefix_[k] = p.prefix_[k - 1] + 0.5 * (p.times[k] - p.times[k - 1]) *
                                          (p.values[k] + p.values[k - 1]);
  return p;
}

SampledPath SampledPath::constant(double v, double t0, double t1) {
  return make({t0, t1}, {v, v});
}

double SampledPath::value(double t) const {
  if (t <= times.front()) return values.front();
  if (t >= times.back()) return values.back();
  const auto it = std::upper_bound(times.begin(), times.end(), t);
  const std::size_t k = static_cast<std::size_t>(it - times.begin()) - 1;
  const double w = (t - times[k]) / (times[k + 1] - times[k]);
  return values[k] + w * (values[k + 1] - values[k]);
}

double SampledPath::integral_to(double t) const {
  if (t <= times.front()) return 0.0;
  if (t >= times.back()) return prefix_.back();
  const auto it = std::upper_bound(times.begin(), times.end(), t);
  const std::size_t k = static_cast<std::size_t>(it - times.begin()) - 1;
  return prefix_[k] + 0.5 * (t - times[k]) * (values[k] + value(t));
}

double SampledPath::max_abs() const {
  double m = 0.0;
  for (double v : values) m = std::max(m, std::abs(v));
  return m;
}

namespace {

/// First time the monotone map reaches the threshold, located by grid scan
/// plus bisection. Assumes F(0) < threshold <= F(horizon).
double locate_crossing(const Fn& F, double threshold, double horizon, int n_grid) {
  double lo = 0.0, hi = horizon;
  for (int k = 1; k <= n_grid; ++k) {
    const double t = horizon * k / n_grid;
    if (F(t) >= threshold) {
      hi = t;
      break;
    }
    lo = t;
  }
  for (int it = 0; it < 200 && (hi - lo) > 1e-14 * (1.0 + hi); ++it) {
    const double mid = 0.5 * (lo + hi);
    (F(mid) >= threshold ? hi : lo) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

ConditionReport check_condition_1(double Y0, double G, const LambdaSpec& lambda, double delta,
                                  double horizon, int n_grid) {
  if (!(horizon > 0.0)) throw std::invalid_argument("horizon must be > 0");
  const double q = 1.0 / (1.0 - delta);
  const double threshold = std::exp(Y0 * q);
  ConditionReport rep;
  rep.sup_integral = lambda.power_integral(horizon, delta, G);
  rep.holds = rep.sup_integral < threshold;
  rep.margin = threshold - rep.sup_integral;
  rep.analytic_sup = lambda.power_integral_sup_infinite(delta, G);
  rep.sufficient_condition_holds =
      std::isfinite(rep.analytic_sup) && rep.analytic_sup < threshold;

  if (!rep.holds) {
    if (lambda.kind == LambdaSpec::Kind::Exponential) {
      const double A = std::pow(lambda.alpha, q);
      const double gamma = (G - lambda.rate_base - lambda.beta) * q;
      double t;
      if (gamma == 0.0) {
        t = threshold / A;
      } else {
        t = std::log1p(gamma * threshold / A) / gamma;
      }
      rep.first_violation_time = std::clamp(t, 0.0, horizon);
    } else {
      rep.first_violation_time = locate_crossing(
          [&](double t) { return lambda.power_integral(t, delta, G); }, threshold, horizon,
          n_grid);
    }
  }
  return rep;
}

double solve_Y_closed_form(double Y0, double G, const LambdaSpec& lambda, double delta,
                           double t) {
  if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("delta must lie in (0,1)");
  if (t < 0.0) throw std::invalid_argument("t must be >= 0");
  const double q = 1.0 / (1.0 - delta);
  const double arg = std::exp(Y0 * q) - lambda.power_integral(t, delta, G);
  if (!(arg > 0.0)) {
    const auto rep = check_condition_1(Y0, G, lambda, delta, t);
    throw rfp::ConditionError(
        "condition 1 violated at t = " +
        std::to_string(rep.first_violation_time.value_or(t)) +
        ": the preference exponent Y ceases to exist");
  }
  return -G * t + (1.0 - delta) * std::log(arg);
}

double consumption_star_dv(double Y0, double G, const LambdaSpec& lambda, double delta,
                           double t) {
  const double lam = lambda.value(t);
  if (lam == 0.0) return 0.0;
  const double q = 1.0 / (1.0 - delta);
  const double Y = solve_Y_closed_form(Y0, G, lambda, delta, t);
  return std::pow(lam, q) * std::exp(-Y * q);
}

namespace {

/// Integral over [a, b] of exp((rho int_0^s Y - Y_s)/(1-delta))
/// lambda_s^{1/(1-delta)} ds, split at the breakpoints of Y and lambda.
double consumption_condition_increment(const SampledPath& Y, double rho,
                                       const LambdaSpec& lambda, double delta, double a,
                                       double b) {
  if (!(b > a)) return 0.0;
  if (lambda.kind == LambdaSpec::Kind::Zero || (lambda.kind == LambdaSpec::Kind::Exponential &&
                                                lambda.alpha == 0.0))
    return 0.0;
  const double q = 1.0 / (1.0 - delta);
  auto integrand = [&](double s) {
    const double lam = lambda.value(s);
    if (lam == 0.0) return 0.0;
    return std::exp((rho * Y.integral_to(s) - Y.value(s)) * q) * std::pow(lam, q);
  };
  std::set<double> cuts = {a, b};
  for (double tk : Y.times)
    if (tk > a && tk < b) cuts.insert(tk);
  if (lambda.kind == LambdaSpec::Kind::Tabulated)
    for (double tk : lambda.times)
      if (tk > a && tk < b) cuts.insert(tk);
  double sum = 0.0;
  auto it = cuts.begin();
  double prev = *it++;
  const double tol = 1e-13 / static_cast<double>(cuts.size());
  for (; it != cuts.end(); ++it) {
    sum += adaptive_quad(integrand, prev, *it, tol);
    prev = *it;
  }
  return sum;
}

/// J(t): the same integral taken from 0.
double consumption_condition_integral(const SampledPath& Y, double rho,
                                      const LambdaSpec& lambda, double delta, double t) {
  return consumption_condition_increment(Y, rho, lambda, delta, 0.0, t);
}

}  // namespace

ConditionReport check_condition_2(double g0, const SampledPath& Y, double rho,
                                  const LambdaSpec& lambda, double delta, double horizon,
                                  int n_grid) {
  if (!(horizon > 0.0)) throw std::invalid_argument("horizon must be > 0");
  if (Y.times.back() < horizon - 1e-12)
    throw std::invalid_argument("Y path does not cover the requested horizon");
  const double q = 1.0 / (1.0 - delta);
  const double threshold = std::exp(-g0 * q);
  ConditionReport rep;
  rep.sup_integral = consumption_condition_integral(Y, rho, lambda, delta, horizon);
  rep.holds = rep.sup_integral < threshold;
  rep.margin = threshold - rep.sup_integral;

  if (lambda.kind == LambdaSpec::Kind::Exponential && lambda.alpha > 0.0) {
    // Tail bound with C = sup |Y|: the integrand is dominated by
    // alpha^q e^{Cq} e^{(rho C - rate_base - beta) s q}.
    const double C = Y.max_abs();
    const double denom = lambda.rate_base + lambda.beta - rho * C;
    rep.analytic_sup = denom > 0.0
                           ? std::pow(lambda.alpha, q) * std::exp(C * q) * (1.0 - delta) / denom
                           : kInf;
  } else if (lambda.kind == LambdaSpec::Kind::Tabulated) {
    rep.analytic_sup = kNaN;
  } else {
    rep.analytic_sup = 0.0;
  }
  rep.sufficient_condition_holds =
      std::isfinite(rep.analytic_sup) && rep.analytic_sup < threshold;

  if (!rep.holds) {
    rep.first_violation_time = locate_crossing(
        [&](double t) { return consumption_condition_integral(Y, rho, lambda, delta, t); },
        threshold, horizon, n_grid);
  }
  return rep;
}

double solve_g_closed_form(double g0, const SampledPath& Y, double rho,
                           const LambdaSpec& lambda, double delta, double t) {
  if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("delta must lie in (0,1)");
  if (t < 0.0) throw std::invalid_argument("t must be >= 0");
  if (Y.times.back() < t - 1e-12)
    throw std::invalid_argument("Y path does not cover the requested time");
  const double q = 1.0 / (1.0 - delta);
  const double arg =
      std::exp(-g0 * q) - consumption_condition_integral(Y, rho, lambda, delta, t);
  if (!(arg > 0.0)) {
    const auto rep = check_condition_2(g0, Y, rho, lambda, delta, t);
    throw rfp::ConditionError(
        "condition 2 violated at t = " +
        std::to_string(rep.first_violation_time.value_or(t)) +
        ": the consumption adjustment g ceases to exist");
  }
  return rho * Y.integral_to(t) - (1.0 - delta) * std::log(arg);
}

double consumption_gap(double delta, double c, double lambda_t, double exponent) {
  if (!(c >= 0.0)) throw std::invalid_argument("consumption rate must be >= 0");
  const double q = 1.0 / (1.0 - delta);
  const double direct = std::pow(c, delta) * lambda_t * std::exp(-exponent) - delta * c;
  const double star_term =
      lambda_t > 0.0 ? (1.0 - delta) * std::pow(lambda_t, q) * std::exp(-exponent * q) : 0.0;
  return direct - star_term;
}

double PreferencePair::U(double x, double t) const {
  if (!(x > 0.0)) throw std::invalid_argument("wealth must be > 0");
  return std::pow(x, delta) / delta * std::exp(exponent(t));
}

double PreferencePair::Uc(double C, double t) const {
  if (!(C >= 0.0)) throw std::invalid_argument("consumption must be >= 0");
  return std::pow(C, delta) / delta * lambda.value(t);
}

double PreferencePair::c_star(double t) const {
  const double lam = lambda.value(t);
  if (lam == 0.0) return 0.0;
  const double q = 1.0 / (1.0 - delta);
  return std::pow(lam, q) * std::exp(-exponent(t) * q);
}

double PreferencePair::a(double x, double t) const {
  if (mode == Mode::DriftVol) return 0.0;
  return std::pow(x, delta) / delta * std::exp(exponent(t)) * Z_eval(t);
}

PreferencePair build_preferences_drift_vol(double Y0, double G, const LambdaSpec& lambda,
                                           double delta, double horizon, int n_grid) {
  const auto rep = check_condition_1(Y0, G, lambda, delta, horizon, n_grid);
  if (!rep.holds)
    throw rfp::ConditionError("condition 1 violated at t = " +
                              std::to_string(rep.first_violation_time.value_or(horizon)));
  PreferencePair pair;
  pair.mode = PreferencePair::Mode::DriftVol;
  pair.delta = delta;
  pair.lambda = lambda;
  pair.Y_eval = [=](double t) { return solve_Y_closed_form(Y0, G, lambda, delta, t); };
  pair.g_eval = [](double) { return 0.0; };
  pair.Z_eval = [](double) { return 0.0; };
  return pair;
}

PreferencePair build_preferences_drift_only(double g0, const SampledPath& Y,
                                            const SampledPath& Z, double rho,
                                            const LambdaSpec& lambda, double delta,
                                            double horizon, int n_grid) {
  const auto rep = check_condition_2(g0, Y, rho, lambda, delta, horizon, n_grid);
  if (!rep.holds)
    throw rfp::ConditionError("condition 2 violated at t = " +
                              std::to_string(rep.first_violation_time.value_or(horizon)));

  // g is evaluated exactly (cumulative quadrature) on the merged grid of the
  // Y nodes and a uniform refinement, then interpolated linearly.
  std::set<double> grid_set = {0.0, horizon};
  for (double t : Y.times)
    if (t > 0.0 && t < horizon) grid_set.insert(t);
  if (lambda.kind == LambdaSpec::Kind::Tabulated)
    for (double t : lambda.times)
      if (t > 0.0 && t < horizon) grid_set.insert(t);
  for (int k = 1; k < n_grid; ++k) grid_set.insert(horizon * k / n_grid);
  const std::vector<double> grid(grid_set.begin(), grid_set.end());
  const double q = 1.0 / (1.0 - delta);
  const double threshold = std::exp(-g0 * q);
  std::vector<double> g_vals(grid.size());
  double J = 0.0;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    if (k > 0) J += consumption_condition_increment(Y, rho, lambda, delta, grid[k - 1], grid[k]);
    g_vals[k] = rho * Y.integral_to(grid[k]) - (1.0 - delta) * std::log(threshold - J);
  }
  SampledPath g_path = SampledPath::make(grid, g_vals);

  PreferencePair pair;
  pair.mode = PreferencePair::Mode::DriftOnly;
  pair.delta = delta;
  pair.lambda = lambda;
  pair.Y_eval = [Y](double t) { return Y.value(t); };
  pair.g_eval = [g_path](double t) { return g_path.value(t); };
  if (!Z.empty())
    pair.Z_eval = [Z](double t) { return Z.value(t); };
  else
    pair.Z_eval = [](double) { return 0.0; };
  for (std::size_t k = 1; k + 1 < Y.times.size(); ++k)
    pair.y_interp_error_bound =
        std::max(pair.y_interp_error_bound,
                 std::abs(Y.values[k + 1] - 2.0 * Y.values[k] + Y.values[k - 1]) / 8.0);
  return pair;
}

}  // namespace rfp::preferences
