#include "rfp/verify.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <utility>

#include "rfp/errors.hpp"
#include "rfp/parallel.hpp"
#include "rfp/philox.hpp"

namespace rfp::verify {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
}

double normal_quantile(double p) {
  if (!(p > 0.0) || !(p < 1.0)) throw std::invalid_argument("quantile argument must be in (0,1)");
  static constexpr double a[6] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                  -2.759285104469687e+02, 1.383577518672690e+02,
                                  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[5] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                  -1.556989798598866e+02, 6.680131188771972e+01,
                                  -1.328068155288572e+01};
  static constexpr double c[6] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                  -2.400758277161838e+00, -2.549732539343734e+00,
                                  4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[4] = {7.784695709041462e-03, 3.224671290700398e-01,
                                  2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  // One Halley step against the exact CDF.
  const double cdf = 0.5 * std::erfc(-x / std::numbers::sqrt2);
  const double e = cdf - p;
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

namespace {

Mat psd_root(const Mat& S) {
  Eigen::SelfAdjointEigenSolver<Mat> es(S);
  if (es.info() != Eigen::Success) throw rfp::SolverError("covariance eigendecomposition failed");
  Vec lam = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

Scenario make_drift_vol_scenario(std::string label, const MarketSpec& spec, double delta,
                                 const saddle::SaddleSolutionG& sg,
                                 preferences::PreferencePair prefs, double x0, double horizon) {
  if (!(x0 > 0.0) || !(horizon > 0.0))
    throw std::invalid_argument("x0 and horizon must be positive");
  Scenario sc;
  sc.label = std::move(label);
  sc.spec = spec;
  sc.delta = delta;
  sc.mode = Mode::DriftVol;
  sc.p_opt = sg.p_star;
  sc.b_opt = sg.b_star;
  sc.sigma_opt = psd_root(sg.sigma_star);
  sc.g_saddle = sg.value;
  sc.prefs = std::move(prefs);
  sc.x0 = x0;
  sc.horizon = horizon;
  return sc;
}

Scenario make_drift_only_scenario(std::string label, const MarketSpec& spec, double delta,
                                  const Mat& sigma, preferences::PreferencePair prefs,
                                  double x0, double horizon) {
  if (!(x0 > 0.0) || !(horizon > 0.0))
    throw std::invalid_argument("x0 and horizon must be positive");
  Scenario sc;
  sc.label = std::move(label);
  sc.spec = spec;
  sc.delta = delta;
  sc.mode = Mode::DriftOnly;
  sc.sigma_opt = sigma;
  const Vec z0 = Vec::Zero(spec.d);
  const auto sol0 = saddle::solve_saddle_H(spec, delta, 0.0, sigma, z0);
  sc.p_opt = sol0.p_star;
  sc.b_opt = sol0.b_star;
  const double h0 = sol0.value;
  sc.h_saddle = [h0](double) { return h0; };
  sc.z_of_t = [d = spec.d](double) { return Vec::Zero(d); };
  sc.prefs = std::move(prefs);
  sc.x0 = x0;
  sc.horizon = horizon;
  return sc;
}

Deviation Deviation::none() { return Deviation{}; }

Deviation Deviation::strategy(Vec p, double c) {
  Deviation dev;
  dev.kind = Kind::Strategy;
  dev.p = std::move(p);
  dev.c = c;
  return dev;
}

Deviation Deviation::parameter(Vec b, Mat sigma) {
  Deviation dev;
  dev.kind = Kind::Parameter;
  dev.b = std::move(b);
  dev.sigma = std::move(sigma);
  return dev;
}

double drift_integrand_drift_vol(const MarketSpec& spec, double delta, double g_saddle,
                                 const preferences::PreferencePair& prefs, double t,
                                 const Vec& p, double c, const Vec& b, const Mat& S) {
  const double gap = saddle::eval_G(spec, delta, p, b, S) - g_saddle;
  return gap + preferences::consumption_gap(delta, c, prefs.lambda.value(t), prefs.exponent(t));
}

double drift_integrand_drift_only(const MarketSpec& spec, double delta, const Mat& sigma_t,
                                  const Vec& z_t, double h_saddle_t,
                                  const preferences::PreferencePair& prefs, double t,
                                  const Vec& p, double c, const Vec& b) {
  const double gap = saddle::eval_H_bilinear(spec, delta, sigma_t, z_t, p, b) - h_saddle_t;
  return gap + preferences::consumption_gap(delta, c, prefs.lambda.value(t), prefs.exponent(t));
}

namespace {

struct Applied {
  Vec p;
  Vec b;
  Mat sigma;        // loading the simulated paths evolve under
  bool const_c = false;
  double c_const = 0.0;
  const char* label = "none";
};

Applied resolve_applied(const Scenario& sc, const Deviation& dev) {
  Applied ap;
  ap.p = sc.p_opt;
  ap.b = sc.b_opt;
  ap.sigma = sc.sigma_opt;
  switch (dev.kind) {
    case Deviation::Kind::None:
      break;
    case Deviation::Kind::Strategy:
      if (dev.p.size() != sc.spec.d) throw std::invalid_argument("deviation portfolio size");
      ap.p = dev.p;
      if (!std::isnan(dev.c)) {
        if (!(dev.c >= 0.0)) throw std::invalid_argument("consumption must be nonnegative");
        ap.const_c = true;
        ap.c_const = dev.c;
      }
      ap.label = "strategy";
      break;
    case Deviation::Kind::Parameter:
      if (dev.b.size() != sc.spec.d) throw std::invalid_argument("deviation drift size");
      ap.b = dev.b;
      if (sc.mode == Mode::DriftVol && dev.sigma.size() > 0) {
        if (dev.sigma.rows() != sc.spec.d || dev.sigma.cols() != sc.spec.d)
          throw std::invalid_argument("deviation sigma shape");
        ap.sigma = dev.sigma;
      }
      ap.label = "parameter";
      break;
  }
  if (!sc.spec.pi_contains(ap.p)) throw std::invalid_argument("portfolio outside the box");
  if (!sc.spec.drift_in_box(ap.b)) throw std::invalid_argument("drift outside the box");
  const Mat S = ap.sigma * ap.sigma.transpose();
  if (sc.mode == Mode::DriftVol &&
      sc.spec.cov_hull_distance(S) > 1e-9 * (1.0 + S.norm()))
    throw std::invalid_argument("covariance outside the uncertainty hull");
  return ap;
}

double applied_consumption(const Scenario& sc, const Applied& ap, double t) {
  return ap.const_c ? ap.c_const : sc.prefs.c_star(t);
}

}  // namespace

double scenario_drift(const Scenario& sc, const Deviation& dev, double t) {
  const Applied ap = resolve_applied(sc, dev);
  const double c = applied_consumption(sc, ap, t);
  if (sc.mode == Mode::DriftVol)
    return drift_integrand_drift_vol(sc.spec, sc.delta, sc.g_saddle, sc.prefs, t, ap.p, c,
                                     ap.b, ap.sigma * ap.sigma.transpose());
  return drift_integrand_drift_only(sc.spec, sc.delta, sc.sigma_opt, sc.z_of_t(t),
                                    sc.h_saddle(t), sc.prefs, t, ap.p, c, ap.b);
}

MartingaleReport run_martingale_test(const Scenario& sc, const Deviation& dev,
                                     std::int64_t n_paths, double dt, std::uint64_t seed,
                                     double confidence) {
  if (n_paths < 2) throw std::invalid_argument("n_paths must be at least 2");
  if (!(dt > 0.0)) throw std::invalid_argument("dt must be positive");
  if (!(confidence > 0.5) || !(confidence < 1.0))
    throw std::invalid_argument("confidence must be in (0.5, 1)");
  const double T = sc.horizon;
  const Applied ap = resolve_applied(sc, dev);

  const int n_steps =
      std::max<int>(4, 4 * static_cast<int>(std::ceil(T / dt / 4.0 - 1e-12)));
  const double h = T / n_steps;
  const double sqh = std::sqrt(h);
  const int d = sc.spec.d;
  const double delta = sc.delta;

  const Vec load = ap.sigma.transpose() * ap.p;
  const double load2 = load.squaredNorm();
  const Vec r1 = Vec::Constant(d, sc.spec.r);
  const double base_drift = sc.spec.r + ap.p.dot(ap.b - r1) - 0.5 * load2;

  std::vector<double> c_mid(n_steps), cons_coef(n_steps);
  bool any_cons = false;
  for (int k = 0; k < n_steps; ++k) {
    const double tm = (k + 0.5) * h;
    c_mid[k] = applied_consumption(sc, ap, tm);
    const double lam = sc.prefs.lambda.value(tm);
    cons_coef[k] = lam > 0.0 && c_mid[k] > 0.0 ? std::pow(c_mid[k], delta) * lam / delta : 0.0;
    any_cons = any_cons || cons_coef[k] > 0.0;
  }

  constexpr int n_cp = 5;
  int kcp[n_cp];
  double exp_cp[n_cp], tcp[n_cp];
  for (int j = 0; j < n_cp; ++j) {
    kcp[j] = n_steps * j / 4;
    tcp[j] = T * j / 4.0;
    exp_cp[j] = std::exp(sc.prefs.exponent(tcp[j]));
  }

  const double log_x0 = std::log(sc.x0);
  const std::int64_t nb = num_blocks(n_paths);
  std::vector<std::vector<double>> bsum(n_cp), bsumsq(n_cp);
  for (int j = 0; j < n_cp; ++j) {
    bsum[j].assign(nb, 0.0);
    bsumsq[j].assign(nb, 0.0);
  }

  for_blocks(n_paths, [&](std::int64_t blk, std::int64_t begin, std::int64_t end) {
    std::array<double, n_cp> sum{}, sumsq{};
    for (std::int64_t path = begin; path < end; ++path) {
      NormalStream rng(seed, static_cast<std::uint64_t>(path));
      double logX = log_x0;
      double acc = 0.0;  // running consumption integral
      int j = 0;
      for (int k = 0; k < n_steps; ++k) {
        if (k == kcp[j]) {
          const double rv = std::exp(delta * logX) * exp_cp[j] / delta + acc;
          sum[j] += rv;
          sumsq[j] += rv * rv;
          ++j;
        }
        double noise = 0.0;
        for (int jj = 0; jj < d; ++jj) noise += load(jj) * rng.next();
        const double logX_new = logX + (base_drift - c_mid[k]) * h + sqh * noise;
        if (cons_coef[k] > 0.0)
          acc += cons_coef[k] * std::exp(delta * 0.5 * (logX + logX_new)) * h;
        logX = logX_new;
      }
      const double rT = std::exp(delta * logX) * exp_cp[n_cp - 1] / delta + acc;
      sum[n_cp - 1] += rT;
      sumsq[n_cp - 1] += rT * rT;
    }
    for (int jj = 0; jj < n_cp; ++jj) {
      bsum[jj][blk] = sum[jj];
      bsumsq[jj][blk] = sumsq[jj];
    }
  });

  MartingaleReport rep;
  rep.scenario = sc.label;
  rep.deviation = ap.label;
  rep.n_paths = static_cast<int>(n_paths);
  rep.dt = h;
  rep.horizon = T;
  rep.confidence = confidence;
  rep.r0 = sc.prefs.U(sc.x0, 0.0);

  for (int j = 0; j < n_cp; ++j) {
    const MeanVar mv = reduce_mean_var(bsum[j], bsumsq[j], n_paths);
    CheckpointStat st;
    st.t = tcp[j];
    st.estimate = mv.mean - rep.r0;
    st.std_error = std::sqrt(std::max(0.0, mv.variance) / static_cast<double>(n_paths));
    rep.checkpoints.push_back(st);
  }
  rep.estimate = rep.checkpoints.back().estimate;
  rep.std_error = rep.checkpoints.back().std_error;

  // Analytic drift bracket along a fixed diagnostic grid.
  constexpr int n_grid = 512;
  rep.drift_min = std::numeric_limits<double>::infinity();
  rep.drift_max = -std::numeric_limits<double>::infinity();
  std::int64_t nonneg = 0;
  for (int i = 0; i <= n_grid; ++i) {
    const double t = T * i / n_grid;
    const double v = scenario_drift(sc, dev, t);
    rep.drift_min = std::min(rep.drift_min, v);
    rep.drift_max = std::max(rep.drift_max, v);
    if (v >= -1e-12 * (1.0 + std::abs(v))) ++nonneg;
  }
  rep.drift_fraction_nonneg = static_cast<double>(nonneg) / (n_grid + 1);

  const double slack = 1e-12 * (1.0 + std::abs(rep.r0));
  switch (dev.kind) {
    case Deviation::Kind::None: {
      rep.quantile = normal_quantile(0.5 + 0.5 * confidence);
      rep.verdict = std::abs(rep.estimate) <= rep.quantile * rep.std_error + slack
                        ? "martingale-consistent"
                        : "violation";
      break;
    }
    case Deviation::Kind::Strategy: {
      rep.quantile = normal_quantile(confidence);
      rep.verdict = rep.estimate <= rep.quantile * rep.std_error + slack
                        ? "supermartingale-consistent"
                        : "violation";
      break;
    }
    case Deviation::Kind::Parameter: {
      rep.quantile = normal_quantile(confidence);
      rep.verdict = rep.estimate >= -(rep.quantile * rep.std_error + slack)
                        ? "submartingale-consistent"
                        : "violation";
      break;
    }
  }
  return rep;
}

QvReport quadratic_variation_check(const Scenario& sc, const Deviation& dev,
                                   std::int64_t n_paths, double dt, std::uint64_t seed) {
  if (n_paths < 1) throw std::invalid_argument("n_paths must be positive");
  if (!(dt > 0.0)) throw std::invalid_argument("dt must be positive");
  const double T = sc.horizon;
  const Applied ap = resolve_applied(sc, dev);
  const int n_steps = std::max<int>(1, static_cast<int>(std::llround(T / dt)));
  const double h = T / n_steps;
  const double sqh = std::sqrt(h);
  const int d = sc.spec.d;
  const double delta = sc.delta;

  const Vec load = ap.sigma.transpose() * ap.p;
  const double load2 = load.squaredNorm();
  const Vec r1 = Vec::Constant(d, sc.spec.r);
  const double base_drift = sc.spec.r + ap.p.dot(ap.b - r1) - 0.5 * load2;

  std::vector<double> c_mid(n_steps), cons_coef(n_steps), e_node(n_steps + 1);
  for (int k = 0; k < n_steps; ++k) {
    const double tm = (k + 0.5) * h;
    c_mid[k] = applied_consumption(sc, ap, tm);
    const double lam = sc.prefs.lambda.value(tm);
    cons_coef[k] = lam > 0.0 && c_mid[k] > 0.0 ? std::pow(c_mid[k], delta) * lam / delta : 0.0;
  }
  for (int k = 0; k <= n_steps; ++k) e_node[k] = sc.prefs.exponent(k * h);

  const std::int64_t nb = num_blocks(n_paths);
  std::vector<double> b_real(nb, 0.0), b_pred(nb, 0.0);
  const double log_x0 = std::log(sc.x0);

  for_blocks(n_paths, [&](std::int64_t blk, std::int64_t begin, std::int64_t end) {
    double s_real = 0.0, s_pred = 0.0;
    for (std::int64_t path = begin; path < end; ++path) {
      NormalStream rng(seed, static_cast<std::uint64_t>(path));
      double logX = log_x0;
      double acc = 0.0;
      double wealth_term = std::exp(delta * logX + e_node[0]) / delta;
      double prev_r = wealth_term;
      double qv = 0.0, pred = 0.0;
      for (int k = 0; k < n_steps; ++k) {
        pred += delta * delta * wealth_term * wealth_term * load2 * h;
        double noise = 0.0;
        for (int jj = 0; jj < d; ++jj) noise += load(jj) * rng.next();
        const double logX_new = logX + (base_drift - c_mid[k]) * h + sqh * noise;
        if (cons_coef[k] > 0.0)
          acc += cons_coef[k] * std::exp(delta * 0.5 * (logX + logX_new)) * h;
        logX = logX_new;
        wealth_term = std::exp(delta * logX + e_node[k + 1]) / delta;
        const double r_new = wealth_term + acc;
        qv += (r_new - prev_r) * (r_new - prev_r);
        prev_r = r_new;
      }
      s_real += qv;
      s_pred += pred;
    }
    b_real[blk] = s_real;
    b_pred[blk] = s_pred;
  });

  QvReport rep;
  rep.realized = pairwise_sum(b_real) / static_cast<double>(n_paths);
  rep.predicted = pairwise_sum(b_pred) / static_cast<double>(n_paths);
  rep.ratio = rep.predicted != 0.0 ? rep.realized / rep.predicted : kNaN;
  return rep;
}

}  // namespace rfp::verify
