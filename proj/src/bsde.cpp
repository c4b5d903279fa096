#include "rfp/bsde.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>
#include <utility>

#include "rfp/errors.hpp"
#include "rfp/philox.hpp"
#include "rfp/saddle.hpp"

namespace rfp::bsde {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double inv_two_norm(const Mat& sigma) {
  Eigen::JacobiSVD<Mat> svd(sigma);
  const double smin = svd.singularValues().minCoeff();
  if (smin < 1e-14) throw std::invalid_argument("singular sigma");
  return 1.0 / smin;
}

}  // namespace

SigmaModel SigmaModel::deterministic(std::function<Mat(double)> f,
                                     std::vector<double> breakpoints) {
  if (!f) throw std::invalid_argument("sigma_of_t is required");
  SigmaModel m;
  m.kind = Kind::Deterministic;
  m.sigma_of_t = std::move(f);
  m.breakpoints = std::move(breakpoints);
  std::sort(m.breakpoints.begin(), m.breakpoints.end());
  double bound = 0.0;
  auto probe = [&](double t) {
    if (t < 0.0) return;
    bound = std::max(bound, inv_two_norm(m.sigma_of_t(t)));
  };
  for (int k = 0; k <= 200; ++k) probe(0.5 * k);
  constexpr double inf = std::numeric_limits<double>::infinity();
  for (double tb : m.breakpoints) {
    probe(std::nextafter(tb, -inf));
    probe(std::nextafter(tb, inf));
  }
  m.sigma_inv_norm_bound = bound;
  return m;
}

SigmaModel SigmaModel::constant(Mat sigma) {
  if (sigma.rows() != sigma.cols() || sigma.rows() < 1)
    throw std::invalid_argument("sigma must be square");
  const double bound = inv_two_norm(sigma);
  SigmaModel m;
  m.kind = Kind::Deterministic;
  m.sigma_of_t = [s = std::move(sigma)](double) { return s; };
  m.sigma_inv_norm_bound = bound;
  return m;
}

SigmaModel SigmaModel::markov_factor(double kappa, double theta, double eta, double v0,
                                     std::function<Mat(double)> sigma_of_v,
                                     double sigma_inv_norm_bound) {
  if (!(kappa >= 0.0) || !(eta >= 0.0) || !std::isfinite(theta) || !std::isfinite(v0))
    throw std::invalid_argument("invalid factor dynamics");
  if (!sigma_of_v) throw std::invalid_argument("sigma_of_v is required");
  if (!(sigma_inv_norm_bound > 0.0) || !std::isfinite(sigma_inv_norm_bound))
    throw std::invalid_argument("a finite positive bound on |sigma^-1| is required");
  SigmaModel m;
  m.kind = Kind::MarkovFactor;
  m.kappa = kappa;
  m.theta = theta;
  m.eta = eta;
  m.v0 = v0;
  m.sigma_of_v = std::move(sigma_of_v);
  m.sigma_inv_norm_bound = sigma_inv_norm_bound;
  return m;
}

Mat SigmaModel::sigma_at(double t, double v) const {
  if (kind == Kind::Deterministic) return sigma_of_t(t);
  return sigma_of_v(std::isnan(v) ? v0 : v);
}

double RegressionSurface::eval(double v) const {
  const double x = (v - v_mean) / v_sd;
  double acc = 0.0;
  for (auto it = coeffs.rbegin(); it != coeffs.rend(); ++it) acc = acc * x + *it;
  return acc;
}

double driver(const SigmaModel& model, const MarketSpec& spec, double delta, double rho,
              double t, double y, const Vec& z, double v_factor) {
  const Mat sigma = model.sigma_at(t, v_factor);
  double h;
  if (spec.d == 1)
    h = saddle::saddle_H_value_1d(spec, delta, sigma(0, 0), z(0));
  else
    h = saddle::solve_saddle_H(spec, delta, t, sigma, z).value;
  return h + 0.5 * z.squaredNorm() - rho * y;
}

BsdeSolution solve_bsde_deterministic_sigma(const SigmaModel& model, const MarketSpec& spec,
                                            double delta, double rho, double T, double dt) {
  if (model.kind != SigmaModel::Kind::Deterministic)
    throw std::invalid_argument("a deterministic sigma model is required");
  if (!(rho > 0.0)) throw std::invalid_argument("rho must be positive");
  if (!(T > 0.0) || !(dt > 0.0)) throw std::invalid_argument("T and dt must be positive");

  std::set<double> grid = {0.0, T};
  const long n_uniform = static_cast<long>(std::ceil(T / dt - 1e-12));
  for (long k = 1; k < n_uniform; ++k) grid.insert(k * dt);
  for (double tb : model.breakpoints)
    if (tb > 0.0 && tb < T) grid.insert(tb);
  const std::vector<double> times(grid.begin(), grid.end());
  const int N = static_cast<int>(times.size());

  const Vec z0 = Vec::Zero(spec.d);
  auto H0 = [&](double t) {
    const Mat sigma = model.sigma_of_t(t);
    if (spec.d == 1) return saddle::saddle_H_value_1d(spec, delta, sigma(0, 0), 0.0);
    return saddle::solve_saddle_H(spec, delta, t, sigma, z0).value;
  };

  std::vector<double> Y(N, 0.0);
  double sup_H = 0.0;
  // Backward classical RK4 on Y' = rho Y - H(t, 0); stage times are pinned
  // strictly inside each interval so a breakpoint never samples the far side
  // of a discontinuity.
  for (int k = N - 2; k >= 0; --k) {
    const double a = times[k], b = times[k + 1];
    const double h = b - a;
    const double H_hi = H0(std::nextafter(b, a));
    const double H_mid = H0(0.5 * (a + b));
    const double H_lo = H0(std::nextafter(a, b));
    sup_H = std::max({sup_H, H_hi, H_mid, H_lo});
    const double y1 = Y[k + 1];
    const double k1 = rho * y1 - H_hi;
    const double k2 = rho * (y1 - 0.5 * h * k1) - H_mid;
    const double k3 = rho * (y1 - 0.5 * h * k2) - H_mid;
    const double k4 = rho * (y1 - h * k3) - H_lo;
    Y[k] = y1 - h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }

  BsdeSolution sol;
  sol.T = T;
  sol.dt = dt;
  sol.rho = rho;
  sol.times = times;
  sol.Y = std::move(Y);
  sol.Z.assign(N, Vec::Zero(spec.d));
  sol.sup_bound = sup_H / rho;
  sol.tail_estimate.resize(N);
  for (int k = 0; k < N; ++k)
    sol.tail_estimate[k] = sol.sup_bound * std::exp(-rho * (T - times[k]));
  return sol;
}

BsdeSolution solve_bsde_lsmc(const SigmaModel& model, const MarketSpec& spec, double delta,
                             double rho, double T, double dt, int n_paths, int n_basis,
                             std::uint64_t seed) {
  if (model.kind != SigmaModel::Kind::MarkovFactor)
    throw std::invalid_argument("a Markov-factor sigma model is required");
  if (!(rho > 0.0)) throw std::invalid_argument("rho must be positive");
  if (!(T > 0.0) || !(dt > 0.0) || dt > T)
    throw std::invalid_argument("T and dt must be positive with dt <= T");
  if (n_paths < 2) throw std::invalid_argument("n_paths must be at least 2");
  if (n_basis < 2) throw std::invalid_argument("n_basis must be at least 2");

  const int n_steps = std::max<int>(1, static_cast<int>(std::llround(T / dt)));
  const double dte = T / n_steps;
  const int d = spec.d;
  const double decay = std::exp(-model.kappa * dte);
  const double swdt = std::sqrt(dte);

  // Forward factor pass. Only sqrt(n_steps)-spaced checkpoints are stored;
  // the backward pass regenerates each block from its checkpoint with the
  // same counter-based increments, so memory is O(n_paths sqrt(n_steps)).
  const int B = std::max(1, static_cast<int>(std::ceil(std::sqrt(double(n_steps)))));
  const int n_chk = (n_steps + B - 1) / B;
  Eigen::MatrixXd chk(n_paths, n_chk);
  for (int p = 0; p < n_paths; ++p) {
    NormalStream rng(seed, static_cast<std::uint64_t>(p));
    double V = model.v0;
    for (int s = 0; s < n_steps; ++s) {
      if (s % B == 0) chk(p, s / B) = V;
      const double xi0 = rng.next();
      for (int j = 1; j < d; ++j) rng.next();  // keep per-step index alignment
      V = model.theta + (V - model.theta) * decay + model.eta * swdt * xi0;
    }
  }

  Eigen::MatrixXd Vblk, Wblk;
  int cur_blk = -1;
  auto load_block = [&](int blk) {
    const int bs = blk * B;
    const int be = std::min(n_steps, bs + B);
    const int blen = be - bs;
    Vblk.resize(n_paths, blen);
    Wblk.resize(n_paths, blen * d);
    for (int p = 0; p < n_paths; ++p) {
      NormalStream rng(seed, static_cast<std::uint64_t>(p),
                       static_cast<std::uint64_t>(bs) * d);
      double V = chk(p, blk);
      for (int u = 0; u < blen; ++u) {
        Vblk(p, u) = V;
        for (int j = 0; j < d; ++j) Wblk(p, u * d + j) = rng.next();
        V = model.theta + (V - model.theta) * decay + model.eta * swdt * Wblk(p, u * d);
      }
    }
    cur_blk = blk;
  };

  BsdeSolution sol;
  sol.T = T;
  sol.dt = dte;
  sol.rho = rho;
  sol.seed = seed;
  sol.times.assign(n_steps + 1, 0.0);
  sol.Y.assign(n_steps + 1, 0.0);
  sol.Z.assign(n_steps + 1, Vec::Zero(d));
  sol.coeff_Y.resize(n_steps);
  sol.coeff_Z.resize(n_steps);
  sol.times[n_steps] = T;

  Eigen::VectorXd Ynext = Eigen::VectorXd::Zero(n_paths);
  Eigen::VectorXd Ycur(n_paths), x(n_paths), yhat(n_paths), resid(n_paths), reg(n_paths);
  Eigen::MatrixXd Phi(n_paths, n_basis);
  Eigen::MatrixXd Zhat(n_paths, d);
  int min_basis = n_basis;
  double sup_H = 0.0;
  const double denom = 1.0 + rho * dte;

  for (int s = n_steps - 1; s >= 0; --s) {
    if (s / B != cur_blk) load_block(s / B);
    const int off = s - cur_blk * B;
    const auto Vs = Vblk.col(off);
    const double t_s = s * dte;

    const double mean = Vs.mean();
    const double sd = std::sqrt((Vs.array() - mean).square().sum() / n_paths);
    int K = n_basis;
    double sd_use = sd;
    if (sd < 1e-12 * (1.0 + std::abs(mean))) {
      K = 1;
      sd_use = 1.0;
    }
    x = (Vs.array() - mean) / sd_use;
    Phi.col(0).setOnes();
    for (int k = 1; k < K; ++k) Phi.col(k) = Phi.col(k - 1).cwiseProduct(x);

    // Monomials are nested, so conditioning reductions reuse leading blocks
    // of the same Gram matrix.
    Eigen::MatrixXd G = Phi.leftCols(K).transpose() * Phi.leftCols(K) / n_paths;
    while (K > 1) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G.topLeftCorner(K, K));
      const double lmin = es.eigenvalues().minCoeff();
      const double lmax = es.eigenvalues().maxCoeff();
      if (lmin <= 0.0 || lmax > 1e10 * lmin) {
        --K;
        continue;
      }
      break;
    }
    // V at time 0 is the same for every path, so the t = 0 regression is degenerate by
    // construction; exclude it from the reported basis size when there are later steps.
    if (s > 0 || n_steps == 1) min_basis = std::min(min_basis, K);
    const auto PhiK = Phi.leftCols(K);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(G.topLeftCorner(K, K));

    const Eigen::VectorXd a = ldlt.solve(PhiK.transpose() * Ynext / n_paths);
    yhat = PhiK * a;
    resid = Ynext - yhat;
    sol.coeff_Y[s] = {mean, sd_use, std::vector<double>(a.data(), a.data() + K)};

    // Z from centered increments: regress (Y - E[Y]) dW / dt on the basis.
    // Centering is a control variate; it removes the O(Y^2/(n dt)) variance
    // the raw product estimator would carry.
    sol.coeff_Z[s].resize(d);
    for (int j = 0; j < d; ++j) {
      reg = resid.cwiseProduct(Wblk.col(off * d + j)) / swdt;
      const Eigen::VectorXd c = ldlt.solve(PhiK.transpose() * reg / n_paths);
      Zhat.col(j) = PhiK * c;
      sol.coeff_Z[s][j] = {mean, sd_use, std::vector<double>(c.data(), c.data() + K)};
    }

    if (s == 0)
      sol.y0_std_error =
          std::sqrt((Ynext.array() - Ynext.mean()).square().sum() / n_paths / n_paths);

    if (d == 1) {
      for (int p = 0; p < n_paths; ++p) {
        const double sP = model.sigma_of_v(Vs(p))(0, 0);
        const double zP = Zhat(p, 0);
        const double h = saddle::saddle_H_value_1d(spec, delta, sP, zP);
        sup_H = std::max(sup_H, saddle::saddle_H_value_1d(spec, delta, sP, 0.0));
        Ycur(p) = (yhat(p) + (h + 0.5 * zP * zP) * dte) / denom;
      }
    } else {
      const Vec zzero = Vec::Zero(d);
      for (int p = 0; p < n_paths; ++p) {
        const Mat sig = model.sigma_of_v(Vs(p));
        const Vec zP = Zhat.row(p).transpose();
        const double h = saddle::solve_saddle_H(spec, delta, t_s, sig, zP).value;
        sup_H = std::max(sup_H, saddle::solve_saddle_H(spec, delta, t_s, sig, zzero).value);
        Ycur(p) = (yhat(p) + (h + 0.5 * zP.squaredNorm()) * dte) / denom;
      }
    }

    sol.times[s] = t_s;
    sol.Y[s] = Ycur.mean();
    sol.Z[s] = Zhat.colwise().mean().transpose();
    const double z2 = Zhat.rowwise().squaredNorm().mean();
    sol.z_sumsq_unweighted += z2 * dte;
    sol.z_sumsq_weighted += z2 * dte * std::exp(-2.0 * rho * t_s);
    std::swap(Ynext, Ycur);
  }

  sol.basis_size_used = min_basis;
  sol.sup_bound = sup_H / rho;
  sol.tail_estimate.resize(n_steps + 1);
  for (int s = 0; s <= n_steps; ++s)
    sol.tail_estimate[s] = sol.sup_bound * std::exp(-rho * (T - sol.times[s]));
  return sol;
}

DriverEstimatesReport driver_estimates_check(const SigmaModel& model, const MarketSpec& spec,
                                             double delta, double rho, int n_samples,
                                             std::uint64_t seed) {
  if (n_samples < 1) throw std::invalid_argument("n_samples must be positive");
  const int d = spec.d;

  double sumsq = 0.0;
  for (int i = 0; i < d; ++i) {
    const double m = std::max(std::abs(spec.b_lo(i) - spec.r), std::abs(spec.b_hi(i) - spec.r));
    sumsq += m * m;
  }
  const double M = model.sigma_inv_norm_bound * std::sqrt(sumsq);
  const double K_H = delta / (1.0 - delta) * std::max(1.0, M);

  DriverEstimatesReport rep;
  rep.n_samples = n_samples;
  // K must dominate both the z-growth of H + |z|^2/2 and |F(t,0,0)| = H(t,0).
  rep.K = std::max(K_H + 0.5, delta * spec.r + 0.5 * delta / (1.0 - delta) * M * M);

  const double Rz = 2.0 * std::max(1.0, M);
  const double By = 2.0 * (rep.K / rho + 1.0);
  const double sd_stat = model.kappa > 0.0 ? model.eta / std::sqrt(2.0 * model.kappa) : 0.0;
  const Vec zzero = Vec::Zero(d);

  Vec z1(d), z2(d);
  for (int n = 0; n < n_samples; ++n) {
    auto U = [&](int k) {
      return philox::uniform_at(seed, static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(k));
    };
    const double t = 10.0 * U(0);
    const double y1 = By * (2.0 * U(1) - 1.0);
    const double y2 = By * (2.0 * U(2) - 1.0);
    double v = kNaN;
    if (model.kind == SigmaModel::Kind::MarkovFactor)
      v = model.theta + 3.0 * sd_stat * (2.0 * U(3) - 1.0);
    for (int j = 0; j < d; ++j) {
      z1(j) = Rz * (2.0 * U(4 + j) - 1.0);
      z2(j) = Rz * (2.0 * U(4 + d + j) - 1.0);
    }

    const double Fa = driver(model, spec, delta, rho, t, y1, z1, v);
    const double Fb = driver(model, spec, delta, rho, t, y1, z2, v);
    const double Fc = driver(model, spec, delta, rho, t, y2, z1, v);

    const double dz = (z1 - z2).norm();
    const double weight = (1.0 + z1.norm() + z2.norm()) * dz;
    const double diff = std::abs(Fa - Fb);
    if (diff > rep.K * weight + 1e-10 * (1.0 + std::abs(Fa) + std::abs(Fb)))
      ++rep.lipschitz_violations;
    if (dz > 1e-12) rep.max_growth_ratio = std::max(rep.max_growth_ratio, diff / weight);

    rep.f00_max = std::max(rep.f00_max, std::abs(driver(model, spec, delta, rho, t, 0.0, zzero, v)));

    const double dy = y1 - y2;
    const double err = std::abs(dy * (Fa - Fc) + rho * dy * dy);
    rep.max_affinity_error = std::max(rep.max_affinity_error, err);
    if (err > 5e-12 * (1.0 + std::abs(dy)) * (1.0 + std::abs(Fa) + std::abs(Fc)))
      ++rep.affinity_violations;
  }
  rep.f00_within_K = rep.f00_max <= rep.K * (1.0 + 1e-12);
  return rep;
}

}  // namespace rfp::bsde
