#include "rfp/saddle.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>

#include "rfp/errors.hpp"

namespace rfp::saddle {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Vec clamp_box(const Vec& v, const Vec& lo, const Vec& hi) {
  return v.cwiseMax(lo).cwiseMin(hi);
}

void require_delta(double delta) {
  if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("delta must lie in (0,1)");
}

/// max_p G(p; b, S) over the portfolio box for fixed (b, S): concave
/// box-constrained quadratic, solved by FISTA with step 1/L. Returns the
/// value; +infinity when the program is unbounded above.
double max_G_over_box(const MarketSpec& spec, double delta, const Vec& b, const Mat& S,
                      Vec warm) {
  const int d = spec.d;
  const Mat A = delta * (1.0 - delta) * S;  // curvature of -G
  const Vec c = delta * (b - Vec::Constant(d, spec.r));
  Eigen::SelfAdjointEigenSolver<Mat> es(A, Eigen::EigenvaluesOnly);
  const double L = std::max(es.eigenvalues().maxCoeff(), 0.0);
  const double scale = 1.0 + c.cwiseAbs().maxCoeff() + A.cwiseAbs().maxCoeff();

  if (L <= 1e-14 * scale) {
    // Essentially linear objective over the box.
    double val = delta * spec.r;
    for (int i = 0; i < d; ++i) {
      if (c(i) > 1e-14 * scale) {
        if (spec.p_hi(i) == kInf) return kInf;
        val += c(i) * spec.p_hi(i);
      } else if (c(i) < -1e-14 * scale) {
        if (spec.p_lo(i) == -kInf) return kInf;
        val += c(i) * spec.p_lo(i);
      }
    }
    return val;
  }

  const double step = 1.0 / L;
  Vec x = clamp_box(std::move(warm), spec.p_lo, spec.p_hi);
  Vec y = x;
  double tk = 1.0;
  for (int it = 0; it < 5000; ++it) {
    Vec grad = A * y - c;  // gradient of the negated objective
    Vec x_next = clamp_box(y - step * grad, spec.p_lo, spec.p_hi);
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * tk * tk));
    y = x_next + ((tk - 1.0) / t_next) * (x_next - x);
    const double move = (x_next - x).norm();
    x = x_next;
    tk = t_next;
    if (x.cwiseAbs().maxCoeff() > 1e10) return kInf;
    if (move <= 1e-14 * (1.0 + x.norm()) && it > 2) break;
  }
  // A few monotone cleanup steps (FISTA is not monotone).
  for (int it = 0; it < 50; ++it) {
    Vec grad = A * x - c;
    Vec x_next = clamp_box(x - step * grad, spec.p_lo, spec.p_hi);
    if ((x_next - x).norm() <= 1e-16 * (1.0 + x.norm())) break;
    x = x_next;
  }
  return eval_G(spec, delta, x, b, S);
}

/// Dual model candidates at a portfolio p: bang-bang drift with ties resolved
/// to the feasible point nearest r (which makes the certificate tight at
/// interior saddle points) and the variance-maximizing hull vertex.
void dual_candidates_G(const MarketSpec& spec, const Vec& p, Vec& b_out, Mat& S_out) {
  const int d = spec.d;
  const double tol = 1e-11 * (1.0 + p.cwiseAbs().maxCoeff());
  b_out.resize(d);
  for (int i = 0; i < d; ++i) {
    if (p(i) > tol)
      b_out(i) = spec.b_lo(i);
    else if (p(i) < -tol)
      b_out(i) = spec.b_hi(i);
    else
      b_out(i) = std::clamp(spec.r, spec.b_lo(i), spec.b_hi(i));
  }
  int best_k = 0;
  double best_q = -kInf, best_tr = -kInf;
  for (std::size_t k = 0; k < spec.cov_vertices.size(); ++k) {
    const double q = p.dot(spec.cov_vertices[k] * p);
    const double tr = spec.cov_vertices[k].trace();
    // Primary key: worst-case variance; tie-break on trace so the p = 0
    // candidate still proposes the most diffuse vertex.
    if (q > best_q + 1e-15 * (1.0 + std::abs(best_q)) ||
        (std::abs(q - best_q) <= 1e-15 * (1.0 + std::abs(best_q)) && tr > best_tr)) {
      best_q = q;
      best_tr = tr;
      best_k = static_cast<int>(k);
    }
  }
  S_out = spec.cov_vertices[best_k];
}

/// Maximize a concave scalar section by ternary search over [lo, hi]
/// (bounds may be infinite; the bracket is grown from the current point).
double ternary_max(const std::function<double(double)>& f, double x0, double lo, double hi) {
  double a = std::max(lo, x0 - 1.0), b = std::min(hi, x0 + 1.0);
  for (int grow = 0; grow < 80; ++grow) {
    bool grew = false;
    if (f(a) >= f(0.5 * (a + b)) && a > lo) {
      a = std::max(lo, a - (b - a) * 2.0);
      grew = true;
    }
    if (f(b) >= f(0.5 * (a + b)) && b < hi) {
      b = std::min(hi, b + (b - a) * 2.0);
      grew = true;
    }
    if (!grew) break;
    if (std::abs(a) > 1e10 || std::abs(b) > 1e10)
      throw rfp::SolverError("unbounded saddle problem");
  }
  for (int it = 0; it < 200 && (b - a) > 1e-15 * (1.0 + std::abs(a) + std::abs(b)); ++it) {
    const double m1 = a + (b - a) / 3.0, m2 = b - (b - a) / 3.0;
    if (f(m1) < f(m2))
      a = m1;
    else
      b = m2;
  }
  return 0.5 * (a + b);
}

}  // namespace

double eval_G(const MarketSpec& spec, double delta, const Vec& p, const Vec& b, const Mat& S) {
  require_delta(delta);
  if (p.size() != spec.d || b.size() != spec.d || S.rows() != spec.d || S.cols() != spec.d)
    throw std::invalid_argument("dimension mismatch");
  const Vec excess = b - Vec::Constant(spec.d, spec.r);
  return 0.5 * delta * (delta - 1.0) * p.dot(S * p) + delta * p.dot(excess) + delta * spec.r;
}

InnerMinG inner_min_G(const MarketSpec& spec, double delta, const Vec& p) {
  require_delta(delta);
  InnerMinG out;
  out.b_star.resize(spec.d);
  for (int i = 0; i < spec.d; ++i) {
    if (p(i) > 0.0) {
      out.b_star(i) = spec.b_lo(i);
    } else if (p(i) < 0.0) {
      out.b_star(i) = spec.b_hi(i);
    } else {
      out.b_star(i) = 0.5 * (spec.b_lo(i) + spec.b_hi(i));
      out.tie_indices.push_back(i);
    }
  }
  // The quadratic coefficient is negative, so the adversary maximizes the
  // variance form; a linear functional over the hull attains its extremes
  // at vertices. Ties resolve to the lowest index.
  int best_k = 0;
  double best_q = -kInf;
  for (std::size_t k = 0; k < spec.cov_vertices.size(); ++k) {
    const double q = p.dot(spec.cov_vertices[k] * p);
    if (q > best_q) {
      best_q = q;
      best_k = static_cast<int>(k);
    }
  }
  out.vertex_index = best_k;
  out.sigma_star = spec.cov_vertices[best_k];
  out.value = eval_G(spec, delta, p, out.b_star, out.sigma_star);
  return out;
}

SaddleSolutionG solve_saddle_G_1d(const MarketSpec& spec, double delta) {
  require_delta(delta);
  spec.validate();
  if (spec.d != 1) throw std::logic_error("solve_saddle_G_1d requires d == 1");

  // Worst covariance is the largest variance level regardless of regime.
  int hi_k = 0;
  for (std::size_t k = 1; k < spec.cov_vertices.size(); ++k)
    if (spec.cov_vertices[k](0, 0) > spec.cov_vertices[hi_k](0, 0)) hi_k = static_cast<int>(k);
  const double var_hi = spec.cov_vertices[hi_k](0, 0);

  SaddleSolutionG out;
  out.sigma_star = spec.cov_vertices[hi_k];
  out.p_star.resize(1);
  out.b_star.resize(1);

  const double r = spec.r, b_lo = spec.b_lo(0), b_hi = spec.b_hi(0);
  if (r <= b_lo) {
    out.b_star(0) = b_lo;
    if (var_hi > 0.0) {
      out.p_star(0) = std::min(spec.p_hi(0), (b_lo - r) / ((1.0 - delta) * var_hi));
    } else if (b_lo > r) {
      if (spec.p_hi(0) == kInf) throw rfp::SolverError("unbounded saddle problem");
      out.p_star(0) = spec.p_hi(0);
    } else {
      out.p_star(0) = 0.0;
    }
  } else if (r >= b_hi) {
    out.b_star(0) = b_hi;
    if (var_hi > 0.0) {
      out.p_star(0) = std::max(spec.p_lo(0), (b_hi - r) / ((1.0 - delta) * var_hi));
    } else if (b_hi < r) {
      if (spec.p_lo(0) == -kInf) throw rfp::SolverError("unbounded saddle problem");
      out.p_star(0) = spec.p_lo(0);
    } else {
      out.p_star(0) = 0.0;
    }
  } else {
    // r interior to the drift box: the adversary can match the riskless
    // rate, so not investing is optimal.
    out.p_star(0) = 0.0;
    out.b_star(0) = r;
  }
  out.value = eval_G(spec, delta, out.p_star, out.b_star, out.sigma_star);
  return out;
}

SaddleSolutionG solve_saddle_G_nd(const MarketSpec& spec, double delta, double tol,
                                  int max_iter) {
  require_delta(delta);
  spec.validate();
  const int d = spec.d;

  Vec p = Vec::Zero(d);
  InnerMinG cur = inner_min_G(spec, delta, p);
  Vec p_best = p;
  double f_best = cur.value;
  double gamma = 0.1 * (1.0 + std::abs(f_best));
  int since_improve = 0;

  SaddleSolutionG out;
  auto certify = [&]() {
    Vec b_cand;
    Mat S_cand;
    dual_candidates_G(spec, p_best, b_cand, S_cand);
    const double upper = max_G_over_box(spec, delta, b_cand, S_cand, p_best);
    return upper - f_best;
  };
  auto polish = [&]() {
    for (int sweep = 0; sweep < 2; ++sweep) {
      for (int i = 0; i < d; ++i) {
        Vec probe = p_best;
        auto section = [&](double xi) {
          probe(i) = xi;
          return inner_min_G(spec, delta, probe).value;
        };
        const double xi = ternary_max(section, p_best(i), spec.p_lo(i), spec.p_hi(i));
        probe(i) = xi;
        const double v = inner_min_G(spec, delta, probe).value;
        if (v > f_best) {
          f_best = v;
          p_best = probe;
        }
      }
    }
  };

  int it = 0;
  bool certified = false;
  for (; it < max_iter; ++it) {
    // Supergradient of the concave value p -> min_{b,S} G at the inner
    // minimizers (Danskin).
    Vec g = delta * (delta - 1.0) * (cur.sigma_star * p) +
            delta * (cur.b_star - Vec::Constant(d, spec.r));
    const double gn2 = g.squaredNorm();
    if (gn2 <= 1e-30) break;
    const double step = (f_best + gamma - cur.value) / gn2;
    p = clamp_box(p + step * g, spec.p_lo, spec.p_hi);
    if (p.cwiseAbs().maxCoeff() > 1e9 || f_best > 1e12)
      throw rfp::SolverError("unbounded saddle problem");
    cur = inner_min_G(spec, delta, p);
    if (cur.value > f_best + 1e-16 * (1.0 + std::abs(f_best))) {
      if (cur.value > f_best + 0.05 * gamma) since_improve = 0;
      f_best = cur.value;
      p_best = p;
    } else {
      ++since_improve;
    }
    if (since_improve >= 40) {
      gamma *= 0.5;
      since_improve = 0;
      p = p_best;
      cur = inner_min_G(spec, delta, p);
    }
    if ((it + 1) % 50 == 0 || gamma < 1e-13 * (1.0 + std::abs(f_best))) {
      polish();
      out.residual = certify();
      certified = true;
      if (out.residual <= tol) break;
      if (gamma < 1e-15 * (1.0 + std::abs(f_best))) break;
    }
  }
  if (!certified) {
    polish();
    out.residual = certify();
  }

  InnerMinG fin = inner_min_G(spec, delta, p_best);
  out.value = fin.value;
  out.p_star = p_best;
  out.b_star = fin.b_star;
  out.sigma_star = fin.sigma_star;
  out.iterations = std::min(it + 1, max_iter);
  return out;
}

SaddleSolutionG solve_saddle_G(const MarketSpec& spec, double delta, double tol) {
  if (spec.d == 1) return solve_saddle_G_1d(spec, delta);
  return solve_saddle_G_nd(spec, delta, tol);
}

ProjResult project_onto_sigma_pi(const Mat& sigma, const Vec& p_lo, const Vec& p_hi,
                                 const Vec& v, double tol, int max_iter) {
  const int d = static_cast<int>(sigma.rows());
  ProjResult out;
  if (d == 1) {
    const double s = sigma(0, 0);
    if (std::abs(s) < 1e-14) throw std::invalid_argument("singular sigma");
    out.p.resize(1);
    out.u.resize(1);
    const double lo = std::min(s * p_lo(0), s * p_hi(0));
    const double hi = std::max(s * p_lo(0), s * p_hi(0));
    out.u(0) = std::clamp(v(0), lo, hi);
    out.p(0) = out.u(0) / s;
    out.dist = std::abs(v(0) - out.u(0));
    return out;
  }

  const Mat A = sigma * sigma.transpose();
  Eigen::SelfAdjointEigenSolver<Mat> es(A, Eigen::EigenvaluesOnly);
  const double L = es.eigenvalues().maxCoeff();
  if (!(es.eigenvalues().minCoeff() > 1e-14 * std::max(L, 1.0)))
    throw std::invalid_argument("singular sigma");
  const double step = 1.0 / L;
  Vec p = Vec::Zero(d);
  int it = 0;
  for (; it < max_iter; ++it) {
    Vec grad = sigma * (sigma.transpose() * p - v);
    Vec p_next = clamp_box(p - step * grad, p_lo, p_hi);
    const double mapping = (p - p_next).norm() / step;
    p = p_next;
    if (mapping <= tol * (1.0 + v.norm())) break;
  }
  out.p = p;
  out.u = sigma.transpose() * p;
  out.dist = (v - out.u).norm();
  out.iterations = it;
  return out;
}

double eval_H_bilinear(const MarketSpec& spec, double delta, const Mat& sigma, const Vec& z,
                       const Vec& p, const Vec& b) {
  require_delta(delta);
  const Vec load = sigma.transpose() * p;
  const Vec excess = b - Vec::Constant(spec.d, spec.r);
  return 0.5 * delta * (delta - 1.0) * load.squaredNorm() + delta * p.dot(excess) +
         delta * p.dot(sigma * z) + delta * spec.r;
}

namespace {

/// Defensive exit check: away from flagged ties, the optimal drift must be
/// the bang-bang selection dictated by sign(p*_i).
void check_sign_consistency(const MarketSpec& spec, const SaddleSolutionH& sol) {
  const double p_tol = 1e-7 * (1.0 + sol.p_star.cwiseAbs().maxCoeff());
  const double b_tol = 1e-6 * (1.0 + sol.b_star.cwiseAbs().maxCoeff());
  for (int i = 0; i < spec.d; ++i) {
    if (std::find(sol.tie_report.begin(), sol.tie_report.end(), i) != sol.tie_report.end())
      continue;
    if (sol.p_star(i) > p_tol && std::abs(sol.b_star(i) - spec.b_lo(i)) > b_tol)
      throw rfp::SolverError("saddle drift selection inconsistent with portfolio sign");
    if (sol.p_star(i) < -p_tol && std::abs(sol.b_star(i) - spec.b_hi(i)) > b_tol)
      throw rfp::SolverError("saddle drift selection inconsistent with portfolio sign");
  }
}

struct H1dCore {
  double value, load, u, s;  // load = optimal sigma^T p
};

H1dCore saddle_H_core_1d(const MarketSpec& spec, double delta, double s, double z) {
  if (std::abs(s) < 1e-14) throw std::invalid_argument("singular sigma");
  const double r = spec.r;
  const double s_lo = std::min(s * spec.p_lo(0), s * spec.p_hi(0));
  const double s_hi = std::max(s * spec.p_lo(0), s * spec.p_hi(0));

  // In the variable u = (b - r)/s + z the inner maximum over the portfolio
  // is a convex piecewise-quadratic function of u with global minimum 0 at
  // u = 0, so the adversary moves u as close to 0 as the drift box allows.
  const double u_at_blo = (spec.b_lo(0) - r) / s + z;
  const double u_at_bhi = (spec.b_hi(0) - r) / s + z;
  const double u_lo = std::min(u_at_blo, u_at_bhi);
  const double u_hi = std::max(u_at_blo, u_at_bhi);
  const double u = std::clamp(0.0, u_lo, u_hi);

  const double ratio = u / (1.0 - delta);
  double phi;
  double load;
  if (ratio > s_hi) {
    load = s_hi;
    phi = delta * s_hi * u - 0.5 * delta * (1.0 - delta) * s_hi * s_hi;
  } else if (ratio < s_lo) {
    load = s_lo;
    phi = delta * s_lo * u - 0.5 * delta * (1.0 - delta) * s_lo * s_lo;
  } else {
    load = ratio;
    phi = 0.5 * (delta / (1.0 - delta)) * u * u;
  }
  return {delta * r + phi, load, u, s};
}

SaddleSolutionH solve_saddle_H_1d(const MarketSpec& spec, double delta, double t,
                                  const Mat& sigma, const Vec& z) {
  const H1dCore core = saddle_H_core_1d(spec, delta, sigma(0, 0), z(0));
  const double s = core.s;
  const double s_lo = std::min(s * spec.p_lo(0), s * spec.p_hi(0));
  const double s_hi = std::max(s * spec.p_lo(0), s * spec.p_hi(0));

  SaddleSolutionH out;
  out.t = t;
  out.z = z;
  out.value = core.value;
  out.p_star = Vec::Constant(1, core.load / s);
  out.b_star = Vec::Constant(1, spec.r + s * (core.u - z(0)));
  // p* = 0 makes H independent of b: every drift in the box is optimal.
  if (std::abs(out.p_star(0)) <= 1e-13 * (1.0 + std::abs(s_hi) + std::abs(s_lo)))
    out.tie_report.push_back(0);
  check_sign_consistency(spec, out);
  return out;
}

}  // namespace

double saddle_H_value_1d(const MarketSpec& spec, double delta, double sigma_scalar, double z) {
  require_delta(delta);
  return saddle_H_core_1d(spec, delta, sigma_scalar, z).value;
}

SaddleSolutionH solve_saddle_H_subgradient(const MarketSpec& spec, double delta, double t,
                                           const Mat& sigma, const Vec& z, double tol,
                                           int max_iter) {
  require_delta(delta);
  const int d = spec.d;
  const Mat sigma_inv = sigma.partialPivLu().solve(Mat::Identity(d, d));
  const Vec r1 = Vec::Constant(d, spec.r);

  // psi(b) = max_p H(p; b), evaluated through the projection of
  // w/(1-delta) onto sigma^T Pi, where w = sigma^{-1}(b - r 1) + z.
  auto outer = [&](const Vec& b, Vec* p_arg) {
    const Vec w = sigma_inv * (b - r1) + z;
    ProjResult proj =
        project_onto_sigma_pi(sigma, spec.p_lo, spec.p_hi, w / (1.0 - delta), 1e-13);
    if (p_arg) *p_arg = proj.p;
    return delta * spec.r - 0.5 * delta * (1.0 - delta) * proj.dist * proj.dist +
           0.5 * (delta / (1.0 - delta)) * w.squaredNorm();
  };

  Vec b = clamp_box(r1, spec.b_lo, spec.b_hi);
  Vec p_arg;
  double f = outer(b, &p_arg);
  Vec b_best = b;
  Vec p_best = p_arg;
  double f_best = f;
  double gamma = 0.1 * (1.0 + std::abs(f));
  int since_improve = 0;

  auto lower_bound = [&]() {
    // min_b H(p_best; b) is bang-bang in b (affine with slope delta p).
    Vec b_cand(d);
    for (int i = 0; i < d; ++i)
      b_cand(i) = p_best(i) < 0.0 ? spec.b_hi(i) : spec.b_lo(i);
    return eval_H_bilinear(spec, delta, sigma, z, p_best, b_cand);
  };
  auto polish = [&]() {
    for (int sweep = 0; sweep < 2; ++sweep) {
      for (int i = 0; i < d; ++i) {
        Vec probe = b_best;
        auto section = [&](double bi) {
          probe(i) = bi;
          return -outer(probe, nullptr);  // ternary_max maximizes
        };
        const double bi = ternary_max(section, b_best(i), spec.b_lo(i), spec.b_hi(i));
        probe(i) = bi;
        const double v = outer(probe, nullptr);
        if (v < f_best) {
          f_best = v;
          b_best = probe;
          outer(b_best, &p_best);
        }
      }
    }
  };

  double residual = kInf;
  int it = 0;
  for (; it < max_iter; ++it) {
    Vec g = delta * p_arg;  // subgradient of psi at b (Danskin)
    const double gn2 = g.squaredNorm();
    if (gn2 <= 1e-30) break;
    const double step = (f - (f_best - gamma)) / gn2;
    b = clamp_box(b - step * g, spec.b_lo, spec.b_hi);
    f = outer(b, &p_arg);
    if (f < f_best - 1e-16 * (1.0 + std::abs(f_best))) {
      if (f < f_best - 0.05 * gamma) since_improve = 0;
      f_best = f;
      b_best = b;
      p_best = p_arg;
    } else {
      ++since_improve;
    }
    if (since_improve >= 40) {
      gamma *= 0.5;
      since_improve = 0;
      b = b_best;
      f = outer(b, &p_arg);
    }
    if ((it + 1) % 50 == 0 || gamma < 1e-13 * (1.0 + std::abs(f_best))) {
      polish();
      residual = f_best - lower_bound();
      if (residual <= tol) break;
      if (gamma < 1e-15 * (1.0 + std::abs(f_best))) break;
    }
  }
  if (residual == kInf) {
    polish();
    residual = f_best - lower_bound();
  }
  if (residual > std::max(100.0 * tol, 1e-7) * (1.0 + std::abs(f_best)))
    throw rfp::SolverError("saddle solver failed to converge to the requested tolerance");

  SaddleSolutionH out;
  out.t = t;
  out.z = z;
  out.value = f_best;
  out.p_star = p_best;
  out.b_star = b_best;
  out.residual = residual;
  out.iterations = std::min(it + 1, max_iter);
  const double p_scale = 1.0 + p_best.cwiseAbs().maxCoeff();
  for (int i = 0; i < d; ++i)
    if (std::abs(p_best(i)) <= 1e-9 * p_scale) out.tie_report.push_back(i);
  check_sign_consistency(spec, out);
  return out;
}

SaddleSolutionH solve_saddle_H(const MarketSpec& spec, double delta, double t, const Mat& sigma,
                               const Vec& z, double tol) {
  require_delta(delta);
  if (spec.d == 1) return solve_saddle_H_1d(spec, delta, t, sigma, z);
  return solve_saddle_H_subgradient(spec, delta, t, sigma, z, tol);
}

double lipschitz_K_H(const MarketSpec& spec, double delta, const Mat& sigma) {
  require_delta(delta);
  const int d = spec.d;
  const Mat sigma_inv = sigma.partialPivLu().solve(Mat::Identity(d, d));
  double sumsq = 0.0;
  for (int i = 0; i < d; ++i) {
    const double m = std::max(std::abs(spec.b_lo(i) - spec.r), std::abs(spec.b_hi(i) - spec.r));
    sumsq += m * m;
  }
  const double M = sigma_inv.operatorNorm() * std::sqrt(sumsq);
  return (delta / (1.0 - delta)) * std::max(1.0, M);
}

}  // namespace rfp::saddle
