#pragma once

#include <functional>
#include <optional>
#include <vector>

#include <json.hpp>

namespace rfp::preferences {

/// Deterministic consumption-weight process lambda_t >= 0.
/// Exponential kind: lambda_t = alpha * exp(-(rate_base + beta) t), where
/// rate_base is the market value G (drift+volatility context) or rho*C
/// (drift-only context). Tabulated kind interpolates piecewise-linearly.
struct LambdaSpec {
  enum class Kind { Zero, Exponential, Tabulated };
  Kind kind = Kind::Zero;
  double alpha = 0.0, beta = 1.0, rate_base = 0.0;
  std::vector<double> times, values;

  static LambdaSpec zero();
  static LambdaSpec exponential(double alpha, double beta, double rate_base);
  static LambdaSpec tabulated(std::vector<double> times, std::vector<double> values);

  double value(double t) const;

  /// I(t) = int_0^t exp(G s/(1-delta)) lambda_s^{1/(1-delta)} ds.
  /// Closed form for zero/exponential; adaptive trapezoid-Richardson
  /// quadrature (target 1e-12 absolute) for tabulated lambda.
  double power_integral(double t, double delta, double G) const;

  /// Supremum of I over [0, infinity): finite closed form when the
  /// exponential rate wins, +infinity otherwise, NaN for tabulated lambda.
  double power_integral_sup_infinite(double delta, double G) const;

  static LambdaSpec from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

/// Piecewise-linear sample of a scalar path with exact integration.
struct SampledPath {
  std::vector<double> times;
  std::vector<double> values;

  static SampledPath make(std::vector<double> times, std::vector<double> values);
  static SampledPath constant(double v, double t0, double t1);

  double value(double t) const;        // linear interpolation, clamped ends
  double integral_to(double t) const;  // exact integral of the interpolant
  double max_abs() const;
  bool empty() const { return times.empty(); }

 private:
  std::vector<double> prefix_;  // cumulative exact integrals at the nodes
};

struct ConditionReport {
  bool holds = false;
  double margin = 0.0;                        // threshold - sup of the integral on the horizon
  std::optional<double> first_violation_time;
  double sup_integral = 0.0;                  // integral at the horizon (monotone integrand)
  double analytic_sup = 0.0;                  // infinite-horizon bound (exponential lambda)
  bool sufficient_condition_holds = false;    // strict analytic bound; reported separately
};

/// Existence condition for the wealth-preference exponent Y:
/// e^{Y0/(1-delta)} > I(t) for every t in [0, horizon].
ConditionReport check_condition_1(double Y0, double G, const LambdaSpec& lambda, double delta,
                                  double horizon, int n_grid = 512);

/// Y_t = -G t + (1-delta) ln(e^{Y0/(1-delta)} - I(t)).
/// Throws ConditionError when the logarithm argument is non-positive.
double solve_Y_closed_form(double Y0, double G, const LambdaSpec& lambda, double delta,
                           double t);

/// Optimal proportional consumption under drift+volatility uncertainty:
/// c*_t = lambda_t^{1/(1-delta)} e^{-Y_t/(1-delta)}.
double consumption_star_dv(double Y0, double G, const LambdaSpec& lambda, double delta,
                           double t);

/// Existence condition for the consumption adjustment g:
/// e^{-g0/(1-delta)} > J(t), J(t) = int_0^t e^{(rho int_0^s Y - Y_s)/(1-delta)}
/// lambda_s^{1/(1-delta)} ds, for every t in [0, horizon].
ConditionReport check_condition_2(double g0, const SampledPath& Y, double rho,
                                  const LambdaSpec& lambda, double delta, double horizon,
                                  int n_grid = 512);

/// g_t = rho int_0^t Y_s ds - (1-delta) ln(e^{-g0/(1-delta)} - J(t)).
double solve_g_closed_form(double g0, const SampledPath& Y, double rho,
                           const LambdaSpec& lambda, double delta, double t);

/// Pointwise consumption term of the criterion drift:
///   c^delta lambda e^{-E} - delta c - (1-delta) lambda^{1/(1-delta)} e^{-E/(1-delta)},
/// where E is the preference exponent (Y in drift+volatility mode, Y - g in
/// drift-only mode). Nonpositive, zero exactly at c = c*.
double consumption_gap(double delta, double c, double lambda_t, double exponent);

/// Robust forward preference pair (U, U^c) with optimal consumption and the
/// preference volatility process a.
struct PreferencePair {
  enum class Mode { DriftVol, DriftOnly };
  Mode mode = Mode::DriftVol;
  double delta = 0.5;
  LambdaSpec lambda;
  std::function<double(double)> Y_eval;
  std::function<double(double)> g_eval;  // identically 0 in drift-vol mode
  std::function<double(double)> Z_eval;  // identically 0 in drift-vol mode
  double y_interp_error_bound = 0.0;     // grid-merge interpolation bound (drift-only)

  double exponent(double t) const { return Y_eval(t) - g_eval(t); }
  double U(double x, double t) const;       // x^delta/delta * e^{Y_t - g_t}
  double Uc(double C, double t) const;      // C^delta/delta * lambda_t
  double c_star(double t) const;            // lambda^{1/(1-delta)} e^{-(Y-g)/(1-delta)}
  double a(double x, double t) const;       // x^delta/delta * e^{Y-g} * Z_t (drift-only)
};

/// Drift+volatility-uncertainty preferences from the closed-form Y.
/// Verifies condition 1 on [0, horizon] first (throws ConditionError with
/// the first violation time otherwise).
PreferencePair build_preferences_drift_vol(double Y0, double G, const LambdaSpec& lambda,
                                           double delta, double horizon, int n_grid = 512);

/// Drift-only-uncertainty preferences from a sampled Y (and Z) path.
/// Verifies condition 2 on [0, horizon] first; g is precomputed on the
/// merged grid and interpolated linearly.
PreferencePair build_preferences_drift_only(double g0, const SampledPath& Y,
                                            const SampledPath& Z, double rho,
                                            const LambdaSpec& lambda, double delta,
                                            double horizon, int n_grid = 512);

}  // namespace rfp::preferences
