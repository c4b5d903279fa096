#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rfp/market.hpp"
#include "rfp/preferences.hpp"
#include "rfp/saddle.hpp"

namespace rfp::verify {

using market::MarketSpec;
using market::Mat;
using market::Vec;

/// Inverse standard normal CDF (Acklam's rational approximation refined by
/// one Halley step; absolute error < 1e-13 on (0,1)).
double normal_quantile(double p);

enum class Mode { DriftVol, DriftOnly };

/// Everything the martingale test needs about a solved problem: the market,
/// the saddle strategy/parameters the optimum plays, the reference saddle
/// value entering the drift bracket, and the preference pair (Y, g, lambda).
struct Scenario {
  std::string label;
  MarketSpec spec;
  double delta = 0.5;
  Mode mode = Mode::DriftVol;
  Vec p_opt;       // saddle portfolio
  Vec b_opt;       // saddle (worst-case) drift
  Mat sigma_opt;   // volatility loading the paths evolve under
  double g_saddle = 0.0;                    // DriftVol: saddle value of G
  std::function<double(double)> h_saddle;   // DriftOnly: t -> saddle value of H(t, 0)
  std::function<Vec(double)> z_of_t;        // DriftOnly adjoint (zero when sigma is known)
  preferences::PreferencePair prefs;
  double x0 = 1.0;
  double horizon = 0.0;
};

/// DriftVol scenario from a static saddle: paths evolve under the symmetric
/// PSD root of the worst-case covariance.
Scenario make_drift_vol_scenario(std::string label, const MarketSpec& spec, double delta,
                                 const saddle::SaddleSolutionG& sg,
                                 preferences::PreferencePair prefs, double x0, double horizon);

/// DriftOnly scenario under a known constant volatility loading.
Scenario make_drift_only_scenario(std::string label, const MarketSpec& spec, double delta,
                                  const Mat& sigma, preferences::PreferencePair prefs,
                                  double x0, double horizon);

/// A perturbation of the optimal play. None keeps the saddle on both sides;
/// Strategy replaces (p, c) while the adversary stays at the saddle
/// (criterion drift must be <= 0); Parameter replaces the model point while
/// the agent stays optimal (drift must be >= 0). In DriftOnly mode only the
/// drift b is uncertain, so a Parameter deviation leaves sigma untouched.
struct Deviation {
  enum class Kind { None, Strategy, Parameter };
  Kind kind = Kind::None;
  Vec p;                 // Strategy: constant portfolio
  double c = std::numeric_limits<double>::quiet_NaN();  // Strategy: constant consumption
                                                        // (NaN keeps the optimal c*)
  Vec b;                 // Parameter: constant drift
  Mat sigma;             // Parameter, DriftVol only: constant loading

  static Deviation none();
  static Deviation strategy(Vec p, double c = std::numeric_limits<double>::quiet_NaN());
  static Deviation parameter(Vec b, Mat sigma = Mat());
};

/// Time-t drift bracket of the criterion process, per unit of the wealth
/// term of the criterion: saddle-gap of the static game plus the consumption
/// gap. Zero when both sides play the saddle; <= 0 for any (p, c) against
/// the saddle parameter; >= 0 for any (b, S) against the saddle strategy.
double drift_integrand_drift_vol(const MarketSpec& spec, double delta, double g_saddle,
                                 const preferences::PreferencePair& prefs, double t,
                                 const Vec& p, double c, const Vec& b, const Mat& S);

/// DriftOnly analogue at adjoint z_t: the bracket uses the dynamic-game
/// Hamiltonian at the known sigma_t and the exponent Y_t - g_t.
double drift_integrand_drift_only(const MarketSpec& spec, double delta, const Mat& sigma_t,
                                  const Vec& z_t, double h_saddle_t,
                                  const preferences::PreferencePair& prefs, double t,
                                  const Vec& p, double c, const Vec& b);

/// Drift bracket for the scenario under a deviation, as a function of time.
double scenario_drift(const Scenario& sc, const Deviation& dev, double t);

struct CheckpointStat {
  double t = 0.0;
  double estimate = 0.0;   // mean R_t - R_0
  double std_error = 0.0;
};

struct MartingaleReport {
  std::string scenario;
  std::string deviation;   // "none" / "strategy" / "parameter"
  int n_paths = 0;
  double dt = 0.0;
  double horizon = 0.0;
  double confidence = 0.0;
  double quantile = 0.0;   // normal quantile the verdict used
  double r0 = 0.0;         // initial criterion value U(x0, 0)
  double estimate = 0.0;   // mean R_T - R_0
  double std_error = 0.0;
  std::string verdict;     // martingale- / supermartingale- / submartingale-consistent
                           // or "violation"
  double drift_min = 0.0;  // analytic drift bracket over the time grid
  double drift_max = 0.0;
  double drift_fraction_nonneg = 0.0;
  std::vector<CheckpointStat> checkpoints;  // at 0, T/4, T/2, 3T/4, T
};

/// Simulates the criterion process R_t = X_t^delta/delta e^{exponent(t)} +
/// int (c_u X_u)^delta lambda_u / delta du to the horizon and tests the
/// martingale property implied by the deviation kind at the given confidence
/// (two-sided for None, one-sided otherwise). Path generation is exact for
/// the piecewise-constant inputs; block-pairwise reductions make the result
/// independent of thread count.
MartingaleReport run_martingale_test(const Scenario& sc, const Deviation& dev,
                                     std::int64_t n_paths, double dt, std::uint64_t seed,
                                     double confidence = 0.99);

struct QvReport {
  double realized = 0.0;   // mean pathwise sum of squared criterion increments
  double predicted = 0.0;  // mean integrated squared diffusion loading
  double ratio = 0.0;
};

/// Pathwise quadratic-variation check: the criterion diffusion coefficient
/// is delta (wealth term) sigma^T p, so realized/predicted -> 1 as dt -> 0.
QvReport quadratic_variation_check(const Scenario& sc, const Deviation& dev,
                                   std::int64_t n_paths, double dt, std::uint64_t seed);

}  // namespace rfp::verify
