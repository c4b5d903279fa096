#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "rfp/market.hpp"
#include "rfp/preferences.hpp"
#include "rfp/saddle.hpp"
#include "rfp/verify.hpp"

namespace rfp::scenario {

using market::MarketSpec;
using market::Mat;
using market::Vec;

/// Effective configuration of a run. Built either from a named preset
/// (fig1/fig2/fig3: the canonical single-asset markets with locked
/// parameters) or from a JSON config. Presets refuse overrides of the fields
/// they lock (market, delta, horizon, x0, y0, lambda, sigma).
struct RunConfig {
  std::string preset = "custom";
  MarketSpec market;
  double delta = 0.5;
  double horizon = 3.0;
  double x0 = 50.0;
  double y0 = 0.0;
  double g0 = 0.0;
  double rho = 0.1;
  preferences::LambdaSpec lambda;
  Mat sigma_known;  // known volatility loading (drift-only mode); empty = derive

  std::uint64_t seed = 12345;
  double sim_dt = 1e-3;
  int sim_paths = 2;

  double bsde_T = 50.0;
  double bsde_dt = 0.01;
  std::string bsde_method = "ode";  // "ode" (deterministic sigma) or "lsmc"
  int lsmc_paths = 20000;
  int n_basis = 4;
  double factor_kappa = 1.0, factor_theta = 0.0, factor_eta = 0.5, factor_v0 = 0.0;
  double vol_slope = 0.1;  // sigma(v) = sigma_known * exp(vol_slope (v - theta))

  std::int64_t verify_paths = 20000;
  double verify_dt = 1e-3;
  double confidence = 0.99;

  static RunConfig preset_config(const std::string& name);
  static RunConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  void validate() const;
};

/// The volatility loading a drift-only computation runs under: the explicit
/// sigma if configured, else the symmetric PSD root of the market's single
/// covariance vertex, else (several vertices) the root of the max-trace
/// vertex. Its square must lie in the uncertainty hull.
Mat resolve_sigma_known(const RunConfig& cfg);

nlohmann::json saddle_solution_to_json(const saddle::SaddleSolutionG& sg);
nlohmann::json saddle_solution_to_json(const saddle::SaddleSolutionH& sh);
nlohmann::json condition_report_to_json(const preferences::ConditionReport& rep);
nlohmann::json martingale_report_to_json(const verify::MartingaleReport& rep);

/// The saddle strategy as a piecewise-constant path on the simulation grid:
/// p*, b*, the PSD root of the worst-case covariance, and the optimal
/// consumption sampled at interval midpoints (constant when lambda = 0).
market::StrategyPath saddle_strategy(const RunConfig& cfg, const saddle::SaddleSolutionG& sg,
                                     const preferences::PreferencePair& prefs);

/// Full drift+volatility scenario run. Writes saddle.json, preference.csv
/// (t, Y, and U along the two simulated paths), paths.csv (exactly two
/// trajectories from distinct per-path streams), and summary.json carrying
/// an FNV-1a fingerprint of the other artifacts. Returns the summary.
nlohmann::json run_scenario(const RunConfig& cfg, const std::filesystem::path& out_dir);

/// Runs the three canonical single-asset scenarios into fig1/ fig2/ fig3/
/// under out_root and writes figures.json with the saddle points and
/// fingerprints. Returns that summary.
nlohmann::json reproduce_figures(std::uint64_t seed, const std::filesystem::path& out_root);

/// Drift-only chain: deterministic-sigma BSDE -> existence condition for the
/// consumption adjustment -> preference pair -> martingale verification at
/// the saddle and under canonical strategy/parameter deviations. Writes
/// bsde.csv, preference.csv, verify.json. Returns the summary.
nlohmann::json run_pipeline_drift_only(const RunConfig& cfg,
                                       const std::filesystem::path& out_dir);

}  // namespace rfp::scenario
