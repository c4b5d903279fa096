#include <cmath>
#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rfp/bsde.hpp"
#include "rfp/errors.hpp"
#include "rfp/io.hpp"
#include "rfp/market.hpp"
#include "rfp/parallel.hpp"
#include "rfp/preferences.hpp"
#include "rfp/saddle.hpp"
#include "rfp/scenario.hpp"
#include "rfp/verify.hpp"

namespace {

using nlohmann::json;
using rfp::scenario::RunConfig;
using Vec = rfp::market::Vec;
using Mat = rfp::market::Mat;

struct CommonOpts {
  std::string config, preset, out;
  bool as_json = false;
  bool dump_cfg = false;
  std::uint64_t seed = 0;
};

void add_common(CLI::App* sub, CommonOpts& o) {
  sub->add_option("--config", o.config, "JSON config file");
  sub->add_option("--preset", o.preset, "named preset (fig1|fig2|fig3)");
  sub->add_option("--out", o.out, "output directory for artifact files");
  sub->add_flag("--json", o.as_json, "print the result as JSON on stdout");
  sub->add_flag("--dump-effective-config", o.dump_cfg,
                "print the effective configuration and exit");
  sub->add_option("--seed", o.seed, "override the RNG seed");
}

RunConfig resolve_cfg(const CommonOpts& o, const CLI::App* sub) {
  if (!o.config.empty() && !o.preset.empty())
    throw rfp::IoError("use either --config or --preset, not both");
  RunConfig cfg;
  if (!o.config.empty())
    cfg = RunConfig::from_json(rfp::load_json_file(o.config));
  else if (!o.preset.empty())
    cfg = RunConfig::preset_config(o.preset);
  else
    throw rfp::IoError("provide --config FILE or --preset NAME");
  if (sub->count("--seed") > 0) cfg.seed = o.seed;
  cfg.validate();
  return cfg;
}

/// Returns true when the caller should stop (config dumped).
bool maybe_dump(const RunConfig& cfg, const CommonOpts& o) {
  if (!o.dump_cfg) return false;
  std::cout << cfg.to_json().dump(2) << "\n";
  return true;
}

void emit(const json& out, const CommonOpts& o, const std::string& text) {
  if (o.as_json)
    std::cout << out.dump(2) << "\n";
  else
    std::cout << text;
}

std::string fm(double v) { return rfp::format_double(v); }

void cmd_saddle_g(const CommonOpts& o, const CLI::App* sub) {
  const RunConfig cfg = resolve_cfg(o, sub);
  if (maybe_dump(cfg, o)) return;
  const auto sg = rfp::saddle::solve_saddle_G(cfg.market, cfg.delta);
  const json out = rfp::scenario::saddle_solution_to_json(sg);
  if (!o.out.empty()) {
    rfp::ensure_directory(o.out);
    rfp::write_text_file(std::filesystem::path(o.out) / "saddle.json", out.dump(2) + "\n");
  }
  std::string text = "saddle value G = " + fm(sg.value) + "\n";
  text += "p* = " + fm(sg.p_star(0));
  for (int i = 1; i < cfg.market.d; ++i) text += ", " + fm(sg.p_star(i));
  text += "\nb* = " + fm(sg.b_star(0));
  for (int i = 1; i < cfg.market.d; ++i) text += ", " + fm(sg.b_star(i));
  text += "\nsigma*[0,0] = " + fm(sg.sigma_star(0, 0)) + "\n";
  emit(out, o, text);
}

void cmd_saddle_h(const CommonOpts& o, const CLI::App* sub, double t,
                  const std::vector<double>& zs) {
  const RunConfig cfg = resolve_cfg(o, sub);
  if (maybe_dump(cfg, o)) return;
  const Mat sigma = rfp::scenario::resolve_sigma_known(cfg);
  Vec z = Vec::Zero(cfg.market.d);
  if (!zs.empty()) {
    if (static_cast<int>(zs.size()) != cfg.market.d)
      throw std::invalid_argument("--z needs one value per asset");
    for (int i = 0; i < cfg.market.d; ++i) z(i) = zs[i];
  }
  const auto sh = rfp::saddle::solve_saddle_H(cfg.market, cfg.delta, t, sigma, z);
  const json out = rfp::scenario::saddle_solution_to_json(sh);
  if (!o.out.empty()) {
    rfp::ensure_directory(o.out);
    rfp::write_text_file(std::filesystem::path(o.out) / "saddle_h.json", out.dump(2) + "\n");
  }
  std::string text = "saddle value H(t=" + fm(t) + ", z=" + fm(z(0)) + ") = " + fm(sh.value) +
                     "\np* = " + fm(sh.p_star(0)) + ", b* = " + fm(sh.b_star(0)) + "\n";
  if (!sh.tie_report.empty()) text += "note: drift selection not unique (p* = 0)\n";
  emit(out, o, text);
}

void cmd_ode(const CommonOpts& o, const CLI::App* sub) {
  const RunConfig cfg = resolve_cfg(o, sub);
  if (maybe_dump(cfg, o)) return;
  const auto sg = rfp::saddle::solve_saddle_G(cfg.market, cfg.delta);
  const auto cond = rfp::preferences::check_condition_1(cfg.y0, sg.value, cfg.lambda, cfg.delta,
                                                        cfg.horizon);
  const auto prefs = rfp::preferences::build_preferences_drift_vol(cfg.y0, sg.value, cfg.lambda,
                                                                   cfg.delta, cfg.horizon);
  rfp::CsvBuilder csv({"t", "Y", "c_star"});
  constexpr int n_rows = 300;
  for (int i = 0; i <= n_rows; ++i) {
    const double t = cfg.horizon * i / n_rows;
    csv.begin_row();
    csv.add(t);
    csv.add(prefs.Y_eval(t));
    csv.add(prefs.c_star(t));
    csv.end_row();
  }
  json out{{"g_saddle", sg.value},
           {"condition_1", rfp::scenario::condition_report_to_json(cond)},
           {"y_at_0", prefs.Y_eval(0.0)},
           {"y_at_horizon", prefs.Y_eval(cfg.horizon)},
           {"u_at_x0", prefs.U(cfg.x0, 0.0)}};
  if (!o.out.empty()) {
    rfp::ensure_directory(o.out);
    rfp::write_text_file(std::filesystem::path(o.out) / "ode.csv", csv.str());
    rfp::write_text_file(std::filesystem::path(o.out) / "condition.json",
                         out.at("condition_1").dump(2) + "\n");
  }
  std::string text = "condition 1 " + std::string(cond.holds ? "holds" : "fails") +
                     " (margin " + fm(cond.margin) + ")\n";
  text += "Y(0) = " + fm(prefs.Y_eval(0.0)) + ", Y(" + fm(cfg.horizon) + ") = " +
          fm(prefs.Y_eval(cfg.horizon)) + "\n";
  text += "U(x0, 0) = " + fm(prefs.U(cfg.x0, 0.0)) + "\n";
  emit(out, o, text);
}

void write_bsde_csv(const std::string& out_dir, const rfp::bsde::BsdeSolution& sol, int d) {
  rfp::CsvBuilder csv({"t", "Y", "Z", "tail_estimate"});
  for (std::size_t i = 0; i < sol.times.size(); ++i) {
    csv.begin_row();
    csv.add(sol.times[i]);
    csv.add(sol.Y[i]);
    csv.add(d == 1 ? sol.Z[i](0) : sol.Z[i].norm());
    csv.add(sol.tail_estimate[i]);
    csv.end_row();
  }
  rfp::ensure_directory(out_dir);
  rfp::write_text_file(std::filesystem::path(out_dir) / "bsde.csv", csv.str());
}

void cmd_bsde(const CommonOpts& o, const CLI::App* sub) {
  const RunConfig cfg = resolve_cfg(o, sub);
  if (maybe_dump(cfg, o)) return;
  const Mat sigma = rfp::scenario::resolve_sigma_known(cfg);
  rfp::bsde::BsdeSolution sol;
  if (cfg.bsde_method == "ode") {
    const auto model = rfp::bsde::SigmaModel::constant(sigma);
    sol = rfp::bsde::solve_bsde_deterministic_sigma(model, cfg.market, cfg.delta, cfg.rho,
                                                    cfg.bsde_T, cfg.bsde_dt);
  } else {
    Eigen::JacobiSVD<Mat> svd(sigma);
    const double inv_base = 1.0 / svd.singularValues().minCoeff();
    const double sd_stat = cfg.factor_kappa > 0.0
                               ? cfg.factor_eta / std::sqrt(2.0 * cfg.factor_kappa)
                               : cfg.factor_eta * std::sqrt(cfg.bsde_T);
    const double range = std::abs(cfg.factor_v0 - cfg.factor_theta) + 6.0 * sd_stat;
    const double bound = inv_base * std::exp(std::abs(cfg.vol_slope) * range);
    const auto model = rfp::bsde::SigmaModel::markov_factor(
        cfg.factor_kappa, cfg.factor_theta, cfg.factor_eta, cfg.factor_v0,
        [sigma, s = cfg.vol_slope, th = cfg.factor_theta](double v) -> Mat {
          return sigma * std::exp(s * (v - th));
        },
        bound);
    sol = rfp::bsde::solve_bsde_lsmc(model, cfg.market, cfg.delta, cfg.rho, cfg.bsde_T,
                                     cfg.bsde_dt, cfg.lsmc_paths, cfg.n_basis, cfg.seed);
  }
  json out{{"method", cfg.bsde_method},
           {"T", sol.T},
           {"dt", sol.dt},
           {"y0", sol.Y.front()},
           {"y0_std_error", sol.y0_std_error},
           {"sup_bound", sol.sup_bound},
           {"tail_estimate_at_0", sol.tail_estimate.front()},
           {"z_sumsq_unweighted", sol.z_sumsq_unweighted},
           {"z_sumsq_weighted", sol.z_sumsq_weighted},
           {"basis_size_used", sol.basis_size_used}};
  if (!o.out.empty()) write_bsde_csv(o.out, sol, cfg.market.d);
  std::string text = "Y(0) = " + fm(sol.Y.front());
  if (cfg.bsde_method == "lsmc") text += " (std error " + fm(sol.y0_std_error) + ")";
  text += "\nuniform bound sup H / rho = " + fm(sol.sup_bound) + "\n";
  emit(out, o, text);
}

void cmd_simulate(const CommonOpts& o, const CLI::App* sub) {
  const RunConfig cfg = resolve_cfg(o, sub);
  if (maybe_dump(cfg, o)) return;
  const auto sg = rfp::saddle::solve_saddle_G(cfg.market, cfg.delta);
  const auto prefs = rfp::preferences::build_preferences_drift_vol(cfg.y0, sg.value, cfg.lambda,
                                                                   cfg.delta, cfg.horizon);
  const auto strat = rfp::scenario::saddle_strategy(cfg, sg, prefs);
  const auto sim = rfp::market::simulate_wealth(cfg.market, cfg.x0, strat, cfg.sim_paths,
                                                cfg.seed, cfg.sim_dt);
  const auto wf = rfp::market::power_wealth_functional(sim, cfg.delta);
  const double mean_term =
      rfp::pairwise_sum(wf.terminal_power) / static_cast<double>(cfg.sim_paths);
  json out{{"n_paths", cfg.sim_paths},
           {"dt", sim.dt},
           {"terminal_power_mean", mean_term},
           {"terminal_power_variance", wf.sample_variance},
           {"running_power_max", wf.sample_max}};
  if (!o.out.empty()) {
    rfp::CsvBuilder csv({"path_id", "t", "X", "amount"});
    const auto& times = sim.grid.times;
    const std::size_t n_steps = sim.grid.n_steps();
    for (int path = 0; path < cfg.sim_paths; ++path) {
      for (std::size_t i = 0; i < times.size(); ++i) {
        const std::size_t step = std::min(i, n_steps - 1);
        csv.begin_row();
        csv.add(static_cast<std::int64_t>(path));
        csv.add(times[i]);
        csv.add(sim.wealth[path][i]);
        csv.add(sim.grid.p[step].sum() * sim.wealth[path][i]);
        csv.end_row();
      }
    }
    rfp::ensure_directory(o.out);
    rfp::write_text_file(std::filesystem::path(o.out) / "paths.csv", csv.str());
  }
  std::string text = "simulated " + std::to_string(cfg.sim_paths) + " paths; mean X_T^delta = " +
                     fm(mean_term) + "\n";
  emit(out, o, text);
}

void cmd_verify(const CommonOpts& o, const CLI::App* sub) {
  const RunConfig cfg = resolve_cfg(o, sub);
  if (maybe_dump(cfg, o)) return;
  const auto sg = rfp::saddle::solve_saddle_G(cfg.market, cfg.delta);
  const auto prefs = rfp::preferences::build_preferences_drift_vol(cfg.y0, sg.value, cfg.lambda,
                                                                   cfg.delta, cfg.horizon);
  const auto sc = rfp::verify::make_drift_vol_scenario("drift-vol", cfg.market, cfg.delta, sg,
                                                       prefs, cfg.x0, cfg.horizon);
  const Vec p_dev = 0.5 * sc.p_opt;
  const double c_dev = prefs.c_star(0.0) * 1.25 + 0.05;
  const Vec b_dev = 0.5 * (cfg.market.b_lo + cfg.market.b_hi);
  const rfp::verify::Deviation devs[3] = {rfp::verify::Deviation::none(),
                                          rfp::verify::Deviation::strategy(p_dev, c_dev),
                                          rfp::verify::Deviation::parameter(b_dev)};
  json reports = json::array();
  std::string text;
  for (int i = 0; i < 3; ++i) {
    const auto rep = rfp::verify::run_martingale_test(
        sc, devs[i], cfg.verify_paths, cfg.verify_dt, cfg.seed + static_cast<std::uint64_t>(i),
        cfg.confidence);
    reports.push_back(rfp::scenario::martingale_report_to_json(rep));
    text += rep.deviation + ": estimate " + fm(rep.estimate) + " (se " + fm(rep.std_error) +
            ") -> " + rep.verdict + "\n";
  }
  json out{{"scenario", "drift-vol"}, {"reports", reports}};
  if (!o.out.empty()) {
    rfp::ensure_directory(o.out);
    rfp::write_text_file(std::filesystem::path(o.out) / "verify.json", out.dump(2) + "\n");
  }
  emit(out, o, text);
}

void cmd_reproduce_figures(const CommonOpts& o) {
  const std::string out_dir = o.out.empty() ? std::string("figures") : o.out;
  const std::uint64_t seed = o.seed != 0 ? o.seed : 12345;
  const json out = rfp::scenario::reproduce_figures(seed, out_dir);
  std::string text;
  for (const auto& fig : out.at("figures")) {
    text += fig.at("preset").get<std::string>() + ": G = ";
    text += fm(fig.at("saddle").at("value").get<double>());
    text += ", hash " + fig.at("determinism_hash").get<std::string>() + "\n";
  }
  text += "written to " + out_dir + "\n";
  emit(out, o, text);
}

void cmd_pipeline(const CommonOpts& o, const CLI::App* sub) {
  const RunConfig cfg = resolve_cfg(o, sub);
  if (maybe_dump(cfg, o)) return;
  const std::string out_dir = o.out.empty() ? std::string("pipeline-out") : o.out;
  const json out = rfp::scenario::run_pipeline_drift_only(cfg, out_dir);
  std::string text = "BSDE Y(0) = " + fm(out.at("y0_bsde").get<double>()) + "\n";
  text += "condition 2 " +
          std::string(out.at("condition_2").at("holds").get<bool>() ? "holds" : "fails") + "\n";
  for (const auto& rep : out.at("reports"))
    text += rep.at("deviation").get<std::string>() + ": " +
            rep.at("verdict").get<std::string>() + "\n";
  text += "written to " + out_dir + "\n";
  emit(out, o, text);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"robust forward CRRA preferences under drift/volatility uncertainty"};
  app.require_subcommand(1);

  CommonOpts o_g, o_h, o_ode, o_bsde, o_sim, o_ver, o_fig, o_pipe;
  double h_t = 0.0;
  std::vector<double> h_z;

  auto* sub_g = app.add_subcommand("saddle-g", "solve the static market game");
  add_common(sub_g, o_g);
  sub_g->callback([&] { cmd_saddle_g(o_g, sub_g); });

  auto* sub_h = app.add_subcommand("saddle-h", "solve the dynamic-game Hamiltonian");
  add_common(sub_h, o_h);
  sub_h->add_option("--t", h_t, "evaluation time");
  sub_h->add_option("--z", h_z, "adjoint vector (one value per asset)")->expected(-1);
  sub_h->callback([&] { cmd_saddle_h(o_h, sub_h, h_t, h_z); });

  auto* sub_ode = app.add_subcommand("ode", "closed-form preference exponent");
  add_common(sub_ode, o_ode);
  sub_ode->callback([&] { cmd_ode(o_ode, sub_ode); });

  auto* sub_bsde = app.add_subcommand("bsde", "infinite-horizon preference BSDE");
  add_common(sub_bsde, o_bsde);
  sub_bsde->callback([&] { cmd_bsde(o_bsde, sub_bsde); });

  auto* sub_sim = app.add_subcommand("simulate", "simulate wealth under the saddle strategy");
  add_common(sub_sim, o_sim);
  sub_sim->callback([&] { cmd_simulate(o_sim, sub_sim); });

  auto* sub_ver = app.add_subcommand("verify", "martingale optimality verification");
  add_common(sub_ver, o_ver);
  sub_ver->callback([&] { cmd_verify(o_ver, sub_ver); });

  auto* sub_fig = app.add_subcommand("reproduce-figures", "run the canonical scenarios");
  add_common(sub_fig, o_fig);
  sub_fig->callback([&] { cmd_reproduce_figures(o_fig); });

  auto* sub_pipe = app.add_subcommand("pipeline-drift-only", "BSDE -> preferences -> verify");
  add_common(sub_pipe, o_pipe);
  sub_pipe->callback([&] { cmd_pipeline(o_pipe, sub_pipe); });

  try {
    app.parse(argc, argv);
    return 0;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "rfp: " << e.what() << std::endl;
    return 4;
  } catch (const rfp::ConditionError& e) {
    std::cerr << "condition check failed: " << e.what() << std::endl;
    return 2;
  } catch (const rfp::SolverError& e) {
    std::cerr << "solver failure: " << e.what() << std::endl;
    return 3;
  } catch (const rfp::IoError& e) {
    std::cerr << "io error: " << e.what() << std::endl;
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 4;
  }
}
