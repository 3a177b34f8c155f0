#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <iomanip>
#include <ostream>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "audit.hpp"
#include "lmp/errors.hpp"
#include "lmp/io.hpp"
#include "lmp/solver.hpp"
#include "lmp/trainer.hpp"

namespace lmp::cli {
namespace {

using io::Json;

// Maps library exceptions onto the exit-code contract.
template <typename F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const InvalidInput& e) {
    err << "error: " << e.what() << '\n';
    return kMalformedInput;
  } catch (const InvalidParameter& e) {
    err << "error: " << e.what() << '\n';
    return kInvalidParameters;
  } catch (const TrainingDiverged& e) {
    err << "error: training diverged: " << e.what() << '\n';
    return kFailure;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kInvalidParameters;
  }
}

std::filesystem::path output_path(const std::optional<std::filesystem::path>& given,
                                  const char* fallback) {
  return given ? *given : default_output_dir() / fallback;
}

// Fails early (before any work) when the output location cannot be created.
void prepare_parent(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
}

std::string sci(double v) {
  std::ostringstream s;
  s << std::scientific << std::setprecision(2) << v;
  return s.str();
}

std::string column_name(const std::string& p, const std::string& m) { return "w_p=" + p + "_m=" + m; }

struct DemoPlan {
  SyntheticDatasetSpec spec;
  TrainConfig config;
  std::vector<LossMode> modes{LossMode::kUniform, LossMode::kInverseMedianFreq, LossMode::kLmp};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
};

DemoPlan plan_from_json(const Json& j) {
  if (!j.is_object()) throw InvalidParameter("demo config must be a JSON object");
  DemoPlan plan;
  for (const auto& [key, value] : j.items()) {
    if (key == "dataset") {
      plan.spec = io::spec_from_json(value);
    } else if (key == "train") {
      plan.config = io::config_from_json(value, plan.config);
    } else if (key == "modes") {
      if (!value.is_array()) throw InvalidParameter("key 'modes': expected an array of strings");
      plan.modes.clear();
      for (const auto& v : value) {
        if (!v.is_string()) throw InvalidParameter("key 'modes': expected an array of strings");
        plan.modes.push_back(parse_loss_mode(v.get<std::string>()));
      }
    } else if (key == "seeds") {
      try {
        plan.seeds = value.get<std::vector<std::uint64_t>>();
      } catch (const Json::exception&) {
        throw InvalidParameter("key 'seeds': expected an array of non-negative integers");
      }
    } else {
      throw InvalidParameter("unknown key '" + key + "' in demo config");
    }
  }
  return plan;
}

}  // namespace

std::filesystem::path default_output_dir() {
  const char* env = std::getenv("LMP_OUTPUT_DIR");
  if (env != nullptr && *env != '\0') return env;
  return ".";
}

int cmd_solve(const SolveOptions& options, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const PoolingConfig config{io::parse_p(options.p), io::parse_m(options.m)};
    const auto target = output_path(options.out, "solve.json");
    const auto losses = io::read_losses_file(options.losses);
    prepare_parent(target);
    const auto outcome = solve_pool(losses, config);
    if (outcome.path == SolvePath::kExtendedPrecision) {
      err << "warning: p = " << io::format_p(config.p)
          << " is within 1e-3 of 1; solved with extended-precision accumulation\n";
    }
    io::write_text(target, io::outcome_to_json(outcome).dump(2) + "\n");
    out << io::format_human(outcome.pooled_loss, 9) << '\n';
    return static_cast<int>(kOk);
  });
}

int cmd_weight_curves(const WeightCurvesOptions& options, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (options.n < 1) throw InvalidParameter("n must be >= 1");
    if (options.p_list.empty() || options.m_list.empty()) {
      throw InvalidParameter("p and m grids must not be empty");
    }
    std::vector<PoolingConfig> grid;
    std::vector<std::string> names;
    for (const auto& p : options.p_list) {
      for (const auto& m : options.m_list) {
        grid.push_back({io::parse_p(p), io::parse_m(m)});
        grid.back().m.resolve(static_cast<std::size_t>(options.n));  // validates the grid up front
        names.push_back(column_name(p, m));
      }
    }
    const auto target = output_path(options.out, "weight_curves.csv");
    prepare_parent(target);

    std::mt19937_64 rng(options.seed);
    std::vector<double> losses(static_cast<std::size_t>(options.n));
    if (options.distribution == "uniform") {
      std::uniform_real_distribution<double> d(0.0, 1.0);
      for (double& v : losses) v = d(rng);
    } else if (options.distribution == "lognormal") {
      std::lognormal_distribution<double> d(0.0, 1.0);
      for (double& v : losses) v = d(rng);
    } else {
      throw InvalidParameter("distribution must be 'uniform' or 'lognormal'");
    }
    std::sort(losses.begin(), losses.end());

    std::vector<std::vector<double>> columns;
    for (const auto& config : grid) columns.push_back(solve_pool(losses, config).weights);

    std::ostringstream csv;
    csv << "pixel_rank,loss";
    for (const auto& name : names) csv << ',' << name;
    csv << '\n';
    for (std::size_t r = 0; r < losses.size(); ++r) {
      csv << r + 1 << ',' << io::format_exact(losses[r]);
      for (const auto& col : columns) csv << ',' << io::format_exact(col[r]);
      csv << '\n';
    }
    io::write_text(target, csv.str());
    out << "wrote " << columns.size() << " weight columns over " << losses.size() << " losses to "
        << target.string() << '\n';
    return static_cast<int>(kOk);
  });
}

int cmd_oracle_audit(const AuditOptions& options, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    for (double t : {options.tolerance, options.dual_tolerance, options.kkt_tolerance,
                     options.eta_tolerance, options.constraint_tolerance}) {
      if (!(t >= 0.0)) throw InvalidParameter("tolerances must be non-negative");
    }
    if (options.out) prepare_parent(*options.out);
    oracle::AuditTolerances tol;
    tol.relative_gap = options.tolerance;
    tol.dual_gap = options.dual_tolerance;
    tol.kkt_residual = options.kkt_tolerance;
    tol.eta_residual = options.eta_tolerance;
    tol.constraint = options.constraint_tolerance;
    const auto s = oracle::run_audit(options.instances, options.seed, tol, options.threads);

    struct Line {
      const char* name;
      double value;
      double tolerance;
    };
    const Line lines[] = {
        {"relative gap (projected ascent)", s.max_primal_gap, tol.relative_gap},
        {"relative gap (dual alpha scan)", s.max_scan_gap, tol.relative_gap},
        {"relative duality gap", s.max_dual_gap, tol.dual_gap},
        {"KKT fixed-point residual", s.max_kkt_residual, tol.kkt_residual},
        {"eta(alpha*) residual", s.max_eta_residual, tol.eta_residual},
        {"constraint violation", s.max_constraint_violation, tol.constraint},
    };
    out << std::left << std::setw(34) << "check" << std::setw(12) << "max" << std::setw(12)
        << "tolerance" << "status\n";
    for (const auto& l : lines) {
      out << std::setw(34) << l.name << std::setw(12) << sci(l.value) << std::setw(12)
          << sci(l.tolerance) << (l.value <= l.tolerance ? "PASS" : "FAIL") << '\n';
    }
    const auto count_line = [&](const char* name, std::size_t failures) {
      out << std::setw(34) << name << std::setw(12) << failures << std::setw(12) << 0
          << (failures == 0 ? "PASS" : "FAIL") << '\n';
    };
    count_line("capped set |J*| >= m", s.support_failures);
    count_line("pooled below mean", s.upper_bound_failures);
    count_line("oracle not converged", s.unconverged);
    out << "instances " << s.rows.size() << ", failed " << s.failures << ": "
        << (s.passed() ? "PASS" : "FAIL") << '\n';

    if (options.out) {
      Json rows = Json::array();
      for (const auto& r : s.rows) {
        rows.push_back({{"n", r.n},
                        {"p", r.p},
                        {"m", r.m},
                        {"pooled_loss", r.pooled_loss},
                        {"primal_gap", r.primal_gap},
                        {"scan_gap", r.scan_gap},
                        {"dual_gap", r.dual_gap},
                        {"kkt_residual", r.kkt_residual},
                        {"eta_residual", r.eta_residual},
                        {"constraint_violation", r.constraint_violation},
                        {"support_below_m", r.support_below_m},
                        {"upper_bound", r.upper_bound},
                        {"converged", r.converged},
                        {"passed", r.passed}});
      }
      const Json report{{"instances", options.instances},
                        {"seed", options.seed},
                        {"tolerances",
                         {{"relative_gap", tol.relative_gap},
                          {"dual_gap", tol.dual_gap},
                          {"kkt_residual", tol.kkt_residual},
                          {"eta_residual", tol.eta_residual},
                          {"constraint", tol.constraint}}},
                        {"passed", s.passed()},
                        {"failures", s.failures},
                        {"rows", rows}};
      io::write_text(*options.out, report.dump(2) + "\n");
    }
    return static_cast<int>(s.passed() ? kOk : kFailure);
  });
}

int cmd_train_demo(const TrainDemoOptions& options, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    DemoPlan plan;
    if (options.config) {
      const auto text = io::read_text(*options.config);
      Json j;
      try {
        j = Json::parse(text);
      } catch (const Json::parse_error& e) {
        throw InvalidParameter(std::string("malformed demo config: ") + e.what());
      }
      plan = plan_from_json(j);
    }
    if (options.modes) {
      plan.modes.clear();
      for (const auto& m : *options.modes) plan.modes.push_back(parse_loss_mode(m));
    }
    if (options.seeds) plan.seeds = *options.seeds;
    if (options.p) plan.config.pooling.p = io::parse_p(*options.p);
    if (options.m) plan.config.pooling.m = io::parse_m(*options.m);
    if (options.iterations) plan.config.iterations = *options.iterations;
    if (options.lr0) plan.config.lr0 = *options.lr0;
    if (options.noise) plan.spec.feature_noise = *options.noise;
    if (options.images) plan.spec.images = *options.images;
    if (options.sampler_blend) {
      SamplerConfig s = plan.config.sampler.value_or(SamplerConfig{});
      s.blend = *options.sampler_blend;
      plan.config.sampler = s;
    }
    if (plan.modes.empty()) throw InvalidParameter("at least one loss mode is required");
    if (plan.seeds.empty()) throw InvalidParameter("at least one seed is required");
    plan.spec.validate();
    plan.config.validate();
    const auto dir = output_path(options.out, "train_demo");
    std::filesystem::create_directories(dir);

    const auto& fr = plan.spec.class_pixel_fractions;
    const auto rarest = static_cast<std::size_t>(
        std::distance(fr.begin(), std::min_element(fr.begin(), fr.end())));
    const auto C = static_cast<std::size_t>(plan.spec.classes);

    std::ostringstream csv;
    csv << "mode,seed";
    for (std::size_t c = 0; c < C; ++c) csv << ",class_" << c;
    csv << ",mean_iou\n";
    int wins = 0;
    const bool paired =
        std::count(plan.modes.begin(), plan.modes.end(), LossMode::kUniform) > 0 &&
        std::count(plan.modes.begin(), plan.modes.end(), LossMode::kLmp) > 0;

    for (std::uint64_t seed : plan.seeds) {
      SyntheticDatasetSpec spec = plan.spec;
      spec.seed = seed;
      const auto dataset = generate_dataset(spec);
      double uniform_rare = 0.0;
      double lmp_rare = 0.0;
      for (LossMode mode : plan.modes) {
        TrainConfig config = plan.config;
        config.loss_mode = mode;
        config.seed = seed;
        const auto report = train(dataset, config);
        const std::string stem = to_string(mode) + "_seed" + std::to_string(seed);

        Json j = io::report_to_json(report);
        j["dataset"] = io::spec_to_json(spec);
        io::write_text(dir / ("report_" + stem + ".json"), j.dump(2) + "\n");
        std::ostringstream history;
        history << "step,loss\n";
        for (std::size_t k = 0; k < report.loss_history.size(); ++k) {
          history << k << ',' << io::format_exact(report.loss_history[k]) << '\n';
        }
        io::write_text(dir / ("loss_history_" + stem + ".csv"), history.str());
        io::write_model(dir / ("model_" + stem + ".bin"), report.model, config);

        csv << to_string(mode) << ',' << seed;
        for (double iou : report.per_class_iou) csv << ',' << io::format_exact(iou);
        csv << ',' << io::format_exact(report.mean_iou) << '\n';
        out << to_string(mode) << " seed " << seed << ": mean IoU "
            << io::format_human(report.mean_iou, 4) << ", class " << rarest << " IoU "
            << io::format_human(report.per_class_iou[rarest], 4) << '\n';
        if (mode == LossMode::kUniform) uniform_rare = report.per_class_iou[rarest];
        if (mode == LossMode::kLmp) lmp_rare = report.per_class_iou[rarest];
      }
      if (paired && lmp_rare > uniform_rare) ++wins;
    }
    io::write_text(dir / "per_class_iou.csv", csv.str());
    if (paired) {
      out << "summary: lmp beats uniform on rarest class " << rarest << " IoU in " << wins << "/"
          << plan.seeds.size() << " seeds\n";
    }
    return static_cast<int>(kOk);
  });
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Loss max-pooling: solver, oracle audit and training demo", "lmp"};
  app.require_subcommand(1);

  SolveOptions solve;
  std::string solve_out;
  auto* s = app.add_subcommand("solve", "Pool one loss vector");
  s->add_option("--losses", solve.losses, "CSV (one loss per line) or JSON array")->required();
  s->add_option("--p", solve.p, "p >= 1 or inf")->capture_default_str();
  s->add_option("--m", solve.m, "pooling size: 25% (fraction), 1/4 (ratio) or 25 (count)")
      ->capture_default_str();
  auto* solve_out_opt = s->add_option("--out", solve_out, "output JSON (default: $LMP_OUTPUT_DIR/solve.json)");

  WeightCurvesOptions curves;
  std::string curves_out;
  auto* w = app.add_subcommand("weight-curves", "Optimal weights per loss rank over (p, m) grids");
  w->add_option("--n", curves.n)->capture_default_str();
  w->add_option("--seed", curves.seed)->capture_default_str();
  w->add_option("--distribution", curves.distribution, "uniform or lognormal")->capture_default_str();
  w->add_option("--p", curves.p_list, "p grid")->expected(1, -1);
  w->add_option("--m", curves.m_list, "m grid")->expected(1, -1);
  auto* curves_out_opt = w->add_option("--out", curves_out, "output CSV");

  AuditOptions audit;
  std::string audit_out;
  auto* a = app.add_subcommand("oracle-audit", "Compare the solver against brute-force oracles");
  a->add_option("--instances", audit.instances)->capture_default_str();
  a->add_option("--seed", audit.seed)->capture_default_str();
  a->add_option("--tolerance", audit.tolerance, "relative gap to the oracles")->capture_default_str();
  a->add_option("--dual-tolerance", audit.dual_tolerance)->capture_default_str();
  a->add_option("--kkt-tolerance", audit.kkt_tolerance)->capture_default_str();
  a->add_option("--eta-tolerance", audit.eta_tolerance)->capture_default_str();
  a->add_option("--constraint-tolerance", audit.constraint_tolerance)->capture_default_str();
  a->add_option("--threads", audit.threads)->capture_default_str();
  auto* audit_out_opt = a->add_option("--out", audit_out, "JSON report with one row per instance");

  std::string demo_config, demo_p, demo_m, demo_out;
  std::vector<std::string> demo_modes;
  std::vector<std::uint64_t> demo_seeds;
  int demo_iterations = 0;
  double demo_lr0 = 0.0, demo_noise = 0.0, demo_blend = 0.0;
  std::size_t demo_images = 0;
  auto* t = app.add_subcommand("train-demo", "Train the synthetic segmentation demo per loss mode");
  auto* o_config = t->add_option("--config", demo_config, "JSON config; flags override it");
  auto* o_modes = t->add_option("--modes", demo_modes, "uniform inverse_median_freq lmp")->expected(1, -1);
  auto* o_seeds = t->add_option("--seeds", demo_seeds, "paired seeds (default 1..5)")->expected(1, -1);
  auto* o_p = t->add_option("--p", demo_p);
  auto* o_m = t->add_option("--m", demo_m);
  auto* o_iter = t->add_option("--iterations", demo_iterations);
  auto* o_lr = t->add_option("--lr0", demo_lr0);
  auto* o_noise = t->add_option("--noise", demo_noise, "feature noise sigma");
  auto* o_images = t->add_option("--images", demo_images);
  auto* o_blend = t->add_option("--sampler-blend", demo_blend, "enable the complementary sampler");
  auto* o_out = t->add_option("--out", demo_out, "output directory (default: $LMP_OUTPUT_DIR/train_demo)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? static_cast<int>(kOk) : static_cast<int>(kInvalidParameters);
  }

  if (s->parsed()) {
    if (solve_out_opt->count() > 0) solve.out = solve_out;
    return cmd_solve(solve, out, err);
  }
  if (w->parsed()) {
    if (curves_out_opt->count() > 0) curves.out = curves_out;
    return cmd_weight_curves(curves, out, err);
  }
  if (a->parsed()) {
    if (audit_out_opt->count() > 0) audit.out = audit_out;
    return cmd_oracle_audit(audit, out, err);
  }
  TrainDemoOptions demo;
  if (o_config->count() > 0) demo.config = demo_config;
  if (o_modes->count() > 0) demo.modes = demo_modes;
  if (o_seeds->count() > 0) demo.seeds = demo_seeds;
  if (o_p->count() > 0) demo.p = demo_p;
  if (o_m->count() > 0) demo.m = demo_m;
  if (o_iter->count() > 0) demo.iterations = demo_iterations;
  if (o_lr->count() > 0) demo.lr0 = demo_lr0;
  if (o_noise->count() > 0) demo.noise = demo_noise;
  if (o_images->count() > 0) demo.images = demo_images;
  if (o_blend->count() > 0) demo.sampler_blend = demo_blend;
  if (o_out->count() > 0) demo.out = demo_out;
  return cmd_train_demo(demo, out, err);
}

}  // namespace lmp::cli
