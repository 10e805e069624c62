#include "mapvil/mapvil.h"

#include "CLI11.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>

namespace {

enum Exit { kOk = 0, kConfigError = 2, kRuntimeError = 3, kAcceptanceFailure = 4 };

// Growth-slope bands the timing subcommand checks.
constexpr double kSchmidtSlope[2] = {0.7, 1.3};
constexpr double kFullSlope[2] = {1.6, 2.4};

struct Common {
  std::string config;
  std::string out;
  std::string variants;
  std::string map_mode;
  uint64_t seed = 0;
  int runs = 0;
  int threads = -1;
};

int exit_for(mvl_status s) {
  switch (s) {
    case MVL_OK: return kOk;
    case MVL_ERR_ARGUMENT:
    case MVL_ERR_CONFIG: return kConfigError;
    default: return kRuntimeError;
  }
}

int report(mvl_status s) {
  std::fprintf(stderr, "mapvil: %s: %s\n", mvl_status_name(s), mvl_last_error());
  return exit_for(s);
}

void add_common(CLI::App *cmd, Common &c) {
  cmd->add_option("--config", c.config, "configuration file (defaults apply otherwise)");
  cmd->add_option("--seed", c.seed, "base seed");
  cmd->add_option("--runs", c.runs, "Monte Carlo runs")->check(CLI::PositiveNumber);
  cmd->add_option("--out", c.out, "output directory");
  cmd->add_option("--variants", c.variants, "comma-separated variants or 'all'");
  cmd->add_option("--map-mode", c.map_mode, "perfect or imperfect");
  cmd->add_option("--threads", c.threads, "worker threads, 0 for one per core")->check(CLI::NonNegativeNumber);
}

/// Loads the config and applies command-line overrides.
mvl_status build_config(const Common &c, const CLI::App *cmd, mvl_config **cfg) {
  mvl_status s = c.config.empty() ? mvl_config_default(cfg) : mvl_config_load(c.config.c_str(), cfg);
  if (s != MVL_OK)
    return s;
  if (cmd->count("--seed") && (s = mvl_config_set_seed(*cfg, c.seed)) != MVL_OK)
    return s;
  if (cmd->count("--runs") && (s = mvl_config_set_runs(*cfg, c.runs)) != MVL_OK)
    return s;
  if (cmd->count("--out") && (s = mvl_config_set_out(*cfg, c.out.c_str())) != MVL_OK)
    return s;
  if (cmd->count("--variants") && (s = mvl_config_set_variants(*cfg, c.variants.c_str())) != MVL_OK)
    return s;
  if (cmd->count("--map-mode") && (s = mvl_config_set_map_mode(*cfg, c.map_mode.c_str())) != MVL_OK)
    return s;
  if (cmd->count("--threads") && (s = mvl_config_set_threads(*cfg, c.threads)) != MVL_OK)
    return s;
  return MVL_OK;
}

std::string num(double x, int prec = 3) {
  if (!std::isfinite(x))
    return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", prec, x);
  return buf;
}

void print_summary(const mvl_summary *s) {
  std::printf("%-11s %9s %8s %9s %8s %8s %8s %8s %8s\n", "variant", "rmse_deg", "rmse_m", "rel_deg", "rel_m",
              "nees_ori", "nees_pos", "ate_m", "ate_map");
  for (size_t i = 0; i < mvl_summary_count(s); ++i) {
    mvl_variant_summary v;
    mvl_summary_get(s, i, &v);
    std::printf("%-11s %9s %8s %9s %8s %8s %8s %8s %8s\n", v.variant, num(v.rmse_orientation_deg).c_str(),
                num(v.rmse_position_m).c_str(), num(v.rmse_rel_orientation_deg).c_str(),
                num(v.rmse_rel_position_m).c_str(), num(v.nees_orientation).c_str(), num(v.nees_position).c_str(),
                num(v.ate_local_m).c_str(), num(v.ate_map_m).c_str());
  }
}

void progress(void *, const char *variant, uint64_t seed, int done, int total) {
  std::fprintf(stderr, "[%d/%d] %s seed %llu\n", done, total, variant, static_cast<unsigned long long>(seed));
}

int cmd_simulate(mvl_config *cfg, int runs) {
  const std::filesystem::path out = mvl_config_out(cfg);
  for (int i = 0; i < runs; ++i) {
    const auto dir = out / "sim" / ("run_" + std::to_string(i));
    if (const mvl_status s = mvl_simulate(cfg, i, dir.string().c_str()); s != MVL_OK)
      return report(s);
    std::printf("wrote %s\n", dir.string().c_str());
  }
  return kOk;
}

int cmd_run(mvl_config *cfg, bool quiet) {
  mvl_summary *sum = nullptr;
  if (const mvl_status s = mvl_run(cfg, quiet ? nullptr : progress, nullptr, &sum); s != MVL_OK)
    return report(s);
  print_summary(sum);
  std::printf("artifacts in %s\n", mvl_config_out(cfg));
  mvl_summary_free(sum);
  return kOk;
}

int cmd_metrics(mvl_config *cfg) {
  mvl_summary *sum = nullptr;
  if (const mvl_status s = mvl_metrics(mvl_config_out(cfg), cfg, &sum); s != MVL_OK)
    return report(s);
  print_summary(sum);
  mvl_summary_free(sum);
  return kOk;
}

int cmd_observability(mvl_config *cfg) {
  const auto path = std::filesystem::path(mvl_config_out(cfg)) / "observability.csv";
  mvl_obs_report *rep = nullptr;
  if (const mvl_status s = mvl_observability(cfg, path.string().c_str(), &rep); s != MVL_OK)
    return report(s);
  std::printf("%-40s %7s %7s %10s  %s\n", "case", "claimed", "numeric", "residual", "result");
  for (size_t i = 0; i < mvl_obs_count(rep); ++i) {
    mvl_case_result c;
    mvl_obs_get(rep, i, &c);
    std::printf("%-40s %7d %7d %10.2e  %s\n", c.name, c.claimed_dim, c.numeric_dim, c.basis_residual,
                c.pass ? "pass" : "FAIL");
  }
  const bool ok = mvl_obs_all_pass(rep);
  mvl_obs_free(rep);
  std::printf("%s; report in %s\n", ok ? "all cases pass" : "some cases FAIL", path.string().c_str());
  return ok ? kOk : kAcceptanceFailure;
}

int cmd_timing(mvl_config *cfg) {
  const auto path = std::filesystem::path(mvl_config_out(cfg)) / "timing.csv";
  mvl_timing_result r;
  if (const mvl_status s = mvl_timing(cfg, path.string().c_str(), &r); s != MVL_OK)
    return report(s);
  std::printf("active dim %d\n%6s %12s %12s\n", r.active_dim, "m", "schmidt_us", "full_us");
  for (size_t i = 0; i < r.points; ++i)
    std::printf("%6d %12.1f %12.1f\n", r.m[i], r.schmidt_us[i], r.full_us[i]);
  std::printf("growth slope: schmidt %s (band %.1f-%.1f), full %s (band %.1f-%.1f)\n", num(r.schmidt_slope, 2).c_str(),
              kSchmidtSlope[0], kSchmidtSlope[1], num(r.full_slope, 2).c_str(), kFullSlope[0], kFullSlope[1]);
  std::printf("raw slope:    schmidt %s, full %s\n", num(r.schmidt_slope_raw, 2).c_str(),
              num(r.full_slope_raw, 2).c_str());
  if (r.points < 3)
    return kOk;  // too few points for a slope
  const bool ok = r.schmidt_slope >= kSchmidtSlope[0] && r.schmidt_slope <= kSchmidtSlope[1] &&
                  r.full_slope >= kFullSlope[0] && r.full_slope <= kFullSlope[1];
  return ok ? kOk : kAcceptanceFailure;
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"Map-based visual-inertial localization experiments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", mvl_version());

  Common c;
  bool quiet = false;
  auto *simulate = app.add_subcommand("simulate", "write simulated truth, IMU data and map bundles");
  auto *run = app.add_subcommand("run", "run filter variants over Monte Carlo seeds and write all artifacts");
  auto *metrics = app.add_subcommand("metrics", "re-evaluate the run records under --out");
  auto *observability = app.add_subcommand("observability", "numerical observability checks");
  auto *timing = app.add_subcommand("timing", "update cost against the number of map keyframes");
  for (auto *cmd : {simulate, run, metrics, observability, timing})
    add_common(cmd, c);
  run->add_flag("--quiet", quiet, "no progress output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success &e) {
    return app.exit(e);
  } catch (const CLI::ParseError &e) {
    app.exit(e);
    return kConfigError;
  }

  CLI::App *cmd = app.get_subcommands().front();
  mvl_config *cfg = nullptr;
  if (const mvl_status s = build_config(c, cmd, &cfg); s != MVL_OK) {
    mvl_config_free(cfg);
    return report(s);
  }

  int code = kOk;
  if (cmd == simulate)
    code = cmd_simulate(cfg, cmd->count("--runs") ? c.runs : 1);
  else if (cmd == run)
    code = cmd_run(cfg, quiet);
  else if (cmd == metrics)
    code = cmd_metrics(cfg);
  else if (cmd == observability)
    code = cmd_observability(cfg);
  else
    code = cmd_timing(cfg);
  mvl_config_free(cfg);
  return code;
}
