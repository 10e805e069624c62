#include "mapvil/mapvil.h"

#include "mapvil/experiment.hpp"
#include "mapvil/io.hpp"

#include <cmath>
#include <string>

using namespace mapvil;

struct mvl_config {
  ExperimentConfig cfg;
  std::string out_text;
};

struct mvl_summary {
  std::vector<VariantSummary> rows;
  std::vector<std::string> charts, modes;
  std::string csv;
};

struct mvl_obs_report {
  std::vector<CaseReport> cases;
};

namespace {

thread_local std::string g_error;

mvl_status fail(mvl_status s, const std::string &msg) {
  g_error = msg;
  return s;
}

/// Runs `f`, translating exceptions into status codes.
template <class F>
mvl_status guarded(F &&f) {
  g_error.clear();
  try {
    return f();
  } catch (const ConfigError &e) {
    return fail(MVL_ERR_CONFIG, e.what());
  } catch (const IoError &e) {
    return fail(MVL_ERR_IO, e.what());
  } catch (const std::filesystem::filesystem_error &e) {
    return fail(MVL_ERR_IO, e.what());
  } catch (const std::invalid_argument &e) {
    return fail(MVL_ERR_ARGUMENT, e.what());
  } catch (const std::exception &e) {
    return fail(MVL_ERR_RUNTIME, e.what());
  } catch (...) {
    return fail(MVL_ERR_RUNTIME, "unknown error");
  }
}

mvl_summary *make_summary(std::vector<VariantSummary> rows) {
  auto *s = new mvl_summary;
  s->csv = summary_csv(rows);
  for (const auto &r : rows) {
    s->charts.emplace_back(chart_name(r.chart));
    s->modes.emplace_back(map_mode_name(r.mode));
  }
  s->rows = std::move(rows);
  return s;
}

std::string rpe_csv(const std::vector<VariantSummary> &rows) {
  std::string out = "variant,length_m,segments,mean_m,skipped\n";
  for (const auto &s : rows)
    for (const auto &r : s.rpe)
      out += s.variant + "," + format_double(r.length) + "," + std::to_string(r.errors.size()) + "," +
             (r.skipped ? std::string() : format_double(r.mean)) + "," + (r.skipped ? "1" : "0") + "\n";
  return out;
}

}  // namespace

extern "C" {

const char *mvl_version(void) { return "1.0.0"; }

const char *mvl_last_error(void) { return g_error.c_str(); }

const char *mvl_status_name(mvl_status s) {
  switch (s) {
    case MVL_OK: return "ok";
    case MVL_ERR_ARGUMENT: return "invalid argument";
    case MVL_ERR_CONFIG: return "configuration error";
    case MVL_ERR_IO: return "i/o error";
    case MVL_ERR_RUNTIME: return "runtime error";
  }
  return "unknown status";
}

mvl_status mvl_config_default(mvl_config **out) {
  if (!out)
    return fail(MVL_ERR_ARGUMENT, "null output pointer");
  return guarded([&] {
    *out = new mvl_config;
    return MVL_OK;
  });
}

mvl_status mvl_config_load(const char *path, mvl_config **out) {
  if (!path || !out)
    return fail(MVL_ERR_ARGUMENT, "null argument");
  return guarded([&] {
    auto c = std::make_unique<mvl_config>();
    c->cfg = load_config(path);
    *out = c.release();
    return MVL_OK;
  });
}

void mvl_config_free(mvl_config *cfg) { delete cfg; }

mvl_status mvl_config_set_seed(mvl_config *cfg, uint64_t seed) {
  if (!cfg)
    return fail(MVL_ERR_ARGUMENT, "null config");
  cfg->cfg.seed = seed;
  return MVL_OK;
}

mvl_status mvl_config_set_runs(mvl_config *cfg, int runs) {
  if (!cfg)
    return fail(MVL_ERR_ARGUMENT, "null config");
  if (runs < 1)
    return fail(MVL_ERR_ARGUMENT, "runs must be at least 1");
  cfg->cfg.runs = runs;
  return MVL_OK;
}

mvl_status mvl_config_set_out(mvl_config *cfg, const char *dir) {
  if (!cfg || !dir || !*dir)
    return fail(MVL_ERR_ARGUMENT, "null config or empty directory");
  cfg->cfg.out = dir;
  return MVL_OK;
}

mvl_status mvl_config_set_variants(mvl_config *cfg, const char *list) {
  if (!cfg || !list)
    return fail(MVL_ERR_ARGUMENT, "null argument");
  return guarded([&] {
    cfg->cfg.variants = parse_variant_list(list);
    return MVL_OK;
  });
}

mvl_status mvl_config_set_map_mode(mvl_config *cfg, const char *mode) {
  if (!cfg || !mode)
    return fail(MVL_ERR_ARGUMENT, "null argument");
  return guarded([&] {
    cfg->cfg.map_mode = parse_map_mode(mode);
    return MVL_OK;
  });
}

mvl_status mvl_config_set_threads(mvl_config *cfg, int threads) {
  if (!cfg || threads < 0)
    return fail(MVL_ERR_ARGUMENT, "null config or negative thread count");
  cfg->cfg.threads = threads;
  return MVL_OK;
}

const char *mvl_config_out(const mvl_config *cfg) {
  if (!cfg)
    return "";
  auto *c = const_cast<mvl_config *>(cfg);
  c->out_text = cfg->cfg.out.string();
  return c->out_text.c_str();
}

mvl_status mvl_config_write(const mvl_config *cfg, const char *path) {
  if (!cfg || !path)
    return fail(MVL_ERR_ARGUMENT, "null argument");
  return guarded([&] {
    write_file_atomic(path, dump_config(cfg->cfg));
    return MVL_OK;
  });
}

mvl_status mvl_simulate(const mvl_config *cfg, int run, const char *dir) {
  if (!cfg || !dir || run < 0)
    return fail(MVL_ERR_ARGUMENT, "null argument or negative run index");
  return guarded([&] {
    cfg->cfg.validate();
    write_simulation(simulate_run(cfg->cfg, run), dir);
    return MVL_OK;
  });
}

mvl_status mvl_run(const mvl_config *cfg, mvl_progress_fn progress, void *user, mvl_summary **out) {
  if (!cfg || !out)
    return fail(MVL_ERR_ARGUMENT, "null argument");
  return guarded([&] {
    ProgressFn fn;
    if (progress)
      fn = [progress, user](const std::string &v, std::uint64_t seed, int done, int total) {
        progress(user, v.c_str(), seed, done, total);
      };
    *out = make_summary(run_experiment(cfg->cfg, fn));
    return MVL_OK;
  });
}

mvl_status mvl_metrics(const char *dir, const mvl_config *cfg, mvl_summary **out) {
  if (!dir || !out)
    return fail(MVL_ERR_ARGUMENT, "null argument");
  return guarded([&] {
    const MetricOptions opt = cfg ? cfg->cfg.metrics : MetricOptions{};
    auto rows = summarize(load_records(dir), opt);
    write_file_atomic(std::filesystem::path(dir) / "summary.csv", summary_csv(rows));
    write_file_atomic(std::filesystem::path(dir) / "rpe.csv", rpe_csv(rows));
    *out = make_summary(std::move(rows));
    return MVL_OK;
  });
}

size_t mvl_summary_count(const mvl_summary *s) { return s ? s->rows.size() : 0; }

mvl_status mvl_summary_get(const mvl_summary *s, size_t i, mvl_variant_summary *out) {
  if (!s || !out || i >= s->rows.size())
    return fail(MVL_ERR_ARGUMENT, "null argument or index out of range");
  const auto &r = s->rows[i];
  *out = mvl_variant_summary{r.variant.c_str(),
                             s->charts[i].c_str(),
                             s->modes[i].c_str(),
                             r.runs,
                             r.rmse_orientation,
                             r.rmse_position,
                             r.rmse_rel_orientation,
                             r.rmse_rel_position,
                             r.nees_orientation,
                             r.nees_position,
                             r.nees_pose,
                             r.nees_rel_orientation,
                             r.nees_rel_position,
                             r.ate_local,
                             r.ate_map};
  return MVL_OK;
}

const char *mvl_summary_csv(const mvl_summary *s) { return s ? s->csv.c_str() : ""; }

void mvl_summary_free(mvl_summary *s) { delete s; }

mvl_status mvl_observability(const mvl_config *cfg, const char *report_path, mvl_obs_report **out) {
  if (!cfg || !out)
    return fail(MVL_ERR_ARGUMENT, "null argument");
  return guarded([&] {
    auto r = std::make_unique<mvl_obs_report>();
    r->cases = run_observability_suite(cfg->cfg.seed, cfg->cfg.observability.trajectories,
                                       cfg->cfg.observability.steps);
    if (report_path)
      write_file_atomic(report_path, observability_csv(r->cases));
    *out = r.release();
    return MVL_OK;
  });
}

size_t mvl_obs_count(const mvl_obs_report *r) { return r ? r->cases.size() : 0; }

mvl_status mvl_obs_get(const mvl_obs_report *r, size_t i, mvl_case_result *out) {
  if (!r || !out || i >= r->cases.size())
    return fail(MVL_ERR_ARGUMENT, "null argument or index out of range");
  const auto &c = r->cases[i];
  *out = mvl_case_result{c.name.c_str(), c.claimed, c.numeric, c.basis_residual, c.degenerate ? 1 : 0, c.pass ? 1 : 0};
  return MVL_OK;
}

int mvl_obs_all_pass(const mvl_obs_report *r) {
  if (!r || r->cases.empty())
    return 0;
  for (const auto &c : r->cases)
    if (!c.pass)
      return 0;
  return 1;
}

void mvl_obs_free(mvl_obs_report *r) { delete r; }

mvl_status mvl_timing(const mvl_config *cfg, const char *report_path, mvl_timing_result *out) {
  if (!cfg || !out)
    return fail(MVL_ERR_ARGUMENT, "null argument");
  if (cfg->cfg.timing.keyframes.size() + 1 > MVL_TIMING_MAX_POINTS)
    return fail(MVL_ERR_CONFIG, "too many timing points");
  return guarded([&] {
    const TimingReport rep = timing_report(cfg->cfg.timing, cfg->cfg.seed);
    if (report_path)
      write_file_atomic(report_path, timing_csv(rep));
    *out = mvl_timing_result{};
    out->points = rep.points.size();
    for (size_t i = 0; i < rep.points.size(); ++i) {
      out->m[i] = rep.points[i].m;
      out->schmidt_us[i] = rep.points[i].schmidt_seconds * 1e6;
      out->full_us[i] = rep.points[i].full_seconds * 1e6;
    }
    out->schmidt_slope = rep.schmidt_slope;
    out->full_slope = rep.full_slope;
    out->schmidt_slope_raw = rep.schmidt_slope_raw;
    out->full_slope_raw = rep.full_slope_raw;
    out->active_dim = rep.active_dim;
    return MVL_OK;
  });
}

}  // extern "C"
