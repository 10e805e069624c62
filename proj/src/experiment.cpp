#include "mapvil/experiment.hpp"

#include "mapvil/io.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <limits>
#include <map>
#include <mutex>
#include <random>
#include <thread>
#include <tuple>

namespace mapvil {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string cell(double x) { return std::isfinite(x) ? format_double(x) : std::string(); }

double aggregate_or_nan(const Series &s) { return s.value.empty() ? kNaN : s.aggregate; }

fs::path run_dir(const fs::path &out, const RunRecord &r) {
  return out / "runs" / r.variant / ("seed_" + std::to_string(r.seed));
}

std::vector<StampedPose> trajectory(const RunRecord &r, bool estimate) {
  std::vector<StampedPose> out;
  out.reserve(r.steps.size());
  for (const auto &s : r.steps)
    out.push_back({s.t, estimate ? s.est : s.truth});
  return out;
}

std::string nees_traces(const std::vector<RunRecord> &runs) {
  const Variable vars[] = {Variable::Orientation, Variable::Position, Variable::RelOrientation,
                           Variable::RelPosition};
  std::map<double, std::array<double, 4>> rows;
  for (int i = 0; i < 4; ++i) {
    const auto s = nees(runs, vars[i]);
    for (size_t k = 0; k < s.t.size(); ++k) {
      auto it = rows.try_emplace(s.t[k], std::array<double, 4>{kNaN, kNaN, kNaN, kNaN}).first;
      it->second[i] = s.value[k];
    }
  }
  std::string out = "t,nees_orientation,nees_position,nees_rel_orientation,nees_rel_position\n";
  for (const auto &[t, v] : rows)
    out += format_double(t) + "," + cell(v[0]) + "," + cell(v[1]) + "," + cell(v[2]) + "," + cell(v[3]) + "\n";
  return out;
}

/// Error components and 3-sigma bounds of a single run over the record layout
/// [theta, p, p_G, theta_G].
std::string sigma_trace(const RunRecord &r) {
  std::string out = "t,has_relative";
  for (const char *p : {"e", "sigma3"})
    for (int i = 0; i < 12; ++i)
      out += "," + std::string(p) + "_" + std::to_string(i);
  out += "\n";
  for (const auto &s : r.steps) {
    const auto e = record_error(s, r.chart);
    out += format_double(s.t) + (s.has_relative ? ",1" : ",0");
    for (int i = 0; i < 12; ++i)
      out += "," + (i < 6 || s.has_relative ? format_double(e(i)) : std::string());
    for (int i = 0; i < 12; ++i)
      out += "," + (i < 6 || s.has_relative ? format_double(3.0 * std::sqrt(std::max(0.0, s.P(i, i)))) : std::string());
    out += "\n";
  }
  return out;
}

}  // namespace

Simulation simulate_run(const ExperimentConfig &cfg, int run) {
  SimConfig c = cfg.sim;
  c.seed = cfg.seed + static_cast<std::uint64_t>(run);
  return simulate(c, cfg.map_mode);
}

void write_simulation(const Simulation &sim, const fs::path &dir) {
  std::vector<StampedPose> truth;
  truth.reserve(sim.truth.size());
  for (const auto &s : sim.truth)
    truth.push_back({s.t, Pose{s.R, s.p}});
  write_tum(dir / "truth.tum", truth);

  std::string imu = "t,gx,gy,gz,ax,ay,az,bgx,bgy,bgz,bax,bay,baz\n";
  for (size_t i = 0; i < sim.imu.samples.size(); ++i) {
    const auto &m = sim.imu.samples[i];
    imu += format_double(m.t);
    for (const Vec3 *v : {&m.gyro, &m.accel, &sim.imu.bias_g[i], &sim.imu.bias_a[i]})
      for (int k = 0; k < 3; ++k)
        imu += "," + format_double((*v)(k));
    imu += "\n";
  }
  write_file_atomic(dir / "imu.csv", imu);

  write_map_bundle(dir / "map_truth", sim.maps.truth);
  write_map_bundle(dir / "map_noisy", sim.maps.noisy);

  std::string lf = "# id x y z (frame L)\n";
  for (size_t i = 0; i < sim.meas.local_features.size(); ++i) {
    const Vec3 &p = sim.meas.local_features[i];
    lf += std::to_string(i) + " " + format_double(p.x()) + " " + format_double(p.y()) + " " + format_double(p.z()) +
          "\n";
  }
  write_file_atomic(dir / "local_features.txt", lf);
}

std::vector<TimedRun> run_campaign(const ExperimentConfig &cfg, const ProgressFn &progress) {
  cfg.validate();
  const int nv = static_cast<int>(cfg.variants.size());
  const int total = cfg.runs * nv;
  std::vector<TimedRun> out(total);
  std::atomic<int> next{0}, done{0};
  std::mutex mu;
  std::exception_ptr error;

  // One task per Monte Carlo run: simulate once, then every variant.
  auto worker = [&] {
    for (int run = next++; run < cfg.runs; run = next++) {
      try {
        const Simulation sim = simulate_run(cfg, run);
        for (int v = 0; v < nv; ++v) {
          const auto t0 = std::chrono::steady_clock::now();
          auto rec = run_filter(sim, cfg.variants[v], cfg.filter, sim.cfg.seed);
          const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
          out[run * nv + v] = {std::move(rec), wall};
          const int d = ++done;
          if (progress) {
            std::lock_guard lock(mu);
            progress(variant_info(cfg.variants[v]).name, sim.cfg.seed, d, total);
          }
        }
      } catch (...) {
        std::lock_guard lock(mu);
        if (!error)
          error = std::current_exception();
        next = cfg.runs;
      }
    }
  };

  int threads = cfg.threads > 0 ? cfg.threads : static_cast<int>(std::thread::hardware_concurrency());
  threads = std::clamp(threads, 1, cfg.runs);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < threads; ++i)
      pool.emplace_back(worker);
    for (auto &t : pool)
      t.join();
  }
  if (error)
    std::rethrow_exception(error);
  return out;
}

std::vector<VariantSummary> summarize(const std::vector<RunRecord> &records, const MetricOptions &opt) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<RunRecord>> groups;
  for (const auto &r : records) {
    if (!groups.count(r.variant))
      order.push_back(r.variant);
    groups[r.variant].push_back(r);
  }
  std::vector<VariantSummary> out;
  for (const auto &name : order) {
    const auto &runs = groups[name];
    VariantSummary s;
    s.variant = name;
    s.chart = runs.front().chart;
    s.mode = runs.front().mode;
    s.runs = static_cast<int>(runs.size());
    const bool relative = std::any_of(runs.begin(), runs.end(), [](const RunRecord &r) {
      return std::any_of(r.steps.begin(), r.steps.end(), [](const RecordStep &st) { return st.has_relative; });
    });

    s.rmse_orientation = rmse(runs, Variable::Orientation).aggregate;
    s.rmse_position = rmse(runs, Variable::Position).aggregate;
    const auto no = nees(runs, Variable::Orientation), np = nees(runs, Variable::Position),
               npose = nees(runs, Variable::Pose);
    s.nees_orientation = aggregate_or_nan(no);
    s.nees_position = aggregate_or_nan(np);
    s.nees_pose = aggregate_or_nan(npose);
    s.nees_skipped = no.skipped + np.skipped;
    s.nees_regularized = no.regularized + np.regularized;
    s.ate_local = ate_local(runs, opt.align, opt.planar);
    if (relative) {
      s.rmse_rel_orientation = aggregate_or_nan(rmse(runs, Variable::RelOrientation));
      s.rmse_rel_position = aggregate_or_nan(rmse(runs, Variable::RelPosition));
      s.nees_rel_orientation = aggregate_or_nan(nees(runs, Variable::RelOrientation));
      s.nees_rel_position = aggregate_or_nan(nees(runs, Variable::RelPosition));
      s.ate_map = ate_map(runs, opt.planar);
    } else {
      s.rmse_rel_orientation = s.rmse_rel_position = s.nees_rel_orientation = s.nees_rel_position = s.ate_map = kNaN;
    }
    for (const auto &r : runs) {
      s.map_updates += r.stats.map_updates;
      s.map_gated += r.stats.map_gated;
      s.msckf_updates += r.stats.msckf_updates;
    }
    s.rpe = rpe(runs, opt.rpe_lengths);
    out.push_back(std::move(s));
  }
  return out;
}

std::string summary_csv(const std::vector<VariantSummary> &summaries) {
  std::string out =
      "variant,chart,map_mode,runs,rmse_orientation_deg,rmse_position_m,rmse_rel_orientation_deg,rmse_rel_position_m,"
      "nees_orientation,nees_position,nees_pose,nees_rel_orientation,nees_rel_position,ate_local_m,ate_map_m,"
      "nees_skipped,nees_regularized,map_updates,map_gated,msckf_updates\n";
  for (const auto &s : summaries) {
    out += s.variant + "," + chart_name(s.chart) + "," + map_mode_name(s.mode) + "," + std::to_string(s.runs);
    for (double x : {s.rmse_orientation, s.rmse_position, s.rmse_rel_orientation, s.rmse_rel_position,
                     s.nees_orientation, s.nees_position, s.nees_pose, s.nees_rel_orientation, s.nees_rel_position,
                     s.ate_local, s.ate_map})
      out += "," + cell(x);
    for (int x : {s.nees_skipped, s.nees_regularized, s.map_updates, s.map_gated, s.msckf_updates})
      out += "," + std::to_string(x);
    out += "\n";
  }
  return out;
}

void write_artifacts(const ExperimentConfig &cfg, const std::vector<TimedRun> &runs,
                     const std::vector<VariantSummary> &summaries) {
  const fs::path &out = cfg.out;
  write_file_atomic(out / "config.ini", dump_config(cfg));
  write_file_atomic(out / "summary.csv", summary_csv(summaries));

  std::string rpe_csv = "variant,length_m,segments,mean_m,skipped\n", rpe_err = "variant,length_m,error_m\n";
  for (const auto &s : summaries)
    for (const auto &r : s.rpe) {
      rpe_csv += s.variant + "," + format_double(r.length) + "," + std::to_string(r.errors.size()) + "," +
                 (r.skipped ? std::string() : format_double(r.mean)) + "," + (r.skipped ? "1" : "0") + "\n";
      for (double e : r.errors)
        rpe_err += s.variant + "," + format_double(r.length) + "," + format_double(e) + "\n";
    }
  write_file_atomic(out / "rpe.csv", rpe_csv);
  write_file_atomic(out / "rpe_errors.csv", rpe_err);

  std::map<std::string, std::vector<RunRecord>> groups;
  for (const auto &tr : runs) {
    const auto &r = tr.record;
    const fs::path dir = run_dir(out, r);
    write_run_record(dir / "record.csv", r);
    if (cfg.write_trajectories) {
      write_tum(dir / "est.tum", trajectory(r, true));
      write_tum(dir / "truth.tum", trajectory(r, false));
    }
    const double per_frame = r.steps.empty() ? 0.0 : tr.wall_seconds / r.steps.size();
    write_file_atomic(dir / "timing.txt", "wall_seconds=" + format_double(tr.wall_seconds) +
                                              "\nmap_update_seconds=" + format_double(r.stats.update_seconds) +
                                              "\nframes=" + std::to_string(r.steps.size()) +
                                              "\nseconds_per_frame=" + format_double(per_frame) + "\n");
    auto &g = groups[r.variant];
    if (g.empty())
      write_file_atomic(out / "traces" / (r.variant + "_3sigma_seed" + std::to_string(r.seed) + ".csv"),
                        sigma_trace(r));
    g.push_back(r);
  }
  for (const auto &[name, g] : groups)
    write_file_atomic(out / "traces" / (name + "_nees.csv"), nees_traces(g));
}

std::vector<VariantSummary> run_experiment(const ExperimentConfig &cfg, const ProgressFn &progress) {
  const auto runs = run_campaign(cfg, progress);
  std::vector<RunRecord> records;
  records.reserve(runs.size());
  for (const auto &r : runs)
    records.push_back(r.record);
  const auto summaries = summarize(records, cfg.metrics);
  write_artifacts(cfg, runs, summaries);
  return summaries;
}

std::vector<RunRecord> load_records(const fs::path &dir) {
  const fs::path root = dir / "runs";
  if (!fs::is_directory(root))
    throw IoError(root.string() + ": no runs directory");
  std::vector<fs::path> files;
  for (const auto &e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && e.path().filename() == "record.csv")
      files.push_back(e.path());
  if (files.empty())
    throw IoError(root.string() + ": no run records");
  std::vector<RunRecord> out;
  for (const auto &f : files)
    out.push_back(read_run_record(f));
  std::sort(out.begin(), out.end(), [](const RunRecord &a, const RunRecord &b) {
    return std::tie(a.variant, a.seed) < std::tie(b.variant, b.seed);
  });
  return out;
}

double loglog_slope(const std::vector<double> &x, const std::vector<double> &y) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int n = 0;
  for (size_t i = 0; i < x.size() && i < y.size(); ++i) {
    if (!(x[i] > 0.0 && y[i] > 0.0))
      continue;
    const double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
    ++n;
  }
  const double den = n * sxx - sx * sx;
  if (n < 2 || den <= 0.0)
    return kNaN;
  return (n * sxy - sx * sy) / den;
}

namespace {

MatX random_spd(std::mt19937_64 &rng, int n, double scale) {
  std::normal_distribution<double> nd;
  MatX A(n, n);
  for (int i = 0; i < n * n; ++i)
    A.data()[i] = nd(rng);
  return scale * (A * A.transpose() / n + 0.1 * MatX::Identity(n, n));
}

Vec3 randn3(std::mt19937_64 &rng, double sigma) {
  std::normal_distribution<double> nd(0.0, sigma);
  return {nd(rng), nd(rng), nd(rng)};
}

/// Active block with `clones` clones plus m keyframes, dense SPD covariance,
/// and a residual touching `touched` of the keyframes.
std::pair<AugmentedState, StackedResidual> timing_problem(const TimingOptions &opt, int m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  NavState nav;
  nav.R_LI = so3_exp(randn3(rng, 1.0));
  nav.p_LI = randn3(rng, 5.0);
  nav.v_LI = randn3(rng, 1.0);
  nav.R_LG = so3_exp(randn3(rng, 1.0));
  nav.p_LG = randn3(rng, 5.0);
  AugmentedState s = make_state(ErrorChart::Invariant, nav, Extrinsic{}, random_spd(rng, slot::kClones, 1e-2));
  s.aug_initialized = true;
  s.oc_anchor = s.nav.R_LG;
  for (int i = 0; i < opt.clones; ++i)
    augment_clone(s, 0.1 * (i + 1));
  std::vector<MapKeyframePose> kfs;
  std::vector<Mat6> priors;
  for (int j = 0; j < m; ++j) {
    kfs.push_back({j, so3_exp(randn3(rng, 1.0)), randn3(rng, 20.0)});
    priors.push_back(random_spd(rng, 6, 1e-3));
  }
  insert_keyframes(s, kfs, priors);
  s.set_covariance(random_spd(rng, s.dim(), 1e-2));

  StackedResidual sr;
  const int a = s.active_dim(), k = std::min(m, opt.touched), r = opt.rows;
  std::normal_distribution<double> nd;
  sr.r = VecX(r);
  sr.H_a = MatX(r, a);
  sr.H_n = MatX(r, 6 * k);
  for (int i = 0; i < r; ++i)
    sr.r(i) = 1e-2 * nd(rng);
  for (int i = 0; i < sr.H_a.size(); ++i)
    sr.H_a.data()[i] = nd(rng);
  for (int i = 0; i < sr.H_n.size(); ++i)
    sr.H_n.data()[i] = nd(rng);
  for (int j = 0; j < k; ++j)
    sr.keyframes.push_back(j);
  sr.V = MatX::Identity(r, r);
  return {std::move(s), std::move(sr)};
}

/// Median time of one update, repeated until `min_seconds` have elapsed. The
/// state copy each repetition starts from is outside the timed region.
template <class F>
double time_update(const AugmentedState &s0, const StackedResidual &sr, double min_seconds, F update) {
  using clock = std::chrono::steady_clock;
  std::vector<double> samples;
  const auto start = clock::now();
  while (samples.size() < 5 || std::chrono::duration<double>(clock::now() - start).count() < min_seconds) {
    AugmentedState s = s0;
    const auto t0 = clock::now();
    update(s, sr);
    samples.push_back(std::chrono::duration<double>(clock::now() - t0).count());
  }
  std::nth_element(samples.begin(), samples.begin() + samples.size() / 2, samples.end());
  return samples[samples.size() / 2];
}

}  // namespace

TimingReport timing_report(const TimingOptions &opt, std::uint64_t seed) {
  std::vector<int> ms = opt.keyframes;
  ms.push_back(0);
  std::sort(ms.begin(), ms.end());
  ms.erase(std::unique(ms.begin(), ms.end()), ms.end());

  UpdateOptions uo;
  uo.gate = false;
  uo.max_condition = std::numeric_limits<double>::infinity();

  TimingReport rep;
  rep.rows = opt.rows;
  for (int m : ms)
    rep.points.push_back({m, std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()});
  for (int sweep = 0; sweep < std::max(1, opt.sweeps); ++sweep) {
    for (auto &p : rep.points) {
      const auto [s0, sr] = timing_problem(opt, p.m, seed + p.m);
      rep.active_dim = s0.active_dim();
      const double ts = time_update(s0, sr, opt.min_seconds,
                                    [&](AugmentedState &s, const StackedResidual &r) { schmidt_update(s, r, uo); });
      const double tf = time_update(s0, sr, opt.min_seconds,
                                    [&](AugmentedState &s, const StackedResidual &r) { full_update(s, r, uo); });
      p.schmidt_seconds = std::min(p.schmidt_seconds, ts);
      p.full_seconds = std::min(p.full_seconds, tf);
    }
  }

  const TimingPoint &base = rep.points.front();
  std::vector<double> x, ys, yf, ys_raw, yf_raw;
  for (const auto &p : rep.points) {
    if (p.m == 0)
      continue;
    x.push_back(p.m);
    ys.push_back(p.schmidt_seconds - base.schmidt_seconds);
    yf.push_back(p.full_seconds - base.full_seconds);
    ys_raw.push_back(p.schmidt_seconds);
    yf_raw.push_back(p.full_seconds);
  }
  rep.schmidt_slope = loglog_slope(x, ys);
  rep.full_slope = loglog_slope(x, yf);
  rep.schmidt_slope_raw = loglog_slope(x, ys_raw);
  rep.full_slope_raw = loglog_slope(x, yf_raw);
  return rep;
}

std::string timing_csv(const TimingReport &r) {
  std::string out = "# active_dim=" + std::to_string(r.active_dim) + " rows=" + std::to_string(r.rows) +
                    " schmidt_slope=" + cell(r.schmidt_slope) + " full_slope=" + cell(r.full_slope) +
                    " schmidt_slope_raw=" + cell(r.schmidt_slope_raw) + " full_slope_raw=" + cell(r.full_slope_raw) +
                    "\nm,nuisance_dim,schmidt_us,full_us\n";
  for (const auto &p : r.points)
    out += std::to_string(p.m) + "," + std::to_string(6 * p.m) + "," + format_double(p.schmidt_seconds * 1e6) + "," +
           format_double(p.full_seconds * 1e6) + "\n";
  return out;
}

std::string observability_csv(const std::vector<CaseReport> &reports) {
  std::string out = "case,claimed_dim,numeric_dim,basis_residual,degenerate,pass\n";
  for (const auto &r : reports)
    out += r.name + "," + std::to_string(r.claimed) + "," + std::to_string(r.numeric) + "," +
           format_double(r.basis_residual) + "," + (r.degenerate ? "1" : "0") + "," + (r.pass ? "1" : "0") + "\n";
  return out;
}

}  // namespace mapvil
