#include "mapvil/config.hpp"

#include "mapvil/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <sstream>

namespace mapvil {

ConfigError::ConfigError(const std::string &source, int line_, const std::string &msg)
    : std::runtime_error(source + (line_ > 0 ? ":" + std::to_string(line_) : std::string()) + ": " + msg),
      line(line_) {}

namespace {

using Setter = std::function<void(ExperimentConfig &, const std::string &)>;
using Getter = std::function<std::string(const ExperimentConfig &)>;

struct Entry {
  std::string section, key, doc;
  Setter set;
  Getter get;
};

/// Thrown by setters; the parser attaches source and line.
struct BadValue : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string trim(std::string_view s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string_view::npos)
    return {};
  const auto b = s.find_last_not_of(" \t\r");
  return std::string(s.substr(a, b - a + 1));
}

std::vector<std::string> split_list(const std::string &s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (auto t = trim(item); !t.empty())
      out.push_back(t);
  return out;
}

template <class T>
T parse_num(const std::string &text) {
  T v{};
  const std::string t = trim(text);
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size())
    throw BadValue("not a valid number: '" + t + "'");
  if constexpr (std::is_floating_point_v<T>)
    if (!std::isfinite(v))
      throw BadValue("value must be finite");
  return v;
}

bool parse_bool(const std::string &text) {
  const std::string t = trim(text);
  if (t == "true" || t == "1" || t == "yes" || t == "on")
    return true;
  if (t == "false" || t == "0" || t == "no" || t == "off")
    return false;
  throw BadValue("expected true or false, got '" + t + "'");
}

Vec3 parse_vec3(const std::string &text) {
  const auto items = split_list(text);
  if (items.size() != 3)
    throw BadValue("expected three comma-separated numbers");
  return {parse_num<double>(items[0]), parse_num<double>(items[1]), parse_num<double>(items[2])};
}

std::string vec3_text(const Vec3 &v) {
  return format_double(v.x()) + ", " + format_double(v.y()) + ", " + format_double(v.z());
}

// Rotation vectors come back from a log map; 15 digits hide the round trip.
std::string rotvec_text(const Vec3 &v) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%.15g, %.15g, %.15g", v.x(), v.y(), v.z());
  return buf;
}

enum class Bound { Any, NonNeg, Pos, Prob };

void check(double v, Bound b) {
  switch (b) {
    case Bound::Any: break;
    case Bound::NonNeg:
      if (v < 0.0)
        throw BadValue("must be nonnegative");
      break;
    case Bound::Pos:
      if (!(v > 0.0))
        throw BadValue("must be positive");
      break;
    case Bound::Prob:
      if (!(v > 0.0 && v < 1.0))
        throw BadValue("must lie in (0, 1)");
      break;
  }
}

template <class F>
Entry real(const char *sec, const char *key, const char *doc, F ref, Bound b = Bound::Any) {
  return {sec, key, doc,
          [ref, b](ExperimentConfig &c, const std::string &v) {
            const double x = parse_num<double>(v);
            check(x, b);
            ref(c) = x;
          },
          [ref](const ExperimentConfig &c) { return format_double(ref(const_cast<ExperimentConfig &>(c))); }};
}

template <class F>
Entry integer(const char *sec, const char *key, const char *doc, F ref, int lo) {
  return {sec, key, doc,
          [ref, lo](ExperimentConfig &c, const std::string &v) {
            const int x = parse_num<int>(v);
            if (x < lo)
              throw BadValue("must be at least " + std::to_string(lo));
            ref(c) = x;
          },
          [ref](const ExperimentConfig &c) { return std::to_string(ref(const_cast<ExperimentConfig &>(c))); }};
}

template <class F>
Entry boolean(const char *sec, const char *key, const char *doc, F ref) {
  return {sec, key, doc, [ref](ExperimentConfig &c, const std::string &v) { ref(c) = parse_bool(v); },
          [ref](const ExperimentConfig &c) {
            return std::string(ref(const_cast<ExperimentConfig &>(c)) ? "true" : "false");
          }};
}

template <class F>
Entry vec3(const char *sec, const char *key, const char *doc, F ref) {
  return {sec, key, doc, [ref](ExperimentConfig &c, const std::string &v) { ref(c) = parse_vec3(v); },
          [ref](const ExperimentConfig &c) { return vec3_text(ref(const_cast<ExperimentConfig &>(c))); }};
}

template <class F>
Entry rotvec(const char *sec, const char *key, const char *doc, F ref) {
  return {sec, key, doc, [ref](ExperimentConfig &c, const std::string &v) { ref(c) = so3_exp(parse_vec3(v)); },
          [ref](const ExperimentConfig &c) { return rotvec_text(so3_log(ref(const_cast<ExperimentConfig &>(c)))); }};
}

const char *align_name(AlignMode m) {
  switch (m) {
    case AlignMode::None: return "none";
    case AlignMode::FirstPose: return "first_pose";
    case AlignMode::Umeyama: return "umeyama";
  }
  return "?";
}

std::string join_variants(const std::vector<Variant> &vs) {
  std::string s;
  for (Variant v : vs)
    s += (s.empty() ? "" : ", ") + std::string(variant_info(v).name);
  return s;
}

const std::vector<Entry> &entries() {
  using C = ExperimentConfig;
  static const std::vector<Entry> table = {
      {"experiment", "runs", "Monte Carlo runs per variant",
       [](C &c, const std::string &v) {
         c.runs = parse_num<int>(v);
         if (c.runs < 1)
           throw BadValue("runs must be at least 1");
       },
       [](const C &c) { return std::to_string(c.runs); }},
      {"experiment", "seed", "base seed; run i uses seed + i",
       [](C &c, const std::string &v) { c.seed = parse_num<std::uint64_t>(v); },
       [](const C &c) { return std::to_string(c.seed); }},
      {"experiment", "variants", "comma-separated subset of vio, msc-ekf, msc-s-ekf, msc-ikf, msoc-s-ikf, or all",
       [](C &c, const std::string &v) {
         try {
           c.variants = parse_variant_list(v);
         } catch (const std::invalid_argument &e) {
           throw BadValue(e.what());
         }
       },
       [](const C &c) { return join_variants(c.variants); }},
      {"experiment", "map_mode", "perfect or imperfect",
       [](C &c, const std::string &v) {
         try {
           c.map_mode = parse_map_mode(v);
         } catch (const std::invalid_argument &e) {
           throw BadValue(e.what());
         }
       },
       [](const C &c) { return std::string(map_mode_name(c.map_mode)); }},
      {"experiment", "out", "output directory",
       [](C &c, const std::string &v) {
         if (trim(v).empty())
           throw BadValue("out must not be empty");
         c.out = trim(v);
       },
       [](const C &c) { return c.out.string(); }},
      integer("experiment", "threads", "worker threads, 0 for one per core", [](C &c) -> int & { return c.threads; }, 0),
      boolean("experiment", "write_trajectories", "write TUM trajectories per run",
              [](C &c) -> bool & { return c.write_trajectories; }),

      real("simulation", "duration", "sequence length, s", [](C &c) -> double & { return c.sim.duration; }, Bound::Pos),
      real("simulation", "imu_rate", "Hz", [](C &c) -> double & { return c.sim.imu_rate; }, Bound::Pos),
      real("simulation", "cam_rate", "Hz, must divide imu_rate", [](C &c) -> double & { return c.sim.cam_rate; },
           Bound::Pos),
      real("simulation", "local_density", "local features per metre travelled",
           [](C &c) -> double & { return c.sim.local_density; }, Bound::NonNeg),
      real("simulation", "depth_min", "feature depth range, m", [](C &c) -> double & { return c.sim.depth_min; },
           Bound::Pos),
      real("simulation", "depth_max", "", [](C &c) -> double & { return c.sim.depth_max; }, Bound::Pos),
      rotvec("simulation", "T_LG_rotation", "map frame in the local frame, rotation vector (rad)",
             [](C &c) -> Mat3 & { return c.sim.T_LG.R; }),
      vec3("simulation", "T_LG_translation", "m", [](C &c) -> Vec3 & { return c.sim.T_LG.p; }),
      rotvec("simulation", "extrinsic_rotation", "camera in IMU frame, rotation vector (rad)",
             [](C &c) -> Mat3 & { return c.sim.ext.R_IC; }),
      vec3("simulation", "extrinsic_translation", "m", [](C &c) -> Vec3 & { return c.sim.ext.p_IC; }),
      {"simulation", "match_dropout", "windows without map matches, 't0:t1, t0:t1' in s",
       [](C &c, const std::string &v) {
         c.sim.match_dropout.clear();
         for (const auto &item : split_list(v)) {
           const auto colon = item.find(':');
           if (colon == std::string::npos)
             throw BadValue("dropout window '" + item + "' needs the form t0:t1");
           const double a = parse_num<double>(item.substr(0, colon)), b = parse_num<double>(item.substr(colon + 1));
           if (!(b > a))
             throw BadValue("dropout window '" + item + "' needs t1 > t0");
           c.sim.match_dropout.emplace_back(a, b);
         }
       },
       [](const C &c) {
         std::string s;
         for (const auto &[a, b] : c.sim.match_dropout)
           s += (s.empty() ? "" : ", ") + format_double(a) + ":" + format_double(b);
         return s;
       }},

      real("imu", "sigma_g", "gyro white noise, rad/s/sqrt(Hz); simulated and assumed",
           [](C &c) -> double & { return c.sim.imu.sigma_g; }, Bound::NonNeg),
      real("imu", "sigma_a", "accel white noise, m/s^2/sqrt(Hz)", [](C &c) -> double & { return c.sim.imu.sigma_a; },
           Bound::NonNeg),
      real("imu", "sigma_bg", "gyro bias random walk, rad/s^2/sqrt(Hz)",
           [](C &c) -> double & { return c.sim.imu.sigma_bg; }, Bound::NonNeg),
      real("imu", "sigma_ba", "accel bias random walk, m/s^3/sqrt(Hz)",
           [](C &c) -> double & { return c.sim.imu.sigma_ba; }, Bound::NonNeg),

      real("camera", "fx", "focal length, px", [](C &c) -> double & { return c.sim.cam.fx; }, Bound::Pos),
      real("camera", "fy", "", [](C &c) -> double & { return c.sim.cam.fy; }, Bound::Pos),
      real("camera", "cx", "principal point, px", [](C &c) -> double & { return c.sim.cam.cx; }),
      real("camera", "cy", "", [](C &c) -> double & { return c.sim.cam.cy; }),
      integer("camera", "width", "image size, px", [](C &c) -> int & { return c.sim.cam.width; }, 1),
      integer("camera", "height", "", [](C &c) -> int & { return c.sim.cam.height; }, 1),
      real("camera", "sigma_px", "pixel noise, px", [](C &c) -> double & { return c.sim.cam.sigma_px; },
           Bound::NonNeg),

      real("map", "sigma_p", "imperfect map keyframe position noise, m",
           [](C &c) -> double & { return c.sim.map_sigma_p; }, Bound::NonNeg),
      real("map", "sigma_o_deg", "imperfect map keyframe orientation noise, deg",
           [](C &c) -> double & { return c.sim.map_sigma_o_deg; }, Bound::NonNeg),
      real("map", "perfect_sigma_p", "keyframe prior attached to the perfect map, m",
           [](C &c) -> double & { return c.sim.perfect_map_sigma_p; }, Bound::NonNeg),
      real("map", "perfect_sigma_o_deg", "deg", [](C &c) -> double & { return c.sim.perfect_map_sigma_o_deg; },
           Bound::NonNeg),
      real("map", "keyframe_interval", "s along the map run", [](C &c) -> double & { return c.sim.keyframe_interval; },
           Bound::Pos),
      real("map", "density", "map features per metre of map run", [](C &c) -> double & { return c.sim.map_density; },
           Bound::NonNeg),
      integer("map", "keyframes_per_frame", "nearest keyframes matched per frame",
              [](C &c) -> int & { return c.sim.keyframes_per_frame; }, 1),
      integer("map", "max_matches", "map matches per frame", [](C &c) -> int & { return c.sim.max_map_matches; }, 0),
      {"map", "keyframe_retire_frames", "frames without a match before a keyframe is dropped for good",
       [](C &c, const std::string &v) {
         const int x = parse_num<int>(v);
         if (x < 1)
           throw BadValue("must be at least 1");
         c.sim.keyframe_retire_frames = c.filter.keyframe_retire_frames = x;
       },
       [](const C &c) { return std::to_string(c.filter.keyframe_retire_frames); }},

      integer("filter", "max_clones", "sliding-window size", [](C &c) -> int & { return c.filter.max_clones; }, 2),
      real("filter", "chi2_probability", "gating probability", [](C &c) -> double & { return c.filter.update.chi2_probability; },
           Bound::Prob),
      real("filter", "pixel_sigma", "assumed pixel noise, px; 0 uses camera sigma_px",
           [](C &c) -> double & { return c.filter.pixel_sigma; }, Bound::NonNeg),
      boolean("filter", "gate", "chi-square gating on", [](C &c) -> bool & { return c.filter.update.gate; }),
      real("filter", "max_condition", "largest accepted condition number of S",
           [](C &c) -> double & { return c.filter.update.max_condition; }, Bound::Pos),
      real("filter", "init_theta", "initial std, rad", [](C &c) -> double & { return c.filter.init_theta; },
           Bound::NonNeg),
      real("filter", "init_v", "m/s", [](C &c) -> double & { return c.filter.init_v; }, Bound::NonNeg),
      real("filter", "init_p", "m", [](C &c) -> double & { return c.filter.init_p; }, Bound::NonNeg),
      real("filter", "init_bg", "rad/s", [](C &c) -> double & { return c.filter.init_bg; }, Bound::NonNeg),
      real("filter", "init_ba", "m/s^2", [](C &c) -> double & { return c.filter.init_ba; }, Bound::NonNeg),
      real("filter", "init_ext", "extrinsic, rad and m", [](C &c) -> double & { return c.filter.init_ext; },
           Bound::NonNeg),
      real("filter", "aug_theta", "pose-fix noise for the relative transform, rad",
           [](C &c) -> double & { return c.filter.aug_theta; }, Bound::Pos),
      real("filter", "aug_p", "m", [](C &c) -> double & { return c.filter.aug_p; }, Bound::Pos),
      boolean("filter", "perturb_init", "draw the initial estimate from the prior",
              [](C &c) -> bool & { return c.filter.perturb_init; }),
      boolean("filter", "audit", "check the nuisance block and PSD-ness every frame",
              [](C &c) -> bool & { return c.filter.audit; }),

      {"metrics", "rpe_lengths", "segment lengths, m",
       [](C &c, const std::string &v) {
         c.metrics.rpe_lengths.clear();
         for (const auto &item : split_list(v)) {
           const double x = parse_num<double>(item);
           check(x, Bound::Pos);
           c.metrics.rpe_lengths.push_back(x);
         }
       },
       [](const C &c) {
         std::string s;
         for (double x : c.metrics.rpe_lengths)
           s += (s.empty() ? "" : ", ") + format_double(x);
         return s;
       }},
      {"metrics", "align", "local-frame ATE alignment: none, first_pose or umeyama",
       [](C &c, const std::string &v) {
         const auto t = trim(v);
         if (t == "none")
           c.metrics.align = AlignMode::None;
         else if (t == "first_pose")
           c.metrics.align = AlignMode::FirstPose;
         else if (t == "umeyama")
           c.metrics.align = AlignMode::Umeyama;
         else
           throw BadValue("unknown alignment '" + t + "'");
       },
       [](const C &c) { return std::string(align_name(c.metrics.align)); }},
      boolean("metrics", "planar", "evaluate ATE in x-y only", [](C &c) -> bool & { return c.metrics.planar; }),

      {"timing", "keyframes", "keyframe counts m",
       [](C &c, const std::string &v) {
         c.timing.keyframes.clear();
         for (const auto &item : split_list(v)) {
           const int x = parse_num<int>(item);
           if (x < 0)
             throw BadValue("keyframe counts must be nonnegative");
           c.timing.keyframes.push_back(x);
         }
       },
       [](const C &c) {
         std::string s;
         for (int x : c.timing.keyframes)
           s += (s.empty() ? "" : ", ") + std::to_string(x);
         return s;
       }},
      integer("timing", "clones", "clones in the active block", [](C &c) -> int & { return c.timing.clones; }, 0),
      integer("timing", "rows", "residual rows per update", [](C &c) -> int & { return c.timing.rows; }, 1),
      integer("timing", "touched", "keyframes each residual touches", [](C &c) -> int & { return c.timing.touched; },
              0),
      real("timing", "min_seconds", "measurement time per point, s", [](C &c) -> double & { return c.timing.min_seconds; },
           Bound::Pos),
      integer("timing", "sweeps", "repeated sweeps, fastest kept", [](C &c) -> int & { return c.timing.sweeps; }, 1),

      integer("observability", "trajectories", "random trajectories per case",
              [](C &c) -> int & { return c.observability.trajectories; }, 1),
      integer("observability", "steps", "camera-rate steps per trajectory",
              [](C &c) -> int & { return c.observability.steps; }, 2),
  };
  return table;
}

}  // namespace

std::vector<Variant> parse_variant_list(const std::string &text) {
  if (trim(text) == "all")
    return all_variants();
  std::vector<Variant> out;
  for (const auto &name : split_list(text)) {
    const auto v = parse_variant(name);
    if (!v)
      throw std::invalid_argument("unknown variant '" + name + "'");
    if (std::find(out.begin(), out.end(), *v) != out.end())
      throw std::invalid_argument("variant '" + name + "' listed twice");
    out.push_back(*v);
  }
  if (out.empty())
    throw std::invalid_argument("variant list is empty");
  return out;
}

MapMode parse_map_mode(const std::string &text) {
  const auto t = trim(text);
  if (t == "perfect")
    return MapMode::Perfect;
  if (t == "imperfect")
    return MapMode::Imperfect;
  throw std::invalid_argument("map_mode must be perfect or imperfect, got '" + t + "'");
}

void ExperimentConfig::validate() const {
  if (runs < 1)
    throw ConfigError("config", 0, "runs must be at least 1");
  if (variants.empty())
    throw ConfigError("config", 0, "variant list is empty");
  if (metrics.rpe_lengths.empty())
    throw ConfigError("config", 0, "rpe_lengths is empty");
  if (timing.keyframes.empty())
    throw ConfigError("config", 0, "timing keyframes is empty");
  if (sim.cam.width < 1 || sim.cam.height < 1)
    throw ConfigError("config", 0, "camera size must be positive");
  try {
    sim.validate();
  } catch (const std::invalid_argument &e) {
    throw ConfigError("config", 0, e.what());
  }
}

ExperimentConfig parse_config(std::istream &in, const std::string &source) {
  ExperimentConfig cfg;
  std::map<std::string, std::map<std::string, const Entry *>> index;
  for (const auto &e : entries())
    index[e.section][e.key] = &e;

  std::string raw, section;
  std::set<std::string> seen;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find_first_of("#;");
    const std::string line = trim(std::string_view(raw).substr(0, hash));
    if (line.empty())
      continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError(source, line_no, "unterminated section header");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      if (!index.count(section))
        throw ConfigError(source, line_no, "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(source, line_no, "expected 'key = value'");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    if (section.empty())
      throw ConfigError(source, line_no, "key '" + key + "' outside any section");
    const auto it = index[section].find(key);
    if (it == index[section].end())
      throw ConfigError(source, line_no, "unknown key '" + key + "' in [" + section + "]");
    if (!seen.insert(section + "." + key).second)
      throw ConfigError(source, line_no, "duplicate key '" + key + "' in [" + section + "]");
    try {
      it->second->set(cfg, value);
    } catch (const BadValue &e) {
      throw ConfigError(source, line_no, key + ": " + e.what());
    }
  }
  try {
    cfg.validate();
  } catch (const ConfigError &e) {
    const std::string msg = e.what();
    throw ConfigError(source, 0, msg.substr(msg.find(": ") + 2));
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in)
    throw ConfigError(path.string(), 0, "cannot open config file");
  return parse_config(in, path.string());
}

std::string dump_config(const ExperimentConfig &cfg) {
  std::string out;
  std::string section;
  for (const auto &e : entries()) {
    if (e.section != section) {
      section = e.section;
      out += (out.empty() ? "[" : "\n[") + section + "]\n";
    }
    if (!e.doc.empty())
      out += "# " + e.doc + "\n";
    out += e.key + " = " + e.get(cfg) + "\n";
  }
  return out;
}

}  // namespace mapvil
