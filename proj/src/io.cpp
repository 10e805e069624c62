#include "mapvil/io.hpp"

#include <Eigen/Geometry>

#include <charconv>
#include <fstream>
#include <sstream>
#include <thread>

namespace mapvil {

namespace {

constexpr int kRecordDim = 12;

[[noreturn]] void fail_at(const fs::path &path, int line, const std::string &msg) {
  throw IoError(path.string() + ":" + std::to_string(line) + ": " + msg);
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  size_t i = 0;
  while (i <= s.size()) {
    if (sep == ' ') {
      while (i < s.size() && (s[i] == ' ' || s[i] == '\t'))
        ++i;
      if (i >= s.size())
        break;
    }
    size_t j = i;
    while (j < s.size() && s[j] != sep && !(sep == ' ' && s[j] == '\t'))
      ++j;
    out.push_back(s.substr(i, j - i));
    i = j + 1;
  }
  return out;
}

template <class T>
bool parse_number(std::string_view s, T &out) {
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

/// Line-oriented reader that skips blank lines and '#' comments.
class LineReader {
 public:
  explicit LineReader(const fs::path &path) : path_(path), in_(path) {
    if (!in_)
      throw IoError("cannot open " + path.string());
  }

  bool next(std::string &line) {
    while (std::getline(in_, line)) {
      ++line_no_;
      if (!line.empty() && line.back() == '\r')
        line.pop_back();
      const auto first = line.find_first_not_of(" \t");
      if (first == std::string::npos || line[first] == '#')
        continue;
      return true;
    }
    return false;
  }

  std::vector<double> numbers(const std::string &line, size_t expect, char sep = ' ') const {
    const auto tok = split(line, sep);
    if (tok.size() != expect)
      fail("expected " + std::to_string(expect) + " fields, got " + std::to_string(tok.size()));
    std::vector<double> v(tok.size());
    for (size_t i = 0; i < tok.size(); ++i)
      if (!parse_number(tok[i], v[i]))
        fail("not a number: '" + std::string(tok[i]) + "'");
    return v;
  }

  int to_int(double x) const {
    if (x != std::floor(x) || std::abs(x) > 2e9)
      fail("expected an integer id");
    return static_cast<int>(x);
  }

  [[noreturn]] void fail(const std::string &msg) const { fail_at(path_, line_no_, msg); }
  int line_no() const { return line_no_; }

 private:
  fs::path path_;
  std::ifstream in_;
  int line_no_ = 0;
};

void append_pose(std::string &out, const Pose &T, char sep) {
  Eigen::Quaterniond q(T.R);
  q.normalize();
  if (q.w() < 0.0)
    q.coeffs() = -q.coeffs();
  for (double x : {T.p.x(), T.p.y(), T.p.z(), q.x(), q.y(), q.z(), q.w()}) {
    out += sep;
    out += format_double(x);
  }
}

Pose pose_from(const double *v) {
  Eigen::Quaterniond q(v[6], v[3], v[4], v[5]);
  if (!(q.norm() > 0.5 && q.norm() < 1.5))
    throw std::invalid_argument("quaternion far from unit norm");
  return Pose{q.normalized().toRotationMatrix(), Vec3(v[0], v[1], v[2])};
}

}  // namespace

std::string format_double(double x) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return ec == std::errc() ? std::string(buf, ptr) : std::string("nan");
}

const char *chart_name(ErrorChart c) { return c == ErrorChart::Invariant ? "invariant" : "standard"; }
const char *map_mode_name(MapMode m) { return m == MapMode::Perfect ? "perfect" : "imperfect"; }

void write_file_atomic(const fs::path &path, const std::string &content) {
  if (path.has_parent_path())
    fs::create_directories(path.parent_path());
  std::ostringstream suffix;
  suffix << ".tmp." << std::this_thread::get_id();
  fs::path tmp = path;
  tmp += suffix.str();
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out)
      throw IoError("cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out)
      throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw IoError("cannot rename into " + path.string() + ": " + ec.message());
  }
}

std::string read_file(const fs::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_tum(const fs::path &path, const std::vector<StampedPose> &traj) {
  std::string out = "# timestamp tx ty tz qx qy qz qw\n";
  for (const auto &s : traj) {
    out += format_double(s.t);
    append_pose(out, s.T, ' ');
    out += '\n';
  }
  write_file_atomic(path, out);
}

std::vector<StampedPose> read_tum(const fs::path &path) {
  LineReader rd(path);
  std::vector<StampedPose> traj;
  std::string line;
  while (rd.next(line)) {
    const auto v = rd.numbers(line, 8);
    try {
      traj.push_back({v[0], pose_from(v.data() + 1)});
    } catch (const std::invalid_argument &e) {
      rd.fail(e.what());
    }
  }
  return traj;
}

void write_map_bundle(const fs::path &dir, const MapBundle &map) {
  std::string kf = "# id tx ty tz qx qy qz qw";
  for (int i = 0; i < 6; ++i)
    for (int j = i; j < 6; ++j)
      kf += " c" + std::to_string(i) + std::to_string(j);
  kf += '\n';
  for (const auto &k : map.keyframes) {
    kf += std::to_string(k.pose.id);
    append_pose(kf, Pose{k.pose.R_GKF, k.pose.p_GKF}, ' ');
    for (int i = 0; i < 6; ++i)
      for (int j = i; j < 6; ++j)
        kf += ' ' + format_double(k.cov(i, j));
    kf += '\n';
  }
  std::string ft = "# id x y z\n";
  for (const auto &f : map.features)
    ft += std::to_string(f.id) + ' ' + format_double(f.p_G.x()) + ' ' + format_double(f.p_G.y()) + ' ' +
          format_double(f.p_G.z()) + '\n';
  std::string ob = "# keyframe_id feature_id u v\n";
  for (const auto &o : map.observations)
    ob += std::to_string(o.keyframe_id) + ' ' + std::to_string(o.feature_id) + ' ' + format_double(o.uv.x()) + ' ' +
          format_double(o.uv.y()) + '\n';
  write_file_atomic(dir / "keyframes.txt", kf);
  write_file_atomic(dir / "features.txt", ft);
  write_file_atomic(dir / "observations.txt", ob);
}

MapBundle read_map_bundle(const fs::path &dir) {
  MapBundle map;
  std::string line;
  {
    LineReader rd(dir / "keyframes.txt");
    while (rd.next(line)) {
      const auto v = rd.numbers(line, 8 + 21);
      MapKeyframe k;
      k.pose.id = rd.to_int(v[0]);
      try {
        const Pose T = pose_from(v.data() + 1);
        k.pose.R_GKF = T.R;
        k.pose.p_GKF = T.p;
      } catch (const std::invalid_argument &e) {
        rd.fail(e.what());
      }
      int c = 8;
      for (int i = 0; i < 6; ++i)
        for (int j = i; j < 6; ++j)
          k.cov(i, j) = k.cov(j, i) = v[c++];
      map.keyframes.push_back(k);
    }
  }
  {
    LineReader rd(dir / "features.txt");
    while (rd.next(line)) {
      const auto v = rd.numbers(line, 4);
      map.features.push_back({rd.to_int(v[0]), Vec3(v[1], v[2], v[3])});
    }
  }
  {
    LineReader rd(dir / "observations.txt");
    while (rd.next(line)) {
      const auto v = rd.numbers(line, 4);
      map.observations.push_back({rd.to_int(v[0]), rd.to_int(v[1]), Vec2(v[2], v[3])});
    }
  }
  try {
    map.validate();
  } catch (const std::exception &e) {
    throw IoError(dir.string() + ": " + e.what());
  }
  return map;
}

namespace {

struct StatField {
  const char *key;
  int RunStats::*i = nullptr;
  double RunStats::*d = nullptr;
  bool RunStats::*b = nullptr;
};

const StatField kStatFields[] = {
    {"frames", &RunStats::frames},
    {"msckf_updates", &RunStats::msckf_updates},
    {"msckf_features", &RunStats::msckf_features},
    {"msckf_gated", &RunStats::msckf_gated},
    {"map_updates", &RunStats::map_updates},
    {"map_matches", &RunStats::map_matches},
    {"map_gated", &RunStats::map_gated},
    {"keyframes_inserted", &RunStats::keyframes_inserted},
    {"keyframes_removed", &RunStats::keyframes_removed},
    {"nuisance_intact", nullptr, nullptr, &RunStats::nuisance_intact},
    {"min_eig_rel", nullptr, &RunStats::min_eig_rel},
};

std::vector<std::pair<std::string, std::string>> key_values(std::string_view line) {
  std::vector<std::pair<std::string, std::string>> kv;
  for (auto tok : split(line, ' ')) {
    const auto eq = tok.find('=');
    if (eq != std::string_view::npos)
      kv.emplace_back(std::string(tok.substr(0, eq)), std::string(tok.substr(eq + 1)));
  }
  return kv;
}

std::string record_header() {
  std::string h = "t,has_relative";
  for (const char *name : {"truth", "est", "truth_LG", "est_LG"})
    for (const char *c : {"tx", "ty", "tz", "qx", "qy", "qz", "qw"})
      h += std::string(",") + name + "_" + c;
  for (int i = 0; i < kRecordDim; ++i)
    for (int j = i; j < kRecordDim; ++j)
      h += ",P_" + std::to_string(i) + "_" + std::to_string(j);
  return h;
}

constexpr size_t kRecordColumns = 2 + 4 * 7 + kRecordDim * (kRecordDim + 1) / 2;

}  // namespace

void write_run_record(const fs::path &path, const RunRecord &rec) {
  std::string out = "# variant=" + rec.variant + " chart=" + chart_name(rec.chart) +
                    " seed=" + std::to_string(rec.seed) + " map_mode=" + map_mode_name(rec.mode) + "\n# stats";
  for (const auto &f : kStatFields) {
    out += std::string(" ") + f.key + "=";
    if (f.i)
      out += std::to_string(rec.stats.*f.i);
    else if (f.d)
      out += format_double(rec.stats.*f.d);
    else
      out += rec.stats.*f.b ? "1" : "0";
  }
  out += "\n" + record_header() + "\n";
  for (const auto &s : rec.steps) {
    out += format_double(s.t);
    out += s.has_relative ? ",1" : ",0";
    for (const Pose *T : {&s.truth, &s.est, &s.truth_LG, &s.est_LG})
      append_pose(out, *T, ',');
    for (int i = 0; i < kRecordDim; ++i)
      for (int j = i; j < kRecordDim; ++j) {
        out += ',';
        out += format_double(s.P(i, j));
      }
    out += '\n';
  }
  write_file_atomic(path, out);
}

RunRecord read_run_record(const fs::path &path) {
  std::ifstream in(path);
  if (!in)
    throw IoError("cannot open " + path.string());
  RunRecord rec;
  std::string line;
  int line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r')
      line.pop_back();
    if (line.empty())
      continue;
    if (line[0] == '#') {
      for (const auto &[k, v] : key_values(std::string_view(line).substr(1))) {
        if (k == "variant") {
          rec.variant = v;
        } else if (k == "chart") {
          if (v != "invariant" && v != "standard")
            fail_at(path, line_no, "unknown chart '" + v + "'");
          rec.chart = v == "invariant" ? ErrorChart::Invariant : ErrorChart::Standard;
        } else if (k == "seed") {
          if (!parse_number(v, rec.seed))
            fail_at(path, line_no, "bad seed '" + v + "'");
        } else if (k == "map_mode") {
          if (v != "perfect" && v != "imperfect")
            fail_at(path, line_no, "unknown map_mode '" + v + "'");
          rec.mode = v == "perfect" ? MapMode::Perfect : MapMode::Imperfect;
        } else {
          for (const auto &f : kStatFields) {
            if (k != f.key)
              continue;
            bool ok = true;
            if (f.i)
              ok = parse_number(v, rec.stats.*f.i);
            else if (f.d)
              ok = parse_number(v, rec.stats.*f.d);
            else
              rec.stats.*f.b = v == "1";
            if (!ok)
              fail_at(path, line_no, "bad value for " + k);
          }
        }
      }
      continue;
    }
    if (!header_seen) {
      if (line != record_header())
        fail_at(path, line_no, "unexpected column header");
      header_seen = true;
      continue;
    }
    const auto tok = split(line, ',');
    if (tok.size() != kRecordColumns)
      fail_at(path, line_no, "expected " + std::to_string(kRecordColumns) + " columns, got " + std::to_string(tok.size()));
    std::vector<double> v(tok.size());
    for (size_t i = 0; i < tok.size(); ++i)
      if (!parse_number(tok[i], v[i]))
        fail_at(path, line_no, "not a number in column " + std::to_string(i + 1));
    RecordStep s;
    s.t = v[0];
    s.has_relative = v[1] != 0.0;
    try {
      s.truth = pose_from(&v[2]);
      s.est = pose_from(&v[9]);
      s.truth_LG = pose_from(&v[16]);
      s.est_LG = pose_from(&v[23]);
    } catch (const std::invalid_argument &e) {
      fail_at(path, line_no, e.what());
    }
    size_t c = 30;
    for (int i = 0; i < kRecordDim; ++i)
      for (int j = i; j < kRecordDim; ++j)
        s.P(i, j) = s.P(j, i) = v[c++];
    rec.steps.push_back(s);
  }
  if (!header_seen)
    throw IoError(path.string() + ": no column header");
  return rec;
}

}  // namespace mapvil
