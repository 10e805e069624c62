#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "test_support.hpp"

#include "mapvil/io.hpp"

#include <fstream>
#include <unistd.h>

using namespace mapvil;
using namespace mapvil::testing;

namespace {

struct TempDir {
  fs::path path;
  TempDir() : path(fs::temp_directory_path() / ("mapvil_io_" + std::to_string(::getpid()))) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write_text(const fs::path &p, const std::string &s) { std::ofstream(p) << s; }

std::string error_of(const std::function<void()> &f) {
  try {
    f();
  } catch (const IoError &e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("format_double round-trips") {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double x = randn(rng, std::pow(10.0, randu(rng, -12, 12)));
    CHECK(std::stod(format_double(x)) == x);
  }
  CHECK(format_double(0.5) == "0.5");
}

TEST_CASE("TUM trajectory round trip and format") {
  TempDir tmp;
  Rng rng(2);
  std::vector<StampedPose> traj;
  for (int i = 0; i < 20; ++i)
    traj.push_back({0.1 * i, Pose{random_rotation(rng), randn3(rng, 10.0)}});
  write_tum(tmp.path / "a.tum", traj);
  const auto back = read_tum(tmp.path / "a.tum");
  REQUIRE(back.size() == traj.size());
  for (size_t i = 0; i < traj.size(); ++i) {
    CHECK(back[i].t == traj[i].t);
    CHECK(back[i].T.p == traj[i].T.p);
    CHECK(max_abs(back[i].T.R - traj[i].T.R) < 1e-15);
  }

  // A rotation of pi/2 about z: q = (0, 0, sin(pi/4), cos(pi/4)), w last.
  write_tum(tmp.path / "b.tum", {{1.5, Pose{so3_exp(Vec3(0, 0, M_PI / 2)), Vec3(1, 2, 3)}}});
  std::ifstream in(tmp.path / "b.tum");
  std::string header, line;
  std::getline(in, header);
  std::getline(in, line);
  CHECK(header == "# timestamp tx ty tz qx qy qz qw");
  std::istringstream ss(line);
  double v[8];
  for (double &x : v)
    ss >> x;
  CHECK(v[0] == 1.5);
  CHECK(v[3] == 3.0);
  CHECK(std::abs(v[6] - std::sqrt(0.5)) < 1e-15);
  CHECK(std::abs(v[7] - std::sqrt(0.5)) < 1e-15);
  CHECK(std::abs(v[4]) < 1e-15);
}

TEST_CASE("TUM errors name the line") {
  TempDir tmp;
  write_text(tmp.path / "bad.tum", "# header\n0 0 0 0 0 0 0 1\n\n1 0 0 0 0 0 1\n");
  CHECK(error_of([&] { read_tum(tmp.path / "bad.tum"); }).find("bad.tum:4: expected 8 fields") != std::string::npos);
  write_text(tmp.path / "nan.tum", "0 0 x 0 0 0 0 1\n");
  CHECK(error_of([&] { read_tum(tmp.path / "nan.tum"); }).find(":1: not a number") != std::string::npos);
  write_text(tmp.path / "q.tum", "0 0 0 0 0 0 0 0\n");
  CHECK(error_of([&] { read_tum(tmp.path / "q.tum"); }).find(":1: quaternion") != std::string::npos);
  CHECK_THROWS_AS(read_tum(tmp.path / "missing.tum"), IoError);
}

TEST_CASE("map bundle round trip") {
  TempDir tmp;
  Rng rng(3);
  MapBundle map;
  for (int k = 0; k < 5; ++k)
    map.keyframes.push_back({{10 + k, random_rotation(rng), randn3(rng, 20.0)}, Mat6(random_spd(rng, 6, 1e-3))});
  for (int f = 0; f < 8; ++f)
    map.features.push_back({100 + f, randn3(rng, 30.0)});
  for (int k = 0; k < 5; ++k)
    for (int f = k; f < 8; f += 2)
      map.observations.push_back({10 + k, 100 + f, Vec2(randu(rng, 0, 752), randu(rng, 0, 480))});
  write_map_bundle(tmp.path / "map", map);
  for (const char *f : {"keyframes.txt", "features.txt", "observations.txt"}) {
    std::ifstream in(tmp.path / "map" / f);
    std::string first;
    std::getline(in, first);
    CHECK(first.rfind("# ", 0) == 0);
  }
  const MapBundle back = read_map_bundle(tmp.path / "map");
  REQUIRE(back.keyframes.size() == 5);
  REQUIRE(back.features.size() == 8);
  REQUIRE(back.observations.size() == map.observations.size());
  for (size_t k = 0; k < 5; ++k) {
    CHECK(back.keyframes[k].pose.id == map.keyframes[k].pose.id);
    CHECK(back.keyframes[k].pose.p_GKF == map.keyframes[k].pose.p_GKF);
    CHECK(max_abs(back.keyframes[k].pose.R_GKF - map.keyframes[k].pose.R_GKF) < 1e-15);
    CHECK(back.keyframes[k].cov == map.keyframes[k].cov);
  }
  CHECK(back.features[3].p_G == map.features[3].p_G);
  CHECK(back.observations[4].uv == map.observations[4].uv);

  // Dangling references are rejected after parsing.
  write_text(tmp.path / "map" / "observations.txt", "# keyframe_id feature_id u v\n10 999 1 2\n");
  CHECK_THROWS_AS(read_map_bundle(tmp.path / "map"), IoError);
  write_text(tmp.path / "map" / "features.txt", "1.5 0 0 0\n");
  CHECK(error_of([&] { read_map_bundle(tmp.path / "map"); }).find("features.txt:1: expected an integer id") !=
        std::string::npos);
}

TEST_CASE("run record round trip") {
  TempDir tmp;
  Rng rng(4);
  RunRecord r;
  r.variant = "msoc-s-ikf";
  r.chart = ErrorChart::Invariant;
  r.seed = 12345678901234ULL;
  r.mode = MapMode::Perfect;
  r.stats.frames = 3;
  r.stats.map_updates = 7;
  r.stats.nuisance_intact = false;
  r.stats.min_eig_rel = -1.25e-17;
  for (int k = 0; k < 3; ++k) {
    RecordStep s;
    s.t = 0.1 * k;
    s.truth = {random_rotation(rng), randn3(rng)};
    s.est = {random_rotation(rng), randn3(rng)};
    s.has_relative = k > 0;
    s.truth_LG = {random_rotation(rng), randn3(rng)};
    s.est_LG = {random_rotation(rng), randn3(rng)};
    s.P = random_spd(rng, 12, 1e-2);
    r.steps.push_back(s);
  }
  write_run_record(tmp.path / "r.csv", r);
  const RunRecord b = read_run_record(tmp.path / "r.csv");
  CHECK(b.variant == r.variant);
  CHECK(b.chart == r.chart);
  CHECK(b.seed == r.seed);
  CHECK(b.mode == r.mode);
  CHECK(b.stats.frames == 3);
  CHECK(b.stats.map_updates == 7);
  CHECK_FALSE(b.stats.nuisance_intact);
  CHECK(b.stats.min_eig_rel == r.stats.min_eig_rel);
  REQUIRE(b.steps.size() == 3);
  for (int k = 0; k < 3; ++k) {
    CHECK(b.steps[k].t == r.steps[k].t);
    CHECK(b.steps[k].has_relative == r.steps[k].has_relative);
    CHECK(b.steps[k].P == r.steps[k].P);
    CHECK(b.steps[k].est.p == r.steps[k].est.p);
    CHECK(max_abs(b.steps[k].est_LG.R - r.steps[k].est_LG.R) < 1e-15);
  }

  std::string text = read_file(tmp.path / "r.csv");
  const auto pos = text.find('\n', text.find("\nt,has_relative") + 1);
  text.insert(pos + 1, "0,1,2\n");
  write_text(tmp.path / "bad.csv", text);
  CHECK(error_of([&] { read_run_record(tmp.path / "bad.csv"); }).find("bad.csv:4: expected 108 columns") !=
        std::string::npos);
}

TEST_CASE("atomic writes leave no temporary files") {
  TempDir tmp;
  write_file_atomic(tmp.path / "sub" / "x.txt", "one");
  write_file_atomic(tmp.path / "sub" / "x.txt", "two");
  CHECK(read_file(tmp.path / "sub" / "x.txt") == "two");
  int n = 0;
  for ([[maybe_unused]] const auto &e : fs::directory_iterator(tmp.path / "sub"))
    ++n;
  CHECK(n == 1);
}
