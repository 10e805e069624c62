#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "mapvil/config.hpp"
#include "mapvil/io.hpp"

#include <sstream>

using namespace mapvil;

namespace {

ExperimentConfig parse(const std::string &text) {
  std::istringstream in(text);
  return parse_config(in, "t.ini");
}

std::string error_of(const std::string &text, int *line = nullptr) {
  try {
    parse(text);
  } catch (const ConfigError &e) {
    if (line)
      *line = e.line;
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("committed example config documents every default") {
  const std::string committed = read_file(fs::path(MAPVIL_SOURCE_DIR) / "config" / "default.ini");
  CHECK(committed == dump_config(ExperimentConfig{}));
}

TEST_CASE("dump and parse round trip") {
  const ExperimentConfig d;
  const ExperimentConfig c = parse(dump_config(d));
  CHECK(c.runs == d.runs);
  CHECK(c.variants == d.variants);
  CHECK(c.sim.duration == d.sim.duration);
  CHECK(c.filter.init_p == d.filter.init_p);
  CHECK((c.sim.T_LG.R - d.sim.T_LG.R).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((c.sim.ext.R_IC - d.sim.ext.R_IC).cwiseAbs().maxCoeff() < 1e-14);
  CHECK(dump_config(c) == dump_config(d));
}

TEST_CASE("values are applied") {
  const auto c = parse(
      "# comment\n[experiment]\nruns = 3 ; trailing\nvariants = msoc-s-ikf, vio\nmap_mode = perfect\nseed = 42\n"
      "[simulation]\nduration = 30\nmatch_dropout = 10:20, 40:45.5\n[map]\nkeyframe_retire_frames = 7\n"
      "[metrics]\nrpe_lengths = 50\nalign = first_pose\nplanar = yes\n[filter]\ngate = off\n");
  CHECK(c.runs == 3);
  CHECK(c.variants == std::vector<Variant>{Variant::MsocSIkf, Variant::Vio});
  CHECK(c.map_mode == MapMode::Perfect);
  CHECK(c.seed == 42);
  CHECK(c.sim.duration == 30.0);
  REQUIRE(c.sim.match_dropout.size() == 2);
  CHECK(c.sim.match_dropout[1].second == 45.5);
  CHECK(c.sim.keyframe_retire_frames == 7);
  CHECK(c.filter.keyframe_retire_frames == 7);
  CHECK(c.metrics.rpe_lengths == std::vector<double>{50.0});
  CHECK(c.metrics.align == AlignMode::FirstPose);
  CHECK(c.metrics.planar);
  CHECK_FALSE(c.filter.update.gate);
}

TEST_CASE("errors are line precise") {
  int line = -1;
  CHECK(error_of("[experiment]\nruns = 0\n", &line).find("t.ini:2: runs") != std::string::npos);
  CHECK(line == 2);
  CHECK(error_of("[experiment]\n\nrunz = 3\n").find("t.ini:3: unknown key 'runz'") != std::string::npos);
  CHECK(error_of("[nope]\n").find("t.ini:1: unknown section") != std::string::npos);
  CHECK(error_of("runs = 3\n").find("t.ini:1: key 'runs' outside any section") != std::string::npos);
  CHECK(error_of("[experiment]\nruns = 3\nruns = 4\n").find("t.ini:3: duplicate key") != std::string::npos);
  CHECK(error_of("[experiment]\nvariants = vio, msckf\n").find("t.ini:2: variants: unknown variant 'msckf'") !=
        std::string::npos);
  CHECK(error_of("[experiment]\nvariants = \n").find("t.ini:2:") != std::string::npos);
  CHECK(error_of("[simulation]\nduration = 1e400\n").find("t.ini:2:") != std::string::npos);
  CHECK(error_of("[imu]\nsigma_g = -1\n").find("t.ini:2: sigma_g: must be nonnegative") != std::string::npos);
  CHECK(error_of("[filter]\nchi2_probability = 1\n").find("t.ini:2:") != std::string::npos);
  CHECK(error_of("[simulation]\nmatch_dropout = 5:4\n").find("t.ini:2:") != std::string::npos);
  CHECK(error_of("[experiment\n").find("t.ini:1: unterminated") != std::string::npos);
  CHECK(error_of("[camera]\nfx\n").find("t.ini:2: expected 'key = value'") != std::string::npos);
  // Cross-field problems are reported without a line.
  CHECK(error_of("[simulation]\ncam_rate = 30\n", &line).find("imu_rate must be an integer multiple") !=
        std::string::npos);
  CHECK(line == 0);
  CHECK_THROWS_AS(load_config("/nonexistent/x.ini"), ConfigError);
}

TEST_CASE("variant and map mode parsing") {
  CHECK(parse_variant_list("all").size() == 5);
  CHECK(parse_variant_list(" msc-ekf ,msc-ikf").size() == 2);
  CHECK_THROWS_AS(parse_variant_list("vio,vio"), std::invalid_argument);
  CHECK_THROWS_AS(parse_variant_list(""), std::invalid_argument);
  CHECK(parse_map_mode("perfect") == MapMode::Perfect);
  CHECK_THROWS_AS(parse_map_mode("exact"), std::invalid_argument);
}
