#pragma once

#include "mapvil/estimator.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace mapvil {

namespace fs = std::filesystem;

/// Malformed or unreadable file. The message carries "path:line: " when a
/// specific line is at fault.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StampedPose {
  double t = 0.0;
  Pose T;
};

/// TUM trajectory: "timestamp tx ty tz qx qy qz qw", Hamilton quaternion with
/// w last and w >= 0.
void write_tum(const fs::path &path, const std::vector<StampedPose> &traj);
std::vector<StampedPose> read_tum(const fs::path &path);

/// Map bundle directory:
///   keyframes.txt     id tx ty tz qx qy qz qw c00 c01 .. c55
///                     (camera pose in G; upper triangle of the 6x6
///                     [rotation about G, translation] covariance, row major)
///   features.txt      id x y z
///   observations.txt  keyframe_id feature_id u v
void write_map_bundle(const fs::path &dir, const MapBundle &map);
MapBundle read_map_bundle(const fs::path &dir);

/// Run record CSV. Two comment lines carry metadata and statistics as
/// key=value pairs, then a header and one row per camera frame:
///   t, has_relative,
///   truth_{tx,ty,tz,qx,qy,qz,qw}, est_{...}, truth_LG_{...}, est_LG_{...},
///   P_i_j for 0 <= i <= j < 12 (row-major upper triangle).
void write_run_record(const fs::path &path, const RunRecord &rec);
RunRecord read_run_record(const fs::path &path);

/// Writes through a temporary file in the same directory and renames it into
/// place, so readers never see a partial file.
void write_file_atomic(const fs::path &path, const std::string &content);
std::string read_file(const fs::path &path);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double x);

const char *chart_name(ErrorChart c);
const char *map_mode_name(MapMode m);

}  // namespace mapvil
