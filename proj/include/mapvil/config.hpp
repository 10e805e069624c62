#pragma once

#include "mapvil/estimator.hpp"
#include "mapvil/metrics.hpp"

#include <cstdint>
#include <filesystem>
#include <istream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mapvil {

/// Invalid configuration. `line` is 0 when the problem is not tied to one line.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string &source, int line, const std::string &msg);
  int line = 0;
};

struct MetricOptions {
  std::vector<double> rpe_lengths{100.0, 200.0, 500.0};  ///< m
  AlignMode align = AlignMode::Umeyama;                  ///< local-frame ATE
  bool planar = false;                                   ///< x-y only ATE
};

/// Update-cost benchmark against the number of keyframes in the state.
struct TimingOptions {
  std::vector<int> keyframes{5, 10, 20, 40, 80};
  int clones = 0;            ///< clones in the active block
  int rows = 30;             ///< residual rows per update
  int touched = 2;           ///< keyframes each residual touches
  double min_seconds = 0.2;  ///< per (m, update) measurement
  int sweeps = 3;            ///< repeated sweeps; the fastest is kept
};

struct ObservabilityOptions {
  int trajectories = 3;
  int steps = 50;
};

struct ExperimentConfig {
  SimConfig sim;
  FilterOptions filter;
  std::vector<Variant> variants = all_variants();
  int runs = 10;
  std::uint64_t seed = 1;  ///< run i uses seed + i
  std::filesystem::path out = "out";
  MapMode map_mode = MapMode::Imperfect;
  int threads = 0;  ///< 0 uses the hardware concurrency
  bool write_trajectories = true;
  MetricOptions metrics;
  TimingOptions timing;
  ObservabilityOptions observability;

  /// Cross-field checks; throws ConfigError.
  void validate() const;
};

/// Flat "key = value" text with [section] headers; '#' and ';' start comments.
/// Unknown sections or keys, duplicates and bad values are errors naming the
/// source and line.
ExperimentConfig parse_config(std::istream &in, const std::string &source = "<config>");
ExperimentConfig load_config(const std::filesystem::path &path);

/// Every key with its current value and a short description, in a form
/// parse_config reads back.
std::string dump_config(const ExperimentConfig &cfg);

/// Comma-separated variant names, or "all".
std::vector<Variant> parse_variant_list(const std::string &text);
MapMode parse_map_mode(const std::string &text);

}  // namespace mapvil
