#pragma once

#include "mapvil/measurement.hpp"

#include <vector>

namespace mapvil {

struct UpdateOptions {
  double chi2_probability = 0.95;
  double chi2_multiplier = 1.0;
  bool gate = true;
  double max_condition = 1e12;
};

enum class UpdateStatus { Applied, Empty, Gated, IllConditioned };

/// chi-square quantile for `dof` degrees of freedom.
double chi2_threshold(int dof, double probability = 0.95);

/// Innovation covariance S = H P H^T + V, using only the nuisance columns the
/// residual touches.
MatX innovation_covariance(const AugmentedState &s, const StackedResidual &sr);

/// True when r^T S^-1 r is below the configured chi-square bound.
bool passes_gate(const AugmentedState &s, const StackedResidual &sr, const UpdateOptions &opt);

/// Gain against the joint covariance, correction and covariance applied to
/// the active block only. Nuisance mean and P_nn are left untouched.
UpdateStatus schmidt_update(AugmentedState &s, const StackedResidual &sr, const UpdateOptions &opt = {});

/// Standard Kalman update over the joint state (nuisance included) with the
/// Joseph-form covariance, evaluated in its expanded O(n^2 r) form.
UpdateStatus full_update(AugmentedState &s, const StackedResidual &sr, const UpdateOptions &opt = {});

/// Compresses an active-only residual with spherical noise to at most
/// active_dim rows with a thin QR.
void compress(StackedResidual &sr);

struct UpdateStats {
  int candidates = 0;
  int used = 0;
  int gated = 0;
  int dropped = 0;
  int rows = 0;
  UpdateStatus status = UpdateStatus::Empty;
};

/// Multi-state local-feature update. Tracks reference clone timestamps;
/// observations outside the window are ignored. With `schmidt` the
/// correction is restricted to the active block.
UpdateStats msckf_local_update(AugmentedState &s, const PinholeCamera &cam, const std::vector<FeatureTrack> &tracks,
                               bool schmidt, const UpdateOptions &opt = {}, const TriangulationOptions &tri = {});

enum class MapUpdateMode {
  ExactMap,   ///< current-frame rows only, map treated as exact, full update
  Schmidt,    ///< current + keyframe rows, feature projected, Schmidt update
  SchmidtOC,  ///< as Schmidt with observability-constrained current rows
};

/// Builds the stacked, feature-projected residual of one match. Keyframes
/// not present in the state are skipped.
std::optional<StackedResidual> map_match_residual(const AugmentedState &s, const PinholeCamera &cam,
                                                  const MapMatch &m, MapUpdateMode mode);

UpdateStats map_update(AugmentedState &s, const PinholeCamera &cam, const std::vector<MapMatch> &matches,
                       MapUpdateMode mode, const UpdateOptions &opt = {});

}  // namespace mapvil
