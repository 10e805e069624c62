#include "mapvil/estimator.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <array>
#include <chrono>
#include <map>
#include <random>
#include <set>
#include <stdexcept>

namespace mapvil {

namespace {

const std::array<VariantInfo, 5> kVariants{{
    {Variant::Vio, "vio", ErrorChart::Invariant, false, MapUpdateMode::ExactMap},
    {Variant::MscEkf, "msc-ekf", ErrorChart::Standard, true, MapUpdateMode::ExactMap},
    {Variant::MscSEkf, "msc-s-ekf", ErrorChart::Standard, true, MapUpdateMode::Schmidt},
    {Variant::MscIkf, "msc-ikf", ErrorChart::Invariant, true, MapUpdateMode::ExactMap},
    {Variant::MsocSIkf, "msoc-s-ikf", ErrorChart::Invariant, true, MapUpdateMode::SchmidtOC},
}};

Vec3 randn3(std::mt19937_64 &rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  const double x = n(rng), y = n(rng), z = n(rng);
  return {x, y, z};
}

constexpr std::array<int, 12> kRecordSlots{0, 1, 2, 6, 7, 8, 9, 10, 11, 12, 13, 14};

}  // namespace

const VariantInfo &variant_info(Variant v) {
  for (const auto &i : kVariants)
    if (i.variant == v)
      return i;
  throw std::invalid_argument("unknown variant");
}

std::optional<Variant> parse_variant(std::string_view name) {
  for (const auto &i : kVariants)
    if (name == i.name)
      return i.variant;
  return std::nullopt;
}

std::vector<Variant> all_variants() {
  std::vector<Variant> out;
  for (const auto &i : kVariants)
    out.push_back(i.variant);
  return out;
}

Mat6 keyframe_prior(const MapKeyframe &kf, ErrorChart chart) {
  const Mat3 &R = kf.pose.R_GKF;
  Mat6 J = Mat6::Identity();
  if (chart == ErrorChart::Standard)
    J.topLeftCorner<3, 3>() = R.transpose();
  else
    J.bottomLeftCorner<3, 3>() = skew(kf.pose.p_GKF);
  return J * kf.cov * J.transpose();
}

RelativeInit relative_from_fix(const Pose &T_LI, const Pose &fix_GI, ErrorChart chart) {
  RelativeInit out;
  const Pose T_IG = fix_GI.inverse();
  out.T_LG = T_LI * T_IG;
  const Mat3 &RI = T_LI.R, &RG = out.T_LG.R;
  auto &Jx = out.J_x, &Jn = out.J_n;
  if (chart == ErrorChart::Invariant) {
    Jx.block<3, 3>(0, 3) = Mat3::Identity();
    Jx.block<3, 3>(3, 0) = Mat3::Identity();
    Jn.block<3, 3>(0, 0) = -skew(T_LI.p) * RI;
    Jn.block<3, 3>(0, 3) = -RG;
    Jn.block<3, 3>(3, 0) = -RI;
  } else {
    Jx.block<3, 3>(0, 0) = -RI * skew(T_IG.p);
    Jx.block<3, 3>(0, 3) = Mat3::Identity();
    Jx.block<3, 3>(3, 0) = RG.transpose() * RI;
    Jn.block<3, 3>(0, 0) = RI * skew(T_IG.p);
    Jn.block<3, 3>(0, 3) = -RG;
    Jn.block<3, 3>(3, 0) = -RG.transpose() * RI;
  }
  return out;
}

namespace {

class Filter {
 public:
  Filter(const Simulation &sim, Variant v, const FilterOptions &opt, std::uint64_t seed)
      : sim_(sim), info_(variant_info(v)), opt_(opt), seed_(seed) {
    if (opt.max_clones < 2)
      throw std::invalid_argument("filter: max_clones must be at least 2");
    cam_ = sim.cfg.cam;
    if (opt.pixel_sigma > 0.0)
      cam_.sigma_px = opt.pixel_sigma;
    record_.variant = info_.name;
    record_.chart = info_.chart;
    record_.seed = seed;
    record_.mode = sim.mode;
    record_.stats.min_eig_rel = 1.0;
    init_state();
  }

  RunRecord run() {
    const auto &frames = sim_.meas.frames;
    for (size_t k = 0; k < frames.size(); ++k)
      step(static_cast<int>(k), frames[k]);
    return std::move(record_);
  }

 private:
  void init_state() {
    const auto &truth0 = sim_.truth.front();
    std::mt19937_64 rng(derive_seed(seed_, 4));
    const double scale = opt_.perturb_init ? 1.0 : 0.0;

    NavState nav;
    nav.R_LI = truth0.R * so3_exp(scale * opt_.init_theta * randn3(rng));
    nav.v_LI = truth0.v + scale * opt_.init_v * randn3(rng);
    nav.p_LI = truth0.p + scale * opt_.init_p * randn3(rng);
    nav.b_g = sim_.imu.bias_g.front() + scale * opt_.init_bg * randn3(rng);
    nav.b_a = sim_.imu.bias_a.front() + scale * opt_.init_ba * randn3(rng);
    Vec6 dext;
    dext << scale * opt_.init_ext * randn3(rng), scale * opt_.init_ext * randn3(rng);
    const Pose ext = pose_retract(Pose{sim_.cfg.ext.R_IC, sim_.cfg.ext.p_IC}, dext, ErrorChart::Standard);

    VecX sd = VecX::Zero(slot::kClones);
    sd.segment<3>(slot::kTheta).setConstant(opt_.init_theta);
    sd.segment<3>(slot::kVel).setConstant(opt_.init_v);
    sd.segment<3>(slot::kPos).setConstant(opt_.init_p);
    sd.segment<3>(slot::kBg).setConstant(opt_.init_bg);
    sd.segment<3>(slot::kBa).setConstant(opt_.init_ba);
    sd.segment<6>(slot::kThetaC).setConstant(opt_.init_ext);
    const MatX P_std = sd.cwiseAbs2().asDiagonal();

    s_ = make_state(ErrorChart::Standard, nav, Extrinsic{ext.R, ext.p}, P_std);
    if (info_.chart == ErrorChart::Invariant) {
      const MatX J = active_chart_jacobian(s_);
      s_ = make_state(ErrorChart::Invariant, nav, Extrinsic{ext.R, ext.p}, J * P_std * J.transpose());
    }
  }

  // Relative transform from a noisy map-based pose fix composed with the
  // current pose estimate; the covariance keeps its correlation with the pose.
  void init_relative(const CameraFrame &f) {
    std::mt19937_64 rng(derive_seed(seed_, 5));
    const auto &tr = sim_.truth[f.imu_index];
    const Pose T_GI = sim_.cfg.T_LG.inverse() * Pose{tr.R, tr.p};
    const Vec3 n_th = opt_.aug_theta * randn3(rng), n_p = opt_.aug_p * randn3(rng);
    const Pose fix{T_GI.R * so3_exp(n_th), T_GI.p + n_p};
    const auto [T_LG, Jx, Jn] = relative_from_fix(s_.imu_pose(), fix, s_.chart);
    Mat6 Sn = Mat6::Zero();
    Sn.topLeftCorner<3, 3>() = opt_.aug_theta * opt_.aug_theta * Mat3::Identity();
    Sn.bottomRightCorner<3, 3>() = opt_.aug_p * opt_.aug_p * Mat3::Identity();

    const int a = s_.active_dim();
    MatX Px(6, a);
    Px.topRows<3>() = s_.P_aa.middleRows<3>(slot::kTheta);
    Px.bottomRows<3>() = s_.P_aa.middleRows<3>(slot::kPos);
    MatX Pxn(6, s_.nuisance_dim());
    if (s_.nuisance_dim() > 0) {
      Pxn.topRows<3>() = s_.P_an.middleRows<3>(slot::kTheta);
      Pxn.bottomRows<3>() = s_.P_an.middleRows<3>(slot::kPos);
    }
    Mat6 Pxx;
    Pxx << Px.block<3, 3>(0, slot::kTheta), Px.block<3, 3>(0, slot::kPos), Px.block<3, 3>(3, slot::kTheta),
        Px.block<3, 3>(3, slot::kPos);
    const MatX cross = Jx * Px;
    const Mat6 PGG = Jx * Pxx * Jx.transpose() + Jn * Sn * Jn.transpose();

    init_augmented_variable(s_, T_LG, PGG);
    for (int c = 0; c < a; ++c) {
      if (c >= slot::kPosG && c < slot::kPosG + 6)
        continue;
      s_.P_aa.block<6, 1>(slot::kPosG, c) = cross.col(c);
      s_.P_aa.block<1, 6>(c, slot::kPosG) = cross.col(c).transpose();
    }
    if (s_.nuisance_dim() > 0)
      s_.P_an.middleRows<6>(slot::kPosG) = Jx * Pxn;
  }

  void propagate_to(int imu_index) {
    const auto &imu = sim_.imu.samples;
    for (; imu_cursor_ < imu_index; ++imu_cursor_)
      propagate(s_, imu[imu_cursor_], imu[imu_cursor_ + 1], opt_.imu);
  }

  void local_update(const CameraFrame &f) {
    std::set<int> seen;
    for (const auto &o : f.local) {
      seen.insert(o.feature_id);
      auto &tr = tracks_[o.feature_id];
      tr.feature_id = o.feature_id;
      tr.obs.push_back(TrackObservation{f.t, o.uv});
    }
    std::vector<FeatureTrack> ready;
    for (auto it = tracks_.begin(); it != tracks_.end();) {
      const bool lost = !seen.count(it->first);
      if (lost || static_cast<int>(it->second.obs.size()) >= opt_.max_clones) {
        if (it->second.obs.size() >= 3)
          ready.push_back(it->second);
        if (lost) {
          it = tracks_.erase(it);
          continue;
        }
        // A full window restarts the track with disjoint observations.
        it->second.obs.clear();
      }
      ++it;
    }
    if (ready.empty())
      return;
    const auto st = msckf_local_update(s_, cam_, ready, schmidt(), opt_.update, opt_.tri);
    record_.stats.msckf_features += st.used;
    record_.stats.msckf_gated += st.gated;
    if (st.status == UpdateStatus::Applied)
      ++record_.stats.msckf_updates;
  }

  bool schmidt() const { return info_.map_mode != MapUpdateMode::ExactMap; }

  void map_step(int frame, const CameraFrame &f) {
    if (!info_.uses_map || f.matches.empty()) {
      retire_keyframes(frame);
      return;
    }
    if (!s_.aug_initialized) {
      init_relative(f);
      return;
    }
    if (schmidt()) {
      std::vector<MapKeyframePose> add;
      std::vector<Mat6> priors;
      for (const auto &m : f.matches) {
        for (const auto &ko : m.keyframe_obs) {
          last_matched_[ko.keyframe_id] = frame;
          if (s_.keyframe_index(ko.keyframe_id) >= 0 || retired_.count(ko.keyframe_id))
            continue;
          if (std::any_of(add.begin(), add.end(), [&](const auto &k) { return k.id == ko.keyframe_id; }))
            continue;
          const MapKeyframe *kf = sim_.map().keyframe(ko.keyframe_id);
          if (!kf)
            continue;
          add.push_back(kf->pose);
          priors.push_back(keyframe_prior(*kf, s_.chart));
        }
      }
      if (!add.empty()) {
        insert_keyframes(s_, add, priors);
        record_.stats.keyframes_inserted += static_cast<int>(add.size());
        for (size_t i = 0; i < add.size(); ++i)
          inserted_[add[i].id] = {add[i], 0.5 * (priors[i] + priors[i].transpose())};
      }
    }
    const auto t0 = std::chrono::steady_clock::now();
    const auto st = map_update(s_, cam_, f.matches, info_.map_mode, opt_.update);
    record_.stats.update_seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    record_.stats.map_matches += st.used;
    record_.stats.map_gated += st.gated;
    if (st.status == UpdateStatus::Applied)
      ++record_.stats.map_updates;
    retire_keyframes(frame);
  }

  void retire_keyframes(int frame) {
    std::vector<int> drop;
    for (const auto &kf : s_.keyframes) {
      const auto it = last_matched_.find(kf.id);
      if (it != last_matched_.end() && frame - it->second > opt_.keyframe_retire_frames)
        drop.push_back(kf.id);
    }
    for (int id : drop) {
      remove_keyframe(s_, id);
      retired_.insert(id);
      inserted_.erase(id);
      ++record_.stats.keyframes_removed;
    }
  }

  void audit() {
    const int n = s_.nuisance_dim();
    MatX expect = MatX::Zero(n, n);
    for (int j = 0; j < s_.num_keyframes(); ++j) {
      const auto &kf = s_.keyframes[j];
      const auto &[pose, prior] = inserted_.at(kf.id);
      if (!(kf.R_GKF == pose.R_GKF) || !(kf.p_GKF == pose.p_GKF))
        record_.stats.nuisance_intact = false;
      expect.block<6, 6>(6 * j, 6 * j) = prior;
    }
    if (!(s_.P_nn == expect))
      record_.stats.nuisance_intact = false;
    // Before the relative transform exists its slots carry no covariance.
    MatX P = s_.covariance();
    if (!s_.aug_initialized) {
      std::vector<int> keep;
      for (int i = 0; i < P.rows(); ++i)
        if (i < slot::kPosG || i >= slot::kPosG + 6)
          keep.push_back(i);
      P = MatX(P(keep, keep));
    }
    Eigen::SelfAdjointEigenSolver<MatX> es(P, Eigen::EigenvaluesOnly);
    const auto &ev = es.eigenvalues();
    const double rel = ev(0) / std::max(ev(ev.size() - 1), 1e-300);
    record_.stats.min_eig_rel = std::min(record_.stats.min_eig_rel, rel);
  }

  void record(const CameraFrame &f) {
    const auto &tr = sim_.truth[f.imu_index];
    RecordStep r;
    r.t = f.t;
    r.truth = Pose{tr.R, tr.p};
    r.est = s_.imu_pose();
    r.has_relative = s_.aug_initialized;
    r.truth_LG = sim_.cfg.T_LG;
    r.est_LG = s_.relative_transform();
    for (int i = 0; i < 12; ++i)
      for (int j = 0; j < 12; ++j)
        r.P(i, j) = s_.P_aa(kRecordSlots[i], kRecordSlots[j]);
    record_.steps.push_back(r);
  }

  void step(int k, const CameraFrame &f) {
    propagate_to(f.imu_index);
    augment_clone(s_, f.t);
    local_update(f);
    map_step(k, f);
    while (s_.num_clones() > opt_.max_clones) {
      const double t_old = s_.clones.front().timestamp;
      marginalize_oldest(s_);
      for (auto &[id, tr] : tracks_)
        std::erase_if(tr.obs, [&](const TrackObservation &o) { return o.timestamp <= t_old; });
    }
    if (opt_.audit)
      audit();
    ++record_.stats.frames;
    record(f);
  }

  const Simulation &sim_;
  const VariantInfo &info_;
  FilterOptions opt_;
  std::uint64_t seed_;
  PinholeCamera cam_;
  AugmentedState s_;
  RunRecord record_;
  int imu_cursor_ = 0;
  std::map<int, FeatureTrack> tracks_;
  std::map<int, int> last_matched_;
  std::set<int> retired_;
  std::map<int, std::pair<MapKeyframePose, Mat6>> inserted_;
};

}  // namespace

RunRecord run_filter(const Simulation &sim, Variant v, const FilterOptions &opt, std::uint64_t seed) {
  if (sim.meas.frames.empty())
    throw std::invalid_argument("run_filter: no camera frames");
  Filter f(sim, v, opt, seed);
  return f.run();
}

}  // namespace mapvil
