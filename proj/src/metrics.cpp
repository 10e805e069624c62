#include "mapvil/metrics.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Geometry>

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace mapvil {

namespace {

using Vec12 = Eigen::Matrix<double, 12, 1>;

void require_runs(const std::vector<RunRecord> &runs, const char *what) {
  if (runs.empty())
    throw std::invalid_argument(std::string(what) + ": no runs");
  for (const auto &r : runs)
    if (r.steps.empty())
      throw std::invalid_argument(std::string(what) + ": empty run");
}

size_t max_steps(const std::vector<RunRecord> &runs) {
  size_t n = 0;
  for (const auto &r : runs)
    n = std::max(n, r.steps.size());
  return n;
}

double time_at(const std::vector<RunRecord> &runs, size_t k) {
  for (const auto &r : runs)
    if (k < r.steps.size())
      return r.steps[k].t;
  return 0.0;
}

Pose map_pose(const Pose &T_LG, const Pose &T_LI) { return T_LG.inverse() * T_LI; }

double sq_error(const Vec3 &a, const Vec3 &b, bool planar) {
  return planar ? (a - b).head<2>().squaredNorm() : (a - b).squaredNorm();
}

}  // namespace

const char *variable_name(Variable v) {
  switch (v) {
    case Variable::Orientation: return "orientation";
    case Variable::Position: return "position";
    case Variable::Pose: return "pose";
    case Variable::RelOrientation: return "rel_orientation";
    case Variable::RelPosition: return "rel_position";
    case Variable::RelPose: return "rel_pose";
  }
  return "?";
}

int variable_dim(Variable v) { return v == Variable::Pose || v == Variable::RelPose ? 6 : 3; }

int variable_offset(Variable v) {
  switch (v) {
    case Variable::Orientation:
    case Variable::Pose: return 0;
    case Variable::Position: return 3;
    case Variable::RelPosition:
    case Variable::RelPose: return 6;
    case Variable::RelOrientation: return 9;
  }
  return 0;
}

bool is_relative(Variable v) {
  return v == Variable::RelOrientation || v == Variable::RelPosition || v == Variable::RelPose;
}

Vec12 record_error(const RecordStep &s, ErrorChart chart) {
  Vec12 e;
  if (chart == ErrorChart::Invariant) {
    const GroupElement est(s.est.R, {Vec3::Zero(), s.est.p, s.est_LG.p}, {s.est_LG.R});
    const GroupElement tru(s.truth.R, {Vec3::Zero(), s.truth.p, s.truth_LG.p}, {s.truth_LG.R});
    const VecX xi = (est * tru.inverse()).log();
    e << xi.segment<3>(0), xi.segment<3>(6), xi.segment<3>(9), xi.segment<3>(12);
  } else {
    e << so3_log(s.truth.R.transpose() * s.est.R), s.est.p - s.truth.p, s.est_LG.p - s.truth_LG.p,
        so3_log(s.truth_LG.R.transpose() * s.est_LG.R);
  }
  return e;
}

Series rmse(const std::vector<RunRecord> &runs, Variable v) {
  require_runs(runs, "rmse");
  if (v == Variable::Pose || v == Variable::RelPose)
    throw std::invalid_argument("rmse: pose variables have no single unit");
  Series out;
  const size_t n = max_steps(runs);
  double sum = 0.0;
  for (size_t k = 0; k < n; ++k) {
    double ss = 0.0;
    int count = 0;
    for (const auto &r : runs) {
      if (k >= r.steps.size())
        continue;
      const auto &s = r.steps[k];
      if (is_relative(v) && !s.has_relative) {
        ++out.skipped;
        continue;
      }
      double e = 0.0;
      switch (v) {
        case Variable::Orientation: e = so3_log(s.est.R * s.truth.R.transpose()).norm() * 180.0 / std::numbers::pi; break;
        case Variable::Position: e = (s.est.p - s.truth.p).norm(); break;
        case Variable::RelOrientation:
          e = so3_log(s.est_LG.R * s.truth_LG.R.transpose()).norm() * 180.0 / std::numbers::pi;
          break;
        case Variable::RelPosition: e = (s.est_LG.p - s.truth_LG.p).norm(); break;
        default: break;
      }
      ss += e * e;
      ++count;
    }
    if (count == 0)
      continue;
    out.t.push_back(time_at(runs, k));
    out.value.push_back(std::sqrt(ss / count));
    sum += out.value.back();
  }
  out.aggregate = out.value.empty() ? 0.0 : sum / out.value.size();
  return out;
}

Series nees(const std::vector<RunRecord> &runs, Variable v) {
  require_runs(runs, "nees");
  Series out;
  const int d = variable_dim(v), o = variable_offset(v);
  const size_t n = max_steps(runs);
  double sum = 0.0;
  for (size_t k = 0; k < n; ++k) {
    double acc = 0.0;
    int count = 0;
    for (const auto &r : runs) {
      if (k >= r.steps.size())
        continue;
      const auto &s = r.steps[k];
      if (is_relative(v) && !s.has_relative) {
        ++out.skipped;
        continue;
      }
      const VecX e = record_error(s, r.chart).segment(o, d);
      MatX P = s.P.block(o, o, d, d);
      P = 0.5 * (P + P.transpose());
      Eigen::LLT<MatX> llt(P);
      if (llt.info() != Eigen::Success) {
        ++out.regularized;
        llt.compute(P + 1e-12 * MatX::Identity(d, d));
        if (llt.info() != Eigen::Success) {
          ++out.skipped;
          continue;
        }
      }
      acc += e.dot(llt.solve(e)) / d;
      ++count;
    }
    if (count == 0)
      continue;
    out.t.push_back(time_at(runs, k));
    out.value.push_back(acc / count);
    sum += out.value.back();
  }
  out.aggregate = out.value.empty() ? 0.0 : sum / out.value.size();
  return out;
}

Pose align(const std::vector<Pose> &est, const std::vector<Pose> &truth, AlignMode mode) {
  if (est.size() != truth.size())
    throw std::invalid_argument("align: trajectories differ in length");
  if (est.empty())
    throw std::invalid_argument("align: empty trajectory");
  switch (mode) {
    case AlignMode::None: return Pose{};
    case AlignMode::FirstPose: return truth.front() * est.front().inverse();
    case AlignMode::Umeyama: {
      if (est.size() < 2)
        throw std::invalid_argument("align: umeyama needs at least two poses");
      Eigen::Matrix3Xd src(3, est.size()), dst(3, est.size());
      for (size_t i = 0; i < est.size(); ++i) {
        src.col(i) = est[i].p;
        dst.col(i) = truth[i].p;
      }
      const Eigen::Matrix4d T = Eigen::umeyama(src, dst, false);
      return Pose{T.topLeftCorner<3, 3>(), T.topRightCorner<3, 1>()};
    }
  }
  return Pose{};
}

double ate_local(const std::vector<RunRecord> &runs, AlignMode mode, bool planar) {
  require_runs(runs, "ate");
  double total = 0.0;
  for (const auto &r : runs) {
    std::vector<Pose> est, tru;
    for (const auto &s : r.steps) {
      est.push_back(s.est);
      tru.push_back(s.truth);
    }
    const Pose S = align(est, tru, est.size() < 2 && mode == AlignMode::Umeyama ? AlignMode::FirstPose : mode);
    double ss = 0.0;
    for (size_t i = 0; i < est.size(); ++i)
      ss += sq_error((S * est[i]).p, tru[i].p, planar);
    total += std::sqrt(ss / est.size());
  }
  return total / runs.size();
}

double ate_map(const std::vector<RunRecord> &runs, bool planar) {
  require_runs(runs, "ate");
  double total = 0.0;
  int used = 0;
  for (const auto &r : runs) {
    double ss = 0.0;
    int n = 0;
    for (const auto &s : r.steps) {
      if (!s.has_relative)
        continue;
      ss += sq_error(map_pose(s.est_LG, s.est).p, map_pose(s.truth_LG, s.truth).p, planar);
      ++n;
    }
    if (n == 0)
      continue;
    total += std::sqrt(ss / n);
    ++used;
  }
  if (used == 0)
    throw std::invalid_argument("ate: no run has a relative transform estimate");
  return total / used;
}

std::vector<RpeResult> rpe(const std::vector<RunRecord> &runs, const std::vector<double> &lengths) {
  require_runs(runs, "rpe");
  std::vector<RpeResult> out;
  for (double len : lengths) {
    if (!(len > 0.0))
      throw std::invalid_argument("rpe: segment length must be positive");
    RpeResult res;
    res.length = len;
    for (const auto &r : runs) {
      const auto &st = r.steps;
      size_t i = 0;
      double travelled = 0.0;
      for (size_t j = 1; j < st.size(); ++j) {
        travelled += (st[j].truth.p - st[j - 1].truth.p).norm();
        if (travelled < len)
          continue;
        const Pose d_true = st[i].truth.inverse() * st[j].truth;
        const Pose d_est = st[i].est.inverse() * st[j].est;
        res.errors.push_back((d_true.inverse() * d_est).p.norm());
        i = j;
        travelled = 0.0;
      }
    }
    res.skipped = res.errors.empty();
    if (!res.skipped) {
      double s = 0.0;
      for (double e : res.errors)
        s += e;
      res.mean = s / res.errors.size();
    }
    out.push_back(std::move(res));
  }
  return out;
}

}  // namespace mapvil
