#include "evlcal/geometry.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "evlcal/errors.hpp"
#include "evlcal/rng.hpp"

namespace evlcal {

namespace {

// wrap into (-180, 180]
double wrap_deg(double a) {
  a = std::fmod(a, 360.0);
  if (a <= -180.0) a += 360.0;
  if (a > 180.0) a -= 360.0;
  return a;
}

Eigen::Matrix3d reorthonormalize(const Eigen::Matrix3d& R) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(R, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d U = svd.matrixU();
  Eigen::Matrix3d V = svd.matrixV();
  Eigen::Matrix3d S = Eigen::Matrix3d::Identity();
  S(2, 2) = (U * V.transpose()).determinant() > 0 ? 1.0 : -1.0;
  return U * S * V.transpose();
}

}  // namespace

bool EulerPose::is_finite() const {
  return std::isfinite(tx) && std::isfinite(ty) && std::isfinite(tz) &&
         std::isfinite(roll) && std::isfinite(pitch) && std::isfinite(yaw);
}

Eigen::Matrix4d RigidTransform::homogeneous() const {
  Eigen::Matrix4d H = Eigen::Matrix4d::Identity();
  H.topLeftCorner<3, 3>() = R;
  H.topRightCorner<3, 1>() = t;
  return H;
}

double RigidTransform::rotation_defect() const {
  double ortho = (R.transpose() * R - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  double det = std::abs(R.determinant() - 1.0);
  return std::max(ortho, det);
}

RigidTransform euler_to_transform(const EulerPose& p) {
  const double cr = std::cos(p.roll * kDegToRad), sr = std::sin(p.roll * kDegToRad);
  const double cp = std::cos(p.pitch * kDegToRad), sp = std::sin(p.pitch * kDegToRad);
  const double cy = std::cos(p.yaw * kDegToRad), sy = std::sin(p.yaw * kDegToRad);

  Eigen::Matrix3d Rx, Ry, Rz;
  Rx << 1, 0, 0, 0, cr, -sr, 0, sr, cr;
  Ry << cp, 0, sp, 0, 1, 0, -sp, 0, cp;
  Rz << cy, -sy, 0, sy, cy, 0, 0, 0, 1;

  RigidTransform T;
  T.R = Rz * Ry * Rx;
  T.t = p.translation();
  return T;
}

EulerPose transform_to_euler(const RigidTransform& T) {
  const Eigen::Matrix3d& R = T.R;
  EulerPose p;
  p.tx = T.t.x();
  p.ty = T.t.y();
  p.tz = T.t.z();

  // R = Rz(yaw) Ry(pitch) Rx(roll): R(2,0) = -sin(pitch)
  const double sp = std::clamp(-R(2, 0), -1.0, 1.0);
  const double pitch_rad = std::asin(sp);
  const double cp = std::cos(pitch_rad);

  constexpr double kLockTol = 1e-7 * kDegToRad;  // 1e-7 degrees from +-90
  if (std::abs(std::abs(pitch_rad) - M_PI / 2.0) < kLockTol || cp < 1e-12) {
    // gimbal lock: fix roll = 0, fold the free angle into yaw.
    // With roll = 0: R(0,1) = -sin(yaw), R(1,1) = cos(yaw).
    p.pitch = sp > 0 ? 90.0 : -90.0;
    p.roll = 0.0;
    p.yaw = wrap_deg(std::atan2(-R(0, 1), R(1, 1)) * kRadToDeg);
    return p;
  }

  p.pitch = pitch_rad * kRadToDeg;
  p.yaw = wrap_deg(std::atan2(R(1, 0), R(0, 0)) * kRadToDeg);
  p.roll = wrap_deg(std::atan2(R(2, 1), R(2, 2)) * kRadToDeg);
  return p;
}

RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
  RigidTransform c;
  c.R = a.R * b.R;
  c.t = a.R * b.t + a.t;
  if (c.rotation_defect() > 1e-12) c.R = reorthonormalize(c.R);
  return c;
}

RigidTransform inverse(const RigidTransform& T) {
  RigidTransform inv;
  inv.R = T.R.transpose();
  inv.t = -(inv.R * T.t);
  return inv;
}

EulerPose sample_decalibration(const DecalibRange& range, std::uint64_t rng_seed) {
  Rng rng(rng_seed);
  EulerPose p;
  p.roll = rng.uniform(-range.max_rot_deg, range.max_rot_deg);
  p.pitch = rng.uniform(-range.max_rot_deg, range.max_rot_deg);
  p.yaw = rng.uniform(-range.max_rot_deg, range.max_rot_deg);
  p.tx = rng.uniform(-range.max_trans_m, range.max_trans_m);
  p.ty = rng.uniform(-range.max_trans_m, range.max_trans_m);
  p.tz = rng.uniform(-range.max_trans_m, range.max_trans_m);
  return p;
}

double mae_translation_cm(std::span<const RigidTransform> pred,
                          std::span<const RigidTransform> gt) {
  if (pred.size() != gt.size()) throw LengthMismatchError("mae_translation: size mismatch");
  if (pred.empty()) throw EmptyInputError("mae_translation: empty input");
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    sum += (pred[i].t - gt[i].t).norm();
  }
  return (sum / static_cast<double>(pred.size())) * 100.0;
}

RotationError mae_rotation(std::span<const RigidTransform> pred,
                           std::span<const RigidTransform> gt) {
  if (pred.size() != gt.size()) throw LengthMismatchError("mae_rotation: size mismatch");
  if (pred.empty()) throw EmptyInputError("mae_rotation: empty input");
  RotationError err;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    RigidTransform rel;
    rel.R = pred[i].R * gt[i].R.transpose();
    const EulerPose e = transform_to_euler(rel);
    const Eigen::Vector3d angles = e.rotation_deg();
    err.mean_norm_deg += angles.norm();
    err.mean_abs_deg += angles.cwiseAbs();
  }
  const double n = static_cast<double>(pred.size());
  err.mean_norm_deg /= n;
  err.mean_abs_deg /= n;
  return err;
}

EulerPose correction_label(const RigidTransform& gt, const RigidTransform& decalibrated) {
  return transform_to_euler(compose(gt, inverse(decalibrated)));
}

CalibError calib_error(const RigidTransform& pred, const RigidTransform& gt) {
  CalibError e;
  const Eigen::Vector3d dt = pred.t - gt.t;
  e.trans_norm_cm = dt.norm() * 100.0;
  e.per_axis_trans_cm = dt.cwiseAbs() * 100.0;
  RigidTransform rel;
  rel.R = pred.R * gt.R.transpose();
  const Eigen::Vector3d angles = transform_to_euler(rel).rotation_deg();
  e.rot_norm_deg = angles.norm();
  e.per_axis_rot_deg = angles.cwiseAbs();
  return e;
}

}  // namespace evlcal
