#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <span>
#include <vector>

namespace evlcal {

constexpr double kDegToRad = 0.017453292519943295;
constexpr double kRadToDeg = 57.29577951308232;

// 6-DoF pose: translation in meters, rotation as intrinsic yaw-pitch-roll
// Euler angles in degrees (R = Rz(yaw) * Ry(pitch) * Rx(roll), right-handed,
// camera convention z-forward / x-right / y-down).
// Canonical ranges: roll, yaw in (-180, 180], pitch in [-90, 90].
struct EulerPose {
  double tx = 0.0, ty = 0.0, tz = 0.0;        // meters
  double roll = 0.0, pitch = 0.0, yaw = 0.0;  // degrees

  Eigen::Vector3d translation() const { return {tx, ty, tz}; }
  Eigen::Vector3d rotation_deg() const { return {roll, pitch, yaw}; }
  bool is_finite() const;
};

// Rigid transform: p' = R * p + t. R orthonormal with det +1.
struct RigidTransform {
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();

  static RigidTransform Identity() { return {}; }
  Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return R * p + t; }
  Eigen::Matrix4d homogeneous() const;
  // max deviation of R'R from I and |det(R) - 1|
  double rotation_defect() const;
};

struct DecalibRange {
  double max_rot_deg = 0.0;
  double max_trans_m = 0.0;
};

inline DecalibRange fine_range() { return {1.0, 0.10}; }
inline DecalibRange coarse_range() { return {10.0, 1.00}; }

// Per-sample or aggregate calibration error. Translation in centimeters,
// rotation in degrees.
struct CalibError {
  double trans_norm_cm = 0.0;
  double rot_norm_deg = 0.0;
  Eigen::Vector3d per_axis_trans_cm = Eigen::Vector3d::Zero();  // |dx|,|dy|,|dz|
  Eigen::Vector3d per_axis_rot_deg = Eigen::Vector3d::Zero();   // |droll|,|dpitch|,|dyaw|
};

RigidTransform euler_to_transform(const EulerPose& p);

// Inverse of euler_to_transform. At |pitch| = 90 deg (gimbal lock, detected
// within 1e-7 deg) roll is set to 0 and the remaining rotation folds into yaw;
// the result still reconstructs R exactly.
EulerPose transform_to_euler(const RigidTransform& T);

// Applies b first, then a. Re-orthonormalizes when accumulated drift
// exceeds 1e-12.
RigidTransform compose(const RigidTransform& a, const RigidTransform& b);

RigidTransform inverse(const RigidTransform& T);

// Uniform per-component offset: rotations in [-max_rot_deg, +max_rot_deg],
// translations in [-max_trans_m, +max_trans_m]. Draw order: roll, pitch, yaw,
// tx, ty, tz. Deterministic for a fixed seed.
EulerPose sample_decalibration(const DecalibRange& range, std::uint64_t rng_seed);

// Mean Euclidean norm of translation differences, in centimeters.
double mae_translation_cm(std::span<const RigidTransform> pred,
                          std::span<const RigidTransform> gt);

struct RotationError {
  double mean_norm_deg = 0.0;
  Eigen::Vector3d mean_abs_deg = Eigen::Vector3d::Zero();  // roll, pitch, yaw
};

// Per sample: R_rel = R_pred * R_gt^-1, error = Euclidean norm of the Euler
// angles of R_rel in degrees. Returns the mean norm and mean per-axis
// absolute values.
RotationError mae_rotation(std::span<const RigidTransform> pred,
                           std::span<const RigidTransform> gt);

// Supervised target: the correction dT with gt = compose(dT, decalibrated),
// i.e. dT = compose(gt, inverse(decalibrated)).
EulerPose correction_label(const RigidTransform& gt, const RigidTransform& decalibrated);

// Full per-sample error (Eq.-style norms plus per-axis breakdown).
CalibError calib_error(const RigidTransform& pred, const RigidTransform& gt);

}  // namespace evlcal
