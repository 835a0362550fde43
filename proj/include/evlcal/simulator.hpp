#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "evlcal/event_repr.hpp"
#include "evlcal/geometry.hpp"
#include "evlcal/lidar_cam.hpp"

namespace evlcal {

enum class SceneCategory { Urban, Suburban, Rural };

std::string to_string(SceneCategory c);
SceneCategory category_from_string(const std::string& s);

// Axis-aligned cuboid resting on the ground plane (world z = 0, z up,
// x forward, y left).
struct Box {
  Eigen::Vector3d center;
  Eigen::Vector3d size;
};

struct Scene {
  SceneCategory category = SceneCategory::Urban;
  std::vector<Box> boxes;
  bool ground = true;
  std::uint64_t seed = 0;
};

// Edge-rich scene in front of the rig, 5-60 m. Urban: >= 8 tall cuboids,
// Rural: 2-3 low ones.
Scene make_scene(std::uint64_t seed, SceneCategory category);

// VLP-16-like: 16 rings at -15..+15 deg in 2 deg steps.
struct LidarModel {
  int rings = 16;
  double elev_min_deg = -15.0;
  double elev_step_deg = 2.0;
  double horizontal_step_deg = 0.2;
  double range_max_m = 100.0;
};

// Constant-rate rig motion over the accumulation window.
struct Trajectory {
  Eigen::Vector3d linear_mps = Eigen::Vector3d::Zero();
  Eigen::Vector3d angular_dps = Eigen::Vector3d::Zero();
  std::int64_t duration_us = 50000;
};

// One ray per (ring, azimuth step); points in the LiDAR frame, misses
// omitted. Intensity 1 for cuboid faces, 0.3 for ground.
PointCloud raycast_lidar(const Scene& scene, const LidarModel& model,
                         const RigidTransform& sensor_pose, std::int64_t scan_t_us);

// Edge-motion event generation: the scene's cuboid edges are rasterized at
// `substeps` uniformly spaced times over the window (camera pose anchored at
// the window end and moved backward along the trajectory); occupancy changes
// between consecutive substeps emit events timestamped at interval midpoints.
EventStream generate_events(const Scene& scene, const Intrinsics& K,
                            const RigidTransform& cam_pose_end, const Trajectory& traj,
                            const AccumulationWindow& window, int substeps);

// Camera above the LiDAR with a small mounting rotation, composed with the
// axis permutation from the LiDAR frame (x fwd, y left, z up) to the camera
// frame (z fwd, x right, y down).
RigidTransform default_extrinsic();
RigidTransform lidar_to_camera_axes();

struct SampleOptions {
  LidarModel lidar;
  Intrinsics intrinsics;
  Trajectory trajectory{{1.2, 0.4, 0.0}, {3.0, 6.0, 0.0}, 50000};
  int substeps = 12;
};

struct Sample {
  PointCloud cloud;
  EventStream events;
  RigidTransform gt_extrinsic;
  RigidTransform decalibrated;
  EulerPose label;
  SceneCategory category = SceneCategory::Urban;
  std::uint64_t scene_seed = 0;
  std::uint64_t decalib_seed = 0;
};

// Full synthetic sample: scene + rigidly mounted sensor pair + sampled
// decalibration + supervised correction label. Reproducible from the seeds.
Sample generate_sample(std::uint64_t scene_seed, SceneCategory category,
                       const RigidTransform& gt_extrinsic, const DecalibRange& range,
                       const AccumulationWindow& window, const SampleOptions& opts = {});

}  // namespace evlcal
