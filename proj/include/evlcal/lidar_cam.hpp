#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

#include "evlcal/event_repr.hpp"
#include "evlcal/geometry.hpp"

namespace evlcal {

struct LidarPoint {
  double x = 0.0, y = 0.0, z = 0.0;  // meters, LiDAR frame
  double intensity = 0.0;            // [0, 1]
  std::int64_t t_us = 0;

  Eigen::Vector3d position() const { return {x, y, z}; }
};

struct PointCloud {
  std::vector<LidarPoint> points;
  std::int64_t scan_t_us = 0;
};

// Distortion-free pinhole camera.
struct Intrinsics {
  double fx = 400.0, fy = 400.0;
  double cx = 320.0, cy = 240.0;
  SensorGeometry geom;
};

struct ProjectedPoint {
  double u = 0.0, v = 0.0;  // pixels
  double depth = 0.0;       // meters, camera z
};

struct ProjectionResult {
  std::vector<ProjectedPoint> points;  // input order preserved
  std::size_t culled = 0;
};

// Sparse depth pseudo-image: 0 = no return, otherwise normalized inverse
// depth clamp(z_min / depth, 0, 1]; near = bright.
struct DepthImage {
  int height = 0;
  int width = 0;
  std::vector<float> data;

  float& at(int y, int x) { return data[y * width + x]; }
  float at(int y, int x) const { return data[y * width + x]; }
};

// Two co-registered channels at the model input size.
struct CalibInput {
  static constexpr int kSize = 64;
  Eigen::MatrixXf event_channel;  // kSize x kSize, [0, 1]
  Eigen::MatrixXf depth_channel;  // kSize x kSize, [0, 1]
};

constexpr double kZMin = 0.1;           // meters
constexpr double kDefaultMaxDepth = 100.0;

// p_cam = R p + t, culls z <= z_min and out-of-frame pixels.
ProjectionResult project_points(const PointCloud& cloud, const RigidTransform& extrinsic,
                                const Intrinsics& K, double z_min = kZMin);

// Nearest-pixel z-buffer rasterization, first-wins on depth ties.
DepthImage render_depth_image(const std::vector<ProjectedPoint>& projected, const Intrinsics& K,
                              double max_depth_m = kDefaultMaxDepth);

// Area-average resize of a single-channel grid to out_h x out_w.
Eigen::MatrixXf area_downsample(const float* data, int in_h, int in_w, int out_h, int out_w);

// Full preprocessing for one sample under a given extrinsic hypothesis:
// slice events at the scan timestamp, build the chosen representation
// (voxel bins averaged into one channel), project + rasterize the cloud,
// downsample both channels to CalibInput::kSize.
CalibInput make_calib_input(const PointCloud& cloud, const EventStream& events,
                            const RigidTransform& hypothesis, const Intrinsics& K,
                            const AccumulationWindow& window, ReprKind repr_kind,
                            int voxel_bins = 5);

}  // namespace evlcal
