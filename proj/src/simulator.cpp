#include "evlcal/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "evlcal/rng.hpp"

namespace evlcal {

std::string to_string(SceneCategory c) {
  switch (c) {
    case SceneCategory::Urban: return "urban";
    case SceneCategory::Suburban: return "suburban";
    case SceneCategory::Rural: return "rural";
  }
  return "urban";
}

SceneCategory category_from_string(const std::string& s) {
  if (s == "urban") return SceneCategory::Urban;
  if (s == "suburban") return SceneCategory::Suburban;
  if (s == "rural") return SceneCategory::Rural;
  throw std::invalid_argument("unknown scene category: " + s);
}

Scene make_scene(std::uint64_t seed, SceneCategory category) {
  Scene scene;
  scene.category = category;
  scene.seed = seed;
  Rng rng(seed);

  int count = 0;
  int low_count = 0;  // street-level clutter whose top edges the LiDAR sees
  double h_min = 0, h_max = 0;
  switch (category) {
    case SceneCategory::Urban:
      count = 8;  // tall buildings
      h_min = 6.0;
      h_max = 18.0;
      low_count = 3;
      break;
    case SceneCategory::Suburban:
      count = 6 + static_cast<int>(rng.below(3));  // 6-8 houses
      h_min = 3.0;
      h_max = 9.0;
      low_count = 3;
      break;
    case SceneCategory::Rural:
      count = 2;  // sparse low structures
      h_min = 4.0;
      h_max = 5.0;
      low_count = 1;
      break;
  }

  for (int i = 0; i < count; ++i) {
    Box b;
    const double depth_x = category == SceneCategory::Rural ? rng.uniform(3.0, 7.0)
                                                            : rng.uniform(1.0, 4.0);
    const double width_y = rng.uniform(2.0, 7.0);
    const double height = rng.uniform(h_min, h_max);
    double x, y;
    if (category == SceneCategory::Rural) {
      // close-in and azimuth-separated: sparse scenes still need both box
      // flanks silhouetted against the ground for the LiDAR to see edges
      x = rng.uniform(9.0, 14.0);
      y = -11.0 + 11.0 * i + rng.uniform(-2.5, 2.5);
    } else {
      x = rng.uniform(8.0, 45.0);
      // keep the street corridor clear so the platform grazes stay visible;
      // offset by the half width so the box body stays out of it too
      const double side = rng.below(2) == 0 ? -1.0 : 1.0;
      y = side * (rng.uniform(3.5, 14.0) + width_y / 2.0);
    }
    b.size = {depth_x, width_y, height};
    b.center = {x, y, height / 2.0};
    scene.boxes.push_back(b);
  }
  for (int i = 0; i < low_count; ++i) {
    // platform tops sit below the sensor head so downward rings graze them;
    // the far top edge then yields horizontal edge structure
    Box b;
    if (i == 0 && category == SceneCategory::Rural) {
      // open country carries little street furniture: usually a short curb
      // ahead of the rig, but some stretches offer only a roadside mound off
      // past the camera's field of view, where the scan still sees the
      // silhouette but the vertical axes go weakly constrained
      const double height = rng.uniform(0.95, 1.05);
      if (rng.below(8) < 2) {
        b.size = {6.0, rng.uniform(3.0, 4.0), height};
        b.center = {8.5, rng.uniform(8.0, 10.0), height / 2.0};
      } else {
        b.size = {8.0, rng.uniform(3.5, 4.5), height};
        b.center = {9.0, rng.uniform(-0.5, 0.5), height / 2.0};
      }
    } else if (i == 0) {
      // one long low platform pinned ahead of the rig, grazed by two of the
      // downward rings at well separated depths, so its top side edges yield
      // horizontal structure both near and far
      const double height = rng.uniform(0.95, 1.05);
      // narrow enough that its top side edges stay inside the cleared
      // corridor, out of the shadow of the flanking structures
      b.size = {25.0, rng.uniform(3.5, 4.5), height};
      b.center = {5.0 + 25.0 / 2.0, rng.uniform(-0.5, 0.5), height / 2.0};
    } else if (i == 1) {
      // a second one pinned under the -5 deg ring, off to one side
      const double height = rng.uniform(0.75, 1.0);
      const double side = rng.below(2) == 0 ? -1.0 : 1.0;
      b.size = {4.0, rng.uniform(2.0, 4.0), height};
      b.center = {7.0, side * rng.uniform(3.0, 4.5), height / 2.0};
    } else if (i == 2) {
      // a distant one grazed by the -1 deg ring near x = 29 m: far vertical
      // structure that separates tilt from vertical offset
      const double height = rng.uniform(0.95, 1.05);
      b.size = {6.0, rng.uniform(3.0, 4.5), height};
      b.center = {29.0, rng.uniform(-0.5, 0.5), height / 2.0};
    } else {
      const double height = rng.uniform(0.9, 1.4);
      const double x = rng.uniform(7.5, 14.0);
      b.size = {rng.uniform(4.0, 5.0), rng.uniform(1.5, 5.0), height};
      b.center = {x, rng.uniform(-0.35, 0.35) * x, height / 2.0};
    }
    scene.boxes.push_back(b);
  }
  return scene;
}

namespace {

// slab-method ray/AABB intersection; returns entry distance or +inf
double ray_box(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir, const Box& box) {
  const Eigen::Vector3d lo = box.center - box.size / 2.0;
  const Eigen::Vector3d hi = box.center + box.size / 2.0;
  double tmin = 0.0;
  double tmax = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (std::abs(dir[a]) < 1e-15) {
      if (origin[a] < lo[a] || origin[a] > hi[a]) return std::numeric_limits<double>::infinity();
      continue;
    }
    double t0 = (lo[a] - origin[a]) / dir[a];
    double t1 = (hi[a] - origin[a]) / dir[a];
    if (t0 > t1) std::swap(t0, t1);
    tmin = std::max(tmin, t0);
    tmax = std::min(tmax, t1);
    if (tmin > tmax) return std::numeric_limits<double>::infinity();
  }
  return tmin > 1e-9 ? tmin : std::numeric_limits<double>::infinity();
}

}  // namespace

PointCloud raycast_lidar(const Scene& scene, const LidarModel& model,
                         const RigidTransform& sensor_pose, std::int64_t scan_t_us) {
  PointCloud cloud;
  cloud.scan_t_us = scan_t_us;
  const Eigen::Vector3d origin = sensor_pose.t;
  const int az_steps = static_cast<int>(std::lround(360.0 / model.horizontal_step_deg));

  for (int ring = 0; ring < model.rings; ++ring) {
    const double elev = (model.elev_min_deg + ring * model.elev_step_deg) * kDegToRad;
    const double ce = std::cos(elev), se = std::sin(elev);
    for (int i = 0; i < az_steps; ++i) {
      const double az = (-180.0 + i * model.horizontal_step_deg) * kDegToRad;
      const Eigen::Vector3d d_lidar(ce * std::cos(az), ce * std::sin(az), se);
      const Eigen::Vector3d d_world = sensor_pose.R * d_lidar;

      double best_t = std::numeric_limits<double>::infinity();
      double intensity = 0.0;
      for (const Box& box : scene.boxes) {
        const double t = ray_box(origin, d_world, box);
        if (t < best_t) {
          best_t = t;
          intensity = 1.0;
        }
      }
      if (scene.ground && d_world.z() < -1e-12) {
        const double t = -origin.z() / d_world.z();
        if (t > 1e-9 && t < best_t) {
          best_t = t;
          intensity = 0.3;
        }
      }
      if (best_t <= model.range_max_m) {
        const Eigen::Vector3d p = best_t * d_lidar;
        cloud.points.push_back({p.x(), p.y(), p.z(), intensity, scan_t_us});
      }
    }
  }
  return cloud;
}

namespace {

// 12 edges of a cuboid as world-space segments
void box_edges(const Box& box, std::vector<std::pair<Eigen::Vector3d, Eigen::Vector3d>>& out) {
  const Eigen::Vector3d lo = box.center - box.size / 2.0;
  const Eigen::Vector3d hi = box.center + box.size / 2.0;
  Eigen::Vector3d c[8];
  for (int i = 0; i < 8; ++i) {
    c[i] = {(i & 1) ? hi.x() : lo.x(), (i & 2) ? hi.y() : lo.y(), (i & 4) ? hi.z() : lo.z()};
  }
  static constexpr int pairs[12][2] = {{0, 1}, {2, 3}, {4, 5}, {6, 7}, {0, 2}, {1, 3},
                                       {4, 6}, {5, 7}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};
  for (const auto& e : pairs) out.emplace_back(c[e[0]], c[e[1]]);
}

// rasterize one camera-space segment into the occupancy grid
void draw_segment(Eigen::Vector3d a, Eigen::Vector3d b, const Intrinsics& K,
                  std::vector<std::uint8_t>& occ) {
  constexpr double z_clip = 0.2;
  if (a.z() <= z_clip && b.z() <= z_clip) return;
  if (a.z() <= z_clip) {
    const double s = (z_clip - a.z()) / (b.z() - a.z());
    a = a + s * (b - a);
  } else if (b.z() <= z_clip) {
    const double s = (z_clip - b.z()) / (a.z() - b.z());
    b = b + s * (a - b);
  }
  const double ua = K.cx + K.fx * a.x() / a.z(), va = K.cy + K.fy * a.y() / a.z();
  const double ub = K.cx + K.fx * b.x() / b.z(), vb = K.cy + K.fy * b.y() / b.z();
  const double len = std::max(std::abs(ub - ua), std::abs(vb - va));
  const int steps = std::clamp(static_cast<int>(std::ceil(len * 2.0)), 1, 8000);
  for (int s = 0; s <= steps; ++s) {
    const double f = static_cast<double>(s) / steps;
    const Eigen::Vector3d p = a + f * (b - a);  // perspective-correct: project each sample
    const int u = static_cast<int>(std::lround(K.cx + K.fx * p.x() / p.z()));
    const int v = static_cast<int>(std::lround(K.cy + K.fy * p.y() / p.z()));
    if (u >= 0 && u < K.geom.width && v >= 0 && v < K.geom.height) {
      occ[static_cast<std::size_t>(v) * K.geom.width + u] = 1;
    }
  }
}

}  // namespace

EventStream generate_events(const Scene& scene, const Intrinsics& K,
                            const RigidTransform& cam_pose_end, const Trajectory& traj,
                            const AccumulationWindow& window, int substeps) {
  if (substeps < 2) throw std::invalid_argument("generate_events: substeps >= 2 required");
  EventStream stream;
  stream.geom = K.geom;

  std::vector<std::pair<Eigen::Vector3d, Eigen::Vector3d>> edges;
  for (const Box& b : scene.boxes) box_edges(b, edges);
  if (edges.empty()) return stream;

  const std::size_t npix = static_cast<std::size_t>(K.geom.width) * K.geom.height;
  std::vector<std::uint8_t> prev(npix, 0), cur(npix, 0);

  const double span_us = static_cast<double>(window.duration_us);
  std::int64_t prev_t = 0;
  for (int k = 0; k < substeps; ++k) {
    const double frac = static_cast<double>(k) / (substeps - 1);
    const std::int64_t t_k =
        window.t_start_us() + static_cast<std::int64_t>(std::llround(frac * span_us));
    const double dt_s = static_cast<double>(t_k - window.t_end_us) * 1e-6;  // <= 0

    // rig motion expressed in the camera's own frame, anchored at the window end
    EulerPose motion;
    motion.tx = traj.linear_mps.x() * dt_s;
    motion.ty = traj.linear_mps.y() * dt_s;
    motion.tz = traj.linear_mps.z() * dt_s;
    motion.roll = traj.angular_dps.x() * dt_s;
    motion.pitch = traj.angular_dps.y() * dt_s;
    motion.yaw = traj.angular_dps.z() * dt_s;
    const RigidTransform cam_pose = compose(cam_pose_end, euler_to_transform(motion));
    const RigidTransform world_to_cam = inverse(cam_pose);

    std::fill(cur.begin(), cur.end(), 0);
    for (const auto& [a, b] : edges) {
      draw_segment(world_to_cam.apply(a), world_to_cam.apply(b), K, cur);
    }

    if (k > 0) {
      const std::int64_t t_mid = (prev_t + t_k) / 2;
      for (std::size_t i = 0; i < npix; ++i) {
        if (cur[i] != prev[i]) {
          Event e;
          e.t_us = t_mid;
          e.x = static_cast<std::uint16_t>(i % K.geom.width);
          e.y = static_cast<std::uint16_t>(i / K.geom.width);
          e.polarity = cur[i] > prev[i] ? 1 : -1;
          stream.events.push_back(e);
        }
      }
    }
    std::swap(prev, cur);
    prev_t = t_k;
  }
  return stream;
}

RigidTransform lidar_to_camera_axes() {
  RigidTransform T;
  T.R << 0, -1, 0,  // cam x = -world y (right)
      0, 0, -1,     // cam y = -world z (down)
      1, 0, 0;      // cam z = world x (forward)
  return T;
}

RigidTransform default_extrinsic() {
  EulerPose mount;
  mount.tx = 0.10;
  mount.roll = 5.0;
  mount.pitch = 2.0;
  mount.yaw = 3.0;
  return compose(euler_to_transform(mount), lidar_to_camera_axes());
}

Sample generate_sample(std::uint64_t scene_seed, SceneCategory category,
                       const RigidTransform& gt_extrinsic, const DecalibRange& range,
                       const AccumulationWindow& window, const SampleOptions& opts) {
  Sample s;
  s.category = category;
  s.scene_seed = scene_seed;
  s.gt_extrinsic = gt_extrinsic;

  const Scene scene = make_scene(scene_seed, category);

  RigidTransform rig_pose;  // LiDAR frame -> world, at the window end
  rig_pose.t = {0.0, 0.0, 1.5};

  const RigidTransform cam_pose_end = compose(rig_pose, inverse(gt_extrinsic));

  // the event mass of a moving edge centers on its mid-window position, so a
  // spinning scan is represented by its central pose: raycast from the
  // mid-window rig pose to keep the two sensors time-consistent
  const double dt_mid_s = -0.5e-6 * static_cast<double>(window.duration_us);
  EulerPose mid;
  mid.tx = opts.trajectory.linear_mps.x() * dt_mid_s;
  mid.ty = opts.trajectory.linear_mps.y() * dt_mid_s;
  mid.tz = opts.trajectory.linear_mps.z() * dt_mid_s;
  mid.roll = opts.trajectory.angular_dps.x() * dt_mid_s;
  mid.pitch = opts.trajectory.angular_dps.y() * dt_mid_s;
  mid.yaw = opts.trajectory.angular_dps.z() * dt_mid_s;
  const RigidTransform rig_pose_mid =
      compose(compose(cam_pose_end, euler_to_transform(mid)), gt_extrinsic);

  s.cloud = raycast_lidar(scene, opts.lidar, rig_pose_mid, window.t_end_us);
  s.events = generate_events(scene, opts.intrinsics, cam_pose_end, opts.trajectory, window,
                             opts.substeps);

  s.decalib_seed = Rng(scene_seed ^ 0xDECA11B5EEDULL).next_u64();
  const EulerPose offset = sample_decalibration(range, s.decalib_seed);
  s.decalibrated = compose(euler_to_transform(offset), gt_extrinsic);
  s.label = correction_label(gt_extrinsic, s.decalibrated);
  return s;
}

}  // namespace evlcal
