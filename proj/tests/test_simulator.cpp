#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "evlcal/event_repr.hpp"
#include "evlcal/predictor.hpp"
#include "evlcal/rng.hpp"
#include "evlcal/simulator.hpp"

using namespace evlcal;

namespace {

// fraction of projected LiDAR edge points landing within `radius` px of an
// event pixel
double edge_overlap_fraction(const Sample& s, const RigidTransform& hypothesis,
                             const Intrinsics& K, const AccumulationWindow& window,
                             int radius = 2) {
  const auto slice = synchronize(s.events, window.t_end_us, window.duration_us);
  const Representation frame = event_frame_counts(slice, s.events.geom);

  std::vector<std::uint8_t> mask(frame.data.size(), 0);
  const int W = frame.width, H = frame.height;
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      if (frame.at(0, y, x) <= 0.0f) continue;
      for (int dy = -radius; dy <= radius; ++dy) {
        for (int dx = -radius; dx <= radius; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if (yy >= 0 && yy < H && xx >= 0 && xx < W) {
            mask[static_cast<std::size_t>(yy) * W + xx] = 1;
          }
        }
      }
    }
  }

  const std::vector<Eigen::Vector3d> edges = lidar_edge_points(s.cloud);
  int inside = 0, hit = 0;
  for (const Eigen::Vector3d& p : edges) {
    const Eigen::Vector3d c = hypothesis.apply(p);
    if (c.z() <= kZMin) continue;
    const int u = static_cast<int>(std::lround(K.cx + K.fx * c.x() / c.z()));
    const int v = static_cast<int>(std::lround(K.cy + K.fy * c.y() / c.z()));
    if (u < 0 || u >= W || v < 0 || v >= H) continue;
    ++inside;
    if (mask[static_cast<std::size_t>(v) * W + u]) ++hit;
  }
  if (inside == 0) return 0.0;
  return static_cast<double>(hit) / inside;
}

}  // namespace

TEST_CASE("raycast empty scene") {
  Scene scene;
  scene.boxes.clear();
  scene.ground = false;
  const PointCloud cloud = raycast_lidar(scene, LidarModel{}, RigidTransform::Identity(), 0);
  CHECK(cloud.points.empty());
}

TEST_CASE("raycast single wall matches analytic ray-plane oracle") {
  Scene scene;
  scene.ground = false;
  Box wall;
  wall.center = {10.0, 0.0, 5.0};
  wall.size = {0.2, 12.0, 10.0};
  scene.boxes.push_back(wall);

  RigidTransform pose;
  pose.t = {0.0, 0.0, 1.5};
  const LidarModel model;
  const PointCloud cloud = raycast_lidar(scene, model, pose, 0);

  // every hit lies on the front face x = 9.9 (in the LiDAR frame, pose has
  // identity rotation so lidar x = world x - 0)
  for (const LidarPoint& p : cloud.points) {
    CHECK(p.x == doctest::Approx(9.9).epsilon(1e-9));
    CHECK(p.intensity == 1.0);
  }

  // analytic count: rays whose plane intersection falls inside the face
  int expected = 0;
  const int az_steps = static_cast<int>(std::lround(360.0 / model.horizontal_step_deg));
  for (int ring = 0; ring < model.rings; ++ring) {
    const double elev = (model.elev_min_deg + ring * model.elev_step_deg) * kDegToRad;
    for (int i = 0; i < az_steps; ++i) {
      const double az = (-180.0 + i * model.horizontal_step_deg) * kDegToRad;
      const double dx = std::cos(elev) * std::cos(az);
      if (dx <= 0.0) continue;
      const double t = 9.9 / dx;
      if (t > model.range_max_m) continue;
      const double y = t * std::cos(elev) * std::sin(az);
      const double z = 1.5 + t * std::sin(elev);
      if (y >= -6.0 && y <= 6.0 && z >= 0.0 && z <= 10.0) ++expected;
    }
  }
  CHECK(static_cast<int>(cloud.points.size()) == expected);
}

TEST_CASE("ring elevations take exactly the 16 modeled values") {
  const Scene scene = make_scene(3, SceneCategory::Urban);
  RigidTransform pose;
  pose.t = {0.0, 0.0, 1.5};
  const PointCloud cloud = raycast_lidar(scene, LidarModel{}, pose, 0);
  REQUIRE(!cloud.points.empty());

  std::set<int> seen;
  for (const LidarPoint& p : cloud.points) {
    const double r = p.position().norm();
    const double elev = std::asin(p.z / r) * kRadToDeg;
    // must match one of -15, -13, ..., +15 tightly
    const double nearest = std::round((elev + 15.0) / 2.0) * 2.0 - 15.0;
    CHECK(std::abs(elev - nearest) < 1e-9);
    seen.insert(static_cast<int>(nearest));
  }
  CHECK(seen.size() > 4);
}

TEST_CASE("zero-velocity trajectory emits no events") {
  const Scene scene = make_scene(1, SceneCategory::Urban);
  Trajectory still;
  still.linear_mps.setZero();
  still.angular_dps.setZero();
  const AccumulationWindow window{1000000, 50000};
  const EventStream ev =
      generate_events(scene, Intrinsics{}, default_extrinsic(), still, window, 10);
  CHECK(ev.events.empty());
}

TEST_CASE("single vertical pole under lateral motion forms a sloped band") {
  Scene scene;
  scene.ground = false;
  Box pole;
  pole.center = {10.0, 0.0, 3.0};
  pole.size = {0.05, 0.05, 6.0};
  scene.boxes.push_back(pole);

  RigidTransform rig;
  rig.t = {0.0, 0.0, 1.5};
  const RigidTransform cam_end = compose(rig, inverse(lidar_to_camera_axes()));
  Trajectory traj;
  traj.linear_mps = {2.0, 0.0, 0.0};  // camera x (right) at 2 m/s
  const AccumulationWindow window{1000000, 50000};
  const Intrinsics K;
  const int substeps = 11;
  const EventStream ev = generate_events(scene, K, cam_end, traj, window, substeps);
  REQUIRE(!ev.events.empty());

  // per-interval mean x matches analytic projection of the pole center
  std::map<std::int64_t, std::pair<double, int>> by_time;
  for (const Event& e : ev.events) {
    auto& [sum, n] = by_time[e.t_us];
    sum += e.x;
    ++n;
  }
  CHECK(by_time.size() >= 3);
  for (const auto& [t_mid, acc] : by_time) {
    const double mean_x = acc.first / acc.second;

    const double dt_s = static_cast<double>(t_mid - window.t_end_us) * 1e-6;
    EulerPose motion;
    motion.tx = traj.linear_mps.x() * dt_s;
    const RigidTransform cam_pose = compose(cam_end, euler_to_transform(motion));
    const Eigen::Vector3d c = inverse(cam_pose).apply(pole.center);
    const double u = K.cx + K.fx * c.x() / c.z();
    CHECK(std::abs(mean_x - u) < 1.0);
  }

  // band actually slopes: first and last interval means differ by the full
  // displacement (about fx * 0.1 / 10 = 4 px)
  const double first = by_time.begin()->second.first / by_time.begin()->second.second;
  const double last = by_time.rbegin()->second.first / by_time.rbegin()->second.second;
  CHECK(std::abs(last - first) > 2.0);
}

TEST_CASE("doubling substeps keeps total event count stable") {
  const Scene scene = make_scene(9, SceneCategory::Urban);
  RigidTransform rig;
  rig.t = {0.0, 0.0, 1.5};
  const RigidTransform cam_end = compose(rig, inverse(default_extrinsic()));
  const AccumulationWindow window{1000000, 50000};
  Trajectory traj;
  traj.linear_mps = {1.2, 0.4, 0.0};
  traj.angular_dps = {0.0, 0.0, 8.0};

  const EventStream a = generate_events(scene, Intrinsics{}, cam_end, traj, window, 12);
  const EventStream b = generate_events(scene, Intrinsics{}, cam_end, traj, window, 24);
  REQUIRE(!a.events.empty());
  const double ratio = static_cast<double>(b.events.size()) / a.events.size();
  CHECK(ratio > 0.8);
  CHECK(ratio < 1.2);
}

TEST_CASE("generate_sample determinism and label consistency") {
  const AccumulationWindow window{2000000, 50000};
  const Sample a =
      generate_sample(17, SceneCategory::Suburban, default_extrinsic(), fine_range(), window);
  const Sample b =
      generate_sample(17, SceneCategory::Suburban, default_extrinsic(), fine_range(), window);

  REQUIRE(a.cloud.points.size() == b.cloud.points.size());
  for (std::size_t i = 0; i < a.cloud.points.size(); ++i) {
    CHECK(a.cloud.points[i].x == b.cloud.points[i].x);
  }
  REQUIRE(a.events.events.size() == b.events.events.size());
  CHECK(a.label.yaw == b.label.yaw);

  // label recomputed from the returned transforms matches bit-exactly
  const EulerPose re = correction_label(a.gt_extrinsic, a.decalibrated);
  CHECK(re.roll == a.label.roll);
  CHECK(re.tx == a.label.tx);

  // zero range gives the zero label
  const Sample z =
      generate_sample(17, SceneCategory::Suburban, default_extrinsic(), {0.0, 0.0}, window);
  CHECK(z.label.rotation_deg().norm() < 1e-12);
  CHECK(z.label.translation().norm() < 1e-12);
}

TEST_CASE("labels span the decalibration range uniformly") {
  const DecalibRange range = fine_range();
  std::vector<double> yaw, tx;
  for (int i = 0; i < 1000; ++i) {
    // labels only need the transform algebra; skip the expensive sensors
    const std::uint64_t decalib_seed = Rng(static_cast<std::uint64_t>(i) ^ 0xDECA11B5EEDULL).next_u64();
    const EulerPose offset = sample_decalibration(range, decalib_seed);
    const RigidTransform decal = compose(euler_to_transform(offset), default_extrinsic());
    const EulerPose label = correction_label(default_extrinsic(), decal);
    yaw.push_back(label.yaw);
    tx.push_back(label.tx);
  }

  auto ks_vs_uniform = [](std::vector<double> v, double lo, double hi) {
    std::sort(v.begin(), v.end());
    double d = 0.0;
    const double n = static_cast<double>(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double cdf = (v[i] - lo) / (hi - lo);
      d = std::max(d, std::abs(cdf - (i + 1) / n));
      d = std::max(d, std::abs(cdf - i / n));
    }
    return d;
  };
  // label = inverse of the sampled offset, so slightly smoothed at the ends;
  // still statistically uniform
  CHECK(ks_vs_uniform(yaw, -range.max_rot_deg, range.max_rot_deg) < 0.05);
  CHECK(ks_vs_uniform(tx, -range.max_trans_m, range.max_trans_m) < 0.05);
}

TEST_CASE("edge overlap degrades monotonically with decalibration") {
  const AccumulationWindow window{1000000, 50000};
  const Intrinsics K;

  double frac_gt_sum = 0.0, frac_off_sum = 0.0;
  const int n = 8;
  for (int i = 0; i < n; ++i) {
    const Sample s = generate_sample(100 + i, SceneCategory::Urban, default_extrinsic(),
                                     {0.0, 0.0}, window);
    EulerPose pan;
    pan.pitch = 1.0;  // 1 degree about the camera's vertical axis
    const RigidTransform off = compose(euler_to_transform(pan), s.gt_extrinsic);
    frac_gt_sum += edge_overlap_fraction(s, s.gt_extrinsic, K, window);
    frac_off_sum += edge_overlap_fraction(s, off, K, window);
  }
  const double frac_gt = frac_gt_sum / n;
  const double frac_off = frac_off_sum / n;
  CHECK(frac_gt >= 0.6);
  CHECK(frac_gt - frac_off >= 0.2);
}
