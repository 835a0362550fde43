#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "evlcal/errors.hpp"
#include "evlcal/predictor.hpp"
#include "evlcal/rng.hpp"
#include "evlcal/simulator.hpp"

using namespace evlcal;

TEST_CASE("nelder_mead minimizes quadratics") {
  // anisotropic bowl with known minimum
  const Eigen::Vector3d target(1.5, -0.7, 0.3);
  auto f = [&](const Eigen::VectorXd& x) {
    return (x[0] - target[0]) * (x[0] - target[0]) + 4.0 * (x[1] - target[1]) * (x[1] - target[1]) +
           0.5 * (x[2] - target[2]) * (x[2] - target[2]);
  };
  std::vector<Eigen::VectorXd> simplex;
  for (int i = 0; i < 4; ++i) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(3);
    if (i > 0) v[i - 1] = 1.0;
    simplex.push_back(v);
  }
  NelderMeadOptions opts;
  opts.spread_tol = 1e-12;
  opts.max_evals = 2000;
  const NelderMeadResult r = nelder_mead(f, simplex, opts);
  CHECK((r.x - target).norm() < 1e-4);
  CHECK(r.value < 1e-8);
  CHECK(r.evals <= opts.max_evals);

  // Booth function, minimum at (1, 3)
  auto booth = [](const Eigen::VectorXd& x) {
    const double a = x[0] + 2 * x[1] - 7;
    const double b = 2 * x[0] + x[1] - 5;
    return a * a + b * b;
  };
  std::vector<Eigen::VectorXd> s2{Eigen::Vector2d(0, 0), Eigen::Vector2d(1, 0),
                                  Eigen::Vector2d(0, 1)};
  const NelderMeadResult rb = nelder_mead(booth, s2, opts);
  CHECK(std::abs(rb.x[0] - 1.0) < 1e-4);
  CHECK(std::abs(rb.x[1] - 3.0) < 1e-4);
}

TEST_CASE("nelder_mead respects the evaluation budget and rejects bad simplices") {
  auto f = [](const Eigen::VectorXd& x) { return x.squaredNorm(); };
  NelderMeadOptions opts;
  opts.max_evals = 25;
  opts.spread_tol = 0.0;
  std::vector<Eigen::VectorXd> simplex{Eigen::Vector2d(5, 5), Eigen::Vector2d(6, 5),
                                       Eigen::Vector2d(5, 6)};
  const NelderMeadResult r = nelder_mead(f, simplex, opts);
  CHECK(r.evals <= 25 + 3);  // may finish the in-flight iteration

  CHECK_THROWS_AS((void)nelder_mead(f, {Eigen::Vector2d(0, 0)}, opts), std::invalid_argument);
}

namespace {

// one ring at a fixed elevation with a range step at azimuth zero
PointCloud step_ring(double az_step_deg, double near_range, double far_range,
                     double elev_deg = 0.1) {
  PointCloud cloud;
  cloud.scan_t_us = 0;
  const double ce = std::cos(elev_deg * kDegToRad), se = std::sin(elev_deg * kDegToRad);
  for (double az = -10.0; az <= 10.0; az += az_step_deg) {
    const double r = az < 0.0 ? far_range : near_range;
    const double a = az * kDegToRad;
    cloud.points.push_back(
        {r * ce * std::cos(a), r * ce * std::sin(a), r * se, 1.0, 0});
  }
  return cloud;
}

}  // namespace

TEST_CASE("lidar_edge_points flags the near side of a range step") {
  const PointCloud cloud = step_ring(0.2, 5.0, 10.0);
  const auto edges = lidar_edge_points(cloud);
  REQUIRE(edges.size() == 1);
  CHECK(edges[0].norm() == doctest::Approx(5.0));      // the foreground point
  CHECK(edges[0].y() >= 0.0);                          // az = 0 side of the jump

  // jump below the threshold: no edges
  CHECK(lidar_edge_points(step_ring(0.2, 5.0, 5.4)).empty());

  // neighbors further apart than the azimuth gap: no edges
  CHECK(lidar_edge_points(step_ring(0.6, 5.0, 10.0)).empty());

  CHECK(lidar_edge_points({}).empty());
}

TEST_CASE("gaussian_blur conserves mass and is symmetric") {
  const int H = 33, W = 33;
  std::vector<float> grid(static_cast<std::size_t>(H) * W, 0.0f);
  grid[static_cast<std::size_t>(16) * W + 16] = 1.0f;
  gaussian_blur(grid, H, W, 2.0);

  double sum = 0.0;
  for (float v : grid) sum += v;
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(grid[16 * W + 16] > grid[16 * W + 18]);
  CHECK(grid[16 * W + 12] == doctest::Approx(grid[16 * W + 20]).epsilon(1e-9));
  CHECK(grid[12 * W + 16] == doctest::Approx(grid[16 * W + 12]).epsilon(1e-9));

  // sigma <= 0 is a no-op
  std::vector<float> copy(grid);
  gaussian_blur(copy, H, W, 0.0);
  CHECK(copy == grid);
}

TEST_CASE("edge_align throws without lidar edges") {
  // smooth cloud: all points at the same range, no discontinuities
  PointCloud smooth = step_ring(0.2, 8.0, 8.0);
  EventStream events;
  events.geom = {640, 480};
  events.events.push_back({90000, 100, 100, 1});
  const AccumulationWindow window{100000, 50000};
  CHECK_THROWS_AS((void)edge_align_predict(smooth, events, RigidTransform::Identity(),
                                           Intrinsics{}, window, fine_range()),
                  NoLidarEdgesError);
}

TEST_CASE("edge_align stays put at ground truth") {
  const AccumulationWindow window{1000000, 50000};
  const Sample s = generate_sample(7, SceneCategory::Urban, default_extrinsic(), {0.0, 0.0},
                                   window);
  const EulerPose off = edge_align_predict(s.cloud, s.events, s.gt_extrinsic, Intrinsics{},
                                           window, fine_range());
  CHECK(off.rotation_deg().norm() <= 0.2);
  CHECK(off.translation().norm() <= 0.02);
}

TEST_CASE("edge_align recovers an injected horizontal pan") {
  const AccumulationWindow window{1000000, 50000};
  const Sample s = generate_sample(11, SceneCategory::Urban, default_extrinsic(), {0.0, 0.0},
                                   window);

  // 0.5 degrees about the camera's vertical axis
  EulerPose pan;
  pan.pitch = 0.5;
  const RigidTransform hyp = compose(euler_to_transform(pan), s.gt_extrinsic);
  const EulerPose label = correction_label(s.gt_extrinsic, hyp);

  const EulerPose pred =
      edge_align_predict(s.cloud, s.events, hyp, Intrinsics{}, window, fine_range());
  CHECK(std::abs(pred.pitch - label.pitch) <= 0.2);

  // applying the correction lands near ground truth
  const RigidTransform fixed = compose(euler_to_transform(pred), hyp);
  const CalibError err = calib_error(fixed, s.gt_extrinsic);
  CHECK(err.rot_norm_deg <= 0.3);
}

TEST_CASE("alignment score peaks at ground truth") {
  const AccumulationWindow window{1000000, 50000};
  const Sample s = generate_sample(23, SceneCategory::Urban, default_extrinsic(), {0.0, 0.0},
                                   window);
  const Intrinsics K;
  const double at_gt = edge_align_score(s.cloud, s.events, s.gt_extrinsic, K, window);
  REQUIRE(at_gt > 0.0);

  Rng rng(99);
  int tried = 0;
  while (tried < 100) {
    EulerPose off;
    off.roll = rng.uniform(-1, 1);
    off.pitch = rng.uniform(-1, 1);
    off.yaw = rng.uniform(-1, 1);
    off.tx = rng.uniform(-0.1, 0.1);
    off.ty = rng.uniform(-0.1, 0.1);
    off.tz = rng.uniform(-0.1, 0.1);
    if (off.rotation_deg().norm() < 0.5) continue;
    ++tried;
    const RigidTransform cand = compose(euler_to_transform(off), s.gt_extrinsic);
    CHECK(edge_align_score(s.cloud, s.events, cand, K, window) < at_gt);
  }
}

TEST_CASE("cascade with zero predictor returns the initial hypothesis") {
  const AccumulationWindow window{1000000, 50000};
  const Sample s = generate_sample(31, SceneCategory::Suburban, default_extrinsic(),
                                   fine_range(), window);
  std::vector<CascadeStage> stages;
  stages.push_back({std::make_shared<ZeroPredictor>(), fine_range(), 1});

  const CascadeResult r = cascade_calibrate(s.cloud, s.events, s.decalibrated, stages,
                                            Intrinsics{}, window, &s.gt_extrinsic);
  CHECK((r.estimate.R - s.decalibrated.R).norm() == 0.0);
  CHECK((r.estimate.t - s.decalibrated.t).norm() == 0.0);
  REQUIRE(r.trace.size() == 1);
  CHECK(r.trace[0].correction.rotation_deg().norm() == 0.0);
}

TEST_CASE("cascade with exact-label oracle recovers ground truth in one stage") {
  const AccumulationWindow window{1000000, 50000};
  const Sample s = generate_sample(37, SceneCategory::Rural, default_extrinsic(),
                                   coarse_range(), window);
  std::vector<CascadeStage> stages;
  stages.push_back({std::make_shared<OraclePredictor>(s.gt_extrinsic), coarse_range(), 1});
  stages.push_back({std::make_shared<OraclePredictor>(s.gt_extrinsic), fine_range(), 1});

  const CascadeResult r = cascade_calibrate(s.cloud, s.events, s.decalibrated, stages,
                                            Intrinsics{}, window, &s.gt_extrinsic);
  REQUIRE(r.trace.size() == 2);
  CHECK(r.trace[0].error.rot_norm_deg < 1e-10);
  CHECK(r.trace[0].error.trans_norm_cm < 1e-10);
  CHECK(r.trace[1].error.rot_norm_deg < 1e-10);
  const CalibError final_err = calib_error(r.estimate, s.gt_extrinsic);
  CHECK(final_err.rot_norm_deg < 1e-10);
  CHECK(final_err.trans_norm_cm < 1e-10);
}

TEST_CASE("cascade rejects non-decreasing stage ranges") {
  std::vector<CascadeStage> stages;
  stages.push_back({std::make_shared<ZeroPredictor>(), fine_range(), 1});
  stages.push_back({std::make_shared<ZeroPredictor>(), coarse_range(), 1});
  EventStream events;
  events.geom = {640, 480};
  CHECK_THROWS_AS((void)cascade_calibrate({}, events, RigidTransform::Identity(), stages,
                                          Intrinsics{}, AccumulationWindow{0, 1}),
                  std::invalid_argument);
}
