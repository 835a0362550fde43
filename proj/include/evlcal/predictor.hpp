#pragma once

#include <Eigen/Core>
#include <memory>
#include <vector>

#include "evlcal/event_repr.hpp"
#include "evlcal/geometry.hpp"
#include "evlcal/lidar_cam.hpp"
#include "evlcal/model.hpp"
#include "evlcal/nelder_mead.hpp"

namespace evlcal {

// Range-discontinuity points along each LiDAR ring: adjacent returns closer
// than max_az_gap_deg in azimuth whose ranges differ by more than
// range_jump_m flag the nearer point as a foreground edge.
std::vector<Eigen::Vector3d> lidar_edge_points(const PointCloud& cloud,
                                               double range_jump_m = 0.5,
                                               double max_az_gap_deg = 0.5);

// In-place separable Gaussian blur of a height x width grid.
void gaussian_blur(std::vector<float>& grid, int height, int width, double sigma_px);

struct EdgeAlignParams {
  int restarts = 16;
  NelderMeadOptions nm;
  double fine_sigma_px = 2.0;
  ReprKind repr = ReprKind::EventFrame;
  int voxel_bins = 5;
  // quadratic pull toward the current hypothesis, in bound-normalized
  // coordinates; keeps weakly observed axes from wandering
  double prior_weight = 0.03;
  // blurred-map clip level as a quantile of its positive values; 1.0 leaves
  // the map unclipped
  double saturation_quantile = 1.0;
  // after the global pass, recenter on the estimate and re-solve with the
  // range shrunk by refine_shrink, this many times
  int refine_passes = 2;
  double refine_shrink = 0.3;
  // map blur for the refinement passes; sharper than the capture pass so the
  // basin narrows together with the trust region
  double refine_sigma_px = 0.75;
  // weight of the reverse (band-coverage) term: event-band pixels left far
  // from every projected point are penalized, so the point set cannot slide
  // along the bands it already covers
  double coverage_weight = 0.0;
  // extra weight on horizontal-edge points, which are few but carry the
  // vertical alignment information
  double horizontal_edge_boost = 4.0;
  // penalty on the absolute signed (polarity-summed) event map at each
  // projected point: a scan-time edge sits between the band's entering (+)
  // and leaving (-) polarity caps, so off-center or foreign bands pay for
  // their imbalance
  double polarity_weight = 0.0;
  // central fraction of the accumulation window kept for the alignment map;
  // a full-window band is a wide plateau the projected points can slide
  // along, a slice centered on the scan time is a thin ridge that pins them
  double slice_fraction = 0.25;
  // score against a clipped chamfer-distance affinity instead of a blurred
  // event frame: flat inside bands, linear falloff outside
  bool use_distance_map = false;
  // distinct candidates carried through the coarse-to-fine ladder
  int beam_width = 4;
  // final point-to-line Gauss-Newton polish against the thin-slice event
  // pixels; 0 disables it
  int icp_iterations = 12;
  int icp_rounds = 3;
  double icp_radius_px = 2.5;
  // Gauss-Newton prior anchoring the polish at its start pose; keeps the
  // directions the matched edges cannot see from running off
  double icp_prior_rot_rad = 0.003;
  double icp_prior_trans_m = 0.015;
};

// Alignment score of a candidate extrinsic: sum of the blurred event-map
// values sampled at the projected LiDAR depth-discontinuity points.
double edge_align_score(const PointCloud& cloud, const EventStream& events,
                        const RigidTransform& candidate, const Intrinsics& K,
                        const AccumulationWindow& window, const EdgeAlignParams& params = {});

// Derivative-free 6-DoF correction: maximizes the sum of blurred event-map
// values at the projected LiDAR depth-discontinuity points over offsets
// within search_range, via Nelder-Mead restarted from seeded simplices.
// Coarse ranges (> 2 deg) get a heavily blurred first pass followed by a
// fine refinement. Throws NoLidarEdgesError below 20 discontinuity points.
EulerPose edge_align_predict(const PointCloud& cloud, const EventStream& events,
                             const RigidTransform& hypothesis, const Intrinsics& K,
                             const AccumulationWindow& window,
                             const DecalibRange& search_range,
                             const EdgeAlignParams& params = {});

class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual EulerPose predict(const PointCloud& cloud, const EventStream& events,
                            const RigidTransform& hypothesis, const Intrinsics& K,
                            const AccumulationWindow& window) const = 0;
};

class ZeroPredictor final : public Predictor {
 public:
  EulerPose predict(const PointCloud&, const EventStream&, const RigidTransform&,
                    const Intrinsics&, const AccumulationWindow&) const override {
    return {};
  }
};

// Exact-label predictor for closure checks: knows the ground truth.
class OraclePredictor final : public Predictor {
 public:
  explicit OraclePredictor(RigidTransform gt) : gt_(std::move(gt)) {}
  EulerPose predict(const PointCloud&, const EventStream&, const RigidTransform& hypothesis,
                    const Intrinsics&, const AccumulationWindow&) const override {
    return correction_label(gt_, hypothesis);
  }

 private:
  RigidTransform gt_;
};

class ModelPredictor final : public Predictor {
 public:
  ModelPredictor(PredictorModel model, ReprKind repr = ReprKind::EventFrame, int voxel_bins = 5)
      : model_(std::move(model)), repr_(repr), voxel_bins_(voxel_bins) {}
  EulerPose predict(const PointCloud& cloud, const EventStream& events,
                    const RigidTransform& hypothesis, const Intrinsics& K,
                    const AccumulationWindow& window) const override {
    return forward(model_, make_calib_input(cloud, events, hypothesis, K, window, repr_,
                                            voxel_bins_));
  }
  const PredictorModel& model() const { return model_; }

 private:
  PredictorModel model_;
  ReprKind repr_;
  int voxel_bins_;
};

class EdgeAlignPredictor final : public Predictor {
 public:
  EdgeAlignPredictor(DecalibRange search_range, EdgeAlignParams params = {})
      : range_(search_range), params_(params) {}
  EulerPose predict(const PointCloud& cloud, const EventStream& events,
                    const RigidTransform& hypothesis, const Intrinsics& K,
                    const AccumulationWindow& window) const override {
    return edge_align_predict(cloud, events, hypothesis, K, window, range_, params_);
  }

 private:
  DecalibRange range_;
  EdgeAlignParams params_;
};

struct CascadeStage {
  std::shared_ptr<const Predictor> predictor;
  DecalibRange range;  // decalibration range the stage was built for
  int iterations = 1;
};

struct CascadeTraceEntry {
  int stage = 0;
  EulerPose correction;
  CalibError error;  // vs ground truth, when supplied
};

struct CascadeResult {
  RigidTransform estimate;
  std::vector<CascadeTraceEntry> trace;
};

// Runs each stage's predictor against the current hypothesis and applies the
// correction by left-composition. Stage ranges must be strictly decreasing.
CascadeResult cascade_calibrate(const PointCloud& cloud, const EventStream& events,
                                const RigidTransform& initial_hypothesis,
                                const std::vector<CascadeStage>& stages, const Intrinsics& K,
                                const AccumulationWindow& window,
                                const RigidTransform* gt = nullptr);

}  // namespace evlcal
