#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "evlcal/geometry.hpp"
#include "evlcal/lidar_cam.hpp"

namespace evlcal {

struct TensorShape {
  std::string name;
  std::vector<int> dims;
  std::size_t offset = 0;
  std::size_t size = 0;
};

// Toy 6-DoF correction regressor: 3 stride-2 3x3 conv stages
// (2 -> 8 -> 16 -> 32 channels, ReLU), global average pool, one shared dense
// layer (32 -> 32, ReLU), then separate translation and rotation heads of two
// dense layers each (32 -> 16 -> 3). Raw outputs are in loss units
// (decimeters / degrees). Parameters stored as 32-bit floats in the fixed
// tensor order below; arithmetic runs in double.
class PredictorModel {
 public:
  static constexpr int kInputSize = 64;
  static constexpr int kC1 = 8, kC2 = 16, kC3 = 32;
  static constexpr int kFeat = 32, kHead = 16;

  PredictorModel();

  // He-normal weights, zero biases; deterministic per seed.
  void init_random(std::uint64_t seed);

  const std::vector<TensorShape>& tensors() const { return tensors_; }
  std::size_t param_count() const { return params.size(); }
  bool is_finite() const;

  std::vector<float> params;

 private:
  std::vector<TensorShape> tensors_;
};

// Unit scaling applied before the MSE so that the fine decalibration range
// maps both output groups to +-1 (translation meters -> decimeters,
// rotation already degrees).
struct LossScales {
  double trans_to_unit = 10.0;
  double rot_to_unit = 1.0;
};

EulerPose forward(const PredictorModel& model, const CalibInput& input);

// Mean of squared componentwise differences in scaled units.
double loss(const EulerPose& pred, const EulerPose& label, const LossScales& scales = {});

// Analytic gradient of loss w.r.t. every parameter, in the flat param order.
std::vector<double> backward(const PredictorModel& model, const CalibInput& input,
                             const EulerPose& label, const LossScales& scales = {},
                             double* loss_out = nullptr);

struct TrainConfig {
  double learning_rate = 0.0001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int batch_size = 16;
  int epochs = 10;
  LossScales scales;
  std::uint64_t rng_seed = 0;
};

struct TrainSample {
  CalibInput input;
  EulerPose label;
};

struct TrainResult {
  std::vector<double> train_loss;  // per epoch
  std::vector<double> val_loss;    // index 0 is the pre-training loss
};

// Adam with deterministic per-epoch shuffling. Throws DivergenceDetectedError
// if the loss becomes non-finite.
TrainResult train(PredictorModel& model, std::span<const TrainSample> train_set,
                  std::span<const TrainSample> val_set, const TrainConfig& cfg);

}  // namespace evlcal
