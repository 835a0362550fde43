#include "evlcal/model.hpp"

#include <cmath>
#include <numeric>

#include "evlcal/errors.hpp"
#include "evlcal/rng.hpp"

namespace evlcal {

namespace {

constexpr int kH0 = PredictorModel::kInputSize;  // 64
constexpr int kH1 = kH0 / 2, kH2 = kH1 / 2, kH3 = kH2 / 2;
constexpr int kC0 = 2;

std::size_t tensor_size(const std::vector<int>& dims) {
  std::size_t n = 1;
  for (int d : dims) n *= static_cast<std::size_t>(d);
  return n;
}

}  // namespace

PredictorModel::PredictorModel() {
  const std::vector<std::pair<std::string, std::vector<int>>> layout = {
      {"conv1.w", {kC1, kC0, 3, 3}}, {"conv1.b", {kC1}},
      {"conv2.w", {kC2, kC1, 3, 3}}, {"conv2.b", {kC2}},
      {"conv3.w", {kC3, kC2, 3, 3}}, {"conv3.b", {kC3}},
      {"shared.w", {kFeat, kC3}},    {"shared.b", {kFeat}},
      {"trans1.w", {kHead, kFeat}},  {"trans1.b", {kHead}},
      {"trans2.w", {3, kHead}},      {"trans2.b", {3}},
      {"rot1.w", {kHead, kFeat}},    {"rot1.b", {kHead}},
      {"rot2.w", {3, kHead}},        {"rot2.b", {3}},
  };
  std::size_t offset = 0;
  for (const auto& [name, dims] : layout) {
    TensorShape t;
    t.name = name;
    t.dims = dims;
    t.offset = offset;
    t.size = tensor_size(dims);
    offset += t.size;
    tensors_.push_back(std::move(t));
  }
  params.assign(offset, 0.0f);
}

void PredictorModel::init_random(std::uint64_t seed) {
  Rng rng(seed);
  auto gauss = [&rng]() {
    // Box-Muller
    const double u1 = std::max(rng.uniform(), 1e-300);
    const double u2 = rng.uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  };
  for (const TensorShape& t : tensors_) {
    const bool is_bias = t.dims.size() == 1;
    if (is_bias) {
      for (std::size_t i = 0; i < t.size; ++i) params[t.offset + i] = 0.0f;
      continue;
    }
    std::size_t fan_in = 1;
    for (std::size_t d = 1; d < t.dims.size(); ++d) fan_in *= static_cast<std::size_t>(t.dims[d]);
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (std::size_t i = 0; i < t.size; ++i) {
      params[t.offset + i] = static_cast<float>(gauss() * stddev);
    }
  }
}

bool PredictorModel::is_finite() const {
  for (float p : params) {
    if (!std::isfinite(p)) return false;
  }
  return true;
}

namespace {

struct ForwardCache {
  std::vector<double> input;            // kC0 * 64 * 64
  std::vector<double> a1, a2, a3;       // post-ReLU conv activations
  std::vector<double> pooled;           // kC3
  std::vector<double> as;               // shared, post-ReLU
  std::vector<double> at1, ar1;         // head hidden, post-ReLU
  std::array<double, 6> out{};          // t (dm) then r (deg)
};

const float* tensor_ptr(const PredictorModel& m, std::size_t index) {
  return m.params.data() + m.tensors()[index].offset;
}

// pad-1 stride-2 3x3 convolution + ReLU; z kept implicitly via a > 0
void conv_relu(const std::vector<double>& in, int in_c, int in_h, const float* w, const float* b,
               int out_c, std::vector<double>& out) {
  const int out_h = in_h / 2;
  out.assign(static_cast<std::size_t>(out_c) * out_h * out_h, 0.0);
  for (int oc = 0; oc < out_c; ++oc) {
    for (int oy = 0; oy < out_h; ++oy) {
      for (int ox = 0; ox < out_h; ++ox) {
        double acc = static_cast<double>(b[oc]);
        for (int ic = 0; ic < in_c; ++ic) {
          const double* in_ch = in.data() + static_cast<std::size_t>(ic) * in_h * in_h;
          const float* w_k = w + ((oc * in_c + ic) * 9);
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = 2 * oy + ky - 1;
            if (iy < 0 || iy >= in_h) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int ix = 2 * ox + kx - 1;
              if (ix < 0 || ix >= in_h) continue;
              acc += static_cast<double>(w_k[ky * 3 + kx]) * in_ch[iy * in_h + ix];
            }
          }
        }
        out[(static_cast<std::size_t>(oc) * out_h + oy) * out_h + ox] = acc > 0.0 ? acc : 0.0;
      }
    }
  }
}

void conv_backward(const std::vector<double>& in, int in_c, int in_h, const float* w, int out_c,
                   const std::vector<double>& act_out, const std::vector<double>& d_out,
                   double* dw, double* db, std::vector<double>* d_in) {
  const int out_h = in_h / 2;
  if (d_in) d_in->assign(in.size(), 0.0);
  for (int oc = 0; oc < out_c; ++oc) {
    for (int oy = 0; oy < out_h; ++oy) {
      for (int ox = 0; ox < out_h; ++ox) {
        const std::size_t oidx = (static_cast<std::size_t>(oc) * out_h + oy) * out_h + ox;
        if (act_out[oidx] <= 0.0) continue;  // ReLU gate
        const double g = d_out[oidx];
        if (g == 0.0) continue;
        db[oc] += g;
        for (int ic = 0; ic < in_c; ++ic) {
          const double* in_ch = in.data() + static_cast<std::size_t>(ic) * in_h * in_h;
          double* dw_k = dw + ((oc * in_c + ic) * 9);
          const float* w_k = w + ((oc * in_c + ic) * 9);
          double* din_ch =
              d_in ? d_in->data() + static_cast<std::size_t>(ic) * in_h * in_h : nullptr;
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = 2 * oy + ky - 1;
            if (iy < 0 || iy >= in_h) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int ix = 2 * ox + kx - 1;
              if (ix < 0 || ix >= in_h) continue;
              dw_k[ky * 3 + kx] += g * in_ch[iy * in_h + ix];
              if (din_ch) din_ch[iy * in_h + ix] += g * static_cast<double>(w_k[ky * 3 + kx]);
            }
          }
        }
      }
    }
  }
}

void dense(const std::vector<double>& in, const float* w, const float* b, int out_n,
           bool relu, std::vector<double>& out) {
  const int in_n = static_cast<int>(in.size());
  out.assign(out_n, 0.0);
  for (int o = 0; o < out_n; ++o) {
    double acc = static_cast<double>(b[o]);
    const float* row = w + static_cast<std::size_t>(o) * in_n;
    for (int i = 0; i < in_n; ++i) acc += static_cast<double>(row[i]) * in[i];
    out[o] = relu && acc < 0.0 ? 0.0 : acc;
  }
}

void dense_backward(const std::vector<double>& in, const float* w, int out_n,
                    const std::vector<double>& act_out, bool relu,
                    const std::vector<double>& d_out, double* dw, double* db,
                    std::vector<double>* d_in) {
  const int in_n = static_cast<int>(in.size());
  if (d_in) d_in->assign(in_n, 0.0);
  for (int o = 0; o < out_n; ++o) {
    if (relu && act_out[o] <= 0.0) continue;
    const double g = d_out[o];
    if (g == 0.0) continue;
    db[o] += g;
    const float* row = w + static_cast<std::size_t>(o) * in_n;
    double* dw_row = dw + static_cast<std::size_t>(o) * in_n;
    for (int i = 0; i < in_n; ++i) {
      dw_row[i] += g * in[i];
      if (d_in) (*d_in)[i] += g * static_cast<double>(row[i]);
    }
  }
}

void run_forward(const PredictorModel& m, const CalibInput& input, ForwardCache& c) {
  if (!m.is_finite()) throw NonFiniteParametersError("model parameters not finite");

  c.input.resize(static_cast<std::size_t>(kC0) * kH0 * kH0);
  for (int y = 0; y < kH0; ++y) {
    for (int x = 0; x < kH0; ++x) {
      c.input[static_cast<std::size_t>(y) * kH0 + x] =
          static_cast<double>(input.event_channel(y, x));
      c.input[static_cast<std::size_t>(kH0) * kH0 + y * kH0 + x] =
          static_cast<double>(input.depth_channel(y, x));
    }
  }

  conv_relu(c.input, kC0, kH0, tensor_ptr(m, 0), tensor_ptr(m, 1), PredictorModel::kC1, c.a1);
  conv_relu(c.a1, PredictorModel::kC1, kH1, tensor_ptr(m, 2), tensor_ptr(m, 3),
            PredictorModel::kC2, c.a2);
  conv_relu(c.a2, PredictorModel::kC2, kH2, tensor_ptr(m, 4), tensor_ptr(m, 5),
            PredictorModel::kC3, c.a3);

  c.pooled.assign(PredictorModel::kC3, 0.0);
  for (int ch = 0; ch < PredictorModel::kC3; ++ch) {
    const double* base = c.a3.data() + static_cast<std::size_t>(ch) * kH3 * kH3;
    c.pooled[ch] = std::accumulate(base, base + kH3 * kH3, 0.0) / (kH3 * kH3);
  }

  dense(c.pooled, tensor_ptr(m, 6), tensor_ptr(m, 7), PredictorModel::kFeat, true, c.as);
  dense(c.as, tensor_ptr(m, 8), tensor_ptr(m, 9), PredictorModel::kHead, true, c.at1);
  std::vector<double> t_out;
  dense(c.at1, tensor_ptr(m, 10), tensor_ptr(m, 11), 3, false, t_out);
  dense(c.as, tensor_ptr(m, 12), tensor_ptr(m, 13), PredictorModel::kHead, true, c.ar1);
  std::vector<double> r_out;
  dense(c.ar1, tensor_ptr(m, 14), tensor_ptr(m, 15), 3, false, r_out);

  for (int i = 0; i < 3; ++i) {
    c.out[i] = t_out[i];
    c.out[3 + i] = r_out[i];
  }
}

EulerPose pose_from_raw(const std::array<double, 6>& raw, const LossScales& scales) {
  EulerPose p;
  p.tx = raw[0] / scales.trans_to_unit;
  p.ty = raw[1] / scales.trans_to_unit;
  p.tz = raw[2] / scales.trans_to_unit;
  p.roll = raw[3] / scales.rot_to_unit;
  p.pitch = raw[4] / scales.rot_to_unit;
  p.yaw = raw[5] / scales.rot_to_unit;
  return p;
}

std::array<double, 6> scale_pose(const EulerPose& p, const LossScales& s) {
  return {p.tx * s.trans_to_unit, p.ty * s.trans_to_unit, p.tz * s.trans_to_unit,
          p.roll * s.rot_to_unit, p.pitch * s.rot_to_unit, p.yaw * s.rot_to_unit};
}

}  // namespace

EulerPose forward(const PredictorModel& model, const CalibInput& input) {
  ForwardCache cache;
  run_forward(model, input, cache);
  return pose_from_raw(cache.out, LossScales{});
}

double loss(const EulerPose& pred, const EulerPose& label, const LossScales& scales) {
  const auto a = scale_pose(pred, scales);
  const auto b = scale_pose(label, scales);
  double sum = 0.0;
  for (int i = 0; i < 6; ++i) {
    const double d = a[i] - b[i];
    sum += d * d;
  }
  return sum / 6.0;
}

std::vector<double> backward(const PredictorModel& m, const CalibInput& input,
                             const EulerPose& label, const LossScales& scales,
                             double* loss_out) {
  ForwardCache c;
  run_forward(m, input, c);

  const auto target = scale_pose(label, scales);
  std::vector<double> d_t(3), d_r(3);
  double l = 0.0;
  for (int i = 0; i < 6; ++i) {
    const double diff = c.out[i] - target[i];
    l += diff * diff;
    (i < 3 ? d_t[i] : d_r[i - 3]) = 2.0 * diff / 6.0;
  }
  l /= 6.0;
  if (loss_out) *loss_out = l;

  std::vector<double> grad(m.param_count(), 0.0);
  auto g = [&](std::size_t idx) { return grad.data() + m.tensors()[idx].offset; };

  // heads
  std::vector<double> d_at1, d_ar1, d_as_t, d_as_r;
  const std::vector<double> t_out_dummy;  // linear layers: no ReLU gate
  dense_backward(c.at1, tensor_ptr(m, 10), 3, t_out_dummy, false, d_t, g(10), g(11), &d_at1);
  dense_backward(c.as, tensor_ptr(m, 8), PredictorModel::kHead, c.at1, true, d_at1, g(8), g(9),
                 &d_as_t);
  dense_backward(c.ar1, tensor_ptr(m, 14), 3, t_out_dummy, false, d_r, g(14), g(15), &d_ar1);
  dense_backward(c.as, tensor_ptr(m, 12), PredictorModel::kHead, c.ar1, true, d_ar1, g(12),
                 g(13), &d_as_r);

  std::vector<double> d_as(PredictorModel::kFeat);
  for (int i = 0; i < PredictorModel::kFeat; ++i) d_as[i] = d_as_t[i] + d_as_r[i];

  std::vector<double> d_pooled;
  dense_backward(c.pooled, tensor_ptr(m, 6), PredictorModel::kFeat, c.as, true, d_as, g(6), g(7),
                 &d_pooled);

  // un-pool: gradient spread uniformly over the 8x8 cells
  std::vector<double> d_a3(c.a3.size(), 0.0);
  for (int ch = 0; ch < PredictorModel::kC3; ++ch) {
    const double v = d_pooled[ch] / (kH3 * kH3);
    double* base = d_a3.data() + static_cast<std::size_t>(ch) * kH3 * kH3;
    for (int i = 0; i < kH3 * kH3; ++i) base[i] = v;
  }

  std::vector<double> d_a2, d_a1;
  conv_backward(c.a2, PredictorModel::kC2, kH2, tensor_ptr(m, 4), PredictorModel::kC3, c.a3,
                d_a3, g(4), g(5), &d_a2);
  conv_backward(c.a1, PredictorModel::kC1, kH1, tensor_ptr(m, 2), PredictorModel::kC2, c.a2,
                d_a2, g(2), g(3), &d_a1);
  conv_backward(c.input, kC0, kH0, tensor_ptr(m, 0), PredictorModel::kC1, c.a1, d_a1, g(0), g(1),
                nullptr);

  for (double v : grad) {
    if (!std::isfinite(v)) throw NonFiniteGradientError("non-finite gradient");
  }
  return grad;
}

TrainResult train(PredictorModel& model, std::span<const TrainSample> train_set,
                  std::span<const TrainSample> val_set, const TrainConfig& cfg) {
  if (train_set.empty()) throw EmptyInputError("train: empty dataset");

  auto mean_val_loss = [&]() {
    if (val_set.empty()) return 0.0;
    double sum = 0.0;
    for (const TrainSample& s : val_set) sum += loss(forward(model, s.input), s.label, cfg.scales);
    return sum / static_cast<double>(val_set.size());
  };

  TrainResult result;
  result.val_loss.push_back(mean_val_loss());

  std::vector<double> m1(model.param_count(), 0.0), m2(model.param_count(), 0.0);
  std::int64_t step = 0;

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng(cfg.rng_seed + 0x5157ULL * static_cast<std::uint64_t>(epoch + 1));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    }

    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<double> grad(model.param_count(), 0.0);
      double batch_loss = 0.0;
      for (std::size_t i = start; i < end; ++i) {
        const TrainSample& s = train_set[order[i]];
        double l = 0.0;
        const std::vector<double> gi = backward(model, s.input, s.label, cfg.scales, &l);
        batch_loss += l;
        for (std::size_t p = 0; p < grad.size(); ++p) grad[p] += gi[p];
      }
      const double inv_n = 1.0 / static_cast<double>(end - start);
      batch_loss *= inv_n;
      if (!std::isfinite(batch_loss)) throw DivergenceDetectedError("training loss diverged");
      epoch_loss += batch_loss;
      ++batches;

      ++step;
      const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
      for (std::size_t p = 0; p < grad.size(); ++p) {
        const double gp = grad[p] * inv_n;
        m1[p] = cfg.beta1 * m1[p] + (1.0 - cfg.beta1) * gp;
        m2[p] = cfg.beta2 * m2[p] + (1.0 - cfg.beta2) * gp * gp;
        const double update =
            cfg.learning_rate * (m1[p] / bc1) / (std::sqrt(m2[p] / bc2) + cfg.epsilon);
        model.params[p] = static_cast<float>(static_cast<double>(model.params[p]) - update);
      }
    }
    result.train_loss.push_back(epoch_loss / static_cast<double>(batches));
    result.val_loss.push_back(mean_val_loss());
  }
  return result;
}

}  // namespace evlcal
