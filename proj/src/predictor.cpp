#include "evlcal/predictor.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "evlcal/errors.hpp"

namespace evlcal {

namespace {
// silhouette points beyond this range are treated as scan dropouts, not edges
constexpr double kMissEdgeRangeCap = 60.0;
}  // namespace

std::vector<Eigen::Vector3d> lidar_edge_points(const PointCloud& cloud, double range_jump_m,
                                               double max_az_gap_deg) {
  struct Return {
    double az_deg;
    double range;
    std::size_t index;
  };
  // bucket by ring elevation (VLP-16 style 2 deg spacing)
  std::vector<std::vector<Return>> rings(64);
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    const Eigen::Vector3d p = cloud.points[i].position();
    const double r = p.norm();
    if (r < 1e-9) continue;
    const double elev_deg = std::asin(std::clamp(p.z() / r, -1.0, 1.0)) * kRadToDeg;
    const int ring = static_cast<int>(std::lround((elev_deg + 15.0) / 2.0));
    if (ring < 0 || ring >= static_cast<int>(rings.size())) continue;
    const double az = std::atan2(p.y(), p.x()) * kRadToDeg;
    rings[ring].push_back({az, r, i});
  }

  // the flagged return sits up to one azimuth step inside the object, so each
  // edge point is rotated about z onto the estimated boundary azimuth
  std::vector<Eigen::Vector3d> edges;
  const auto emit = [&](const Return& r, double boundary_az_deg) {
    const Eigen::Vector3d p = cloud.points[r.index].position();
    const double da = (boundary_az_deg - r.az_deg) * kDegToRad;
    const double c = std::cos(da), s = std::sin(da);
    edges.emplace_back(c * p.x() - s * p.y(), s * p.x() + c * p.y(), p.z());
  };
  constexpr double kHalfStepDeg = 0.1;
  for (auto& ring : rings) {
    std::sort(ring.begin(), ring.end(),
              [](const Return& a, const Return& b) { return a.az_deg < b.az_deg; });
    for (std::size_t i = 1; i < ring.size(); ++i) {
      const Return& a = ring[i - 1];
      const Return& b = ring[i];
      if (b.az_deg - a.az_deg > max_az_gap_deg) {
        // silhouette against open space (dropped returns); skip far points
        // where the gap just means the scan ran past its range limit
        if (a.range < kMissEdgeRangeCap) emit(a, a.az_deg + kHalfStepDeg);
        if (b.range < kMissEdgeRangeCap) emit(b, b.az_deg - kHalfStepDeg);
        continue;
      }
      if (std::abs(a.range - b.range) > range_jump_m) {
        emit(a.range < b.range ? a : b, 0.5 * (a.az_deg + b.az_deg));
      }
    }
  }
  return edges;
}

void gaussian_blur(std::vector<float>& grid, int height, int width, double sigma_px) {
  if (sigma_px <= 0.0) return;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma_px)));
  std::vector<double> kernel(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * (i * i) / (sigma_px * sigma_px));
    sum += kernel[i + radius];
  }
  for (double& k : kernel) k /= sum;

  std::vector<float> tmp(grid.size());
  // horizontal
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        const int xi = std::clamp(x + i, 0, width - 1);
        acc += kernel[i + radius] * grid[static_cast<std::size_t>(y) * width + xi];
      }
      tmp[static_cast<std::size_t>(y) * width + x] = static_cast<float>(acc);
    }
  }
  // vertical
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        const int yi = std::clamp(y + i, 0, height - 1);
        acc += kernel[i + radius] * tmp[static_cast<std::size_t>(yi) * width + x];
      }
      grid[static_cast<std::size_t>(y) * width + x] = static_cast<float>(acc);
    }
  }
}

namespace {

// clip a blurred map at its typical on-band level (a high quantile of the
// positive values) so band crossings score no higher than band interiors
void saturate_map(std::vector<float>& map, double quantile) {
  std::vector<float> pos;
  pos.reserve(map.size() / 8);
  for (float v : map) {
    if (v > 1e-6f) pos.push_back(v);
  }
  if (pos.empty()) return;
  const std::size_t idx =
      static_cast<std::size_t>(quantile * static_cast<double>(pos.size() - 1));
  std::nth_element(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(idx), pos.end());
  const float cap = std::max(pos[idx], 1e-6f);
  for (float& v : map) v = std::min(v, cap) / cap;
}

// two-pass 3x3 chamfer distance (px) to the nearest positive pixel
std::vector<float> chamfer_distance(const std::vector<float>& grid, int height, int width) {
  constexpr float kBig = 1e9f, kA = 0.95509f, kB = 1.36930f;  // optimal 3x3 weights
  std::vector<float> d(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) d[i] = grid[i] > 0.0f ? 0.0f : kBig;
  auto at = [&](int y, int x) -> float& { return d[static_cast<std::size_t>(y) * width + x]; };
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      float v = at(y, x);
      if (x > 0) v = std::min(v, at(y, x - 1) + kA);
      if (y > 0) {
        v = std::min(v, at(y - 1, x) + kA);
        if (x > 0) v = std::min(v, at(y - 1, x - 1) + kB);
        if (x + 1 < width) v = std::min(v, at(y - 1, x + 1) + kB);
      }
      at(y, x) = v;
    }
  }
  for (int y = height - 1; y >= 0; --y) {
    for (int x = width - 1; x >= 0; --x) {
      float v = at(y, x);
      if (x + 1 < width) v = std::min(v, at(y, x + 1) + kA);
      if (y + 1 < height) {
        v = std::min(v, at(y + 1, x) + kA);
        if (x + 1 < width) v = std::min(v, at(y + 1, x + 1) + kB);
        if (x > 0) v = std::min(v, at(y + 1, x - 1) + kB);
      }
      at(y, x) = v;
    }
  }
  return d;
}

double bilinear(const std::vector<float>& grid, int height, int width, double u, double v) {
  if (u < 0.0 || v < 0.0 || u > width - 1.001 || v > height - 1.001) return 0.0;
  const int x0 = static_cast<int>(u), y0 = static_cast<int>(v);
  const double fu = u - x0, fv = v - y0;
  const auto at = [&](int y, int x) {
    return static_cast<double>(grid[static_cast<std::size_t>(y) * width + x]);
  };
  return (1 - fu) * (1 - fv) * at(y0, x0) + fu * (1 - fv) * at(y0, x0 + 1) +
         (1 - fu) * fv * at(y0 + 1, x0) + fu * fv * at(y0 + 1, x0 + 1);
}

// Central sub-window of the accumulation window, so the event band thins to
// a ridge around the edge positions at the cloud's scan time.
AccumulationWindow central_window(const AccumulationWindow& window, double fraction) {
  if (fraction >= 1.0) return window;
  const std::int64_t dur = std::max<std::int64_t>(
      1, static_cast<std::int64_t>(window.duration_us * fraction));
  return {window.t_end_us - (window.duration_us - dur) / 2, dur};
}

std::vector<float> alignment_map(const std::vector<Event>& slice, const SensorGeometry& geom,
                                 const AccumulationWindow& window, const EdgeAlignParams& p) {
  Representation repr;
  switch (p.repr) {
    case ReprKind::EventFrame:
      repr = build_event_frame(slice, geom);
      break;
    case ReprKind::TimeSurface:
      repr = build_time_surface(slice, geom, window);
      break;
    case ReprKind::VoxelGrid: {
      repr = build_voxel_grid(slice, geom, window, p.voxel_bins);
      std::vector<float> flat(static_cast<std::size_t>(repr.height) * repr.width, 0.0f);
      for (int b = 0; b < repr.bins; ++b) {
        for (std::size_t i = 0; i < flat.size(); ++i) {
          flat[i] += repr.data[static_cast<std::size_t>(b) * flat.size() + i];
        }
      }
      for (float& v : flat) v /= static_cast<float>(repr.bins);
      repr.data = std::move(flat);
      repr.bins = 1;
      break;
    }
  }
  // occupancy, not magnitude: band crossings and repeated firings would
  // otherwise outweigh single-edge band interiors and drag points to corners
  for (float& v : repr.data) v = v > 0.0f ? 1.0f : 0.0f;
  return repr.data;
}

// a point with a flagged partner on an adjacent ring at the same azimuth lies
// on a vertical edge; isolated-in-elevation points lie on horizontal edges,
// which are scarce and carry all the vertical alignment information
std::vector<double> edge_point_weights(const std::vector<Eigen::Vector3d>& edges,
                                       double horizontal_boost) {
  const std::size_t n = edges.size();
  std::vector<double> az(n), elev(n), w(n, horizontal_boost);
  for (std::size_t i = 0; i < n; ++i) {
    const double r = edges[i].norm();
    az[i] = std::atan2(edges[i].y(), edges[i].x()) * kRadToDeg;
    elev[i] = std::asin(std::clamp(edges[i].z() / std::max(r, 1e-12), -1.0, 1.0)) * kRadToDeg;
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (std::abs(az[i] - az[j]) < 0.5 && std::abs(elev[i] - elev[j]) < 2.5) {
        w[i] = 1.0;
        w[j] = 1.0;
      }
    }
  }
  return w;
}

struct ScoreContext {
  const std::vector<Eigen::Vector3d>* edges;
  const std::vector<double>* weights;
  const std::vector<float>* map;
  const std::vector<float>* signed_map = nullptr;
  double polarity_weight = 0.0;
  const std::vector<Eigen::Vector2d>* band_px;  // subsampled event-band pixels
  const Intrinsics* K;
  const RigidTransform* hypothesis;
  Eigen::Matrix<double, 6, 1> bound;  // roll,pitch,yaw deg; tx,ty,tz dm
  double prior_weight = 0.0;
  double cov_weight = 0.0;
  double cov_cap_px = 25.0;
};

// x = (roll, pitch, yaw [deg], tx, ty, tz [dm]); returns the negated
// per-edge alignment plus the hypothesis prior
double neg_score(const ScoreContext& ctx, const Eigen::VectorXd& x) {
  double prior = 0.0;
  for (int i = 0; i < 6; ++i) {
    if (std::abs(x[i]) > ctx.bound[i] * 1.2 + 1e-9) return 1e9;
    const double n = x[i] / std::max(ctx.bound[i], 1e-12);
    prior += n * n;
  }
  EulerPose offset;
  offset.roll = x[0];
  offset.pitch = x[1];
  offset.yaw = x[2];
  offset.tx = x[3] / 10.0;
  offset.ty = x[4] / 10.0;
  offset.tz = x[5] / 10.0;
  const RigidTransform T = compose(euler_to_transform(offset), *ctx.hypothesis);

  const Intrinsics& K = *ctx.K;
  double sum = 0.0, wsum = 0.0;
  std::vector<Eigen::Vector2d> proj;
  proj.reserve(ctx.edges->size());
  for (std::size_t i = 0; i < ctx.edges->size(); ++i) {
    const double w = (*ctx.weights)[i];
    wsum += w;
    const Eigen::Vector3d c = T.apply((*ctx.edges)[i]);
    if (c.z() <= kZMin) continue;
    const double u = K.cx + K.fx * c.x() / c.z();
    const double v = K.cy + K.fy * c.y() / c.z();
    proj.emplace_back(u, v);
    double val = bilinear(*ctx.map, K.geom.height, K.geom.width, u, v);
    if (ctx.polarity_weight > 0.0 && ctx.signed_map) {
      // a scan-time edge sits between the band's entering (+) and leaving (-)
      // polarity caps; off-center or foreign bands pay for their imbalance
      val -= ctx.polarity_weight *
             std::abs(bilinear(*ctx.signed_map, K.geom.height, K.geom.width, u, v));
    }
    sum += w * val;
  }
  double total = -sum / std::max(wsum, 1e-12) + ctx.prior_weight * prior;

  // coverage term: event-band pixels left far from every projected point cost
  // up to the cap; stops the point set from sliding along bands it sits on
  if (ctx.cov_weight > 0.0 && ctx.band_px && !ctx.band_px->empty()) {
    if (proj.empty()) return 1e9;
    const double cap2 = ctx.cov_cap_px * ctx.cov_cap_px;
    double cov = 0.0;
    for (const Eigen::Vector2d& e : *ctx.band_px) {
      double d2 = cap2;
      for (const Eigen::Vector2d& q : proj) {
        d2 = std::min(d2, (e - q).squaredNorm());
      }
      cov += std::sqrt(d2);
    }
    total += ctx.cov_weight * cov / (static_cast<double>(ctx.band_px->size()) * ctx.cov_cap_px);
  }
  return total;
}

std::vector<Eigen::VectorXd> simplex_around(const Eigen::VectorXd& x0,
                                            const Eigen::Matrix<double, 6, 1>& step) {
  std::vector<Eigen::VectorXd> simplex{x0};
  for (int i = 0; i < 6; ++i) {
    Eigen::VectorXd v = x0;
    v[i] += step[i];
    simplex.push_back(v);
  }
  return simplex;
}

}  // namespace

double edge_align_score(const PointCloud& cloud, const EventStream& events,
                        const RigidTransform& candidate, const Intrinsics& K,
                        const AccumulationWindow& window, const EdgeAlignParams& params) {
  const std::vector<Eigen::Vector3d> edges = lidar_edge_points(cloud);
  const AccumulationWindow sub = central_window(window, params.slice_fraction);
  const std::vector<Event> slice = synchronize(events, sub.t_end_us, sub.duration_us);
  std::vector<float> map = alignment_map(slice, events.geom, sub, params);
  gaussian_blur(map, K.geom.height, K.geom.width, params.fine_sigma_px);
  saturate_map(map, params.saturation_quantile);

  double sum = 0.0;
  for (const Eigen::Vector3d& p : edges) {
    const Eigen::Vector3d c = candidate.apply(p);
    if (c.z() <= kZMin) continue;
    const double u = K.cx + K.fx * c.x() / c.z();
    const double v = K.cy + K.fy * c.y() / c.z();
    sum += bilinear(map, K.geom.height, K.geom.width, u, v);
  }
  return sum;
}

namespace {

// one coarse-to-fine solve over a fixed search range; returns the surviving
// basin candidates, best first, in optimizer coordinates
// (deg, deg, deg, dm, dm, dm)
std::vector<Eigen::VectorXd> edge_align_solve(const std::vector<Eigen::Vector3d>& edges,
                                              const std::vector<float>& base_map,
                                              const std::vector<float>& signed_base,
                                              const RigidTransform& hypothesis,
                                              const Intrinsics& K,
                                              const DecalibRange& search_range,
                                              const EdgeAlignParams& params) {
  // Drop points whose hypothesis projection is outside the image or close
  // enough to the border that a candidate pose could drag them in: such
  // points only ever gain score by pulling the pose toward the image edge.
  std::vector<Eigen::Vector3d> kept;
  kept.reserve(edges.size());
  for (const Eigen::Vector3d& p : edges) {
    const Eigen::Vector3d c = hypothesis.apply(p);
    if (c.z() <= kZMin) continue;
    const double u = K.cx + K.fx * c.x() / c.z();
    const double v = K.cy + K.fy * c.y() / c.z();
    const double margin = K.fx * std::tan(search_range.max_rot_deg * kDegToRad) +
                          K.fx * search_range.max_trans_m / c.z() + 2.0;
    if (u >= margin && u <= K.geom.width - 1 - margin && v >= margin &&
        v <= K.geom.height - 1 - margin) {
      kept.push_back(p);
    }
  }
  const std::vector<Eigen::Vector3d>& pts = kept.size() >= 6 ? kept : edges;

  ScoreContext ctx;
  ctx.edges = &pts;
  ctx.K = &K;
  ctx.hypothesis = &hypothesis;
  ctx.bound << search_range.max_rot_deg, search_range.max_rot_deg, search_range.max_rot_deg,
      search_range.max_trans_m * 10.0, search_range.max_trans_m * 10.0,
      search_range.max_trans_m * 10.0;
  ctx.prior_weight = params.prior_weight;
  ctx.cov_weight = params.coverage_weight;
  const std::vector<double> weights = edge_point_weights(pts, params.horizontal_edge_boost);
  ctx.weights = &weights;

  // subsampled band pixels for the coverage term
  std::vector<Eigen::Vector2d> band_px;
  if (params.coverage_weight > 0.0) {
    std::vector<Eigen::Vector2d> all;
    for (int y = 0; y < K.geom.height; ++y) {
      for (int x = 0; x < K.geom.width; ++x) {
        if (base_map[static_cast<std::size_t>(y) * K.geom.width + x] > 0.0f) {
          all.emplace_back(x, y);
        }
      }
    }
    const std::size_t stride = std::max<std::size_t>(1, all.size() / 1500);
    for (std::size_t i = 0; i < all.size(); i += stride) band_px.push_back(all[i]);
  }
  ctx.band_px = &band_px;

  // blur ladder: the widest sigma spans the whole search range so the score
  // has long-range gradient, then halve down to the sharp map
  std::vector<double> sigmas;
  const double sigma0 = std::clamp(
      0.5 * K.fx * std::tan(search_range.max_rot_deg * kDegToRad), params.fine_sigma_px, 40.0);
  for (double s = sigma0; s > params.fine_sigma_px * 1.5; s *= 0.5) sigmas.push_back(s);
  sigmas.push_back(params.fine_sigma_px);

  std::vector<float> dt;
  if (params.use_distance_map) {
    dt = chamfer_distance(base_map, K.geom.height, K.geom.width);
  }

  // the coarse map can prefer the wrong valley, so several candidates survive
  // the ladder and the sharpest map adjudicates
  std::vector<Eigen::VectorXd> beams{Eigen::VectorXd::Zero(6)};
  std::vector<float> map;
  for (std::size_t level = 0; level < sigmas.size(); ++level) {
    if (params.use_distance_map) {
      // affinity = 1 at the bands, linear falloff to 0 over the level's reach
      const float cap = static_cast<float>(std::max(2.5 * sigmas[level], 3.0));
      map.resize(dt.size());
      for (std::size_t i = 0; i < dt.size(); ++i) {
        map[i] = 1.0f - std::min(dt[i], cap) / cap;
      }
    } else {
      map = base_map;
      gaussian_blur(map, K.geom.height, K.geom.width, sigmas[level]);
      saturate_map(map, params.saturation_quantile);
    }
    ctx.map = &map;
    std::vector<float> smap;
    if (params.polarity_weight > 0.0 && !signed_base.empty()) {
      smap = signed_base;
      gaussian_blur(smap, K.geom.height, K.geom.width, sigmas[level]);
      ctx.signed_map = &smap;
      ctx.polarity_weight = params.polarity_weight;
    }
    ctx.cov_cap_px = std::max(2.5 * sigmas[level], 20.0);
    auto f = [&ctx](const Eigen::VectorXd& x) { return neg_score(ctx, x); };

    const double scale = std::max(sigmas[level] / sigma0, 0.1);
    Eigen::Matrix<double, 6, 1> step;
    for (int i = 0; i < 6; ++i) step[i] = std::max(0.25 * scale * ctx.bound[i], 1e-4);

    std::vector<std::pair<double, Eigen::VectorXd>> results;
    if (level == 0) {
      // rank a deterministic 5^6 grid on the widest map, then restart
      // Nelder-Mead from the best vertices
      std::vector<std::pair<double, Eigen::VectorXd>> seeds;
      seeds.reserve(15625);
      for (int idx = 0; idx < 15625; ++idx) {
        Eigen::VectorXd x0(6);
        int rem = idx;
        for (int i = 0; i < 6; ++i) {
          x0[i] = ((rem % 5) - 2) * (2.0 / 5.0) * ctx.bound[i];
          rem /= 5;
        }
        seeds.emplace_back(f(x0), x0);
      }
      std::stable_sort(seeds.begin(), seeds.end(),
                       [](const auto& a, const auto& b) { return a.first < b.first; });
      // greedy pick with a minimum spacing, so the restarts cover several
      // valleys instead of crowding the blurred map's dominant one
      std::vector<Eigen::VectorXd> picks;
      for (const auto& [v, x0] : seeds) {
        bool close = false;
        for (const Eigen::VectorXd& p : picks) {
          if ((x0 - p).cwiseQuotient(ctx.bound).norm() < 0.45) close = true;
        }
        if (close) continue;
        picks.push_back(x0);
        if (static_cast<int>(picks.size()) >= params.restarts) break;
      }
      for (const Eigen::VectorXd& x0 : picks) {
        const NelderMeadResult res = nelder_mead(f, simplex_around(x0, step), params.nm);
        results.emplace_back(res.value, res.x);
      }
    } else {
      for (const Eigen::VectorXd& b : beams) {
        const NelderMeadResult res = nelder_mead(f, simplex_around(b, step), params.nm);
        results.emplace_back(res.value, res.x);
      }
    }
    std::stable_sort(results.begin(), results.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    beams.clear();
    for (const auto& [v, x] : results) {
      // drop near-duplicates so beams track distinct valleys
      bool dup = false;
      for (const Eigen::VectorXd& b : beams) {
        if ((x - b).cwiseQuotient(ctx.bound).norm() < 0.05) dup = true;
      }
      if (!dup) beams.push_back(x);
      if (static_cast<int>(beams.size()) >= params.beam_width) break;
    }
  }
  return beams;
}

EulerPose offset_from_x(const Eigen::VectorXd& x) {
  EulerPose out;
  out.roll = x[0];
  out.pitch = x[1];
  out.yaw = x[2];
  out.tx = x[3] / 10.0;
  out.ty = x[4] / 10.0;
  out.tz = x[5] / 10.0;
  return out;
}

Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

// Distinct event pixels in a bucket grid for radius queries. Each pixel is
// weighted by a triangular kernel in time centered on the scan time, so the
// weighted local centroid is an unbiased estimate of the scan-time edge
// position even when the event times are quantized asymmetrically.
struct BandPixels {
  std::vector<Eigen::Vector2d> px;
  std::vector<double> wt;
  int width = 0, height = 0, cell = 8;
  std::vector<std::vector<int>> buckets;

  void build(const std::vector<Event>& slice, const SensorGeometry& geom,
             const AccumulationWindow& window) {
    width = geom.width;
    height = geom.height;
    const double t_mid = static_cast<double>(window.t_end_us) - 0.5 * window.duration_us;
    const double half = 0.25 * window.duration_us;
    std::vector<float> weight(static_cast<std::size_t>(height) * width, 0.0f);
    for (const Event& e : slice) {
      const double w = 1.0 - std::abs(static_cast<double>(e.t_us) - t_mid) / half;
      if (w <= 0.0) continue;
      auto& c = weight[static_cast<std::size_t>(e.y) * width + e.x];
      c = std::max(c, static_cast<float>(w));
    }
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        const float w = weight[static_cast<std::size_t>(y) * width + x];
        if (w > 0.0f) {
          px.emplace_back(x, y);
          wt.push_back(w);
        }
      }
    }
    const int bw = (width + cell - 1) / cell, bh = (height + cell - 1) / cell;
    buckets.assign(static_cast<std::size_t>(bw) * bh, {});
    for (int i = 0; i < static_cast<int>(px.size()); ++i) {
      buckets[static_cast<std::size_t>(int(px[i].y()) / cell) * bw + int(px[i].x()) / cell]
          .push_back(i);
    }
  }

  template <typename F>
  void for_neighbors(const Eigen::Vector2d& q, double radius, F&& fn) const {
    const int bw = (width + cell - 1) / cell;
    const int bx0 = std::max(0, int((q.x() - radius)) / cell);
    const int bx1 = std::min(bw - 1, int((q.x() + radius)) / cell);
    const int by0 = std::max(0, int((q.y() - radius)) / cell);
    const int by1 = std::min((height + cell - 1) / cell - 1, int((q.y() + radius)) / cell);
    const double r2 = radius * radius;
    for (int by = by0; by <= by1; ++by) {
      for (int bx = bx0; bx <= bx1; ++bx) {
        for (int j : buckets[static_cast<std::size_t>(by) * bw + bx]) {
          if ((px[j] - q).squaredNorm() <= r2) fn(j);
        }
      }
    }
  }

  // Local centroid + band normal (PCA minor axis) over pixels within radius.
  // The thin slice holds a few discrete substep lines; their centroid sits on
  // the scan-time centerline, which a nearest-pixel match would miss.
  bool local_line(const Eigen::Vector2d& q, double radius, Eigen::Vector2d* mean,
                  Eigen::Vector2d* normal, double* anisotropy) const {
    Eigen::Vector2d m = Eigen::Vector2d::Zero();
    Eigen::Matrix2d c2 = Eigen::Matrix2d::Zero();
    double wsum = 0.0;
    int n = 0;
    for_neighbors(q, radius, [&](int j) {
      m += wt[j] * px[j];
      c2 += wt[j] * px[j] * px[j].transpose();
      wsum += wt[j];
      ++n;
    });
    if (n < 3 || wsum <= 1e-9) return false;
    m /= wsum;
    const Eigen::Matrix2d cov = c2 / wsum - m * m.transpose();
    const Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(cov);
    *mean = m;
    *normal = eig.eigenvectors().col(0);
    const double l0 = eig.eigenvalues()[0], l1 = eig.eigenvalues()[1];
    *anisotropy = l1 > 1e-12 ? (l1 - l0) / (l1 + l0) : 0.0;
    return true;
  }
};

// Point-to-line Gauss-Newton refinement: each projected edge point is matched
// to the nearest event pixel of the thin slice and pulled along the local
// band normal (full 2-D pull at corners), with a Huber loss. The simplex
// search circles this least-squares optimum but cannot settle into it, since
// its narrow valley directions are far thinner than the search steps.
RigidTransform icp_polish(const std::vector<Eigen::Vector3d>& edges,
                          const std::vector<double>& weights, const BandPixels& band,
                          const RigidTransform& hypothesis, const Intrinsics& K,
                          const EdgeAlignParams& params) {
  RigidTransform offset;  // left-applied to the hypothesis camera points
  const double huber = 0.75;
  for (int iter = 0; iter < params.icp_iterations; ++iter) {
    // coarse-to-fine association radius: wide for capture, narrow so late
    // iterations stop averaging neighboring bands into the centroid
    const double frac = params.icp_iterations > 1
                            ? static_cast<double>(iter) / (params.icp_iterations - 1)
                            : 1.0;
    const double radius = params.icp_radius_px * (1.5 - 0.9 * frac);
    Eigen::Matrix<double, 6, 6> H = Eigen::Matrix<double, 6, 6>::Zero();
    Eigen::Matrix<double, 6, 1> g = Eigen::Matrix<double, 6, 1>::Zero();
    int matched = 0;
    for (std::size_t i = 0; i < edges.size(); ++i) {
      const Eigen::Vector3d c = offset.apply(hypothesis.apply(edges[i]));
      if (c.z() <= kZMin) continue;
      const double u = K.cx + K.fx * c.x() / c.z();
      const double v = K.cy + K.fy * c.y() / c.z();
      Eigen::Vector2d mean, normal;
      double aniso = 0.0;
      if (!band.local_line({u, v}, radius, &mean, &normal, &aniso)) continue;
      if ((Eigen::Vector2d(u, v) - mean).norm() > 0.7 * radius) continue;
      ++matched;
      Eigen::Matrix<double, 2, 3> Juv;
      Juv << K.fx / c.z(), 0.0, -K.fx * c.x() / (c.z() * c.z()),
          0.0, K.fy / c.z(), -K.fy * c.y() / (c.z() * c.z());
      Eigen::Matrix<double, 3, 6> Jc;
      Jc.leftCols<3>() = -skew(c);
      Jc.rightCols<3>() = Eigen::Matrix3d::Identity();
      const Eigen::Matrix<double, 2, 6> J2 = Juv * Jc;
      const Eigen::Vector2d r2 = Eigen::Vector2d(u, v) - mean;
      // clean band: constrain only across it; corner: constrain both axes
      const bool line = aniso > 0.5;
      for (int k = 0; k < (line ? 1 : 2); ++k) {
        Eigen::Matrix<double, 1, 6> J;
        double r;
        if (line) {
          J = normal.transpose() * J2;
          r = normal.dot(r2);
        } else {
          J = J2.row(k);
          r = r2[k];
        }
        const double w = weights[i] * (std::abs(r) <= huber ? 1.0 : huber / std::abs(r));
        H += w * J.transpose() * J;
        g += w * J.transpose() * r;
      }
    }
    if (matched < 10) break;
    // absolute prior anchoring the total offset at the hypothesis: axes the
    // few matched edges do not constrain would otherwise run off along the
    // near-null directions of H
    const double sig_rot = params.icp_prior_rot_rad, sig_t = params.icp_prior_trans_m;
    Eigen::Matrix<double, 6, 1> prior;
    prior << 1 / (sig_rot * sig_rot), 1 / (sig_rot * sig_rot), 1 / (sig_rot * sig_rot),
        1 / (sig_t * sig_t), 1 / (sig_t * sig_t), 1 / (sig_t * sig_t);
    Eigen::Matrix<double, 6, 1> x_tot;
    const Eigen::AngleAxisd aa(offset.R);
    x_tot.head<3>() = aa.angle() * aa.axis();
    x_tot.tail<3>() = offset.t;
    H.diagonal() += prior;
    g += prior.asDiagonal() * x_tot;
    H.diagonal() += 1e-3 * H.diagonal().cwiseAbs();
    const Eigen::Matrix<double, 6, 1> dx = H.ldlt().solve(-g);
    if (!dx.allFinite()) break;
    const Eigen::Vector3d w = dx.head<3>();
    const double angle = w.norm();
    RigidTransform step;
    if (angle > 1e-14) step.R = Eigen::AngleAxisd(angle, w / angle).toRotationMatrix();
    step.t = dx.tail<3>();
    offset = compose(step, offset);
    if (angle < 1e-7 && step.t.norm() < 1e-7) break;
  }
  return offset;
}

}  // namespace

EulerPose edge_align_predict(const PointCloud& cloud, const EventStream& events,
                             const RigidTransform& hypothesis, const Intrinsics& K,
                             const AccumulationWindow& window,
                             const DecalibRange& search_range, const EdgeAlignParams& params) {
  const std::vector<Eigen::Vector3d> edges = lidar_edge_points(cloud);
  if (edges.size() < 20) {
    throw NoLidarEdgesError("edge_align: fewer than 20 LiDAR depth-discontinuity points");
  }

  // full-window map for the global capture pass; thin central slice for the
  // refinement passes, whose narrow ridges pin the estimate at the scan time
  const std::vector<Event> full_slice = synchronize(events, window.t_end_us, window.duration_us);
  const std::vector<float> full_map = alignment_map(full_slice, events.geom, window, params);
  const AccumulationWindow sub = central_window(window, params.slice_fraction);
  const std::vector<Event> thin_slice = synchronize(events, sub.t_end_us, sub.duration_us);
  const std::vector<float> thin_map = alignment_map(thin_slice, events.geom, sub, params);

  std::vector<float> signed_base;
  if (params.polarity_weight > 0.0) {
    signed_base.assign(full_map.size(), 0.0f);
    for (const Event& e : full_slice) {
      signed_base[static_cast<std::size_t>(e.y) * events.geom.width + e.x] +=
          static_cast<float>(e.polarity);
    }
    for (float& v : signed_base) v = std::clamp(v, -1.0f, 1.0f);
  }

  BandPixels band;
  band.build(full_slice, events.geom, window);

  // sharp scan-time map that adjudicates the finished candidates
  std::vector<float> judge_map = thin_map;
  gaussian_blur(judge_map, K.geom.height, K.geom.width, params.fine_sigma_px);
  saturate_map(judge_map, params.saturation_quantile);
  const std::vector<double> judge_weights = edge_point_weights(edges, params.horizontal_edge_boost);
  const auto judge = [&](const RigidTransform& pose) {
    double sum = 0.0;
    for (std::size_t i = 0; i < edges.size(); ++i) {
      const Eigen::Vector3d c = pose.apply(edges[i]);
      if (c.z() <= 0.1) continue;
      const double u = K.cx + K.fx * c.x() / c.z();
      const double v = K.cy + K.fy * c.y() / c.z();
      sum += judge_weights[i] * bilinear(judge_map, K.geom.height, K.geom.width, u, v);
    }
    return sum;
  };

  // recenter on a candidate and re-solve with the range shrunk so the
  // sharp-map basin around it is searched densely, then polish against the
  // band pixels
  const auto finish = [&](const EulerPose& start) {
    RigidTransform current = compose(euler_to_transform(start), hypothesis);
    DecalibRange range = search_range;
    EdgeAlignParams pass_params = params;
    pass_params.fine_sigma_px = params.refine_sigma_px;
    pass_params.polarity_weight = 0.0;
    EulerPose total = start;
    for (int pass = 0; pass < params.refine_passes; ++pass) {
      range.max_rot_deg *= params.refine_shrink;
      range.max_trans_m *= params.refine_shrink;
      // the prior guards the wide global pass; relax it as the range tightens
      pass_params.prior_weight *= params.refine_shrink;
      const std::vector<Eigen::VectorXd> xs =
          edge_align_solve(edges, thin_map, signed_base, current, K, range, pass_params);
      const EulerPose offset = offset_from_x(xs.front());
      current = compose(euler_to_transform(offset), current);
      total = transform_to_euler(compose(euler_to_transform(offset), euler_to_transform(total)));
    }

    if (params.icp_iterations > 0) {
      // each round re-anchors the damped solve at the pose the previous one
      // reached, so the polish can travel further than one prior length
      for (int round = 0; round < params.icp_rounds; ++round) {
        std::vector<Eigen::Vector3d> kept;
        for (const Eigen::Vector3d& p : edges) {
          const Eigen::Vector3d c = current.apply(p);
          if (c.z() <= 0.1) continue;
          const double u = K.cx + K.fx * c.x() / c.z();
          const double v = K.cy + K.fy * c.y() / c.z();
          if (u >= 6.0 && u <= K.geom.width - 7.0 && v >= 6.0 && v <= K.geom.height - 7.0) {
            kept.push_back(p);
          }
        }
        if (kept.size() < 10) break;
        const std::vector<double> weights =
            edge_point_weights(kept, params.horizontal_edge_boost);
        const RigidTransform offset = icp_polish(kept, weights, band, current, K, params);
        const CalibError move = calib_error(compose(offset, current), current);
        // a polish should stay inside the basin the search settled in
        if (move.rot_norm_deg > 0.6 * search_range.max_rot_deg ||
            move.trans_norm_cm > 0.6 * search_range.max_trans_m * 100.0) {
          break;
        }
        current = compose(offset, current);
        total = transform_to_euler(compose(offset, euler_to_transform(total)));
        if (move.rot_norm_deg < 0.005 && move.trans_norm_cm < 0.05) break;
      }
    }
    return std::make_pair(total, judge(current));
  };

  // the global pass can settle on a clutter valley whose advantage does not
  // survive polishing, so every surviving candidate is finished independently
  const std::vector<Eigen::VectorXd> beams =
      edge_align_solve(edges, full_map, signed_base, hypothesis, K, search_range, params);
  EulerPose best;
  double best_score = -std::numeric_limits<double>::infinity();
  for (const Eigen::VectorXd& x : beams) {
    const auto [total, score] = finish(offset_from_x(x));
    if (score > best_score) {
      best_score = score;
      best = total;
    }
  }
  return best;
}

CascadeResult cascade_calibrate(const PointCloud& cloud, const EventStream& events,
                                const RigidTransform& initial_hypothesis,
                                const std::vector<CascadeStage>& stages, const Intrinsics& K,
                                const AccumulationWindow& window, const RigidTransform* gt) {
  for (std::size_t i = 1; i < stages.size(); ++i) {
    if (stages[i].range.max_rot_deg >= stages[i - 1].range.max_rot_deg ||
        stages[i].range.max_trans_m >= stages[i - 1].range.max_trans_m) {
      throw std::invalid_argument("cascade stages must have strictly decreasing ranges");
    }
  }

  CascadeResult result;
  result.estimate = initial_hypothesis;
  for (std::size_t s = 0; s < stages.size(); ++s) {
    for (int it = 0; it < std::max(1, stages[s].iterations); ++it) {
      const EulerPose correction =
          stages[s].predictor->predict(cloud, events, result.estimate, K, window);
      result.estimate = compose(euler_to_transform(correction), result.estimate);

      CascadeTraceEntry entry;
      entry.stage = static_cast<int>(s);
      entry.correction = correction;
      if (gt) entry.error = calib_error(result.estimate, *gt);
      result.trace.push_back(entry);
    }
  }
  return result;
}

}  // namespace evlcal
