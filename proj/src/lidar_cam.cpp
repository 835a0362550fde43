#include "evlcal/lidar_cam.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace evlcal {

ProjectionResult project_points(const PointCloud& cloud, const RigidTransform& extrinsic,
                                const Intrinsics& K, double z_min) {
  ProjectionResult out;
  out.points.reserve(cloud.points.size());
  for (const LidarPoint& p : cloud.points) {
    const Eigen::Vector3d c = extrinsic.apply(p.position());
    if (c.z() <= z_min) {
      ++out.culled;
      continue;
    }
    const double u = K.cx + K.fx * c.x() / c.z();
    const double v = K.cy + K.fy * c.y() / c.z();
    if (u < 0.0 || u >= K.geom.width || v < 0.0 || v >= K.geom.height) {
      ++out.culled;
      continue;
    }
    out.points.push_back({u, v, c.z()});
  }
  return out;
}

DepthImage render_depth_image(const std::vector<ProjectedPoint>& projected, const Intrinsics& K,
                              double max_depth_m) {
  (void)max_depth_m;
  DepthImage img;
  img.height = K.geom.height;
  img.width = K.geom.width;
  img.data.assign(static_cast<std::size_t>(img.height) * img.width, 0.0f);

  std::vector<double> zbuf(img.data.size(), std::numeric_limits<double>::infinity());
  for (const ProjectedPoint& p : projected) {
    const int px = std::clamp(static_cast<int>(std::lround(p.u)), 0, img.width - 1);
    const int py = std::clamp(static_cast<int>(std::lround(p.v)), 0, img.height - 1);
    const std::size_t idx = static_cast<std::size_t>(py) * img.width + px;
    if (p.depth < zbuf[idx]) {  // strict: first wins on equal depth
      zbuf[idx] = p.depth;
      img.data[idx] = static_cast<float>(std::clamp(kZMin / p.depth, 0.0, 1.0));
    }
  }
  return img;
}

Eigen::MatrixXf area_downsample(const float* data, int in_h, int in_w, int out_h, int out_w) {
  Eigen::MatrixXf out(out_h, out_w);
  const double sy = static_cast<double>(in_h) / out_h;
  const double sx = static_cast<double>(in_w) / out_w;
  for (int oy = 0; oy < out_h; ++oy) {
    const double y0 = oy * sy, y1 = (oy + 1) * sy;
    for (int ox = 0; ox < out_w; ++ox) {
      const double x0 = ox * sx, x1 = (ox + 1) * sx;
      double sum = 0.0;
      for (int iy = static_cast<int>(std::floor(y0)); iy < std::ceil(y1); ++iy) {
        const double wy = std::min(y1, iy + 1.0) - std::max(y0, static_cast<double>(iy));
        if (wy <= 0.0) continue;
        for (int ix = static_cast<int>(std::floor(x0)); ix < std::ceil(x1); ++ix) {
          const double wx = std::min(x1, ix + 1.0) - std::max(x0, static_cast<double>(ix));
          if (wx <= 0.0) continue;
          sum += wy * wx * static_cast<double>(data[iy * in_w + ix]);
        }
      }
      out(oy, ox) = static_cast<float>(sum / (sy * sx));
    }
  }
  return out;
}

namespace {

// collapse a (possibly multi-bin) representation into one H x W channel
std::vector<float> collapse_bins(const Representation& r) {
  if (r.bins == 1) return r.data;
  std::vector<float> flat(static_cast<std::size_t>(r.height) * r.width, 0.0f);
  for (int b = 0; b < r.bins; ++b) {
    for (int y = 0; y < r.height; ++y) {
      for (int x = 0; x < r.width; ++x) {
        flat[static_cast<std::size_t>(y) * r.width + x] += r.at(b, y, x);
      }
    }
  }
  const float inv = 1.0f / static_cast<float>(r.bins);
  for (float& v : flat) v *= inv;
  return flat;
}

}  // namespace

CalibInput make_calib_input(const PointCloud& cloud, const EventStream& events,
                            const RigidTransform& hypothesis, const Intrinsics& K,
                            const AccumulationWindow& window, ReprKind repr_kind,
                            int voxel_bins) {
  const std::vector<Event> slice = synchronize(events, window.t_end_us, window.duration_us);

  Representation repr;
  switch (repr_kind) {
    case ReprKind::EventFrame:
      repr = build_event_frame(slice, events.geom);
      break;
    case ReprKind::VoxelGrid:
      repr = build_voxel_grid(slice, events.geom, window, voxel_bins);
      break;
    case ReprKind::TimeSurface:
      repr = build_time_surface(slice, events.geom, window);
      break;
  }
  const std::vector<float> event_flat = collapse_bins(repr);

  const ProjectionResult proj = project_points(cloud, hypothesis, K);
  const DepthImage depth = render_depth_image(proj.points, K);

  CalibInput input;
  input.event_channel =
      area_downsample(event_flat.data(), repr.height, repr.width, CalibInput::kSize,
                      CalibInput::kSize);
  input.depth_channel = area_downsample(depth.data.data(), depth.height, depth.width,
                                        CalibInput::kSize, CalibInput::kSize);
  return input;
}

}  // namespace evlcal
