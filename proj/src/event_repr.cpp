#include "evlcal/event_repr.hpp"

#include <algorithm>
#include <cmath>

#include "evlcal/errors.hpp"

namespace evlcal {

namespace {

void check_bounds(const std::vector<Event>& slice, const SensorGeometry& geom) {
  for (const Event& e : slice) {
    if (static_cast<int>(e.x) >= geom.width || static_cast<int>(e.y) >= geom.height) {
      throw OutOfBoundsError("event outside sensor bounds");
    }
  }
}

void check_sorted(const std::vector<Event>& events) {
  for (std::size_t i = 1; i < events.size(); ++i) {
    if (events[i].t_us < events[i - 1].t_us) {
      throw UnsortedStreamError("event stream not sorted by t_us");
    }
  }
}

Representation make_grid(ReprKind kind, int bins, const SensorGeometry& geom) {
  Representation r;
  r.kind = kind;
  r.bins = bins;
  r.height = geom.height;
  r.width = geom.width;
  r.data.assign(static_cast<std::size_t>(bins) * geom.height * geom.width, 0.0f);
  return r;
}

}  // namespace

std::vector<Event> synchronize(const EventStream& events, std::int64_t lidar_scan_t_us,
                               std::int64_t duration_us) {
  check_sorted(events.events);
  const std::int64_t lo = lidar_scan_t_us - duration_us;  // exclusive
  const std::int64_t hi = lidar_scan_t_us;                // inclusive
  auto first = std::upper_bound(events.events.begin(), events.events.end(), lo,
                                [](std::int64_t t, const Event& e) { return t < e.t_us; });
  auto last = std::upper_bound(events.events.begin(), events.events.end(), hi,
                               [](std::int64_t t, const Event& e) { return t < e.t_us; });
  return {first, last};
}

void normalize_by_percentile(std::vector<float>& data) {
  std::vector<float> positive;
  positive.reserve(data.size() / 8);
  for (float v : data) {
    if (v > 0.0f) positive.push_back(v);
  }
  if (positive.empty()) return;
  std::sort(positive.begin(), positive.end());
  const std::size_t idx =
      static_cast<std::size_t>(std::floor(0.99 * static_cast<double>(positive.size() - 1)));
  const float q = positive[idx];
  for (float& v : data) {
    v = std::min(v / q, 1.0f);
  }
}

Representation event_frame_counts(const std::vector<Event>& slice, const SensorGeometry& geom) {
  check_bounds(slice, geom);
  Representation r = make_grid(ReprKind::EventFrame, 1, geom);
  for (const Event& e : slice) {
    r.at(0, e.y, e.x) += 1.0f;
  }
  return r;
}

Representation build_event_frame(const std::vector<Event>& slice, const SensorGeometry& geom) {
  Representation r = event_frame_counts(slice, geom);
  normalize_by_percentile(r.data);
  return r;
}

Representation voxel_grid_counts(const std::vector<Event>& slice, const SensorGeometry& geom,
                                 const AccumulationWindow& window, int bins) {
  if (bins < 1) throw std::invalid_argument("voxel grid needs bins >= 1");
  check_bounds(slice, geom);
  Representation r = make_grid(ReprKind::VoxelGrid, bins, geom);
  const std::int64_t start = window.t_start_us();
  const double duration = static_cast<double>(window.duration_us);
  for (const Event& e : slice) {
    // half-open bins [start + k*dur/B, start + (k+1)*dur/B); the window-end
    // event clamps into the last bin
    int b = static_cast<int>(std::floor(static_cast<double>(e.t_us - start) / duration *
                                        static_cast<double>(bins)));
    b = std::clamp(b, 0, bins - 1);
    r.at(b, e.y, e.x) += 1.0f;
  }
  return r;
}

Representation build_voxel_grid(const std::vector<Event>& slice, const SensorGeometry& geom,
                                const AccumulationWindow& window, int bins) {
  Representation r = voxel_grid_counts(slice, geom, window, bins);
  normalize_by_percentile(r.data);
  return r;
}

Representation build_time_surface(const std::vector<Event>& slice, const SensorGeometry& geom,
                                  const AccumulationWindow& window) {
  check_sorted(slice);
  check_bounds(slice, geom);
  Representation r = make_grid(ReprKind::TimeSurface, 1, geom);
  const std::int64_t start = window.t_start_us();
  const double duration = static_cast<double>(window.duration_us);
  for (const Event& e : slice) {
    // slice is sorted, so later events overwrite earlier ones
    r.at(0, e.y, e.x) = static_cast<float>(static_cast<double>(e.t_us - start) / duration);
  }
  return r;
}

}  // namespace evlcal
