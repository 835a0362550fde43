#pragma once

#include <cstdint>
#include <vector>

namespace evlcal {

struct Event {
  std::int64_t t_us = 0;
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  std::int8_t polarity = 1;  // +1 or -1
};

struct SensorGeometry {
  int width = 640;
  int height = 480;
};

struct EventStream {
  SensorGeometry geom;
  std::vector<Event> events;  // sorted by t_us
};

// Accumulation window ending at a LiDAR scan timestamp; covers
// (t_end_us - duration_us, t_end_us].
struct AccumulationWindow {
  std::int64_t t_end_us = 0;
  std::int64_t duration_us = 50000;

  std::int64_t t_start_us() const { return t_end_us - duration_us; }
};

enum class ReprKind { EventFrame, VoxelGrid, TimeSurface };

// Dense event representation. data is bin-major (bins * height * width),
// bins == 1 except for voxel grids. Values normalized to [0, 1].
struct Representation {
  ReprKind kind = ReprKind::EventFrame;
  int bins = 1;
  int height = 0;
  int width = 0;
  std::vector<float> data;

  float& at(int b, int y, int x) { return data[(b * height + y) * width + x]; }
  float at(int b, int y, int x) const { return data[(b * height + y) * width + x]; }
};

// Events with t in (lidar_scan_t_us - duration_us, lidar_scan_t_us].
// Throws UnsortedStreamError if the stream is not sorted by t_us.
std::vector<Event> synchronize(const EventStream& events, std::int64_t lidar_scan_t_us,
                               std::int64_t duration_us);

// Per-pixel event count ignoring polarity, normalized by the 99th-percentile
// positive count and clipped to 1. Empty slice gives an all-zero grid.
Representation build_event_frame(const std::vector<Event>& slice, const SensorGeometry& geom);

// Unnormalized per-pixel counts (exact integers stored as float).
Representation event_frame_counts(const std::vector<Event>& slice, const SensorGeometry& geom);

// B equal temporal bins over the window, hard assignment, polarity ignored,
// then the same percentile normalization applied over the whole grid.
Representation build_voxel_grid(const std::vector<Event>& slice, const SensorGeometry& geom,
                                const AccumulationWindow& window, int bins);

Representation voxel_grid_counts(const std::vector<Event>& slice, const SensorGeometry& geom,
                                 const AccumulationWindow& window, int bins);

// Per pixel: (t_last - t_start) / duration for the most recent event, 0 if
// none. Polarity ignored.
Representation build_time_surface(const std::vector<Event>& slice, const SensorGeometry& geom,
                                  const AccumulationWindow& window);

// Normalize in place by the 99th-percentile positive value, clip to [0, 1].
// All-zero data stays all-zero.
void normalize_by_percentile(std::vector<float>& data);

}  // namespace evlcal
