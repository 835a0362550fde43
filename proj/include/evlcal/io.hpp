#pragma once

#include <filesystem>
#include <string>

#include "evlcal/event_repr.hpp"
#include "evlcal/geometry.hpp"
#include "evlcal/lidar_cam.hpp"
#include "evlcal/model.hpp"

namespace evlcal {

// Event file "EVL1": 16-byte header (magic "EVL1", W u32, H u32, u32
// reserved), then little-endian 16-byte records (t_us u64, x u16, y u16,
// polarity i8, 3 pad bytes). Count implied by file length.
void write_events_bin(const std::filesystem::path& path, const EventStream& stream);
EventStream read_events_bin(const std::filesystem::path& path);

// CSV fallback: header "t_us,x,y,polarity" then one event per line.
void write_events_csv(const std::filesystem::path& path, const EventStream& stream);
EventStream read_events_csv(const std::filesystem::path& path, const SensorGeometry& geom);

// Point cloud CSV: first line "# EVL-PC v1 scan_t_us=<u64>", then
// "x,y,z,intensity,t_us" rows.
void write_cloud_csv(const std::filesystem::path& path, const PointCloud& cloud);
PointCloud read_cloud_csv(const std::filesystem::path& path);

// {"translation_m":[tx,ty,tz],"rotation_deg":[roll,pitch,yaw]}
void write_calib_json(const std::filesystem::path& path, const EulerPose& pose);
EulerPose read_calib_json(const std::filesystem::path& path);

void write_calib_json(const std::filesystem::path& path, const RigidTransform& T);
RigidTransform read_calib_transform(const std::filesystem::path& path);

// {"fx":..,"fy":..,"cx":..,"cy":..,"width":..,"height":..}
void write_intrinsics_json(const std::filesystem::path& path, const Intrinsics& K);
Intrinsics read_intrinsics_json(const std::filesystem::path& path);

// Checkpoint "EVLM": magic, version u32, tensor count u32, per-tensor
// element count u32, then all parameters as little-endian f32 in tensor
// order.
void write_checkpoint(const std::filesystem::path& path, const PredictorModel& model);
PredictorModel read_checkpoint(const std::filesystem::path& path);

// Dense grid "EVG1": magic, kind u32 (0 frame, 1 voxel, 2 surface,
// 100 depth image), bins/height/width u32, then f32 data.
void write_grid(const std::filesystem::path& path, const Representation& repr);
void write_grid(const std::filesystem::path& path, const DepthImage& depth);
Representation read_grid(const std::filesystem::path& path);

}  // namespace evlcal
