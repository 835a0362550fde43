#include "evlcal/io.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "evlcal/errors.hpp"

namespace evlcal {

namespace {

// formats are little-endian; this code targets little-endian hosts
static_assert(std::endian::native == std::endian::little);

std::ofstream open_out(const std::filesystem::path& path, bool binary) {
  std::ofstream f(path, binary ? std::ios::binary : std::ios::out);
  if (!f) throw IoError("cannot open for writing: " + path.string());
  return f;
}

std::ifstream open_in(const std::filesystem::path& path, bool binary) {
  std::ifstream f(path, binary ? std::ios::binary : std::ios::in);
  if (!f) throw IoError("cannot open for reading: " + path.string());
  return f;
}

template <typename T>
void put(std::ofstream& f, T v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& f) {
  T v{};
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!f) throw IoError("unexpected end of file");
  return v;
}

nlohmann::ordered_json load_json(const std::filesystem::path& path) {
  std::ifstream f = open_in(path, false);
  nlohmann::ordered_json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad JSON in " + path.string() + ": " + e.what());
  }
  return j;
}

}  // namespace

void write_events_bin(const std::filesystem::path& path, const EventStream& stream) {
  std::ofstream f = open_out(path, true);
  f.write("EVL1", 4);
  put<std::uint32_t>(f, static_cast<std::uint32_t>(stream.geom.width));
  put<std::uint32_t>(f, static_cast<std::uint32_t>(stream.geom.height));
  put<std::uint32_t>(f, 0);  // reserved
  for (const Event& e : stream.events) {
    put<std::uint64_t>(f, static_cast<std::uint64_t>(e.t_us));
    put<std::uint16_t>(f, e.x);
    put<std::uint16_t>(f, e.y);
    put<std::int8_t>(f, e.polarity);
    const char pad[3] = {0, 0, 0};
    f.write(pad, 3);
  }
  if (!f) throw IoError("write failed: " + path.string());
}

EventStream read_events_bin(const std::filesystem::path& path) {
  std::ifstream f = open_in(path, true);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "EVL1", 4) != 0) {
    throw IoError("bad event file magic: " + path.string());
  }
  EventStream stream;
  stream.geom.width = static_cast<int>(get<std::uint32_t>(f));
  stream.geom.height = static_cast<int>(get<std::uint32_t>(f));
  get<std::uint32_t>(f);  // reserved
  while (true) {
    std::uint64_t t;
    if (!f.read(reinterpret_cast<char*>(&t), sizeof(t))) break;
    Event e;
    e.t_us = static_cast<std::int64_t>(t);
    e.x = get<std::uint16_t>(f);
    e.y = get<std::uint16_t>(f);
    e.polarity = get<std::int8_t>(f);
    char pad[3];
    f.read(pad, 3);
    stream.events.push_back(e);
  }
  return stream;
}

void write_events_csv(const std::filesystem::path& path, const EventStream& stream) {
  std::ofstream f = open_out(path, false);
  f << "t_us,x,y,polarity\n";
  for (const Event& e : stream.events) {
    f << e.t_us << ',' << e.x << ',' << e.y << ',' << static_cast<int>(e.polarity) << '\n';
  }
}

EventStream read_events_csv(const std::filesystem::path& path, const SensorGeometry& geom) {
  std::ifstream f = open_in(path, false);
  EventStream stream;
  stream.geom = geom;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty() || line.rfind("t_us", 0) == 0 || line[0] == '#') continue;
    Event e;
    long long t;
    int x, y, pol;
    if (std::sscanf(line.c_str(), "%lld,%d,%d,%d", &t, &x, &y, &pol) != 4) {
      throw IoError("bad event CSV line in " + path.string() + ": " + line);
    }
    e.t_us = t;
    e.x = static_cast<std::uint16_t>(x);
    e.y = static_cast<std::uint16_t>(y);
    e.polarity = static_cast<std::int8_t>(pol);
    stream.events.push_back(e);
  }
  return stream;
}

void write_cloud_csv(const std::filesystem::path& path, const PointCloud& cloud) {
  std::ofstream f = open_out(path, false);
  f << "# EVL-PC v1 scan_t_us=" << cloud.scan_t_us << '\n';
  f.precision(17);
  for (const LidarPoint& p : cloud.points) {
    f << p.x << ',' << p.y << ',' << p.z << ',' << p.intensity << ',' << p.t_us << '\n';
  }
}

PointCloud read_cloud_csv(const std::filesystem::path& path) {
  std::ifstream f = open_in(path, false);
  PointCloud cloud;
  std::string line;
  bool have_header = false;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      const std::string key = "scan_t_us=";
      const auto pos = line.find(key);
      if (pos != std::string::npos) {
        cloud.scan_t_us = std::stoll(line.substr(pos + key.size()));
        have_header = true;
      }
      continue;
    }
    if (line.rfind("x,", 0) == 0) continue;
    LidarPoint p;
    long long t;
    if (std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf,%lld", &p.x, &p.y, &p.z, &p.intensity, &t) !=
        5) {
      throw IoError("bad cloud CSV line in " + path.string() + ": " + line);
    }
    p.t_us = t;
    cloud.points.push_back(p);
  }
  if (!have_header) throw IoError("missing '# EVL-PC v1' header in " + path.string());
  return cloud;
}

void write_calib_json(const std::filesystem::path& path, const EulerPose& pose) {
  nlohmann::ordered_json j;
  j["translation_m"] = {pose.tx, pose.ty, pose.tz};
  j["rotation_deg"] = {pose.roll, pose.pitch, pose.yaw};
  std::ofstream f = open_out(path, false);
  f << j.dump(2) << '\n';
}

EulerPose read_calib_json(const std::filesystem::path& path) {
  const auto j = load_json(path);
  EulerPose p;
  p.tx = j.at("translation_m").at(0);
  p.ty = j.at("translation_m").at(1);
  p.tz = j.at("translation_m").at(2);
  p.roll = j.at("rotation_deg").at(0);
  p.pitch = j.at("rotation_deg").at(1);
  p.yaw = j.at("rotation_deg").at(2);
  return p;
}

void write_calib_json(const std::filesystem::path& path, const RigidTransform& T) {
  write_calib_json(path, transform_to_euler(T));
}

RigidTransform read_calib_transform(const std::filesystem::path& path) {
  return euler_to_transform(read_calib_json(path));
}

void write_intrinsics_json(const std::filesystem::path& path, const Intrinsics& K) {
  nlohmann::ordered_json j;
  j["fx"] = K.fx;
  j["fy"] = K.fy;
  j["cx"] = K.cx;
  j["cy"] = K.cy;
  j["width"] = K.geom.width;
  j["height"] = K.geom.height;
  std::ofstream f = open_out(path, false);
  f << j.dump(2) << '\n';
}

Intrinsics read_intrinsics_json(const std::filesystem::path& path) {
  const auto j = load_json(path);
  Intrinsics K;
  K.fx = j.at("fx");
  K.fy = j.at("fy");
  K.cx = j.at("cx");
  K.cy = j.at("cy");
  K.geom.width = j.at("width");
  K.geom.height = j.at("height");
  return K;
}

void write_checkpoint(const std::filesystem::path& path, const PredictorModel& model) {
  std::ofstream f = open_out(path, true);
  f.write("EVLM", 4);
  put<std::uint32_t>(f, 1);  // version
  put<std::uint32_t>(f, static_cast<std::uint32_t>(model.tensors().size()));
  for (const TensorShape& t : model.tensors()) {
    put<std::uint32_t>(f, static_cast<std::uint32_t>(t.size));
  }
  f.write(reinterpret_cast<const char*>(model.params.data()),
          static_cast<std::streamsize>(model.params.size() * sizeof(float)));
  if (!f) throw IoError("write failed: " + path.string());
}

PredictorModel read_checkpoint(const std::filesystem::path& path) {
  std::ifstream f = open_in(path, true);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "EVLM", 4) != 0) {
    throw IoError("bad checkpoint magic: " + path.string());
  }
  const auto version = get<std::uint32_t>(f);
  if (version != 1) throw IoError("unsupported checkpoint version");
  PredictorModel model;
  const auto count = get<std::uint32_t>(f);
  if (count != model.tensors().size()) throw IoError("checkpoint tensor count mismatch");
  for (const TensorShape& t : model.tensors()) {
    if (get<std::uint32_t>(f) != t.size) throw IoError("checkpoint shape mismatch: " + t.name);
  }
  f.read(reinterpret_cast<char*>(model.params.data()),
         static_cast<std::streamsize>(model.params.size() * sizeof(float)));
  if (!f) throw IoError("checkpoint truncated: " + path.string());
  return model;
}

namespace {

void write_grid_raw(const std::filesystem::path& path, std::uint32_t kind, int bins, int height,
                    int width, const std::vector<float>& data) {
  std::ofstream f = open_out(path, true);
  f.write("EVG1", 4);
  put<std::uint32_t>(f, kind);
  put<std::uint32_t>(f, static_cast<std::uint32_t>(bins));
  put<std::uint32_t>(f, static_cast<std::uint32_t>(height));
  put<std::uint32_t>(f, static_cast<std::uint32_t>(width));
  f.write(reinterpret_cast<const char*>(data.data()),
          static_cast<std::streamsize>(data.size() * sizeof(float)));
  if (!f) throw IoError("write failed: " + path.string());
}

}  // namespace

void write_grid(const std::filesystem::path& path, const Representation& repr) {
  write_grid_raw(path, static_cast<std::uint32_t>(repr.kind), repr.bins, repr.height,
                 repr.width, repr.data);
}

void write_grid(const std::filesystem::path& path, const DepthImage& depth) {
  write_grid_raw(path, 100, 1, depth.height, depth.width, depth.data);
}

Representation read_grid(const std::filesystem::path& path) {
  std::ifstream f = open_in(path, true);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "EVG1", 4) != 0) throw IoError("bad grid magic");
  Representation r;
  const auto kind = get<std::uint32_t>(f);
  r.kind = kind <= 2 ? static_cast<ReprKind>(kind) : ReprKind::EventFrame;
  r.bins = static_cast<int>(get<std::uint32_t>(f));
  r.height = static_cast<int>(get<std::uint32_t>(f));
  r.width = static_cast<int>(get<std::uint32_t>(f));
  r.data.resize(static_cast<std::size_t>(r.bins) * r.height * r.width);
  f.read(reinterpret_cast<char*>(r.data.data()),
         static_cast<std::streamsize>(r.data.size() * sizeof(float)));
  if (!f) throw IoError("grid truncated: " + path.string());
  return r;
}

}  // namespace evlcal
