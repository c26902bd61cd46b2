#include "lrm/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <ostream>

namespace lrm::io {
namespace {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

constexpr char kRangeMagic[8] = {'L', 'R', 'M', 'R', 'I', 'M', 'G', '1'};

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError("truncated file " + path.string());
  return v;
}

}  // namespace

PointCloud read_kitti_bin(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("cannot open " + path.string());
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes % (4 * sizeof(float)) != 0) throw IoError("size of " + path.string() + " is not a multiple of 16 bytes");
  in.seekg(0);
  std::vector<float> raw(bytes / sizeof(float));
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(bytes));
  if (!in) throw IoError("read failed: " + path.string());
  PointCloud cloud;
  cloud.points.reserve(raw.size() / 4);
  for (std::size_t i = 0; i < raw.size(); i += 4) cloud.points.emplace_back(raw[i], raw[i + 1], raw[i + 2]);
  cloud.validate();
  return cloud;
}

void write_kitti_bin(const std::filesystem::path& path, const PointCloud& cloud) {
  write_file_atomic(
      path,
      [&](std::ostream& out) {
        for (const Vec3& p : cloud.points) {
          put(out, static_cast<float>(p.x()));
          put(out, static_cast<float>(p.y()));
          put(out, static_cast<float>(p.z()));
          put(out, 0.0f);
        }
      },
      true);
}

void write_colored_ply(const std::filesystem::path& path, std::span<const Vec3> points, std::span<const Rgb> colors) {
  LRM_REQUIRE(points.size() == colors.size(), "PLY export needs one color per point");
  write_file_atomic(path, [&](std::ostream& out) {
    out << "ply\nformat ascii 1.0\n"
        << "element vertex " << points.size() << "\n"
        << "property float x\nproperty float y\nproperty float z\n"
        << "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        << "end_header\n";
    out << std::setprecision(9);
    for (std::size_t i = 0; i < points.size(); ++i) {
      out << static_cast<float>(points[i].x()) << ' ' << static_cast<float>(points[i].y()) << ' '
          << static_cast<float>(points[i].z()) << ' ' << int(colors[i][0]) << ' ' << int(colors[i][1]) << ' '
          << int(colors[i][2]) << '\n';
    }
  });
}

void write_range_image(const std::filesystem::path& path, const RangeImage& image) {
  image.validate();
  write_file_atomic(
      path,
      [&](std::ostream& out) {
        out.write(kRangeMagic, sizeof(kRangeMagic));
        put(out, static_cast<std::uint32_t>(image.rows()));
        put(out, static_cast<std::uint32_t>(image.cols()));
        put(out, image.model.elevation_min);
        put(out, image.model.elevation_max);
        put(out, image.model.invalid_depth);
        for (double d : image.depth) put(out, static_cast<float>(d));
        out.write(reinterpret_cast<const char*>(image.valid.data()), static_cast<std::streamsize>(image.valid.size()));
      },
      true);
}

RangeImage read_range_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kRangeMagic, sizeof(magic)) != 0) throw IoError("not a range image: " + path.string());
  ProjectionModel model;
  model.rows = static_cast<int>(get<std::uint32_t>(in, path));
  model.cols = static_cast<int>(get<std::uint32_t>(in, path));
  model.elevation_min = get<double>(in, path);
  model.elevation_max = get<double>(in, path);
  model.invalid_depth = get<double>(in, path);
  model.validate();
  RangeImage image(model);
  for (auto& d : image.depth) d = get<float>(in, path);
  in.read(reinterpret_cast<char*>(image.valid.data()), static_cast<std::streamsize>(image.valid.size()));
  if (!in) throw IoError("truncated file " + path.string());
  image.validate();
  return image;
}

}  // namespace lrm::io
