#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "lrm/geom.hpp"

namespace lrm::io {

/// KITTI velodyne layout: little-endian float32 (x, y, z, intensity) per point.
/// Intensity is dropped on read and written as 0.
PointCloud read_kitti_bin(const std::filesystem::path& path);
void write_kitti_bin(const std::filesystem::path& path, const PointCloud& cloud);

using Rgb = std::array<std::uint8_t, 3>;

/// ASCII PLY with x/y/z float and red/green/blue uchar vertex properties.
void write_colored_ply(const std::filesystem::path& path, std::span<const Vec3> points, std::span<const Rgb> colors);

/// Binary range image: magic "LRMRIMG1", u32 rows, u32 cols, f64 elevation_min,
/// f64 elevation_max, f64 invalid_depth, rows*cols f32 depth, rows*cols u8 valid.
void write_range_image(const std::filesystem::path& path, const RangeImage& image);
RangeImage read_range_image(const std::filesystem::path& path);

}  // namespace lrm::io
