#pragma once

#include <filesystem>

#include "p2ssm/geometry.hpp"

namespace p2ssm::io {

// ASCII PLY or OBJ, chosen by extension. OBJ face indices are 1-based on disk
// (negative indices are relative to the end) and stored 0-based; polygons
// with more than three vertices are fan-triangulated.
TriangleMesh load_mesh(const std::filesystem::path& path);
void save_ply(const std::filesystem::path& path, const TriangleMesh& mesh);

// `.xyz` and `.particles`: one "x y z" triple per line.
Points load_points(const std::filesystem::path& path);
void save_points(const std::filesystem::path& path, const Points& points);

// JSON sidecar {"center": [x, y, z], "scale": s}.
NormalizationParams load_normalization(const std::filesystem::path& path);
void save_normalization(const std::filesystem::path& path, const NormalizationParams& params);

}  // namespace p2ssm::io
