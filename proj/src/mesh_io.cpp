#include "p2ssm/mesh_io.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "p2ssm/errors.hpp"

namespace p2ssm::io {
namespace {

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << std::setprecision(17);
  return out;
}

[[noreturn]] void fail(const std::filesystem::path& path, std::size_t line, const std::string& what) {
  throw FormatError(path.string() + ":" + std::to_string(line) + ": " + what);
}

std::string lower_ext(const std::filesystem::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return e;
}

Points to_points(const std::vector<Eigen::Vector3d>& v) {
  Points p(static_cast<Eigen::Index>(v.size()), 3);
  for (std::size_t i = 0; i < v.size(); ++i) p.row(static_cast<Eigen::Index>(i)) = v[i].transpose();
  return p;
}

Faces to_faces(const std::vector<Eigen::Vector3i>& f) {
  Faces out(static_cast<Eigen::Index>(f.size()), 3);
  for (std::size_t i = 0; i < f.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = f[i].transpose();
  return out;
}

TriangleMesh load_ply(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::string line;
  std::size_t lineno = 0;
  auto next = [&]() -> bool {
    if (!std::getline(in, line)) return false;
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
  };

  if (!next() || line != "ply") fail(path, 1, "missing 'ply' magic");
  long nverts = -1, nfaces = 0;
  int vertex_props = 0;
  std::string current;
  bool header_done = false;
  while (next()) {
    std::istringstream ss(line);
    std::string kw;
    ss >> kw;
    if (kw == "format") {
      std::string fmt;
      ss >> fmt;
      if (fmt != "ascii") fail(path, lineno, "only ASCII PLY is supported");
    } else if (kw == "element") {
      long n = -1;
      ss >> current >> n;
      if (n < 0) fail(path, lineno, "bad element count");
      if (current == "vertex") nverts = n;
      if (current == "face") nfaces = n;
    } else if (kw == "property") {
      if (current == "vertex") ++vertex_props;
    } else if (kw == "end_header") {
      header_done = true;
      break;
    } else if (kw != "comment" && kw != "obj_info" && !kw.empty()) {
      fail(path, lineno, "unexpected header keyword '" + kw + "'");
    }
  }
  if (!header_done) fail(path, lineno, "unterminated header");
  if (nverts < 0) fail(path, lineno, "no vertex element");
  if (vertex_props < 3) fail(path, lineno, "vertex element needs x, y, z");

  std::vector<Eigen::Vector3d> verts;
  for (long i = 0; i < nverts; ++i) {
    if (!next()) fail(path, lineno, "unexpected end of file in vertex list");
    std::istringstream ss(line);
    Eigen::Vector3d v;
    if (!(ss >> v.x() >> v.y() >> v.z())) fail(path, lineno, "malformed vertex");
    verts.push_back(v);
  }
  std::vector<Eigen::Vector3i> faces;
  for (long i = 0; i < nfaces; ++i) {
    if (!next()) fail(path, lineno, "unexpected end of file in face list");
    std::istringstream ss(line);
    int count = 0;
    if (!(ss >> count) || count < 3) fail(path, lineno, "malformed face");
    std::vector<int> idx(static_cast<std::size_t>(count));
    for (auto& v : idx) {
      if (!(ss >> v)) fail(path, lineno, "malformed face");
    }
    for (int t = 1; t + 1 < count; ++t) faces.emplace_back(idx[0], idx[static_cast<std::size_t>(t)], idx[static_cast<std::size_t>(t) + 1]);
  }
  TriangleMesh mesh{to_points(verts), to_faces(faces)};
  mesh.validate();
  return mesh;
}

TriangleMesh load_obj(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::string line;
  std::size_t lineno = 0;
  std::vector<Eigen::Vector3d> verts;
  std::vector<Eigen::Vector3i> faces;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::string kw;
    ss >> kw;
    if (kw == "v") {
      Eigen::Vector3d v;
      if (!(ss >> v.x() >> v.y() >> v.z())) fail(path, lineno, "malformed vertex");
      verts.push_back(v);
    } else if (kw == "f") {
      std::vector<int> idx;
      std::string tok;
      while (ss >> tok) {
        int v = 0;
        try {
          v = std::stoi(tok.substr(0, tok.find('/')));
        } catch (const std::exception&) {
          fail(path, lineno, "malformed face index '" + tok + "'");
        }
        if (v == 0) fail(path, lineno, "OBJ face index 0 is invalid");
        idx.push_back(v > 0 ? v - 1 : static_cast<int>(verts.size()) + v);
      }
      if (idx.size() < 3) fail(path, lineno, "face needs at least 3 vertices");
      for (std::size_t t = 1; t + 1 < idx.size(); ++t) faces.emplace_back(idx[0], idx[t], idx[t + 1]);
    }
  }
  TriangleMesh mesh{to_points(verts), to_faces(faces)};
  mesh.validate();
  return mesh;
}

}  // namespace

TriangleMesh load_mesh(const std::filesystem::path& path) {
  const auto ext = lower_ext(path);
  if (ext == ".ply") return load_ply(path);
  if (ext == ".obj") return load_obj(path);
  throw FormatError("unsupported mesh extension: " + path.string());
}

void save_ply(const std::filesystem::path& path, const TriangleMesh& mesh) {
  auto out = open_out(path);
  out << "ply\nformat ascii 1.0\n"
      << "element vertex " << mesh.vertex_count() << "\nproperty double x\nproperty double y\nproperty double z\n"
      << "element face " << mesh.face_count() << "\nproperty list uchar int vertex_indices\nend_header\n";
  for (Eigen::Index i = 0; i < mesh.vertex_count(); ++i) {
    out << mesh.vertices(i, 0) << ' ' << mesh.vertices(i, 1) << ' ' << mesh.vertices(i, 2) << '\n';
  }
  for (Eigen::Index f = 0; f < mesh.face_count(); ++f) {
    out << "3 " << mesh.faces(f, 0) << ' ' << mesh.faces(f, 1) << ' ' << mesh.faces(f, 2) << '\n';
  }
}

Points load_points(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::vector<Eigen::Vector3d> pts;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ss(line);
    Eigen::Vector3d v;
    if (!(ss >> v.x() >> v.y() >> v.z())) fail(path, lineno, "expected 'x y z'");
    pts.push_back(v);
  }
  if (pts.empty()) throw FormatError(path.string() + ": no points");
  return to_points(pts);
}

void save_points(const std::filesystem::path& path, const Points& points) {
  auto out = open_out(path);
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    out << points(i, 0) << ' ' << points(i, 1) << ' ' << points(i, 2) << '\n';
  }
}

NormalizationParams load_normalization(const std::filesystem::path& path) {
  auto in = open_in(path);
  nlohmann::json j;
  try {
    in >> j;
    NormalizationParams p;
    const auto c = j.at("center").get<std::vector<double>>();
    if (c.size() != 3) throw FormatError(path.string() + ": center needs 3 values");
    p.center = Eigen::Vector3d(c[0], c[1], c[2]);
    p.scale = j.at("scale").get<double>();
    if (!(p.scale > 0.0)) throw FormatError(path.string() + ": scale must be positive");
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void save_normalization(const std::filesystem::path& path, const NormalizationParams& params) {
  nlohmann::json j;
  j["center"] = {params.center.x(), params.center.y(), params.center.z()};
  j["scale"] = params.scale;
  auto out = open_out(path);
  out << j.dump(2) << '\n';
}

}  // namespace p2ssm::io
