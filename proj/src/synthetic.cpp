#include "p2ssm/synthetic.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>

#include "p2ssm/errors.hpp"
#include "p2ssm/mesh_io.hpp"

namespace p2ssm {

namespace {

const std::vector<std::pair<double, double>> kEllipsoidAxes = {{18.0, 30.0}, {10.0, 18.0}, {30.0, 45.0}};
constexpr double kBumpRadius = 25.0;
constexpr double kBumpWidth = 0.15;

// Fibonacci-sphere directions for bump centres.
Eigen::Vector3d bump_direction(int k, int count) {
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  const double z = 1.0 - 2.0 * (static_cast<double>(k) + 0.5) / static_cast<double>(count);
  const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
  const double phi = golden * static_cast<double>(k);
  return {r * std::cos(phi), r * std::sin(phi), z};
}

Eigen::Matrix3d random_rotation(double max_deg, Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::Vector3d axis(g(rng), g(rng), g(rng));
  axis.normalize();
  std::uniform_real_distribution<double> angle(-max_deg, max_deg);
  return Eigen::AngleAxisd(angle(rng) * std::numbers::pi / 180.0, axis).toRotationMatrix();
}

}  // namespace

const char* to_string(ShapeFamily f) { return f == ShapeFamily::ellipsoid ? "ellipsoid" : "bumped_sphere"; }

ShapeFamily parse_family(const std::string& s) {
  if (s == "ellipsoid") return ShapeFamily::ellipsoid;
  if (s == "bumped_sphere") return ShapeFamily::bumped_sphere;
  throw ValidationError("unknown shape family '" + s + "' (expected ellipsoid|bumped_sphere)");
}

std::vector<std::pair<double, double>> CohortSpec::ranges() const {
  if (!latent_ranges.empty()) return latent_ranges;
  if (family == ShapeFamily::ellipsoid) {
    return {kEllipsoidAxes.begin(), kEllipsoidAxes.begin() + std::min(latent_dims, 3)};
  }
  return std::vector<std::pair<double, double>>(static_cast<std::size_t>(latent_dims), {-5.0, 5.0});
}

void CohortSpec::validate() const {
  if (latent_dims < 1) throw ValidationError("dataset.synthetic.latent_dims must be >= 1");
  if (family == ShapeFamily::ellipsoid && latent_dims > 3) {
    throw ValidationError("dataset.synthetic.latent_dims must be <= 3 for ellipsoids");
  }
  if (n_shapes < latent_dims + 2) throw ValidationError("dataset.synthetic.n_shapes must be >= latent_dims + 2");
  if (subdivisions < 0 || subdivisions > 7) throw ValidationError("dataset.synthetic.subdivisions must lie in [0, 7]");
  if (!latent_ranges.empty() && static_cast<int>(latent_ranges.size()) != latent_dims) {
    throw ValidationError("dataset.synthetic.latent_ranges needs one range per latent");
  }
  for (const auto& [lo, hi] : ranges()) {
    if (!(lo <= hi)) throw ValidationError("dataset.synthetic.latent_ranges entries must be [lo, hi] with lo <= hi");
    if (family == ShapeFamily::ellipsoid && !(lo > 0.0)) {
      throw ValidationError("dataset.synthetic.latent_ranges: ellipsoid semi-axes must be positive");
    }
  }
  if (pose_jitter_deg < 0.0 || translation_jitter_mm < 0.0) {
    throw ValidationError("dataset.synthetic jitter bounds must be >= 0");
  }
}

TriangleMesh icosphere(int subdivisions) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Eigen::Vector3d> v = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                                    {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  for (auto& p : v) p.normalize();
  std::vector<Eigen::Vector3i> f = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                                    {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                                    {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                                    {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<int, int>, int> midpoint;
    auto mid = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      const auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      v.push_back((v[static_cast<std::size_t>(a)] + v[static_cast<std::size_t>(b)]).normalized());
      const int idx = static_cast<int>(v.size()) - 1;
      midpoint.emplace(key, idx);
      return idx;
    };
    std::vector<Eigen::Vector3i> next;
    next.reserve(f.size() * 4);
    for (const auto& tri : f) {
      const int a = mid(tri[0], tri[1]), b = mid(tri[1], tri[2]), c = mid(tri[2], tri[0]);
      next.emplace_back(tri[0], a, c);
      next.emplace_back(tri[1], b, a);
      next.emplace_back(tri[2], c, b);
      next.emplace_back(a, b, c);
    }
    f = std::move(next);
  }
  TriangleMesh mesh;
  mesh.vertices.resize(static_cast<Eigen::Index>(v.size()), 3);
  for (std::size_t i = 0; i < v.size(); ++i) mesh.vertices.row(static_cast<Eigen::Index>(i)) = v[i].transpose();
  mesh.faces.resize(static_cast<Eigen::Index>(f.size()), 3);
  for (std::size_t i = 0; i < f.size(); ++i) mesh.faces.row(static_cast<Eigen::Index>(i)) = f[i].transpose();
  return mesh;
}

SyntheticCohort generate_cohort(const CohortSpec& spec) {
  spec.validate();
  const TriangleMesh sphere = icosphere(spec.subdivisions);
  const auto ranges = spec.ranges();
  Rng rng(spec.seed);

  SyntheticCohort out;
  for (int s = 0; s < spec.n_shapes; ++s) {
    std::vector<double> z;
    for (const auto& [lo, hi] : ranges) {
      std::uniform_real_distribution<double> u(lo, hi);
      z.push_back(u(rng));
    }
    TriangleMesh mesh = sphere;
    if (spec.family == ShapeFamily::ellipsoid) {
      Eigen::Vector3d axes;
      for (int a = 0; a < 3; ++a) {
        const auto& def = kEllipsoidAxes[static_cast<std::size_t>(a)];
        axes(a) = a < spec.latent_dims ? z[static_cast<std::size_t>(a)] : 0.5 * (def.first + def.second);
      }
      mesh.vertices = mesh.vertices * axes.asDiagonal();
    } else {
      for (Eigen::Index i = 0; i < mesh.vertices.rows(); ++i) {
        const Eigen::Vector3d u = sphere.vertices.row(i).transpose();
        double r = kBumpRadius;
        for (int k = 0; k < spec.latent_dims; ++k) {
          const Eigen::Vector3d d = bump_direction(k, spec.latent_dims);
          r += z[static_cast<std::size_t>(k)] * std::exp(-(1.0 - u.dot(d)) / kBumpWidth);
        }
        mesh.vertices.row(i) = (r * u).transpose();
      }
    }
    if (spec.pose_jitter_deg > 0.0 || spec.translation_jitter_mm > 0.0) {
      RigidTransform pose;
      if (spec.pose_jitter_deg > 0.0) pose.rotation = random_rotation(spec.pose_jitter_deg, rng);
      if (spec.translation_jitter_mm > 0.0) {
        std::uniform_real_distribution<double> u(-spec.translation_jitter_mm, spec.translation_jitter_mm);
        pose.translation = Eigen::Vector3d(u(rng), u(rng), u(rng));
      }
      mesh.vertices = pose.apply(mesh.vertices);
    }
    std::ostringstream id;
    id << "shape_" << std::setw(3) << std::setfill('0') << s;
    Shape shape;
    shape.id = id.str();
    shape.cloud = mesh_vertices_as_cloud(mesh);
    shape.mesh = std::move(mesh);
    out.cohort.shapes.push_back(std::move(shape));
    out.latents.push_back(std::move(z));
  }
  return out;
}

void write_cohort(const std::filesystem::path& dir, const SyntheticCohort& c) {
  std::filesystem::create_directories(dir / "meshes");
  std::ofstream lat(dir / "latents.csv");
  if (!lat) throw FormatError("cannot write " + (dir / "latents.csv").string());
  lat << "shape_id";
  const std::size_t dims = c.latents.empty() ? 0 : c.latents.front().size();
  for (std::size_t k = 0; k < dims; ++k) lat << ",z" << k;
  lat << '\n' << std::setprecision(17);
  for (std::size_t i = 0; i < c.cohort.size(); ++i) {
    const auto& shape = c.cohort.shapes[i];
    io::save_ply(dir / "meshes" / (shape.id + ".ply"), *shape.mesh);
    lat << shape.id;
    for (double z : c.latents[i]) lat << ',' << z;
    lat << '\n';
  }
}

}  // namespace p2ssm
