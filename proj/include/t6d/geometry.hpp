#pragma once

// Rigid-body geometry: rotation encodings, poses, and object model points.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "t6d/errors.hpp"

namespace t6d {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kGramSchmidtEps = 1e-12;

struct Rotation {
  Mat3 m = Mat3::Identity();

  static Rotation identity() { return {}; }

  /// Orthonormality and det = +1, both within `tol` (Frobenius norm for the former).
  bool is_valid(double tol = 1e-9) const {
    if (!m.allFinite()) return false;
    return (m.transpose() * m - Mat3::Identity()).norm() <= tol && std::abs(m.determinant() - 1.0) <= tol;
  }
};

/// Raw continuous 6D rotation encoding: the first two columns before orthonormalization.
struct Rot6D {
  Vec3 a1 = Vec3::UnitX();
  Vec3 a2 = Vec3::UnitY();

  std::array<double, 6> to_array() const { return {a1.x(), a1.y(), a1.z(), a2.x(), a2.y(), a2.z()}; }
  static Rot6D from_array(std::span<const double> v) {
    if (v.size() != 6) throw ShapeError("Rot6D expects 6 values, got " + std::to_string(v.size()));
    return {Vec3(v[0], v[1], v[2]), Vec3(v[3], v[4], v[5])};
  }
};

using Translation = Vec3;

struct Pose {
  Rotation rotation;
  Translation translation = Translation::Zero();

  static Pose identity() { return {}; }

  Vec3 apply(const Vec3& x) const { return rotation.m * x + translation; }
};

/// Returns `outer ∘ inner`, i.e. x ↦ outer(inner(x)).
inline Pose compose(const Pose& outer, const Pose& inner) {
  return {Rotation{outer.rotation.m * inner.rotation.m}, outer.rotation.m * inner.translation + outer.translation};
}

struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;

  void validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw ConfigError("camera focal lengths must be positive");
  }
};

/// Subsampled object model points (object frame, meters) with the cached diameter.
class ModelPoints {
 public:
  ModelPoints() = default;

  ModelPoints(std::vector<Vec3> points, bool symmetric) : points_(std::move(points)), symmetric_(symmetric) {
    if (points_.empty()) throw EmptyMesh("model point set is empty");
    diameter_ = max_pairwise_distance(points_);
  }

  const std::vector<Vec3>& points() const { return points_; }
  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }
  bool symmetric() const { return symmetric_; }
  void set_symmetric(bool s) { symmetric_ = s; }
  double diameter() const { return diameter_; }

  static double max_pairwise_distance(const std::vector<Vec3>& pts) {
    double best = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i)
      for (std::size_t j = i + 1; j < pts.size(); ++j) best = std::max(best, (pts[i] - pts[j]).squaredNorm());
    return std::sqrt(best);
  }

 private:
  std::vector<Vec3> points_;
  bool symmetric_ = false;
  double diameter_ = 0.0;
};

// ---------------------------------------------------------------------------
// Rotation encodings

/// Gram-Schmidt decoding: b1 = a1/|a1|, b2 = normalized a2 residual, b3 = b1 x b2.
inline Rotation rot6d_to_matrix(const Rot6D& r) {
  const double n1 = r.a1.norm();
  if (!(n1 > kGramSchmidtEps)) throw DegenerateInput("rot6d: first column has (near) zero norm");
  const Vec3 b1 = r.a1 / n1;
  const Vec3 v = r.a2 - b1.dot(r.a2) * b1;
  const double n2 = v.norm();
  if (!(n2 > kGramSchmidtEps)) throw DegenerateInput("rot6d: second column is parallel to the first");
  const Vec3 b2 = v / n2;
  Rotation out;
  out.m.col(0) = b1;
  out.m.col(1) = b2;
  out.m.col(2) = b1.cross(b2);
  return out;
}

inline Rot6D matrix_to_rot6d(const Rotation& r) { return {r.m.col(0), r.m.col(1)}; }

/// Pulls a gradient with respect to the decoded matrix back onto the raw 6D encoding.
inline std::array<double, 6> rot6d_backward(const Rot6D& r, const Mat3& grad_matrix) {
  const double n1 = r.a1.norm();
  const Vec3 b1 = r.a1 / n1;
  const double s = b1.dot(r.a2);
  const Vec3 v = r.a2 - s * b1;
  const double n2 = v.norm();
  const Vec3 b2 = v / n2;

  Vec3 g_b1 = grad_matrix.col(0);
  Vec3 g_b2 = grad_matrix.col(1);
  const Vec3 g_b3 = grad_matrix.col(2);
  g_b1 += b2.cross(g_b3);
  g_b2 += g_b3.cross(b1);

  const Vec3 g_v = (g_b2 - b2 * b2.dot(g_b2)) / n2;
  const Vec3 g_a2 = g_v - b1 * b1.dot(g_v);
  g_b1 += -b1.dot(g_v) * r.a2 - s * g_v;
  const Vec3 g_a1 = (g_b1 - b1 * b1.dot(g_b1)) / n1;
  return {g_a1.x(), g_a1.y(), g_a1.z(), g_a2.x(), g_a2.y(), g_a2.z()};
}

/// Geodesic angle (radians) between two rotations.
inline double angular_distance(const Rotation& a, const Rotation& b) {
  const double c = std::clamp(((a.m.transpose() * b.m).trace() - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(c);
}

/// Rotation by `angle` radians about `axis` (normalized internally).
inline Rotation axis_angle(const Vec3& axis, double angle) {
  return {Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix()};
}

/// Uniform random rotation from a normalized 4D Gaussian sample.
template <class Rng>
Rotation random_rotation(Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::Quaterniond q;
  do {
    q = Eigen::Quaterniond(normal(rng), normal(rng), normal(rng), normal(rng));
  } while (q.norm() < 1e-9);
  q.normalize();
  return {q.toRotationMatrix()};
}

// ---------------------------------------------------------------------------
// Egocentric / allocentric

/// Minimal rotation taking the optical axis (0,0,1) onto the bearing of `t`.
inline Rotation view_rotation(const Translation& t) {
  const double n = t.norm();
  if (!(n > 1e-9)) throw DegenerateInput("allocentric conversion undefined for an object at the camera origin");
  const Vec3 d = t / n;
  const Vec3 z = Vec3::UnitZ();
  const Vec3 axis = z.cross(d);
  const double s = axis.norm();
  const double c = z.dot(d);
  if (s < 1e-15) {
    if (c > 0.0) return Rotation::identity();
    return axis_angle(Vec3::UnitX(), M_PI);
  }
  return {Eigen::AngleAxisd(std::atan2(s, c), axis / s).toRotationMatrix()};
}

inline Pose egocentric_to_allocentric(const Pose& ego) {
  const Rotation view = view_rotation(ego.translation);
  return {Rotation{view.m.transpose() * ego.rotation.m}, ego.translation};
}

inline Pose allocentric_to_egocentric(const Pose& allo) {
  const Rotation view = view_rotation(allo.translation);
  return {Rotation{view.m * allo.rotation.m}, allo.translation};
}

// ---------------------------------------------------------------------------
// Model points

/// Uniform sampling of `k` distinct vertices without replacement (all vertices if fewer).
inline ModelPoints subsample_points(const std::vector<Vec3>& vertices, std::size_t k, std::uint64_t seed,
                                    bool symmetric = false) {
  if (vertices.empty()) throw EmptyMesh("cannot subsample an empty mesh");
  if (k == 0) throw ConfigError("subsample count must be at least 1");
  if (vertices.size() <= k) return ModelPoints(vertices, symmetric);

  std::vector<std::size_t> idx(vertices.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  // partial Fisher-Yates
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  std::vector<Vec3> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back(vertices[idx[i]]);
  return ModelPoints(std::move(out), symmetric);
}

inline std::vector<Vec3> transform_points(const ModelPoints& points, const Pose& pose) {
  std::vector<Vec3> out;
  out.reserve(points.size());
  for (const auto& x : points.points()) out.push_back(pose.apply(x));
  return out;
}

// ---------------------------------------------------------------------------
// PLY (ascii) reader

enum class MeshUnits { meters, millimeters };

inline MeshUnits parse_mesh_units(const std::string& s) {
  if (s == "m" || s == "meters") return MeshUnits::meters;
  if (s == "mm" || s == "millimeters") return MeshUnits::millimeters;
  throw ConfigError("unknown mesh units '" + s + "' (expected m or mm)");
}

/// Reads vertex x/y/z from an ascii PLY stream; faces and other elements are skipped.
inline std::vector<Vec3> read_ply_ascii(std::istream& in, MeshUnits units = MeshUnits::meters,
                                        const std::string& name = "<ply>") {
  std::string line;
  std::size_t line_no = 0;
  auto next_line = [&]() -> bool {
    if (!std::getline(in, line)) return false;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
  };
  auto where = [&] { return name + ":" + std::to_string(line_no); };

  if (!next_line() || line != "ply") throw ParseError(where(), "magic", "missing 'ply' header");

  struct Element {
    std::string name;
    std::size_t count = 0;
    std::vector<std::string> props;
    std::vector<bool> is_list;
  };
  std::vector<Element> elements;
  bool ascii = false;
  while (true) {
    if (!next_line()) throw ParseError(where(), "end_header", "unexpected end of file in header");
    std::istringstream ss(line);
    std::string kw;
    ss >> kw;
    if (kw == "end_header") break;
    if (kw == "format") {
      std::string fmt;
      ss >> fmt;
      ascii = fmt == "ascii";
    } else if (kw == "element") {
      Element e;
      ss >> e.name >> e.count;
      if (!ss) throw ParseError(where(), "element", "malformed element line");
      elements.push_back(e);
    } else if (kw == "property") {
      if (elements.empty()) throw ParseError(where(), "property", "property before any element");
      std::string type;
      ss >> type;
      if (type == "list") {
        std::string count_type, item_type, pname;
        ss >> count_type >> item_type >> pname;
        elements.back().props.push_back(pname);
        elements.back().is_list.push_back(true);
      } else {
        std::string pname;
        ss >> pname;
        elements.back().props.push_back(pname);
        elements.back().is_list.push_back(false);
      }
    }
  }
  if (!ascii) throw ParseError(name, "format", "only ascii PLY is supported");

  const double scale = units == MeshUnits::millimeters ? 1e-3 : 1.0;
  std::vector<Vec3> vertices;
  bool saw_vertex = false;
  for (const auto& e : elements) {
    if (e.name != "vertex") {
      for (std::size_t i = 0; i < e.count; ++i)
        if (!next_line()) throw ParseError(where(), e.name, "truncated element data");
      continue;
    }
    saw_vertex = true;
    int ix = -1, iy = -1, iz = -1;
    for (std::size_t p = 0; p < e.props.size(); ++p) {
      if (e.is_list[p]) continue;
      if (e.props[p] == "x") ix = static_cast<int>(p);
      if (e.props[p] == "y") iy = static_cast<int>(p);
      if (e.props[p] == "z") iz = static_cast<int>(p);
    }
    if (ix < 0 || iy < 0 || iz < 0) throw ParseError(name, "vertex", "vertex element lacks x/y/z properties");
    vertices.reserve(e.count);
    for (std::size_t i = 0; i < e.count; ++i) {
      if (!next_line()) throw ParseError(where(), "vertex", "truncated vertex data");
      std::istringstream ss(line);
      std::vector<double> vals;
      double v;
      while (ss >> v) vals.push_back(v);
      if (vals.size() < e.props.size())
        throw ParseError(where(), "vertex", "expected " + std::to_string(e.props.size()) + " values");
      vertices.emplace_back(vals[ix] * scale, vals[iy] * scale, vals[iz] * scale);
    }
  }
  if (!saw_vertex) throw ParseError(name, "element vertex", "no vertex element");
  return vertices;
}

inline std::vector<Vec3> read_ply_ascii(const std::string& path, MeshUnits units = MeshUnits::meters) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open mesh file " + path);
  return read_ply_ascii(in, units, path);
}

}  // namespace t6d
