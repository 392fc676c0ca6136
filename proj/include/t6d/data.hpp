#pragma once

// Synthetic multi-object scenes, the object catalog, camera projection, and the JSON
// annotation format.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <cstdio>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "t6d/boxes.hpp"
#include "t6d/errors.hpp"
#include "t6d/geometry.hpp"
#include "t6d/image.hpp"
#include "t6d/matching.hpp"
#include "t6d/metrics.hpp"

namespace t6d {

using Vec2 = Eigen::Vector2d;

inline Vec2 project(const CameraIntrinsics& K, const Vec3& p) {
  if (!(p.z() > 1e-6)) throw BehindCamera("point is not in front of the camera");
  return {K.fx * p.x() / p.z() + K.cx, K.fy * p.y() / p.z() + K.cy};
}

// ---------------------------------------------------------------------------
// Catalog

struct CatalogEntry {
  std::string name;
  ModelPoints points;
  std::array<double, 3> color{1.0, 1.0, 1.0};
  /// Points whose object-frame x exceeds this are painted with the marker color.
  double marker_x = std::numeric_limits<double>::infinity();
};

/// Per-class model points, symmetry flag, and display color; class ids are dense indices.
struct ObjectCatalog {
  std::vector<CatalogEntry> classes;

  int num_classes() const { return static_cast<int>(classes.size()); }

  std::vector<ModelPoints> points_table() const {
    std::vector<ModelPoints> out;
    for (const auto& c : classes) out.push_back(c.points);
    return out;
  }

  std::vector<ClassInfo> class_table() const {
    std::vector<ClassInfo> out;
    for (const auto& c : classes) out.push_back({c.name, c.points.symmetric()});
    return out;
  }
};

namespace detail {

inline std::vector<Vec3> cuboid_surface(double sx, double sy, double sz, int per_edge) {
  std::vector<Vec3> out;
  const double hx = sx / 2, hy = sy / 2, hz = sz / 2;
  for (int i = 0; i <= per_edge; ++i)
    for (int j = 0; j <= per_edge; ++j) {
      const double u = -1.0 + 2.0 * i / per_edge, v = -1.0 + 2.0 * j / per_edge;
      out.emplace_back(-hx, u * hy, v * hz);
      out.emplace_back(hx, u * hy, v * hz);
      out.emplace_back(u * hx, -hy, v * hz);
      out.emplace_back(u * hx, hy, v * hz);
      out.emplace_back(u * hx, v * hy, -hz);
      out.emplace_back(u * hx, v * hy, hz);
    }
  return out;
}

/// Closed cylinder about the z axis.
inline std::vector<Vec3> cylinder_surface(double radius, double height, int rings, int segments) {
  std::vector<Vec3> out;
  for (int s = 0; s < segments; ++s) {
    const double a = 2.0 * M_PI * s / segments;
    const double c = std::cos(a), sn = std::sin(a);
    for (int r = 0; r <= rings; ++r) out.emplace_back(radius * c, radius * sn, -height / 2 + height * r / rings);
    for (int r = 1; r <= rings; ++r) {
      const double rr = radius * r / rings;
      out.emplace_back(rr * c, rr * sn, -height / 2);
      out.emplace_back(rr * c, rr * sn, height / 2);
    }
  }
  out.emplace_back(0, 0, -height / 2);
  out.emplace_back(0, 0, height / 2);
  return out;
}

}  // namespace detail

/// Three desk-scale objects: an asymmetric box, a rotationally symmetric disc, and an
/// asymmetric L-shaped bracket.
inline ObjectCatalog builtin_catalog(std::size_t points_per_object = 300, std::uint64_t seed = 0) {
  ObjectCatalog cat;
  {
    auto v = detail::cuboid_surface(0.09, 0.06, 0.04, 12);
    cat.classes.push_back({"box", subsample_points(v, points_per_object, seed + 0, false), {0.9, 0.2, 0.2}, 0.035});
  }
  {
    auto v = detail::cylinder_surface(0.045, 0.02, 6, 48);
    cat.classes.push_back({"disc", subsample_points(v, points_per_object, seed + 1, true), {0.2, 0.8, 0.3}});
  }
  {
    auto a = detail::cuboid_surface(0.10, 0.03, 0.03, 12);
    auto b = detail::cuboid_surface(0.03, 0.07, 0.03, 10);
    for (auto& p : a) p += Vec3(0.02, -0.02, 0.0);
    for (auto& p : b) p += Vec3(-0.015, 0.03, 0.0);
    a.insert(a.end(), b.begin(), b.end());
    cat.classes.push_back({"bracket", subsample_points(a, points_per_object, seed + 2, false), {0.25, 0.35, 0.95}, 0.06});
  }
  return cat;
}

inline void save_catalog(const std::string& path, const ObjectCatalog& cat) {
  nlohmann::json j;
  j["version"] = 1;
  j["classes"] = nlohmann::json::array();
  for (std::size_t i = 0; i < cat.classes.size(); ++i) {
    const auto& c = cat.classes[i];
    nlohmann::json e;
    e["class_id"] = i;
    e["name"] = c.name;
    e["symmetric"] = c.points.symmetric();
    e["color"] = c.color;
    e["diameter"] = c.points.diameter();
    if (std::isfinite(c.marker_x)) e["marker_x"] = c.marker_x;
    auto pts = nlohmann::json::array();
    for (const auto& p : c.points.points()) pts.push_back({p.x(), p.y(), p.z()});
    e["points"] = pts;
    j["classes"].push_back(e);
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump(1) << '\n';
}

namespace detail {

inline const nlohmann::json& require(const nlohmann::json& j, const std::string& key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw ParseError(where, key, "missing required field");
  return j.at(key);
}

template <class T>
T require_as(const nlohmann::json& j, const std::string& key, const std::string& where) {
  const auto& v = require(j, key, where);
  try {
    return v.get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(where, key, std::string("wrong type: ") + e.what());
  }
}

inline std::vector<double> require_reals(const nlohmann::json& j, const std::string& key, std::size_t n,
                                         const std::string& where) {
  auto v = require_as<std::vector<double>>(j, key, where);
  if (v.size() != n) throw ParseError(where, key, "expected " + std::to_string(n) + " numbers");
  return v;
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path + ":byte " + std::to_string(e.byte), "<document>", e.what());
  }
}

}  // namespace detail

inline ObjectCatalog load_catalog(const std::string& path) {
  const auto j = detail::read_json_file(path);
  ObjectCatalog cat;
  const auto& classes = detail::require(j, "classes", path);
  for (std::size_t i = 0; i < classes.size(); ++i) {
    const std::string where = path + ":classes[" + std::to_string(i) + "]";
    const auto& e = classes[i];
    if (detail::require_as<int>(e, "class_id", where) != static_cast<int>(i))
      throw ParseError(where, "class_id", "class ids must be dense and ordered");
    std::vector<Vec3> pts;
    for (const auto& p : detail::require(e, "points", where)) {
      const auto v = p.get<std::vector<double>>();
      if (v.size() != 3) throw ParseError(where, "points", "each point needs 3 coordinates");
      pts.emplace_back(v[0], v[1], v[2]);
    }
    CatalogEntry c;
    c.name = detail::require_as<std::string>(e, "name", where);
    c.points = ModelPoints(std::move(pts), detail::require_as<bool>(e, "symmetric", where));
    const auto col = detail::require_reals(e, "color", 3, where);
    c.color = {col[0], col[1], col[2]};
    if (e.contains("marker_x")) c.marker_x = e["marker_x"].get<double>();
    cat.classes.push_back(std::move(c));
  }
  return cat;
}

/// Catalog built from PLY meshes (one class per mesh), subsampled to `k` points each.
inline ObjectCatalog catalog_from_meshes(const std::vector<std::string>& paths, MeshUnits units, std::size_t k,
                                         std::uint64_t seed, const std::vector<int>& symmetric_classes) {
  ObjectCatalog cat;
  for (std::size_t i = 0; i < paths.size(); ++i) {
    const bool sym = std::find(symmetric_classes.begin(), symmetric_classes.end(), static_cast<int>(i)) !=
                     symmetric_classes.end();
    CatalogEntry c;
    c.name = std::filesystem::path(paths[i]).stem().string();
    c.points = subsample_points(read_ply_ascii(paths[i], units), k, seed + i, sym);
    const double hue = static_cast<double>(i) / static_cast<double>(paths.size());
    c.color = {0.5 + 0.5 * std::cos(2 * M_PI * hue), 0.5 + 0.5 * std::cos(2 * M_PI * (hue + 1.0 / 3)),
               0.5 + 0.5 * std::cos(2 * M_PI * (hue + 2.0 / 3))};
    cat.classes.push_back(std::move(c));
  }
  return cat;
}

// ---------------------------------------------------------------------------
// Annotations

struct AnnotatedObject {
  int class_id = 0;
  Pose pose;
  BBox bbox;
};

struct SceneAnnotation {
  int image_id = 0;
  std::string file;
  std::vector<AnnotatedObject> objects;

  TargetSet targets() const {
    TargetSet t;
    for (const auto& o : objects) t.objects.push_back({o.class_id, o.bbox, o.pose});
    return t;
  }
};

struct DatasetAnnotations {
  int version = 1;
  CameraIntrinsics camera;
  int image_width = 0;
  int image_height = 0;
  std::vector<SceneAnnotation> scenes;
};

inline bool operator==(const Pose& a, const Pose& b) {
  return a.rotation.m == b.rotation.m && a.translation == b.translation;
}
inline bool operator==(const AnnotatedObject& a, const AnnotatedObject& b) {
  return a.class_id == b.class_id && a.pose == b.pose && a.bbox == b.bbox;
}
inline bool operator==(const SceneAnnotation& a, const SceneAnnotation& b) {
  return a.image_id == b.image_id && a.file == b.file && a.objects == b.objects;
}
inline bool operator==(const DatasetAnnotations& a, const DatasetAnnotations& b) {
  return a.version == b.version && a.camera.fx == b.camera.fx && a.camera.fy == b.camera.fy &&
         a.camera.cx == b.camera.cx && a.camera.cy == b.camera.cy && a.image_width == b.image_width &&
         a.image_height == b.image_height && a.scenes == b.scenes;
}

inline nlohmann::json annotations_to_json(const DatasetAnnotations& d) {
  nlohmann::json j;
  j["version"] = d.version;
  j["camera"] = {{"fx", d.camera.fx}, {"fy", d.camera.fy}, {"cx", d.camera.cx}, {"cy", d.camera.cy},
                 {"width", d.image_width}, {"height", d.image_height}};
  j["scenes"] = nlohmann::json::array();
  for (const auto& s : d.scenes) {
    nlohmann::json js;
    js["image_id"] = s.image_id;
    js["file"] = s.file;
    js["objects"] = nlohmann::json::array();
    for (const auto& o : s.objects) {
      nlohmann::json jo;
      jo["class_id"] = o.class_id;
      std::vector<double> R;
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) R.push_back(o.pose.rotation.m(r, c));
      jo["R"] = R;
      jo["t"] = {o.pose.translation.x(), o.pose.translation.y(), o.pose.translation.z()};
      jo["bbox"] = o.bbox.to_array();
      js["objects"].push_back(jo);
    }
    j["scenes"].push_back(js);
  }
  return j;
}

inline DatasetAnnotations annotations_from_json(const nlohmann::json& j, const std::string& name = "<annotations>") {
  DatasetAnnotations d;
  d.version = detail::require_as<int>(j, "version", name);
  if (d.version != 1) throw ParseError(name, "version", "unsupported annotation version");
  const auto& cam = detail::require(j, "camera", name);
  const std::string cw = name + ":camera";
  d.camera = {detail::require_as<double>(cam, "fx", cw), detail::require_as<double>(cam, "fy", cw),
              detail::require_as<double>(cam, "cx", cw), detail::require_as<double>(cam, "cy", cw)};
  d.image_width = detail::require_as<int>(cam, "width", cw);
  d.image_height = detail::require_as<int>(cam, "height", cw);
  const auto& scenes = detail::require(j, "scenes", name);
  if (!scenes.is_array()) throw ParseError(name, "scenes", "expected an array");
  for (std::size_t si = 0; si < scenes.size(); ++si) {
    const std::string sw = name + ":scenes[" + std::to_string(si) + "]";
    SceneAnnotation s;
    s.image_id = detail::require_as<int>(scenes[si], "image_id", sw);
    s.file = detail::require_as<std::string>(scenes[si], "file", sw);
    const auto& objs = detail::require(scenes[si], "objects", sw);
    for (std::size_t oi = 0; oi < objs.size(); ++oi) {
      const std::string ow = sw + ":objects[" + std::to_string(oi) + "]";
      AnnotatedObject o;
      o.class_id = detail::require_as<int>(objs[oi], "class_id", ow);
      const auto R = detail::require_reals(objs[oi], "R", 9, ow);
      const auto t = detail::require_reals(objs[oi], "t", 3, ow);
      const auto b = detail::require_reals(objs[oi], "bbox", 4, ow);
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) o.pose.rotation.m(r, c) = R[r * 3 + c];
      o.pose.translation = Vec3(t[0], t[1], t[2]);
      o.bbox = {b[0], b[1], b[2], b[3]};
      s.objects.push_back(o);
    }
    d.scenes.push_back(std::move(s));
  }
  return d;
}

inline void save_annotations(const std::string& path, const DatasetAnnotations& d) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << annotations_to_json(d).dump(1) << '\n';
  if (!out) throw IoError("failed writing " + path);
}

inline DatasetAnnotations load_annotations(const std::string& path) {
  return annotations_from_json(detail::read_json_file(path), path);
}

// ---------------------------------------------------------------------------
// Scene generation

struct SceneConfig {
  int min_objects = 1;
  int max_objects = 3;
  int image_width = 64;
  int image_height = 64;
  double focal = 70.0;  // pixels, fx = fy
  double z_min = 0.45;
  double z_max = 0.75;
  double margin_px = 2.0;
  double min_center_distance_px = 12.0;
  double splat_radius = 0.005;  // meters
  std::array<double, 3> background{0.1, 0.1, 0.1};
  int max_attempts = 2000;

  CameraIntrinsics camera() const { return {focal, focal, image_width / 2.0, image_height / 2.0}; }

  void validate() const {
    if (min_objects < 0 || max_objects < min_objects) throw ConfigError("invalid object count range");
    if (image_width <= 0 || image_height <= 0) throw ConfigError("image size must be positive");
    if (!(z_min > 0.0) || z_max < z_min) throw ConfigError("invalid depth range");
    if (!(focal > 0.0)) throw ConfigError("focal length must be positive");
  }
};

struct GeneratedScene {
  ImageTensor image;
  SceneAnnotation annotation;
};

/// Deterministic scene for `seed`: objects with uniform random rotations inside the frustum,
/// rendered as z-buffered point splats (class color, depth-along-object-z shading, and a
/// marker face on asymmetric objects) on a flat background.
inline GeneratedScene generate_scene(const ObjectCatalog& catalog, std::uint64_t seed, const SceneConfig& cfg,
                                     int image_id = 0) {
  cfg.validate();
  if (catalog.classes.empty()) throw ConfigError("catalog has no classes");
  std::mt19937_64 rng(seed);
  const CameraIntrinsics K = cfg.camera();
  const int W = cfg.image_width, H = cfg.image_height;

  std::uniform_int_distribution<int> count_dist(cfg.min_objects, cfg.max_objects);
  const int n = count_dist(rng);

  std::vector<int> classes;
  {
    std::vector<int> pool(catalog.classes.size());
    std::iota(pool.begin(), pool.end(), 0);
    std::shuffle(pool.begin(), pool.end(), rng);
    std::uniform_int_distribution<int> any(0, catalog.num_classes() - 1);
    for (int i = 0; i < n; ++i) classes.push_back(i < catalog.num_classes() ? pool[i] : any(rng));
  }

  GeneratedScene out;
  out.annotation.image_id = image_id;
  std::vector<Vec2> centers;
  std::uniform_real_distribution<double> zdist(cfg.z_min, cfg.z_max);
  std::uniform_real_distribution<double> udist(cfg.margin_px, W - cfg.margin_px);
  std::uniform_real_distribution<double> vdist(cfg.margin_px, H - cfg.margin_px);

  for (int cls : classes) {
    const auto& pts = catalog.classes[cls].points;
    bool placed = false;
    for (int attempt = 0; attempt < cfg.max_attempts && !placed; ++attempt) {
      const Rotation R = random_rotation(rng);
      const double z = zdist(rng), u = udist(rng), v = vdist(rng);
      const Vec3 t((u - K.cx) * z / K.fx, (v - K.cy) * z / K.fy, z);
      const Vec2 c = project(K, t);
      bool far_enough = true;
      for (const auto& o : centers)
        if ((o - c).norm() < cfg.min_center_distance_px) far_enough = false;
      if (!far_enough) continue;
      double umin = 1e30, umax = -1e30, vmin = 1e30, vmax = -1e30;
      bool inside = true;
      for (const auto& x : pts.points()) {
        const Vec3 p = R.m * x + t;
        if (!(p.z() > 1e-6)) {
          inside = false;
          break;
        }
        const Vec2 q = project(K, p);
        umin = std::min(umin, q.x());
        umax = std::max(umax, q.x());
        vmin = std::min(vmin, q.y());
        vmax = std::max(vmax, q.y());
      }
      if (!inside || umin < cfg.margin_px || vmin < cfg.margin_px || umax > W - cfg.margin_px ||
          vmax > H - cfg.margin_px || umax - umin <= 0.0 || vmax - vmin <= 0.0)
        continue;
      AnnotatedObject obj;
      obj.class_id = cls;
      obj.pose = {R, t};
      obj.bbox = {(umin + umax) / 2 / W, (vmin + vmax) / 2 / H, (umax - umin) / W, (vmax - vmin) / H};
      out.annotation.objects.push_back(obj);
      centers.push_back(c);
      placed = true;
    }
    if (!placed) throw ConfigError("could not place all objects; relax the scene configuration");
  }

  // Render.
  ImageTensor img(H, W);
  for (int ch = 0; ch < 3; ++ch)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) img.at(ch, y, x) = cfg.background[ch];
  std::vector<double> zbuf(static_cast<std::size_t>(W) * H, std::numeric_limits<double>::infinity());
  for (const auto& obj : out.annotation.objects) {
    const auto& entry = catalog.classes[obj.class_id];
    double zlo = 1e30, zhi = -1e30;
    for (const auto& x : entry.points.points()) {
      zlo = std::min(zlo, x.z());
      zhi = std::max(zhi, x.z());
    }
    const double zspan = std::max(zhi - zlo, 1e-9);
    for (const auto& x : entry.points.points()) {
      const Vec3 p = obj.pose.apply(x);
      const Vec2 q = project(K, p);
      const double shade = 0.55 + 0.45 * (x.z() - zlo) / zspan;
      std::array<double, 3> col = entry.color;
      if (x.x() > entry.marker_x) col = {1.0, 1.0, 0.85};
      const int r = std::max(0, static_cast<int>(std::lround(K.fx * cfg.splat_radius / p.z() - 0.5)));
      const int cu = static_cast<int>(std::floor(q.x())), cv = static_cast<int>(std::floor(q.y()));
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          const int px = cu + dx, py = cv + dy;
          if (px < 0 || py < 0 || px >= W || py >= H) continue;
          double& zb = zbuf[static_cast<std::size_t>(py) * W + px];
          if (p.z() >= zb) continue;
          zb = p.z();
          for (int ch = 0; ch < 3; ++ch) img.at(ch, py, px) = col[ch] * shade;
        }
    }
  }
  // Quantize so that in-memory scenes match their PPM round trip exactly.
  for (double& v : img.data) v = to_byte(v) / 255.0;
  out.image = std::move(img);
  return out;
}

struct Sample {
  ImageTensor image;
  TargetSet targets;
  int image_id = 0;
};

/// In-memory dataset: samples plus the catalog that defines classes and model points.
struct Dataset {
  ObjectCatalog catalog;
  CameraIntrinsics camera;
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
};

inline std::string image_file_name(int image_id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06d.ppm", image_id);
  return buf;
}

/// Scene i uses seed + i.
inline Dataset generate_dataset(const ObjectCatalog& catalog, std::uint64_t seed, int num_scenes,
                                const SceneConfig& cfg, DatasetAnnotations* annotations = nullptr) {
  Dataset d;
  d.catalog = catalog;
  d.camera = cfg.camera();
  if (annotations) {
    annotations->camera = cfg.camera();
    annotations->image_width = cfg.image_width;
    annotations->image_height = cfg.image_height;
    annotations->scenes.clear();
  }
  for (int i = 0; i < num_scenes; ++i) {
    auto scene = generate_scene(catalog, seed + static_cast<std::uint64_t>(i), cfg, i);
    scene.annotation.file = image_file_name(i);
    d.samples.push_back({scene.image, scene.annotation.targets(), i});
    if (annotations) annotations->scenes.push_back(scene.annotation);
  }
  return d;
}

/// Writes images, annotations.json and catalog.json into `dir`.
inline void write_dataset(const std::string& dir, const Dataset& d, const DatasetAnnotations& ann) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < d.samples.size(); ++i)
    write_ppm((std::filesystem::path(dir) / ann.scenes[i].file).string(), d.samples[i].image);
  save_annotations((std::filesystem::path(dir) / "annotations.json").string(), ann);
  save_catalog((std::filesystem::path(dir) / "catalog.json").string(), d.catalog);
}

inline Dataset load_dataset(const std::string& dir, DatasetAnnotations* annotations_out = nullptr) {
  const auto root = std::filesystem::path(dir);
  Dataset d;
  d.catalog = load_catalog((root / "catalog.json").string());
  const auto ann = load_annotations((root / "annotations.json").string());
  d.camera = ann.camera;
  for (const auto& s : ann.scenes) {
    for (const auto& o : s.objects)
      if (o.class_id < 0 || o.class_id >= d.catalog.num_classes())
        throw ParseError((root / "annotations.json").string(), "class_id",
                         "class " + std::to_string(o.class_id) + " not in catalog");
    Sample smp;
    smp.image = read_ppm((root / s.file).string());
    smp.targets = s.targets();
    smp.image_id = s.image_id;
    d.samples.push_back(std::move(smp));
  }
  if (annotations_out) *annotations_out = ann;
  return d;
}

}  // namespace t6d
