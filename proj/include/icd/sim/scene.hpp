#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "icd/rng.hpp"

namespace icd::sim {

using Vec3 = Eigen::Vector3d;
using Points = Eigen::Matrix<double, Eigen::Dynamic, 3>;

enum class PrimitiveKind { box, capsule, cylinder };

// Analytic solid with a yaw-only pose.
//   box:      dims = half extents along local x/y/z
//   capsule:  axis along local x; dims = (half length, radius, unused)
//   cylinder: axis along world z;  dims = (radius, half height, unused)
struct Primitive {
  PrimitiveKind kind = PrimitiveKind::box;
  Vec3 center = Vec3::Zero();
  double yaw = 0.0;  // rotation about world z
  Vec3 dims = Vec3::Ones();

  Vec3 to_local(const Vec3& x) const;
  Vec3 to_world_dir(const Vec3& v) const;
  double surface_area() const;
};

struct Aabb {
  Vec3 lo, hi;
  bool contains(const Vec3& x, double inflate = 0.0) const {
    return (x.array() >= lo.array() - inflate).all() &&
           (x.array() <= hi.array() + inflate).all();
  }
};

enum class TaskTag { cable_routing, notebook_folding };

struct SceneSpec {
  std::vector<Primitive> primitives;
  Aabb workspace{Vec3(-0.4, -0.4, -0.15), Vec3(0.4, 0.4, 0.3)};
  TaskTag task_tag = TaskTag::cable_routing;
  std::vector<int> fixture_ids;  // anchor post of each routing fixture
  double fixture_gap = 0.05;     // opening width between a fixture's posts
  Vec3 rope_anchor = Vec3::Zero();  // fixed end of the cable (cable scenes)

  void validate() const;  // throws std::invalid_argument on violation
};

double primitive_sdf(const Primitive& p, const Vec3& x);
Vec3 primitive_sdf_gradient(const Primitive& p, const Vec3& x);

// min over primitives; ties broken by lowest index
double scene_sdf(const SceneSpec& scene, const Vec3& x);
Vec3 scene_sdf_gradient(const SceneSpec& scene, const Vec3& x);  // unit length

// n surface points, area-weighted over exposed surface (inside workspace,
// not buried in another primitive); deterministic given rng state
Points sample_scene_point_cloud(const SceneSpec& scene, int n, icd::Rng& rng);

// uniform sample on the primitive's full surface
Vec3 sample_on_primitive(const Primitive& p, icd::Rng& rng);

std::string primitive_kind_name(PrimitiveKind k);
PrimitiveKind primitive_kind_from_name(const std::string& s);
std::string task_tag_name(TaskTag t);
TaskTag task_tag_from_name(const std::string& s);

// one-line text forms used by the dataset manifest
std::string format_primitive(const Primitive& p);
Primitive parse_primitive(const std::string& line);
std::string format_scene(const SceneSpec& s);          // multi-line block
SceneSpec parse_scene(const std::string& block);

}  // namespace icd::sim
